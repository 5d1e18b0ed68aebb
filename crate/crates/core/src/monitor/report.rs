use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_monitor, MonitorAlert, MonitorConfig, MonitorRun, RoutingMode};
use crate::classify::{compute_jitter, segment_predictions, DetectorLibrary};
use crate::error::Result;
use crate::kinematics::{GestureId, GestureSegment, Trajectory};
use crate::metrics::{confusion_metrics, roc_auc, ConfusionCounts, RateMetrics, RocPoint};

/// Gesture-level score: the highest sample score inside a truth segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub demo: String,
    pub gesture: GestureId,
    pub start: usize,
    pub end: usize,
    pub truth: bool,
    pub score: f64,
    pub predicted: bool,
}

/// A gesture is predicted unsafe iff one of its samples scores at or above
/// `threshold`. Samples without a score count as 0.
pub fn gesture_level_aggregate(
    scores: &[Option<f64>],
    segments: &[GestureSegment],
    threshold: f64,
) -> Vec<SegmentScore> {
    segments
        .iter()
        .map(|seg| {
            let hi = seg.end.min(scores.len().saturating_sub(1));
            let score = scores
                .get(seg.start..=hi)
                .unwrap_or(&[])
                .iter()
                .map(|s| s.unwrap_or(0.0))
                .fold(0.0, f64::max);
            SegmentScore {
                demo: String::new(),
                gesture: seg.gesture,
                start: seg.start,
                end: seg.end,
                truth: seg.unsafe_,
                score,
                predicted: score >= threshold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTiming {
    pub demo: String,
    pub gesture: GestureId,
    pub actual_ms: f64,
    pub detected_ms: f64,
    /// `actual − detected`; positive when the alert precedes the error.
    pub reaction_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReactionSummary {
    pub occurrences: usize,
    pub detected: usize,
    pub misses: usize,
    pub mean_ms: Option<f64>,
    pub std_ms: Option<f64>,
    pub early_detection_pct: Option<f64>,
}

/// One timing record per unsafe truth segment with an alert inside it.
///
/// The actual onset is the recorded fault onset clipped into the segment,
/// or the segment start when no onset is known. Returns the timings and
/// the number of unsafe segments without any alert.
pub fn reaction_time(alerts: &[MonitorAlert], traj: &Trajectory) -> (Vec<AlertTiming>, usize) {
    let mut timings = Vec::new();
    let mut misses = 0;
    let last = traj.len().saturating_sub(1);
    for seg in traj.segments.iter().filter(|s| s.unsafe_) {
        let (lo, hi) = (seg.start.min(last), seg.end.min(last));
        let onset = traj
            .meta
            .fault_onset_ms
            .map_or(lo, |ms| traj.index_at_ms(ms).clamp(lo, hi));
        let first = alerts.iter().find(|a| a.sample_index >= lo && a.sample_index <= hi);
        match first {
            Some(a) => {
                let actual_ms = traj.samples[onset].timestamp_ms;
                timings.push(AlertTiming {
                    demo: traj.meta.name.clone(),
                    gesture: seg.gesture,
                    actual_ms,
                    detected_ms: a.detected_ms,
                    reaction_ms: actual_ms - a.detected_ms,
                });
            }
            None => misses += 1,
        }
    }
    (timings, misses)
}

/// Share of unsafe occurrences detected before the error onset, in percent.
pub fn early_detection_pct(timings: &[AlertTiming], occurrences: usize) -> Option<f64> {
    if occurrences == 0 {
        return None;
    }
    let early = timings.iter().filter(|t| t.reaction_ms > 0.0).count();
    Some(100.0 * early as f64 / occurrences as f64)
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Evaluation of one demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoResult {
    pub name: String,
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub segments: Vec<SegmentScore>,
    pub timings: Vec<AlertTiming>,
    pub misses: usize,
    pub alerts: Vec<MonitorAlert>,
    /// Stage-1 sample accuracy (predicted mode only).
    pub gesture_correct: Option<usize>,
    pub gesture_labeled: usize,
    pub jitter_abs_ms: Vec<f64>,
}

impl DemoResult {
    pub fn from_run(traj: &Trajectory, run: &MonitorRun, threshold: f64, persistence: usize) -> Self {
        let mut segments = gesture_level_aggregate(&run.scores, &traj.segments, threshold);
        for s in &mut segments {
            s.demo = traj.meta.name.clone();
        }
        let mut counts = ConfusionCounts::default();
        for s in &segments {
            counts.record(s.predicted, s.truth);
        }
        let (timings, misses) = reaction_time(&run.alerts, traj);
        let labels = traj.gesture_labels();
        let gesture_labeled = labels.iter().flatten().count();
        let mut gesture_correct = None;
        let mut jitter_abs_ms = Vec::new();
        if run.predicted.iter().all(Option::is_some) && !run.predicted.is_empty() {
            let pred: Vec<GestureId> = run.predicted.iter().flatten().copied().collect();
            gesture_correct = Some(labels.iter().zip(&pred).filter(|(t, p)| **t == Some(**p)).count());
            let ts: Vec<f64> = traj.samples.iter().map(|s| s.timestamp_ms).collect();
            let j = compute_jitter(&segment_predictions(&pred, &ts, persistence), &traj.segments, &ts);
            jitter_abs_ms = j.records.iter().map(|r| r.jitter_ms.abs()).collect();
        }
        DemoResult {
            name: traj.meta.name.clone(),
            samples: traj.len(),
            counts,
            segments,
            timings,
            misses,
            alerts: run.alerts.clone(),
            gesture_correct,
            gesture_labeled,
            jitter_abs_ms,
        }
    }
}

/// Per-sample processing time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_trace(trace: &[f64]) -> Self {
        if trace.is_empty() {
            return Self::default();
        }
        let mut sorted = trace.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p95 = sorted[((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1];
        LatencySummary {
            samples: trace.len(),
            mean_ms: trace.iter().sum::<f64>() / trace.len() as f64,
            p95_ms: p95,
            max_ms: *sorted.last().expect("non-empty"),
        }
    }
}

/// Aggregate gesture-level results of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub mode: RoutingMode,
    pub threshold: f64,
    pub demos: usize,
    pub segments: usize,
    pub unsafe_segments: usize,
    pub counts: ConfusionCounts,
    pub metrics: RateMetrics,
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub reaction: ReactionSummary,
    pub gesture_accuracy: Option<f64>,
    pub jitter_mean_abs_ms: Option<f64>,
    pub per_demo: Vec<DemoResult>,
}

impl MonitorReport {
    /// Pools demonstrations (for example across folds) into one report.
    pub fn from_demos(mode: RoutingMode, threshold: f64, per_demo: Vec<DemoResult>) -> Result<Self> {
        let mut counts = ConfusionCounts::default();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut timings = Vec::new();
        let mut misses = 0;
        let (mut correct, mut labeled, mut have_gestures) = (0, 0, false);
        let mut jitter = Vec::new();
        for d in &per_demo {
            counts = counts + d.counts;
            for s in &d.segments {
                scores.push(s.score);
                labels.push(s.truth);
            }
            timings.extend(d.timings.iter().cloned());
            misses += d.misses;
            if let Some(c) = d.gesture_correct {
                have_gestures = true;
                correct += c;
                labeled += d.gesture_labeled;
            }
            jitter.extend_from_slice(&d.jitter_abs_ms);
        }
        let roc = roc_auc(&scores, &labels)?;
        let reactions: Vec<f64> = timings.iter().map(|t| t.reaction_ms).collect();
        let (mean_ms, std_ms) = mean_std(&reactions);
        let occurrences = labels.iter().filter(|&&l| l).count();
        Ok(MonitorReport {
            mode,
            threshold,
            demos: per_demo.len(),
            segments: labels.len(),
            unsafe_segments: occurrences,
            counts,
            metrics: confusion_metrics(&counts),
            auc: roc.as_ref().map(|r| r.auc),
            roc: roc.map(|r| r.points).unwrap_or_default(),
            reaction: ReactionSummary {
                occurrences,
                detected: timings.len(),
                misses,
                mean_ms,
                std_ms,
                early_detection_pct: early_detection_pct(&timings, occurrences),
            },
            gesture_accuracy: (have_gestures && labeled > 0).then(|| correct as f64 / labeled as f64),
            jitter_mean_abs_ms: mean_std(&jitter).0,
            per_demo,
        })
    }

    pub fn f1(&self) -> Option<f64> {
        self.metrics.f1
    }

    /// Machine-readable JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Header of [`MonitorReport::table_row`].
    pub fn table_header() -> String {
        format!(
            "{:<13} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>20} {:>10} {:>13}",
            "Mode", "TPR", "TNR", "PPV", "NPV", "F1", "AUC", "Avg React Time (ms)", "Early (%)", "Compute (ms)"
        )
    }

    /// One human-readable row; latency is measured separately because it is
    /// not reproducible.
    pub fn table_row(&self, latency: Option<&LatencySummary>) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mode = match self.mode {
            RoutingMode::Predicted => "context",
            RoutingMode::GroundTruth => "ground-truth",
            RoutingMode::Baseline => "baseline",
        };
        let react = match (self.reaction.mean_ms, self.reaction.std_ms) {
            (Some(m), Some(s)) => format!("{m:.0} ± {s:.0}"),
            (Some(m), None) => format!("{m:.0}"),
            _ => "-".into(),
        };
        format!(
            "{:<13} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>20} {:>10} {:>13}",
            mode,
            f(self.metrics.tpr),
            f(self.metrics.tnr),
            f(self.metrics.ppv),
            f(self.metrics.npv),
            f(self.metrics.f1),
            f(self.auc),
            react,
            self.reaction.early_detection_pct.map_or("-".into(), |p| format!("{p:.2}")),
            latency.map_or("-".into(), |l| format!("{:.3}", l.mean_ms)),
        )
    }

    /// Alert log: `demo,t_ms,sample,gesture,score,provenance`.
    pub fn alerts_csv(&self) -> String {
        let mut out = String::from("demo,t_ms,sample,gesture,score,provenance\n");
        for d in &self.per_demo {
            for a in &d.alerts {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    d.name, a.detected_ms, a.sample_index, a.gesture, a.score, a.provenance
                );
            }
        }
        out
    }
}

/// Runs the monitor over every demonstration and pools the results.
pub fn evaluate_pipeline(
    library: &DetectorLibrary,
    corpus: &[&Trajectory],
    config: &MonitorConfig,
) -> Result<(MonitorReport, LatencySummary)> {
    let mut demos = Vec::with_capacity(corpus.len());
    let mut trace = Vec::new();
    for traj in corpus {
        let run = run_monitor(library, traj, config)?;
        trace.extend_from_slice(&run.latency_ms);
        demos.push(DemoResult::from_run(traj, &run, library.threshold, config.persistence));
    }
    let report = MonitorReport::from_demos(config.mode, library.threshold, demos)?;
    Ok((report, LatencySummary::from_trace(&trace)))
}
