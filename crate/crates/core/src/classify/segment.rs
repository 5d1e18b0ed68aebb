use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kinematics::{GestureId, GestureSegment};

/// Predicted segments and the time each one was first seen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<GestureSegment>,
    pub detected_ms: Vec<f64>,
}

/// Collapses a per-sample label stream into segments.
///
/// A new segment opens at the first sample whose label differs from the
/// current segment and then holds for at least `k` consecutive samples.
/// Shorter excursions are absorbed into the current segment.
pub fn segment_predictions(labels: &[GestureId], timestamps_ms: &[f64], k: usize) -> Segmentation {
    let k = k.max(1);
    let mut out = Segmentation::default();
    let Some(&first) = labels.first() else {
        return out;
    };
    let mut current = first;
    let mut start = 0;
    let mut i = 1;
    while i < labels.len() {
        let l = labels[i];
        if l != current && i + k <= labels.len() && labels[i..i + k].iter().all(|&x| x == l) {
            out.segments.push(GestureSegment::new(current, start, i - 1));
            out.detected_ms.push(timestamps_ms.get(start).copied().unwrap_or(f64::NAN));
            current = l;
            start = i;
        }
        i += 1;
    }
    out.segments.push(GestureSegment::new(current, start, labels.len() - 1));
    out.detected_ms.push(timestamps_ms.get(start).copied().unwrap_or(f64::NAN));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterRecord {
    pub gesture: GestureId,
    pub truth_ms: f64,
    pub detected_ms: f64,
    /// `truth − detected`; positive when the gesture was recognised early.
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JitterReport {
    pub records: Vec<JitterRecord>,
    pub per_gesture_ms: BTreeMap<GestureId, f64>,
    pub mean_ms: Option<f64>,
    pub mean_abs_ms: Option<f64>,
    /// Truth segments with no predicted segment of the same gesture.
    pub unmatched: Vec<GestureSegment>,
}

/// Matches each truth segment to the predicted segment of the same gesture
/// with the nearest onset and reports `truth onset − detected onset`.
pub fn compute_jitter(predicted: &Segmentation, truth: &[GestureSegment], timestamps_ms: &[f64]) -> JitterReport {
    let time = |i: usize| timestamps_ms.get(i).copied().unwrap_or(f64::NAN);
    let mut report = JitterReport::default();
    let mut sums: BTreeMap<GestureId, (f64, usize)> = BTreeMap::new();
    for seg in truth {
        let truth_ms = time(seg.start);
        let best = predicted
            .segments
            .iter()
            .zip(&predicted.detected_ms)
            .filter(|(p, _)| p.gesture == seg.gesture)
            .min_by(|a, b| (truth_ms - a.1).abs().total_cmp(&(truth_ms - b.1).abs()));
        match best {
            Some((_, &detected_ms)) => {
                let jitter_ms = truth_ms - detected_ms;
                let e = sums.entry(seg.gesture).or_insert((0.0, 0));
                e.0 += jitter_ms;
                e.1 += 1;
                report.records.push(JitterRecord {
                    gesture: seg.gesture,
                    truth_ms,
                    detected_ms,
                    jitter_ms,
                });
            }
            None => report.unmatched.push(seg.clone()),
        }
    }
    report.per_gesture_ms = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect();
    if !report.records.is_empty() {
        let n = report.records.len() as f64;
        report.mean_ms = Some(report.records.iter().map(|r| r.jitter_ms).sum::<f64>() / n);
        report.mean_abs_ms = Some(report.records.iter().map(|r| r.jitter_ms.abs()).sum::<f64>() / n);
    }
    report
}
