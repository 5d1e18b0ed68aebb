//! The online two-stage monitor.
//!
//! Every incoming sample goes through stage 1 (gesture recognition), the
//! routed gesture's detector scores the window ending at that sample, and an
//! alert is raised when the score reaches the library threshold. Nothing
//! after the current sample is ever read.

mod report;

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use report::{
    early_detection_pct, evaluate_pipeline, gesture_level_aggregate, reaction_time, AlertTiming, DemoResult,
    LatencySummary, MonitorReport, ReactionSummary, SegmentScore,
};

use crate::classify::{argmax_gesture, Detector, DetectorLibrary, GestureStream, Provenance};
use crate::error::{Error, Result};
use crate::kinematics::{windows, GestureId, KinematicsSample, SlidingWindowSpec, Trajectory, NUM_FEATURES};

/// Where the routing gesture comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Stage-1 predictions (the deployed monitor).
    Predicted,
    /// Annotated gestures, bypassing stage 1.
    GroundTruth,
    /// The non-context baseline for every sample.
    Baseline,
}

impl std::str::FromStr for RoutingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(RoutingMode::Predicted),
            "ground_truth" | "ground-truth" => Ok(RoutingMode::GroundTruth),
            "baseline" => Ok(RoutingMode::Baseline),
            other => Err(Error::Config(format!("unknown routing mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub mode: RoutingMode,
    /// Consecutive samples a new stage-1 label must hold before routing
    /// switches to it.
    pub persistence: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            mode: RoutingMode::Predicted,
            persistence: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorAlert {
    pub detected_ms: f64,
    pub sample_index: usize,
    pub gesture: GestureId,
    pub score: f64,
    pub provenance: Provenance,
}

/// Causal label smoother: the output switches to a new label once it has
/// been seen on `k` consecutive samples.
#[derive(Debug, Clone)]
pub struct PersistenceFilter {
    k: usize,
    current: Option<GestureId>,
    candidate: Option<(GestureId, usize)>,
}

impl PersistenceFilter {
    pub fn new(k: usize) -> Self {
        PersistenceFilter {
            k: k.max(1),
            current: None,
            candidate: None,
        }
    }

    pub fn update(&mut self, label: GestureId) -> GestureId {
        match self.current {
            None => self.current = Some(label),
            Some(c) if c == label => self.candidate = None,
            Some(_) => {
                let n = match self.candidate {
                    Some((g, n)) if g == label => n + 1,
                    _ => 1,
                };
                if n >= self.k {
                    self.current = Some(label);
                    self.candidate = None;
                } else {
                    self.candidate = Some((label, n));
                }
            }
        }
        self.current.expect("set above")
    }
}

/// Output of one monitor step.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStep {
    /// Raw stage-1 arg-max, when stage 1 ran.
    pub predicted: Option<GestureId>,
    /// Gesture used for routing.
    pub routed: Option<GestureId>,
    pub score: Option<f64>,
    pub provenance: Option<Provenance>,
    pub alert: Option<MonitorAlert>,
}

/// Incremental monitor over one stream.
pub struct Monitor<'a> {
    library: &'a DetectorLibrary,
    config: MonitorConfig,
    stage1: Option<GestureStream>,
    filter: PersistenceFilter,
    history: VecDeque<[f64; NUM_FEATURES]>,
    capacity: usize,
    index: usize,
}

fn check_detector(d: &Detector) -> Result<()> {
    let c = d.subset.dim();
    if d.norm.dim() != c || d.model.config.input_dim != c || d.model.config.input_len != Some(d.window.length) {
        return Err(Error::Shape(format!(
            "detector for {} expects [{:?}, {}] inputs but its window is [{}, {c}]",
            d.gesture.map_or("baseline".to_string(), |g| g.to_string()),
            d.model.config.input_len,
            d.model.config.input_dim,
            d.window.length
        )));
    }
    Ok(())
}

/// Checks that every model in the library agrees with its feature subset.
pub fn check_library(library: &DetectorLibrary) -> Result<()> {
    let g = &library.gesture;
    let c = g.config.subset.dim();
    if g.norm.dim() != c || g.model.config.input_dim != c {
        return Err(Error::Shape(format!(
            "gesture model expects {} features but its subset has {c}",
            g.model.config.input_dim
        )));
    }
    check_detector(&library.baseline)?;
    library.detectors.values().try_for_each(check_detector)?;
    library.validate()
}

impl<'a> Monitor<'a> {
    pub fn new(library: &'a DetectorLibrary, config: MonitorConfig) -> Result<Self> {
        check_library(library)?;
        let stage1 = match config.mode {
            RoutingMode::Predicted => Some(library.gesture.start_stream()?),
            _ => None,
        };
        let capacity = library.max_window();
        Ok(Monitor {
            library,
            filter: PersistenceFilter::new(config.persistence),
            config,
            stage1,
            history: VecDeque::with_capacity(capacity),
            capacity,
            index: 0,
        })
    }

    /// Consumes the next sample. `truth` is only read in ground-truth mode.
    pub fn push(&mut self, sample: &KinematicsSample, truth: Option<GestureId>) -> Result<MonitorStep> {
        let features = sample.features();
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(features);
        let index = self.index;
        self.index += 1;
        let mut predicted = None;
        let (routed, route) = match self.config.mode {
            RoutingMode::Predicted => {
                let stream = self.stage1.as_mut().expect("stage 1 runs in predicted mode");
                let p = self.library.gesture.step(stream, &features)?;
                let raw = argmax_gesture(&p);
                predicted = Some(raw);
                let g = self.filter.update(raw);
                (Some(g), Some(self.library.route(g)?))
            }
            RoutingMode::GroundTruth => match truth {
                Some(g) => (Some(g), Some(self.library.route(g)?)),
                None => (None, Some((&self.library.baseline, Provenance::Fallback))),
            },
            RoutingMode::Baseline => (None, Some((&self.library.baseline, Provenance::Baseline))),
        };
        let (detector, provenance) = route.expect("every mode routes");
        let w = detector.window.length;
        let mut step = MonitorStep {
            predicted,
            routed,
            score: None,
            provenance: None,
            alert: None,
        };
        if self.history.len() >= w {
            let idx = detector.subset.indices();
            let mut data = Vec::with_capacity(w * idx.len());
            for row in self.history.iter().skip(self.history.len() - w) {
                data.extend(idx.iter().map(|&i| row[i]));
            }
            let score = detector.score(&data)?;
            step.score = Some(score);
            step.provenance = Some(provenance);
            if score >= self.library.threshold {
                step.alert = Some(MonitorAlert {
                    detected_ms: sample.timestamp_ms,
                    sample_index: index,
                    gesture: routed.unwrap_or(GestureId(0)),
                    score,
                    provenance,
                });
            }
        }
        Ok(step)
    }
}

/// Everything the monitor produced for one trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorRun {
    pub alerts: Vec<MonitorAlert>,
    pub scores: Vec<Option<f64>>,
    pub predicted: Vec<Option<GestureId>>,
    pub routed: Vec<Option<GestureId>>,
    /// Wall-clock processing time per sample (empty for batch runs).
    pub latency_ms: Vec<f64>,
}

/// Streams `traj` through a fresh monitor, timing every sample.
pub fn run_monitor(library: &DetectorLibrary, traj: &Trajectory, config: &MonitorConfig) -> Result<MonitorRun> {
    let mut monitor = Monitor::new(library, config.clone())?;
    let truth = traj.gesture_labels();
    let mut run = MonitorRun::default();
    for (sample, t) in traj.samples.iter().zip(truth) {
        let started = Instant::now();
        let step = monitor.push(sample, t)?;
        run.latency_ms.push(started.elapsed().as_secs_f64() * 1e3);
        run.scores.push(step.score);
        run.predicted.push(step.predicted);
        run.routed.push(step.routed);
        run.alerts.extend(step.alert);
    }
    Ok(run)
}

/// Whole-trajectory equivalent of [`run_monitor`]: stage 1 over the full
/// sequence and every detector over a batch of windows. Used to check that
/// the streaming path is causal.
pub fn run_monitor_batch(library: &DetectorLibrary, traj: &Trajectory, config: &MonitorConfig) -> Result<MonitorRun> {
    check_library(library)?;
    let n = traj.len();
    let mut run = MonitorRun {
        scores: vec![None; n],
        predicted: vec![None; n],
        routed: vec![None; n],
        ..Default::default()
    };
    let truth = traj.gesture_labels();
    let mut routes: Vec<(&Detector, Provenance)> = Vec::with_capacity(n);
    match config.mode {
        RoutingMode::Predicted => {
            let probs = library.gesture.predict_stream(traj)?;
            let mut filter = PersistenceFilter::new(config.persistence);
            for (t, p) in probs.iter().enumerate() {
                let raw = argmax_gesture(p);
                let g = filter.update(raw);
                run.predicted[t] = Some(raw);
                run.routed[t] = Some(g);
                routes.push(library.route(g)?);
            }
        }
        RoutingMode::GroundTruth => {
            for (t, g) in truth.iter().enumerate() {
                run.routed[t] = *g;
                routes.push(match g {
                    Some(g) => library.route(*g)?,
                    None => (&library.baseline, Provenance::Fallback),
                });
            }
        }
        RoutingMode::Baseline => routes.resize(n, (&library.baseline, Provenance::Baseline)),
    }
    // group window ends by detector so each model scores one batch
    let mut groups: Vec<(&Detector, Vec<usize>)> = Vec::new();
    for (t, (d, _)) in routes.iter().enumerate() {
        if t + 1 < d.window.length {
            continue;
        }
        match groups.iter_mut().find(|(g, _)| std::ptr::eq(*g, *d)) {
            Some((_, ts)) => ts.push(t),
            None => groups.push((d, vec![t])),
        }
    }
    for (d, ts) in groups {
        let all = windows(traj, SlidingWindowSpec { length: d.window.length, stride: 1 }, &d.subset)?;
        let batch: Vec<&[f64]> = ts.iter().map(|&t| all[t + 1 - d.window.length].data.as_slice()).collect();
        let scores = d.score_batch(&batch)?;
        for (&t, s) in ts.iter().zip(scores) {
            run.scores[t] = Some(s);
        }
    }
    for (t, score) in run.scores.iter().enumerate() {
        if let Some(score) = *score {
            if score >= library.threshold {
                run.alerts.push(MonitorAlert {
                    detected_ms: traj.samples[t].timestamp_ms,
                    sample_index: t,
                    gesture: run.routed[t].unwrap_or(GestureId(0)),
                    score,
                    provenance: routes[t].1,
                });
            }
        }
    }
    Ok(run)
}
