//! Experiment configuration and the leave-one-group-out end-to-end run.

mod checks;
mod corpus;
mod data;

use serde::{Deserialize, Serialize};

pub use checks::{gradcheck_suite, ArchCheck};
pub use corpus::{build_faulted_corpus, place_fault, FaultMix, FaultTemplate, InjectionRecord};
pub use data::{group_from_name, load_corpus, save_corpus, DataConfig, DataFormat};

use crate::classify::{
    fit_gesture_fold, gesture_accuracy, train_error_detectors, DetectorLibrary, DetectorTrainConfig, GestureFoldResult,
    GestureTrainConfig,
};
use crate::error::{Error, Result};
use crate::fault::CampaignConfig;
use crate::folds::{make_loso_folds, Fold, LosoSpec};
use crate::kinematics::{FeatureSubset, Trajectory};
use crate::metrics::DivergenceOptions;
use crate::monitor::{evaluate_pipeline, DemoResult, LatencySummary, MonitorConfig, MonitorReport, RoutingMode};
use crate::nn::{History, TrainConfig};
use crate::seed;
use crate::sim::{generate_corpus, CorpusSpec, SimParams};
use crate::task::{GestureVocabulary, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    pub subset: FeatureSubset,
    pub options: DivergenceOptions,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            subset: FeatureSubset::Cg,
            options: DivergenceOptions::default(),
        }
    }
}

/// Everything a run needs. Module seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub data: DataConfig,
    pub simulate: CorpusSpec,
    pub faults: FaultMix,
    pub campaign: CampaignConfig,
    pub gesture: GestureTrainConfig,
    pub detector: DetectorTrainConfig,
    pub monitor: MonitorConfig,
    pub divergence: DivergenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::BlockTransfer,
            seed: 2024,
            data: DataConfig::default(),
            simulate: CorpusSpec {
                demos: 100,
                groups: 5,
                seed: 0,
                params: SimParams {
                    sample_rate_hz: 30.0,
                    ..Default::default()
                },
            },
            faults: FaultMix::default(),
            campaign: CampaignConfig::default(),
            gesture: GestureTrainConfig::default(),
            detector: DetectorTrainConfig::default(),
            monitor: MonitorConfig::default(),
            divergence: DivergenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Field-level checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        self.simulate.params.validate().map_err(|e| field("simulate.params", e))?;
        if self.simulate.demos == 0 {
            return Err(Error::Config("simulate.demos: must be at least 1".into()));
        }
        if self.simulate.groups == 0 {
            return Err(Error::Config("simulate.groups: must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.faults.fraction) {
            return Err(Error::Config(format!("faults.fraction: {} outside [0, 1]", self.faults.fraction)));
        }
        if !(self.faults.ramp > 0.0) {
            return Err(Error::Config("faults.ramp: must be positive".into()));
        }
        check_train("gesture.train", &self.gesture.train)?;
        check_train("detector.train", &self.detector.train)?;
        self.gesture.model.subset.validate().map_err(|e| field("gesture.model.subset", e))?;
        self.detector.detector.validate().map_err(|e| field("detector.detector", e))?;
        if let Some(r) = self.data.sample_rate_hz {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!("data.sample_rate_hz: {r} is not a positive rate")));
            }
        }
        if self.monitor.persistence == 0 {
            return Err(Error::Config("monitor.persistence: must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of a named stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    pub fn vocabulary(&self) -> GestureVocabulary {
        GestureVocabulary::for_task(self.task)
    }

    /// The corpus under `data.path`, or the fault-free simulated corpus.
    pub fn source_corpus(&self) -> Result<Vec<Trajectory>> {
        match self.data.path {
            Some(_) => load_corpus(&self.data),
            None => self.simulated_corpus(),
        }
    }

    /// The corpus under `data.path`, taken as already labelled, or the
    /// simulated corpus with the configured faults injected.
    pub fn experiment_corpus(&self) -> Result<(Vec<Trajectory>, Vec<InjectionRecord>)> {
        match self.data.path {
            Some(_) => Ok((load_corpus(&self.data)?, Vec::new())),
            None => self.labeled_corpus(),
        }
    }

    /// The fault-free corpus this config simulates.
    pub fn simulated_corpus(&self) -> Result<Vec<Trajectory>> {
        generate_corpus(&CorpusSpec {
            seed: self.stage_seed("simulate"),
            ..self.simulate.clone()
        })
    }

    /// Simulated corpus with the configured faults injected and labelled.
    pub fn labeled_corpus(&self) -> Result<(Vec<Trajectory>, Vec<InjectionRecord>)> {
        build_faulted_corpus(&self.simulated_corpus()?, &self.faults, self.stage_seed("faults"))
    }
}

fn check_train(name: &str, t: &TrainConfig) -> Result<()> {
    t.validate().map_err(|e| Error::Config(format!("{name}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub gesture: GestureFoldResult,
    pub predicted: MonitorReport,
    pub ground_truth: MonitorReport,
    pub baseline: MonitorReport,
}

/// Reproducible results of a leave-one-group-out run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub folds: Vec<FoldReport>,
    pub mean_gesture_accuracy: f64,
    pub predicted: MonitorReport,
    pub ground_truth: MonitorReport,
    pub baseline: MonitorReport,
}

impl ExperimentReport {
    pub fn table(&self, latency: Option<&LatencySummary>) -> String {
        let mut out = MonitorReport::table_header();
        for r in [&self.predicted, &self.ground_truth, &self.baseline] {
            out.push('\n');
            out.push_str(&r.table_row(if r.mode == RoutingMode::Predicted { latency } else { None }));
        }
        out.push_str(&format!(
            "\n\nmean LOSO gesture accuracy: {:.4}\n",
            self.mean_gesture_accuracy
        ));
        if let Some(j) = self.predicted.jitter_mean_abs_ms {
            out.push_str(&format!("mean gesture jitter magnitude: {j:.1} ms\n"));
        }
        out
    }
}

/// Trained models of one fold.
pub struct FoldModels {
    pub test_group: String,
    pub library: DetectorLibrary,
}

/// Trains stage 1 and the detector library on `fold.train` with the seeds
/// of fold number `k`. The test side of the fold is not touched.
pub fn train_fold_library(
    corpus: &[Trajectory],
    fold: &Fold,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<(DetectorLibrary, History)> {
    let gcfg = GestureTrainConfig {
        train: TrainConfig {
            seed: cfg.stage_seed("gesture"),
            ..cfg.gesture.train.clone()
        },
        ..cfg.gesture.clone()
    };
    let (classifier, history) = fit_gesture_fold(corpus, fold, &gcfg, k)?;
    let dcfg = DetectorTrainConfig {
        train: TrainConfig {
            seed: seed::derive_indexed(cfg.stage_seed("detector"), "fold", k as u64),
            ..cfg.detector.train.clone()
        },
        ..cfg.detector.clone()
    };
    let train: Vec<&Trajectory> = fold.train.iter().map(|&i| &corpus[i]).collect();
    let library = train_error_detectors(&train, classifier, &cfg.vocabulary(), &dcfg)?;
    Ok((library, history))
}

/// Library trained with `holdout` left out, using that fold's seeds, or on
/// the whole corpus when no group is held out. Returns the fold used.
pub fn train_library(
    corpus: &[Trajectory],
    cfg: &ExperimentConfig,
    holdout: Option<&str>,
) -> Result<(DetectorLibrary, Fold)> {
    let (k, fold) = match holdout {
        Some(group) => {
            let folds = make_loso_folds(&LosoSpec::from_corpus(corpus)?)?;
            folds
                .into_iter()
                .enumerate()
                .find(|(_, f)| f.test_group == group)
                .ok_or_else(|| Error::Config(format!("holdout: no trajectories in group '{group}'")))?
        }
        None => (
            usize::MAX,
            Fold {
                test_group: String::new(),
                train: (0..corpus.len()).collect(),
                test: Vec::new(),
            },
        ),
    };
    let (library, _) = train_fold_library(corpus, &fold, k, cfg)?;
    Ok((library, fold))
}

/// Per fold: train stage 1 and the detector library on the other groups,
/// then evaluate all three routing modes on the held-out group.
pub fn run_loso_experiment(
    corpus: &[Trajectory],
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<FoldModels>, LatencySummary)> {
    let folds = make_loso_folds(&LosoSpec::from_corpus(corpus)?)?;
    let mut reports = Vec::new();
    let mut models = Vec::new();
    let mut trace_means = Vec::new();
    let mut pooled: [Vec<DemoResult>; 3] = Default::default();
    let modes = [RoutingMode::Predicted, RoutingMode::GroundTruth, RoutingMode::Baseline];
    for (k, fold) in folds.iter().enumerate() {
        let (library, history) = train_fold_library(corpus, fold, k, cfg)?;
        let test: Vec<&Trajectory> = fold.test.iter().map(|&i| &corpus[i]).collect();
        let accuracy = gesture_accuracy(&library.gesture, &test)?;
        log::info!("fold {}: gesture accuracy {accuracy:.4}", fold.test_group);
        let mut per_mode = Vec::new();
        for (m, mode) in modes.iter().enumerate() {
            let mcfg = MonitorConfig {
                mode: *mode,
                ..cfg.monitor.clone()
            };
            let (report, latency) = evaluate_pipeline(&library, &test, &mcfg)?;
            if *mode == RoutingMode::Predicted {
                trace_means.push((latency.mean_ms, latency.samples, latency.p95_ms, latency.max_ms));
            }
            pooled[m].extend(report.per_demo.iter().cloned());
            per_mode.push(report);
        }
        let baseline = per_mode.pop().expect("three modes");
        let ground_truth = per_mode.pop().expect("three modes");
        let predicted = per_mode.pop().expect("three modes");
        log::info!(
            "fold {}: F1 {:?} AUC {:?} (ground truth F1 {:?}, baseline AUC {:?})",
            fold.test_group,
            predicted.f1(),
            predicted.auc,
            ground_truth.f1(),
            baseline.auc
        );
        reports.push(FoldReport {
            gesture: GestureFoldResult {
                test_group: fold.test_group.clone(),
                accuracy,
                best_epoch: history.best_epoch,
                epochs_run: history.epochs.len(),
            },
            predicted,
            ground_truth,
            baseline,
        });
        models.push(FoldModels {
            test_group: fold.test_group.clone(),
            library,
        });
    }
    let [p, g, b] = pooled;
    let threshold = cfg.detector.detector.threshold;
    let samples: usize = trace_means.iter().map(|t| t.1).sum();
    let latency = LatencySummary {
        samples,
        mean_ms: trace_means.iter().map(|t| t.0 * t.1 as f64).sum::<f64>() / samples.max(1) as f64,
        p95_ms: trace_means.iter().map(|t| t.2).fold(0.0, f64::max),
        max_ms: trace_means.iter().map(|t| t.3).fold(0.0, f64::max),
    };
    let mean_gesture_accuracy = reports.iter().map(|r| r.gesture.accuracy).sum::<f64>() / reports.len() as f64;
    let report = ExperimentReport {
        folds: reports,
        mean_gesture_accuracy,
        predicted: MonitorReport::from_demos(RoutingMode::Predicted, threshold, p)?,
        ground_truth: MonitorReport::from_demos(RoutingMode::GroundTruth, threshold, g)?,
        baseline: MonitorReport::from_demos(RoutingMode::Baseline, threshold, b)?,
    };
    Ok((report, models, latency))
}
