//! Stage 1 of the monitor: gesture recognition from kinematics.
//!
//! A stacked LSTM runs over the normalised feature stream and emits a
//! probability vector over the gesture vocabulary for every sample. The
//! detector library for stage 2 lives in [`detector`].

pub mod detector;
mod segment;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use detector::{
    score_window, train_baseline_detector, train_error_detectors, Detector, DetectorArch, DetectorConfig,
    DetectorLibrary, DetectorTrainConfig, ErrorScore, Fallback, Provenance, LIBRARY_VERSION,
};
pub use segment::{compute_jitter, segment_predictions, JitterRecord, JitterReport, Segmentation};

use crate::error::{Error, Result};
use crate::folds::Fold;
use crate::kinematics::{feature_matrix, FeatureSubset, GestureId, NormStats, SlidingWindowSpec, Trajectory};
use crate::nn::{fit, load_model, save_model, Example, Head, History, LayerSpec, Model, ModelConfig, StreamState, Targets, Tensor, TrainConfig};
use crate::seed;
use crate::task::DEFAULT_OUTPUT_CLASSES;

/// How stage 1 sees the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GestureInput {
    /// One sample per step with recurrent state carried across the demo.
    Stateful,
    /// A fresh pass over the last `length` samples for every prediction.
    Windowed { window: SlidingWindowSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureModelConfig {
    pub subset: FeatureSubset,
    pub lstm_units: Vec<usize>,
    pub fc_units: usize,
    pub classes: usize,
    pub dropout: f64,
    pub input: GestureInput,
}

impl Default for GestureModelConfig {
    fn default() -> Self {
        GestureModelConfig {
            subset: FeatureSubset::Cg,
            lstm_units: vec![64, 32],
            fc_units: 32,
            classes: DEFAULT_OUTPUT_CLASSES,
            dropout: 0.0,
            input: GestureInput::Stateful,
        }
    }
}

impl GestureModelConfig {
    /// The published layer widths.
    pub fn paper() -> Self {
        GestureModelConfig {
            lstm_units: vec![512, 96],
            fc_units: 64,
            ..Default::default()
        }
    }
}

/// Stacked LSTM, a ReLU fully-connected layer and a softmax over the
/// vocabulary.
pub fn build_gesture_model(config: &GestureModelConfig, seed: u64) -> Result<Model> {
    config.subset.validate()?;
    if config.lstm_units.is_empty() || config.classes == 0 || config.fc_units == 0 {
        return Err(Error::Config("gesture model needs recurrent layers, a hidden layer and classes".into()));
    }
    let stateful = matches!(config.input, GestureInput::Stateful);
    let n = config.lstm_units.len();
    let mut layers: Vec<LayerSpec> = config
        .lstm_units
        .iter()
        .enumerate()
        .map(|(i, &units)| LayerSpec::Lstm {
            units,
            return_sequences: stateful || i + 1 < n,
        })
        .collect();
    if config.dropout > 0.0 {
        layers.push(LayerSpec::Dropout { rate: config.dropout });
    }
    layers.extend([
        LayerSpec::Dense { units: config.fc_units },
        LayerSpec::Relu,
        LayerSpec::Dense { units: config.classes },
    ]);
    Model::new(ModelConfig {
        input_dim: config.subset.dim(),
        input_len: None,
        layers,
        head: Head::Softmax,
        seed,
    })
}

/// A trained stage-1 model together with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureClassifier {
    pub config: GestureModelConfig,
    pub model: Model,
    pub norm: NormStats,
}

/// Per-sample stage-1 state for streaming inference.
#[derive(Debug, Clone)]
pub enum GestureStream {
    Stateful(StreamState),
    Windowed { rows: Vec<Vec<f64>>, length: usize },
}

#[derive(Serialize, Deserialize)]
struct GestureMeta {
    config: GestureModelConfig,
    norm: NormStats,
}

impl GestureClassifier {
    /// Writes a model bundle with the config and normalisation as metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = GestureMeta {
            config: self.config.clone(),
            norm: self.norm.clone(),
        };
        save_model(path, &self.model, &serde_json::to_value(meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, meta) = load_model(path)?;
        let meta: GestureMeta = serde_json::from_value(meta)?;
        Ok(GestureClassifier {
            config: meta.config,
            model,
            norm: meta.norm,
        })
    }

    fn normalized_rows(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let mut rows = feature_matrix(traj, &self.config.subset)?;
        for r in &mut rows {
            self.norm.apply(r);
        }
        Ok(rows)
    }

    pub fn start_stream(&self) -> Result<GestureStream> {
        Ok(match &self.config.input {
            GestureInput::Stateful => GestureStream::Stateful(self.model.stream_state()?),
            GestureInput::Windowed { window } => GestureStream::Windowed {
                rows: Vec::new(),
                length: window.length,
            },
        })
    }

    /// Feeds one raw 38-feature row and returns the gesture distribution.
    pub fn step(&self, stream: &mut GestureStream, features: &[f64]) -> Result<Vec<f64>> {
        let idx = self.config.subset.indices();
        let mut row: Vec<f64> = idx
            .iter()
            .map(|&i| {
                features
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Shape(format!("sample has {} features, needs index {i}", features.len())))
            })
            .collect::<Result<_>>()?;
        self.norm.apply(&mut row);
        match stream {
            GestureStream::Stateful(state) => self.model.step(state, &row),
            GestureStream::Windowed { rows, length } => {
                rows.push(row);
                if rows.len() > *length {
                    rows.remove(0);
                }
                let x = Tensor::new(vec![1, rows.len(), row_len(rows)], rows.concat())?;
                Ok(self.model.predict(&x)?.data)
            }
        }
    }

    /// One probability vector per sample; state is reset at the start.
    pub fn predict_stream(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let rows = self.normalized_rows(traj)?;
        match &self.config.input {
            GestureInput::Stateful => {
                if rows.is_empty() {
                    return Ok(Vec::new());
                }
                let c = self.config.subset.dim();
                let x = Tensor::new(vec![1, rows.len(), c], rows.concat())?;
                let y = self.model.predict(&x)?;
                Ok(y.data.chunks(self.model.output_dim).map(<[f64]>::to_vec).collect())
            }
            GestureInput::Windowed { window } => (0..rows.len())
                .map(|t| {
                    let lo = (t + 1).saturating_sub(window.length);
                    let x = Tensor::new(vec![1, t + 1 - lo, rows[0].len()], rows[lo..=t].concat())?;
                    Ok(self.model.predict(&x)?.data)
                })
                .collect(),
        }
    }

    /// Arg-max gesture per sample.
    pub fn predict_labels(&self, traj: &Trajectory) -> Result<Vec<GestureId>> {
        Ok(self.predict_stream(traj)?.iter().map(|p| argmax_gesture(p)).collect())
    }
}

fn row_len(rows: &[Vec<f64>]) -> usize {
    rows.first().map_or(0, Vec::len)
}

/// Most probable gesture; the first maximum wins ties.
pub fn argmax_gesture(p: &[f64]) -> GestureId {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    GestureId::from_class_index(best)
}

/// Stage-1 probabilities for every sample of `traj`.
pub fn predict_gesture_stream(classifier: &GestureClassifier, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let dim = classifier.config.subset.dim();
    if classifier.norm.dim() != dim || classifier.model.config.input_dim != dim {
        return Err(Error::Shape(format!(
            "classifier expects {} features but its subset has {dim}",
            classifier.model.config.input_dim
        )));
    }
    classifier.predict_stream(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureTrainConfig {
    pub model: GestureModelConfig,
    pub train: TrainConfig,
    /// Share of the training demonstrations held out for early stopping.
    pub val_fraction: f64,
}

impl Default for GestureTrainConfig {
    fn default() -> Self {
        GestureTrainConfig {
            model: GestureModelConfig::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 8,
                max_epochs: 60,
                patience: 10,
                ..Default::default()
            },
            val_fraction: 0.15,
        }
    }
}

/// Splits demonstration indices into training and validation parts with a
/// seeded shuffle. At least one demonstration lands on each side.
pub fn split_validation(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::Training(format!(
            "need at least two demonstrations to hold out validation data, got {}",
            indices.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let val = order.split_off(order.len() - n_val);
    order.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((order, val))
}

fn gesture_examples(
    corpus: &[&Trajectory],
    config: &GestureModelConfig,
    norm: &NormStats,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for traj in corpus {
        let mut rows = feature_matrix(traj, &config.subset)?;
        for r in &mut rows {
            norm.apply(r);
        }
        let labels: Vec<Option<usize>> = traj
            .gesture_labels()
            .into_iter()
            .map(|g| g.map(GestureId::class_index).filter(|&c| c < config.classes))
            .collect();
        match &config.input {
            GestureInput::Stateful => out.push(Example {
                input: rows.concat(),
                steps: rows.len(),
                targets: Targets::Classes(labels),
            }),
            GestureInput::Windowed { window } => {
                for k in 0..window.count(rows.len()) {
                    let start = k * window.stride;
                    let end = start + window.length;
                    if labels[end - 1].is_none() {
                        continue;
                    }
                    out.push(Example {
                        input: rows[start..end].concat(),
                        steps: window.length,
                        targets: Targets::Classes(vec![labels[end - 1]]),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Trains one classifier on `train`, early-stopping on `val`.
pub fn fit_gesture_classifier(
    train: &[&Trajectory],
    val: &[&Trajectory],
    cfg: &GestureTrainConfig,
) -> Result<(GestureClassifier, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("gesture training needs training and validation demonstrations".into()));
    }
    let rows: Vec<Vec<f64>> = train
        .iter()
        .map(|t| feature_matrix(t, &cfg.model.subset))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let norm = NormStats::fit(rows.iter().map(Vec::as_slice))?;
    let mut model = build_gesture_model(&cfg.model, seed::derive(cfg.train.seed, "gesture-init"))?;
    let train_ex = gesture_examples(train, &cfg.model, &norm)?;
    let val_ex = gesture_examples(val, &cfg.model, &norm)?;
    let history = fit(&mut model, &train_ex, &val_ex, &cfg.train)?;
    Ok((
        GestureClassifier {
            config: cfg.model.clone(),
            model,
            norm,
        },
        history,
    ))
}

/// Share of annotated samples whose arg-max gesture matches the annotation.
pub fn gesture_accuracy(classifier: &GestureClassifier, corpus: &[&Trajectory]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for traj in corpus {
        let pred = classifier.predict_labels(traj)?;
        for (p, t) in pred.iter().zip(traj.gesture_labels()) {
            if let Some(t) = t {
                total += 1;
                correct += usize::from(*p == t);
            }
        }
    }
    if total == 0 {
        return Err(Error::Training("no annotated samples to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureFoldResult {
    pub test_group: String,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoGestureReport {
    pub folds: Vec<GestureFoldResult>,
    pub mean_accuracy: f64,
}

/// Trains one classifier per fold and scores it on the held-out group.
/// Fold `k` trains with a seed derived from the configured seed and `k`.
pub fn train_gesture_classifier(
    corpus: &[Trajectory],
    folds: &[Fold],
    cfg: &GestureTrainConfig,
) -> Result<(Vec<GestureClassifier>, LosoGestureReport)> {
    if folds.is_empty() {
        return Err(Error::Config("no folds to train".into()));
    }
    let mut models = Vec::new();
    let mut results = Vec::new();
    for (k, fold) in folds.iter().enumerate() {
        if fold.train.is_empty() || fold.test.is_empty() {
            return Err(Error::Training(format!("fold '{}' has an empty split", fold.test_group)));
        }
        let (classifier, history, accuracy) = train_gesture_fold(corpus, fold, cfg, k)?;
        log::info!("gesture fold {}: accuracy {accuracy:.4}", fold.test_group);
        results.push(GestureFoldResult {
            test_group: fold.test_group.clone(),
            accuracy,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
        });
        models.push(classifier);
    }
    let mean_accuracy = results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64;
    Ok((
        models,
        LosoGestureReport {
            folds: results,
            mean_accuracy,
        },
    ))
}

/// Trains and scores the classifier of fold number `k`.
pub fn train_gesture_fold(
    corpus: &[Trajectory],
    fold: &Fold,
    cfg: &GestureTrainConfig,
    k: usize,
) -> Result<(GestureClassifier, History, f64)> {
    let (classifier, history) = fit_gesture_fold(corpus, fold, cfg, k)?;
    let test: Vec<&Trajectory> = fold.test.iter().map(|&i| &corpus[i]).collect();
    let accuracy = gesture_accuracy(&classifier, &test)?;
    Ok((classifier, history, accuracy))
}

/// Trains the classifier of fold number `k` without scoring it, so the
/// test side of `fold` may be empty.
pub fn fit_gesture_fold(
    corpus: &[Trajectory],
    fold: &Fold,
    cfg: &GestureTrainConfig,
    k: usize,
) -> Result<(GestureClassifier, History)> {
    let fold_seed = seed::derive_indexed(cfg.train.seed, "gesture-fold", k as u64);
    let (tr, va) = split_validation(&fold.train, cfg.val_fraction, seed::derive(fold_seed, "split"))?;
    let pick = |ix: &[usize]| -> Vec<&Trajectory> { ix.iter().map(|&i| &corpus[i]).collect() };
    let fold_cfg = GestureTrainConfig {
        train: TrainConfig {
            seed: fold_seed,
            ..cfg.train.clone()
        },
        ..cfg.clone()
    };
    fit_gesture_classifier(&pick(&tr), &pick(&va), &fold_cfg)
}

/// Per-gesture sample counts, used in reports.
pub fn gesture_histogram(corpus: &[Trajectory]) -> BTreeMap<GestureId, usize> {
    let mut out = BTreeMap::new();
    for t in corpus {
        for s in &t.segments {
            *out.entry(s.gesture).or_insert(0) += s.len();
        }
    }
    out
}
