//! Stage 2: gesture-specific erroneous-gesture detectors.
//!
//! Each gesture with enough training windows gets its own binary model; the
//! rest are routed to a single non-context baseline trained on every window.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_validation, GestureClassifier};
use crate::error::{Error, Result};
use crate::kinematics::{windows, FeatureSubset, GestureId, NormStats, SlidingWindowSpec, Trajectory};
use crate::nn::{fit, load_model, save_model, Example, Head, History, LayerSpec, Model, ModelConfig, Targets, Tensor, TrainConfig};
use crate::seed;
use crate::task::GestureVocabulary;

pub const LIBRARY_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorArch {
    /// Conv1d + batch norm + ReLU blocks, then fully-connected ReLU layers.
    Conv {
        filters: Vec<usize>,
        kernel: usize,
        fc: Vec<usize>,
        #[serde(default)]
        dropout: f64,
    },
    /// Stacked LSTM reading the window, then fully-connected ReLU layers.
    Lstm { units: Vec<usize>, fc: Vec<usize> },
}

impl Default for DetectorArch {
    fn default() -> Self {
        DetectorArch::Conv {
            filters: vec![16, 8],
            kernel: 3,
            fc: vec![16, 8],
            dropout: 0.0,
        }
    }
}

impl DetectorArch {
    /// Published Block Transfer detector widths.
    pub fn paper_block_transfer() -> Self {
        DetectorArch::Conv {
            filters: vec![256, 128],
            kernel: 3,
            fc: vec![64, 16],
            dropout: 0.0,
        }
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let fc = match self {
            DetectorArch::Conv {
                filters,
                kernel,
                fc,
                dropout,
            } => {
                for &f in filters {
                    layers.extend([LayerSpec::Conv1d { filters: f, kernel: *kernel }, LayerSpec::BatchNorm, LayerSpec::Relu]);
                }
                layers.push(LayerSpec::Flatten);
                if *dropout > 0.0 {
                    layers.push(LayerSpec::Dropout { rate: *dropout });
                }
                fc
            }
            DetectorArch::Lstm { units, fc } => {
                for (i, &u) in units.iter().enumerate() {
                    layers.push(LayerSpec::Lstm {
                        units: u,
                        return_sequences: i + 1 < units.len(),
                    });
                }
                fc
            }
        };
        for &u in fc {
            layers.extend([LayerSpec::Dense { units: u }, LayerSpec::Relu]);
        }
        layers.push(LayerSpec::Dense { units: 1 });
        layers
    }
}

/// What happens to gestures without their own detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Baseline,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub subset: FeatureSubset,
    pub window: SlidingWindowSpec,
    pub arch: DetectorArch,
    /// Gestures with fewer training windows are routed to the fallback.
    pub min_samples: usize,
    pub threshold: f64,
    pub fallback: Fallback,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            subset: FeatureSubset::Cg,
            window: SlidingWindowSpec { length: 10, stride: 1 },
            arch: DetectorArch::default(),
            min_samples: 50,
            threshold: 0.5,
            fallback: Fallback::Baseline,
        }
    }
}

impl DetectorConfig {
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: self.subset.dim(),
            input_len: Some(self.window.length),
            layers: self.arch.layers(),
            head: Head::Sigmoid,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.subset.validate()?;
        self.window.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Model::new(self.model_config(0)).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
    /// Training windows taken every `train_stride` window starts; inference
    /// always slides by one sample.
    pub train_stride: usize,
    /// Weight positives by the negative/positive ratio.
    pub balance: bool,
    /// Leave out windows that end inside an unsafe segment before the
    /// recorded fault onset plus this many samples; the injected ramp has
    /// not yet moved the kinematics away from normal execution there.
    /// `None` keeps every window.
    pub onset_margin: Option<usize>,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            detector: DetectorConfig::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                max_epochs: 30,
                patience: 6,
                ..Default::default()
            },
            val_fraction: 0.15,
            train_stride: 1,
            balance: false,
            onset_margin: Some(3),
        }
    }
}

/// A trained binary model with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    /// `None` for the baseline.
    pub gesture: Option<GestureId>,
    pub subset: FeatureSubset,
    pub window: SlidingWindowSpec,
    pub model: Model,
    pub norm: NormStats,
    pub train_windows: usize,
    pub positive_windows: usize,
    /// Trained on one class only; its scores carry no information.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    gesture: Option<GestureId>,
    subset: FeatureSubset,
    window: SlidingWindowSpec,
    norm: NormStats,
    train_windows: usize,
    positive_windows: usize,
    degenerate: bool,
}

impl Detector {
    /// Values per window (`length × subset width`).
    pub fn window_len(&self) -> usize {
        self.window.length * self.subset.dim()
    }

    /// Probability that a raw (un-normalised) flattened window is erroneous.
    pub fn score(&self, window: &[f64]) -> Result<f64> {
        Ok(self.score_batch(&[window])?[0])
    }

    pub fn score_batch(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let len = self.window_len();
        let mut data = Vec::with_capacity(windows.len() * len);
        for w in windows {
            if w.len() != len {
                return Err(Error::Shape(format!("detector expects {len} values per window, got {}", w.len())));
            }
            let start = data.len();
            data.extend_from_slice(w);
            self.norm.apply_flat(&mut data[start..]);
        }
        let x = Tensor::new(vec![windows.len(), self.window.length, self.subset.dim()], data)?;
        Ok(self.model.predict(&x)?.data)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let meta = DetectorMeta {
            gesture: self.gesture,
            subset: self.subset.clone(),
            window: self.window,
            norm: self.norm.clone(),
            train_windows: self.train_windows,
            positive_windows: self.positive_windows,
            degenerate: self.degenerate,
        };
        save_model(path, &self.model, &serde_json::to_value(meta)?)
    }

    fn load(path: &Path) -> Result<Self> {
        let (model, meta) = load_model(path)?;
        let meta: DetectorMeta = serde_json::from_value(meta)?;
        Ok(Detector {
            gesture: meta.gesture,
            subset: meta.subset,
            window: meta.window,
            model,
            norm: meta.norm,
            train_windows: meta.train_windows,
            positive_windows: meta.positive_windows,
            degenerate: meta.degenerate,
        })
    }
}

/// Which model produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The gesture's own detector.
    Own,
    /// The gesture had no detector and was routed to the baseline.
    Fallback,
    /// The non-context baseline was requested directly.
    Baseline,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Own => "own",
            Provenance::Fallback => "fallback",
            Provenance::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorScore {
    pub probability: f64,
    pub threshold: f64,
    pub provenance: Provenance,
}

impl ErrorScore {
    pub fn is_error(&self) -> bool {
        self.probability >= self.threshold
    }
}

/// Gesture classifier plus the routed stage-2 detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorLibrary {
    pub vocabulary: GestureVocabulary,
    pub gesture: GestureClassifier,
    pub detectors: BTreeMap<GestureId, Detector>,
    pub baseline: Detector,
    pub threshold: f64,
    pub fallback: Fallback,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    vocabulary: GestureVocabulary,
    threshold: f64,
    fallback: Fallback,
    gesture_model: String,
    baseline: String,
    detectors: BTreeMap<GestureId, String>,
    routing: BTreeMap<GestureId, Provenance>,
}

impl DetectorLibrary {
    /// Detector for `gesture` and how it was chosen.
    pub fn route(&self, gesture: GestureId) -> Result<(&Detector, Provenance)> {
        if let Some(d) = self.detectors.get(&gesture) {
            return Ok((d, Provenance::Own));
        }
        match self.fallback {
            Fallback::Baseline => Ok((&self.baseline, Provenance::Fallback)),
            Fallback::None => Err(Error::Routing(format!("no detector for {gesture} and no fallback"))),
        }
    }

    pub fn routing_table(&self) -> BTreeMap<GestureId, Provenance> {
        self.vocabulary
            .ids
            .iter()
            .filter_map(|&g| self.route(g).ok().map(|(_, p)| (g, p)))
            .collect()
    }

    /// Longest window any detector needs.
    pub fn max_window(&self) -> usize {
        self.detectors
            .values()
            .chain(std::iter::once(&self.baseline))
            .map(|d| d.window.length)
            .max()
            .unwrap_or(1)
    }

    /// Every vocabulary gesture must resolve to a detector.
    pub fn validate(&self) -> Result<()> {
        for &g in &self.vocabulary.ids {
            self.route(g)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        self.gesture.save(&dir.join("gesture.bin"))?;
        self.baseline.save(&dir.join("baseline.bin"))?;
        let mut files = BTreeMap::new();
        for (g, d) in &self.detectors {
            let name = format!("detector_{g}.bin");
            d.save(&dir.join(&name))?;
            files.insert(*g, name);
        }
        let manifest = Manifest {
            version: LIBRARY_VERSION,
            vocabulary: self.vocabulary.clone(),
            threshold: self.threshold,
            fallback: self.fallback,
            gesture_model: "gesture.bin".into(),
            baseline: "baseline.bin".into(),
            detectors: files,
            routing: self.routing_table(),
        };
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::file(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != LIBRARY_VERSION {
            return Err(Error::Version {
                found: manifest.version,
                expected: LIBRARY_VERSION,
            });
        }
        let detectors = manifest
            .detectors
            .iter()
            .map(|(g, f)| Ok((*g, Detector::load(&dir.join(f))?)))
            .collect::<Result<_>>()?;
        let lib = DetectorLibrary {
            vocabulary: manifest.vocabulary,
            gesture: GestureClassifier::load(&dir.join(&manifest.gesture_model))?,
            detectors,
            baseline: Detector::load(&dir.join(&manifest.baseline))?,
            threshold: manifest.threshold,
            fallback: manifest.fallback,
        };
        lib.validate()?;
        Ok(lib)
    }
}

/// Scores one raw window with the detector routed for `gesture`.
pub fn score_window(library: &DetectorLibrary, gesture: GestureId, window: &[f64]) -> Result<ErrorScore> {
    let (detector, provenance) = library.route(gesture)?;
    Ok(ErrorScore {
        probability: detector.score(window)?,
        threshold: library.threshold,
        provenance,
    })
}

/// A training window with the gesture and label of the segment holding its
/// last sample, which is the sample the monitor scores it at.
struct LabeledWindow {
    gesture: GestureId,
    unsafe_: bool,
    data: Vec<f64>,
}

fn labeled_windows(corpus: &[&Trajectory], cfg: &DetectorTrainConfig) -> Result<Vec<LabeledWindow>> {
    let spec = SlidingWindowSpec {
        length: cfg.detector.window.length,
        stride: cfg.detector.window.stride * cfg.train_stride.max(1),
    };
    let mut out = Vec::new();
    for traj in corpus {
        let onset = traj.meta.fault_onset_ms.map(|ms| traj.index_at_ms(ms));
        for w in windows(traj, spec, &cfg.detector.subset)? {
            let last = w.start + spec.length - 1;
            if let Some(seg) = traj.segment_at(last) {
                let early = match (cfg.onset_margin, onset) {
                    (Some(m), Some(o)) => last < o + m,
                    _ => false,
                };
                if seg.unsafe_ && early {
                    continue;
                }
                out.push(LabeledWindow {
                    gesture: seg.gesture,
                    unsafe_: seg.unsafe_,
                    data: w.data,
                });
            }
        }
    }
    Ok(out)
}

fn train_detector(
    train: &[&LabeledWindow],
    val: &[&LabeledWindow],
    gesture: Option<GestureId>,
    cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<(Detector, History)> {
    if train.is_empty() {
        return Err(Error::Training("no training windows".into()));
    }
    let c = cfg.detector.subset.dim();
    let norm = NormStats::fit(train.iter().flat_map(|w| w.data.chunks(c)))?;
    let examples = |ws: &[&LabeledWindow]| -> Vec<Example> {
        ws.iter()
            .map(|w| {
                let mut input = w.data.clone();
                norm.apply_flat(&mut input);
                Example {
                    input,
                    steps: cfg.detector.window.length,
                    targets: Targets::Binary(vec![Some(if w.unsafe_ { 1.0 } else { 0.0 })]),
                }
            })
            .collect()
    };
    let positives = train.iter().filter(|w| w.unsafe_).count();
    let degenerate = positives == 0 || positives == train.len();
    let train_ex = examples(train);
    let val_ex = if val.is_empty() { train_ex.clone() } else { examples(val) };
    let mut tc = TrainConfig {
        seed: seed::derive(seed, "fit"),
        ..cfg.train.clone()
    };
    if cfg.balance && !degenerate {
        tc.pos_weight = (train.len() - positives) as f64 / positives as f64;
    }
    let mut model = Model::new(cfg.detector.model_config(seed::derive(seed, "init")))?;
    let history = fit(&mut model, &train_ex, &val_ex, &tc)?;
    Ok((
        Detector {
            gesture,
            subset: cfg.detector.subset.clone(),
            window: cfg.detector.window,
            model,
            norm,
            train_windows: train.len(),
            positive_windows: positives,
            degenerate,
        },
        history,
    ))
}

fn prepared(corpus: &[&Trajectory], cfg: &DetectorTrainConfig) -> Result<(Vec<LabeledWindow>, Vec<LabeledWindow>)> {
    cfg.detector.validate()?;
    let ix: Vec<usize> = (0..corpus.len()).collect();
    let (tr, va) = if cfg.val_fraction > 0.0 {
        split_validation(&ix, cfg.val_fraction, seed::derive(cfg.train.seed, "detector-split"))?
    } else {
        (ix, Vec::new())
    };
    let pick = |ix: &[usize]| -> Vec<&Trajectory> { ix.iter().map(|&i| corpus[i]).collect() };
    Ok((labeled_windows(&pick(&tr), cfg)?, labeled_windows(&pick(&va), cfg)?))
}

/// The non-context baseline: one model over all windows.
pub fn train_baseline_detector(corpus: &[&Trajectory], cfg: &DetectorTrainConfig) -> Result<Detector> {
    let (tr, va) = prepared(corpus, cfg)?;
    let tr: Vec<&LabeledWindow> = tr.iter().collect();
    let va: Vec<&LabeledWindow> = va.iter().collect();
    Ok(train_detector(&tr, &va, None, cfg, seed::derive(cfg.train.seed, "baseline"))?.0)
}

/// Trains one detector per vocabulary gesture with at least `min_samples`
/// training windows, plus the baseline, and bundles them with `gesture`.
pub fn train_error_detectors(
    corpus: &[&Trajectory],
    gesture: GestureClassifier,
    vocabulary: &GestureVocabulary,
    cfg: &DetectorTrainConfig,
) -> Result<DetectorLibrary> {
    let (tr, va) = prepared(corpus, cfg)?;
    let mut detectors = BTreeMap::new();
    for &g in &vocabulary.ids {
        let gtr: Vec<&LabeledWindow> = tr.iter().filter(|w| w.gesture == g).collect();
        if gtr.len() < cfg.detector.min_samples {
            log::warn!(
                "{g}: {} training windows (< {}), routed to the fallback",
                gtr.len(),
                cfg.detector.min_samples
            );
            continue;
        }
        let gva: Vec<&LabeledWindow> = va.iter().filter(|w| w.gesture == g).collect();
        let (d, h) = train_detector(&gtr, &gva, Some(g), cfg, seed::derive_indexed(cfg.train.seed, "detector", g.0 as u64))?;
        if d.degenerate {
            log::warn!("{g}: detector trained on a single class");
        }
        log::info!("{g}: {} windows, {} unsafe, best epoch {}", d.train_windows, d.positive_windows, h.best_epoch);
        detectors.insert(g, d);
    }
    let all_tr: Vec<&LabeledWindow> = tr.iter().collect();
    let all_va: Vec<&LabeledWindow> = va.iter().collect();
    let (baseline, _) = train_detector(&all_tr, &all_va, None, cfg, seed::derive(cfg.train.seed, "baseline"))?;
    let lib = DetectorLibrary {
        vocabulary: vocabulary.clone(),
        gesture,
        detectors,
        baseline,
        threshold: cfg.detector.threshold,
        fallback: cfg.detector.fallback,
    };
    lib.validate()?;
    Ok(lib)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::classify::{build_gesture_model, GestureModelConfig};
    use crate::kinematics::{GestureSegment, KinematicsSample, NUM_FEATURES};
    use crate::metrics::roc_auc;

    /// A demo of four 30-sample gestures; the grasper of unsafe segments
    /// sits at `hi` instead of 0.3.
    pub(crate) fn toy_demo(unsafe_at: &[usize], hi: f64, index: u64) -> Trajectory {
        let gestures = [GestureId(12), GestureId(2), GestureId(5), GestureId(6)];
        let mut samples = Vec::new();
        let mut segments = Vec::new();
        for (k, &g) in gestures.iter().enumerate() {
            let bad = unsafe_at.contains(&k);
            for j in 0..30 {
                let i = k * 30 + j;
                let mut f = [0.0; NUM_FEATURES];
                f[0] = k as f64 * 100.0 + j as f64 + index as f64 * 0.01;
                f[1] = (i as f64 * 0.37 + index as f64).sin();
                f[12] = if bad { hi } else { 0.3 } + 0.01 * ((i * 7 + index as usize) % 5) as f64;
                samples.push(KinematicsSample::from_features(i as f64 * 10.0, &f));
            }
            let mut seg = GestureSegment::new(g, k * 30, k * 30 + 29);
            seg.unsafe_ = bad;
            segments.push(seg);
        }
        Trajectory {
            samples,
            sample_rate_hz: 100.0,
            segments,
            source: Default::default(),
            length_unit: "um".into(),
            meta: Default::default(),
        }
    }

    pub(crate) fn toy_corpus() -> Vec<Trajectory> {
        (0..8)
            .map(|i| toy_demo(if i % 2 == 0 { &[1, 3] } else { &[] }, 1.2, i))
            .collect()
    }

    pub(crate) fn toy_config() -> DetectorTrainConfig {
        DetectorTrainConfig {
            detector: DetectorConfig {
                window: SlidingWindowSpec { length: 5, stride: 1 },
                arch: DetectorArch::Conv {
                    filters: vec![4],
                    kernel: 3,
                    fc: vec![4],
                    dropout: 0.0,
                },
                ..Default::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 32,
                max_epochs: 15,
                patience: 15,
                seed: 4,
                ..Default::default()
            },
            val_fraction: 0.25,
            train_stride: 1,
            balance: false,
            onset_margin: Some(3),
        }
    }

    pub(crate) fn toy_library() -> DetectorLibrary {
        let corpus = toy_corpus();
        let refs: Vec<&Trajectory> = corpus.iter().collect();
        let gcfg = GestureModelConfig {
            lstm_units: vec![4],
            fc_units: 4,
            ..Default::default()
        };
        let gesture = GestureClassifier {
            model: build_gesture_model(&gcfg, 0).unwrap(),
            norm: NormStats::identity(8),
            config: gcfg,
        };
        let vocab = GestureVocabulary::new(vec![GestureId(12), GestureId(2), GestureId(5), GestureId(6), GestureId(11)]);
        train_error_detectors(&refs, gesture, &vocab, &toy_config()).unwrap()
    }

    fn auc_for(det: &Detector, corpus: &[Trajectory], g: Option<GestureId>) -> f64 {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for t in corpus {
            for w in windows(t, det.window, &det.subset).unwrap() {
                let seg = t.segment_at(w.start + det.window.length - 1).unwrap();
                if g.is_some_and(|g| g != seg.gesture) {
                    continue;
                }
                scores.push(det.score(&w.data).unwrap());
                labels.push(seg.unsafe_);
            }
        }
        roc_auc(&scores, &labels).unwrap().unwrap().auc
    }

    #[test]
    fn separable_windows_are_learned() {
        let lib = toy_library();
        let corpus = toy_corpus();
        for g in [GestureId(2), GestureId(6)] {
            let auc = auc_for(&lib.detectors[&g], &corpus, Some(g));
            assert!(auc >= 0.99, "{g}: {auc}");
        }
        assert!(auc_for(&lib.baseline, &corpus, None) >= 0.99);
        assert!(lib.detectors[&GestureId(12)].degenerate);
        assert!(!lib.detectors[&GestureId(2)].degenerate);
    }

    #[test]
    fn routing_is_total_with_fallback() {
        let lib = toy_library();
        let table = lib.routing_table();
        assert_eq!(table.len(), lib.vocabulary.len());
        assert_eq!(table[&GestureId(11)], Provenance::Fallback);
        assert_eq!(table[&GestureId(2)], Provenance::Own);
        let w = vec![0.0; lib.baseline.window_len()];
        let s = score_window(&lib, GestureId(11), &w).unwrap();
        assert_eq!(s.provenance, Provenance::Fallback);
        assert!((0.0..=1.0).contains(&s.probability));
        let strict = DetectorLibrary {
            fallback: Fallback::None,
            ..lib
        };
        assert!(matches!(score_window(&strict, GestureId(11), &w), Err(Error::Routing(_))));
        assert!(strict.validate().is_err());
    }

    #[test]
    fn same_seed_same_library_and_round_trip() {
        let a = toy_library();
        let b = toy_library();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let loaded = DetectorLibrary::load(dir.path()).unwrap();
        assert_eq!(loaded, a);
        let first = std::fs::read(dir.path().join("detector_G2.bin")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        loaded.save(dir2.path()).unwrap();
        assert_eq!(std::fs::read(dir2.path().join("detector_G2.bin")).unwrap(), first);
        assert_eq!(
            std::fs::read(dir2.path().join(MANIFEST)).unwrap(),
            std::fs::read(dir.path().join(MANIFEST)).unwrap()
        );
    }

    #[test]
    fn swapping_detectors_changes_scores() {
        let mut lib = toy_library();
        let corpus = toy_corpus();
        let w = &windows(&corpus[0], lib.baseline.window, &lib.baseline.subset).unwrap()[35];
        let before = score_window(&lib, GestureId(2), &w.data).unwrap().probability;
        let g2 = lib.detectors.remove(&GestureId(2)).unwrap();
        let g12 = lib.detectors.remove(&GestureId(12)).unwrap();
        lib.detectors.insert(GestureId(2), g12);
        lib.detectors.insert(GestureId(12), g2);
        let after = score_window(&lib, GestureId(2), &w.data).unwrap().probability;
        assert!(before > 0.5 && after < 0.5, "{before} {after}");
    }

    #[test]
    fn wrong_window_shape_is_rejected() {
        let lib = toy_library();
        assert!(score_window(&lib, GestureId(2), &[0.0; 3]).is_err());
    }
}
