use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, Targets};
use super::optim::{Adam, EarlyStopping, StepDecay};
use super::{Model, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay: StepDecay,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Loss weight of positive binary targets.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: StepDecay { factor: 0.5, every: 20 },
            patience: 10,
            batch_size: 32,
            max_epochs: 100,
            seed: 0,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch size and epochs must be at least 1".into()));
        }
        if !(self.pos_weight > 0.0) {
            return Err(Error::Config("positive weight must be positive".into()));
        }
        Ok(())
    }
}

/// One training sequence: `steps × channels` inputs and its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub steps: usize,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub targets: Targets,
}

/// Stacks examples, zero-padding inputs and masking targets to the longest.
pub fn make_batch(examples: &[&Example], channels: usize) -> Result<Batch> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Training("cannot build an empty batch".into()))?;
    let steps = examples.iter().map(|e| e.steps).max().unwrap_or(0);
    let out = examples.iter().map(|e| e.targets.len()).max().unwrap_or(0);
    let mut x = Tensor::zeros(vec![examples.len(), steps, channels]);
    for (b, e) in examples.iter().enumerate() {
        if e.input.len() != e.steps * channels {
            return Err(Error::Shape(format!(
                "example has {} values for {} steps of {channels}",
                e.input.len(),
                e.steps
            )));
        }
        x.data[b * steps * channels..b * steps * channels + e.input.len()].copy_from_slice(&e.input);
    }
    let targets = match &first.targets {
        Targets::Classes(_) => {
            let mut v = Vec::with_capacity(examples.len() * out);
            for e in examples {
                let Targets::Classes(t) = &e.targets else {
                    return Err(Error::Training("mixed target kinds in one batch".into()));
                };
                v.extend_from_slice(t);
                v.resize(v.len() + out - t.len(), None);
            }
            Targets::Classes(v)
        }
        Targets::Binary(_) => {
            let mut v = Vec::with_capacity(examples.len() * out);
            for e in examples {
                let Targets::Binary(t) = &e.targets else {
                    return Err(Error::Training("mixed target kinds in one batch".into()));
                };
                v.extend_from_slice(t);
                v.resize(v.len() + out - t.len(), None);
            }
            Targets::Binary(v)
        }
    };
    Ok(Batch { x, targets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean inference-mode loss over `examples`.
pub fn evaluate_loss(model: &Model, examples: &[Example], batch_size: usize, pos_weight: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    let refs: Vec<&Example> = examples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk, model.config.input_dim)?;
        let logits = model.infer(&batch.x)?;
        let (l, _, w) = loss_and_grad(model.config.head, &logits, &batch.targets, pos_weight)?;
        total += l * w;
        weight += w;
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}

/// Shuffled mini-batch indices; a trailing batch of one is merged into the
/// previous batch so batch statistics are always defined.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("more than one batch").extend(last);
    }
    batches
}

/// Mini-batch Adam with step decay and early stopping. The weights of the
/// best validation epoch are restored before returning.
pub fn fit(model: &mut Model, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.epsilon, &shapes);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.decay.lr_at(cfg.learning_rate, epoch);
        let mut total = 0.0;
        let mut weight = 0.0;
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let refs: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let batch = make_batch(&refs, model.config.input_dim)?;
            let (logits, tape) = model.forward_train(&batch.x, &mut rng)?;
            let (loss, dlogits, w) = loss_and_grad(model.config.head, &logits, &batch.targets, cfg.pos_weight)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
            }
            let grads = model.backward(&tape, &dlogits)?;
            adam.step(&mut model.params_mut(), &grads, lr)?;
            total += loss * w;
            weight += w;
        }
        let train_loss = if weight > 0.0 { total / weight } else { 0.0 };
        let val_loss = evaluate_loss(model, val, cfg.batch_size, cfg.pos_weight)?;
        let (improved, stop) = stopper.update(epoch, if val_loss.is_nan() { f64::INFINITY } else { val_loss });
        if improved {
            best = model.clone();
        }
        log::debug!("epoch {epoch}: lr {lr:.2e} train {train_loss:.5} val {val_loss:.5}");
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best;
    *model = best;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, LayerSpec, ModelConfig};

    fn separable(n: usize, seed: u64) -> Vec<Example> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let y: f64 = rng.random_range(-1.0..1.0);
                let label = x + 0.5 * y > 0.0;
                let margin = if label { 0.2 } else { -0.2 };
                Example {
                    input: vec![x + margin, y],
                    steps: 1,
                    targets: Targets::Binary(vec![Some(if label { 1.0 } else { 0.0 })]),
                }
            })
            .collect()
    }

    fn logistic() -> Model {
        Model::new(ModelConfig {
            input_dim: 2,
            input_len: Some(1),
            layers: vec![LayerSpec::Dense { units: 8 }, LayerSpec::Relu, LayerSpec::Dense { units: 1 }],
            head: Head::Sigmoid,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn fits_a_separable_toy_set() {
        let train = separable(200, 1);
        let val = separable(50, 2);
        let mut model = logistic();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 200,
            patience: 200,
            ..Default::default()
        };
        let hist = fit(&mut model, &train, &val, &cfg).unwrap();
        assert!(!hist.epochs.is_empty());
        let correct = train
            .iter()
            .filter(|e| {
                let p = model.predict(&Tensor::new(vec![1, 1, 2], e.input.clone()).unwrap()).unwrap().data[0];
                let Targets::Binary(t) = &e.targets else { unreachable!() };
                (p >= 0.5) == (t[0] == Some(1.0))
            })
            .count();
        assert!(correct as f64 / train.len() as f64 >= 0.99, "{correct}");
    }

    #[test]
    fn training_is_reproducible() {
        let train = separable(64, 3);
        let val = separable(16, 4);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 5,
            ..Default::default()
        };
        let (mut a, mut b) = (logistic(), logistic());
        let ha = fit(&mut a, &train, &val, &cfg).unwrap();
        let hb = fit(&mut b, &train, &val, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let mut m = logistic();
        assert!(fit(&mut m, &[], &separable(3, 1), &TrainConfig::default()).is_err());
        assert!(fit(&mut m, &separable(3, 1), &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 5]);
        let b = epoch_batches(1, 4, &mut rng);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn padding_masks_targets() {
        let a = Example {
            input: vec![1.0, 2.0],
            steps: 2,
            targets: Targets::Classes(vec![Some(0), Some(1)]),
        };
        let b = Example {
            input: vec![3.0],
            steps: 1,
            targets: Targets::Classes(vec![Some(2)]),
        };
        let batch = make_batch(&[&a, &b], 1).unwrap();
        assert_eq!(batch.x.shape, vec![2, 2, 1]);
        assert_eq!(batch.x.data, vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(batch.targets, Targets::Classes(vec![Some(0), Some(1), Some(2), None]));
    }
}
