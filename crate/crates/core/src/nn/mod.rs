//! A small, deterministic neural-network core in 64-bit floats.
//!
//! Activations are `[batch, time, channel]` tensors. Models are a flat
//! stack of layers followed by a softmax or sigmoid head; training keeps
//! per-layer caches on a [`Tape`] so inference can take `&self` and be
//! shared freely.

mod bundle;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bundle::{load_model, save_model, BUNDLE_VERSION};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use layers::{sigmoid, Activation, BatchNorm, CellOutput, Conv1d, Dense, Layer, Lstm};
pub use loss::{loss_and_grad, sigmoid_bce, softmax, softmax_xent, Targets};
pub use optim::{Adam, EarlyStopping, StepDecay};
pub use train::{evaluate_loss, fit, make_batch, Batch, Example, History, TrainConfig};

use crate::error::{Error, Result};
use layers::Cache;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, t, c] => Ok((b, t, c)),
            _ => Err(Error::Shape(format!("expected a [batch, time, channel] tensor, got {:?}", self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Lstm {
        units: usize,
        #[serde(default = "yes")]
        return_sequences: bool,
    },
    Conv1d {
        filters: usize,
        kernel: usize,
    },
    BatchNorm,
    Relu,
    Tanh,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    Flatten,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Multi-class probabilities over the last axis.
    Softmax,
    /// Single-unit probability.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Fixed sequence length, required by `flatten`; `None` for models
    /// that run over arbitrary-length streams.
    pub input_len: Option<usize>,
    pub layers: Vec<LayerSpec>,
    pub head: Head,
    pub seed: u64,
}

/// Per-layer caches from one training-mode forward pass.
pub struct Tape {
    caches: Vec<Cache>,
}

/// Recurrent state for step-by-step inference.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    states: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
    pub output_dim: usize,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ch = config.input_dim;
        let mut len = config.input_len;
        if ch == 0 {
            return Err(Error::Shape("input dimension must be positive".into()));
        }
        let mut layers = Vec::with_capacity(config.layers.len());
        for spec in &config.layers {
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    let l = Layer::Dense(Dense::new(ch, nonzero(units, "dense units")?, &mut rng));
                    ch = units;
                    l
                }
                LayerSpec::Lstm {
                    units,
                    return_sequences,
                } => {
                    let l = Layer::Lstm(Lstm::new(ch, nonzero(units, "recurrent units")?, return_sequences, &mut rng));
                    ch = units;
                    if !return_sequences {
                        len = Some(1);
                    }
                    l
                }
                LayerSpec::Conv1d { filters, kernel } => {
                    nonzero(kernel, "kernel size")?;
                    if let Some(t) = len {
                        if kernel > t {
                            return Err(Error::Shape(format!("kernel {kernel} longer than sequence {t}")));
                        }
                        len = Some(t - kernel + 1);
                    }
                    let l = Layer::Conv1d(Conv1d::new(ch, nonzero(filters, "filters")?, kernel, &mut rng));
                    ch = filters;
                    l
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(ch)),
                LayerSpec::Relu => Layer::Activation(Activation::Relu),
                LayerSpec::Tanh => Layer::Activation(Activation::Tanh),
                LayerSpec::Sigmoid => Layer::Activation(Activation::Sigmoid),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    Layer::Dropout(rate)
                }
                LayerSpec::Flatten => {
                    let t = len.ok_or_else(|| Error::Shape("flatten needs a fixed input length".into()))?;
                    ch *= t;
                    len = Some(1);
                    Layer::Flatten
                }
            };
            layers.push(layer);
        }
        if config.head == Head::Sigmoid && ch != 1 {
            return Err(Error::Shape(format!("sigmoid head needs one output unit, got {ch}")));
        }
        Ok(Model {
            config,
            layers,
            output_dim: ch,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, t, c) = x.dims3()?;
        if c != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input features, got {c}",
                self.config.input_dim
            )));
        }
        if let Some(len) = self.config.input_len {
            if t != len {
                return Err(Error::Shape(format!("model expects sequences of {len}, got {t}")));
            }
        }
        Ok(())
    }

    /// Training-mode forward pass returning logits and the tape. Batch-norm
    /// running statistics are updated as a side effect.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&cur, Some(rng))?;
            layer.update_running_stats(&cache);
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Tape { caches }))
    }

    /// Parameter gradients for upstream gradient `dy` on the logits.
    pub fn backward(&self, tape: &Tape, dy: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut grads = self.zero_grads();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offsets.push(k);
            k += l.params().len();
        }
        let mut g = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let n = layer.params().len();
            g = layer.backward(&tape.caches[i], &g, &mut grads[offsets[i]..offsets[i] + n])?;
        }
        Ok(grads)
    }

    /// Inference-mode logits.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, None)?.0;
        }
        Ok(cur)
    }

    /// Applies the head to logits in place.
    pub fn apply_head(&self, logits: &mut [f64]) {
        match self.config.head {
            Head::Softmax => {
                for row in logits.chunks_mut(self.output_dim) {
                    let p = softmax(row);
                    row.copy_from_slice(&p);
                }
            }
            Head::Sigmoid => logits.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    /// Inference-mode probabilities.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.infer(x)?;
        self.apply_head(&mut y.data);
        Ok(y)
    }

    /// Whether every layer acts per time step, so the model can be stepped.
    pub fn is_streamable(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Lstm(l) => l.return_sequences,
            Layer::Conv1d(_) | Layer::Flatten => false,
            _ => true,
        })
    }

    pub fn stream_state(&self) -> Result<StreamState> {
        if !self.is_streamable() {
            return Err(Error::Config("model has layers that need a whole window".into()));
        }
        Ok(StreamState {
            states: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Lstm(l) => Some((vec![0.0; l.units], vec![0.0; l.units])),
                    _ => None,
                })
                .collect(),
        })
    }

    /// Advances the stream by one sample and returns its probabilities.
    pub fn step(&self, state: &mut StreamState, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input features, got {}",
                self.config.input_dim,
                x.len()
            )));
        }
        if state.states.len() != self.layers.len() {
            return Err(Error::Shape("stream state belongs to another model".into()));
        }
        let mut cur = x.to_vec();
        for (layer, st) in self.layers.iter().zip(&mut state.states) {
            cur = match (layer, st) {
                (Layer::Dense(d), _) => {
                    let mut y = vec![0.0; d.units];
                    d.row(&cur, &mut y);
                    y
                }
                (Layer::Lstm(l), Some((h, c))) => {
                    let out = l.cell(&cur, h, c);
                    *h = out.h;
                    *c = out.c;
                    h.clone()
                }
                (Layer::BatchNorm(bn), _) => {
                    let mut y = vec![0.0; bn.channels];
                    bn.infer_row(&cur, &mut y);
                    y
                }
                (Layer::Activation(a), _) => cur.iter().map(|&v| a.apply(v)).collect(),
                (Layer::Dropout(_), _) => cur,
                _ => return Err(Error::Config("layer cannot be stepped".into())),
            };
        }
        self.apply_head(&mut cur);
        Ok(cur)
    }
}

fn nonzero(v: usize, what: &str) -> Result<usize> {
    if v == 0 {
        return Err(Error::Shape(format!("{what} must be positive")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn gesture_config(input: usize) -> ModelConfig {
        ModelConfig {
            input_dim: input,
            input_len: None,
            layers: vec![
                LayerSpec::Lstm {
                    units: 64,
                    return_sequences: true,
                },
                LayerSpec::Lstm {
                    units: 32,
                    return_sequences: true,
                },
                LayerSpec::Dense { units: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 15 },
            ],
            head: Head::Softmax,
            seed: 3,
        }
    }

    #[test]
    fn closed_form_parameter_count() {
        let m = Model::new(gesture_config(8)).unwrap();
        let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
        let dense = |i: usize, o: usize| o * i + o;
        assert_eq!(m.param_count(), lstm(8, 64) + lstm(64, 32) + dense(32, 32) + dense(32, 15));
        assert_eq!(m.param_count(), 32655);
        assert_eq!(m.output_dim, 15);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(gesture_config(5)).unwrap();
        let b = Model::new(gesture_config(5)).unwrap();
        assert_eq!(a, b);
        let mut cfg = gesture_config(5);
        cfg.seed = 4;
        assert_ne!(a, Model::new(cfg).unwrap());
    }

    #[test]
    fn identity_dense() {
        let mut m = Model::new(ModelConfig {
            input_dim: 3,
            input_len: None,
            layers: vec![LayerSpec::Dense { units: 3 }],
            head: Head::Softmax,
            seed: 0,
        })
        .unwrap();
        if let Layer::Dense(d) = &mut m.layers[0] {
            d.w = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
            d.b = vec![0.0; 3];
        }
        let x = Tensor::new(vec![1, 2, 3], vec![1., -2., 3., 0.5, 0., -1.]).unwrap();
        assert_eq!(m.infer(&x).unwrap(), x);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
    }

    #[test]
    fn zero_lstm_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Lstm::new(3, 4, true, &mut rng);
        l.w.iter_mut().for_each(|v| *v = 0.0);
        l.u.iter_mut().for_each(|v| *v = 0.0);
        l.b.iter_mut().for_each(|v| *v = 0.0);
        let out = l.cell(&[0.0; 3], &[0.0; 4], &[0.0; 4]);
        assert_eq!(&out.gates[..4], &[0.5; 4]);
        assert_eq!(&out.gates[4..8], &[0.5; 4]);
        assert_eq!(&out.gates[8..12], &[0.0; 4]);
        assert_eq!(out.c, vec![0.0; 4]);
        assert_eq!(out.h, vec![0.0; 4]);
    }

    #[test]
    fn conv_examples() {
        let conv = |kernel: Vec<f64>| {
            let mut m = Model::new(ModelConfig {
                input_dim: 1,
                input_len: Some(4),
                layers: vec![LayerSpec::Conv1d {
                    filters: 1,
                    kernel: kernel.len(),
                }],
                head: Head::Softmax,
                seed: 0,
            })
            .unwrap();
            if let Layer::Conv1d(c) = &mut m.layers[0] {
                c.w = kernel;
                c.b = vec![0.0];
            }
            m
        };
        let x = Tensor::new(vec![1, 4, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(conv(vec![1.0]).infer(&x).unwrap().data, vec![1., 2., 3., 4.]);
        assert_eq!(conv(vec![0.0, 1.0]).infer(&x).unwrap().data, vec![2., 3., 4.]);
        let too_long = Model::new(ModelConfig {
            input_dim: 1,
            input_len: Some(2),
            layers: vec![LayerSpec::Conv1d { filters: 1, kernel: 3 }],
            head: Head::Softmax,
            seed: 0,
        });
        assert!(matches!(too_long, Err(Error::Shape(_))));
    }

    fn bn_model() -> Model {
        Model::new(ModelConfig {
            input_dim: 3,
            input_len: None,
            layers: vec![LayerSpec::BatchNorm],
            head: Head::Softmax,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn batchnorm_training_moments() {
        let mut m = bn_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..4 * 5 * 3).map(|i| ((i * 37 % 11) as f64) * 17.0 - 30.0).collect();
        let x = Tensor::new(vec![4, 5, 3], data).unwrap();
        let (y, _) = m.forward_train(&x, &mut rng).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = y.data.iter().skip(c).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
        let one = Tensor::zeros(vec![1, 5, 3]);
        assert!(matches!(m.forward_train(&one, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn batchnorm_inference_identity_with_unit_stats() {
        let m = bn_model();
        let x = Tensor::new(vec![1, 2, 3], vec![0.1, -0.2, 1.5, 0.0, 2.0, -1.0]).unwrap();
        let y = m.infer(&x).unwrap();
        for (a, b) in x.data.iter().zip(&y.data) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn dropout_identity_cases_and_scaling() {
        let cfg = |rate| ModelConfig {
            input_dim: 1,
            input_len: None,
            layers: vec![LayerSpec::Dropout { rate }],
            head: Head::Softmax,
            seed: 0,
        };
        let x = Tensor::new(vec![1, 100_000, 1], vec![2.0; 100_000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut zero = Model::new(cfg(0.0)).unwrap();
        assert_eq!(zero.forward_train(&x, &mut rng).unwrap().0, x);
        let mut half = Model::new(cfg(0.5)).unwrap();
        assert_eq!(half.infer(&x).unwrap(), x);
        let (y, _) = half.forward_train(&x, &mut rng).unwrap();
        let mean = y.data.iter().sum::<f64>() / y.data.len() as f64;
        assert!((mean - 2.0).abs() < 0.02 * 2.0, "mean {mean}");
        assert!(y.data.iter().all(|&v| v == 0.0 || v == 4.0));
        assert!(Model::new(cfg(1.0)).is_err());
    }

    #[test]
    fn streaming_equals_batch_bitwise() {
        let m = Model::new(gesture_config(6)).unwrap();
        let steps = 40;
        let data: Vec<f64> = (0..steps * 6).map(|i| ((i as f64) * 0.37).sin()).collect();
        let x = Tensor::new(vec![1, steps, 6], data.clone()).unwrap();
        let batch = m.predict(&x).unwrap();
        let mut st = m.stream_state().unwrap();
        let mut streamed = Vec::new();
        for row in data.chunks(6) {
            streamed.extend(m.step(&mut st, row).unwrap());
        }
        assert_eq!(
            batch.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            streamed.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for row in batch.data.chunks(15) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let m = Model::new(gesture_config(6)).unwrap();
        assert!(matches!(m.infer(&Tensor::zeros(vec![1, 3, 5])), Err(Error::Shape(_))));
        assert!(matches!(m.step(&mut m.stream_state().unwrap(), &[0.0; 5]), Err(Error::Shape(_))));
        let bad = ModelConfig {
            input_dim: 4,
            input_len: None,
            layers: vec![LayerSpec::Flatten],
            head: Head::Softmax,
            seed: 0,
        };
        assert!(Model::new(bad).is_err());
    }
}
