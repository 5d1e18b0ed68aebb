//! Layer implementations over `[batch, time, channel]` activations.
//!
//! Every layer computes its batch forward pass by applying the same
//! per-row (or per-step) kernel that streaming inference uses, so batch and
//! incremental outputs agree bit for bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let limit = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer applied independently at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub units: usize,
    /// `[units, input]`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(input: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            input,
            units,
            w: uniform_init(rng, units * input, input),
            b: vec![0.0; units],
        }
    }

    pub fn row(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = self.b[o] + dot(&self.w[o * self.input..(o + 1) * self.input], x);
        }
    }
}

/// Gated recurrent cell with input, forget and output gates and a tanh
/// candidate. Gate blocks are stacked in the order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input: usize,
    pub units: usize,
    pub return_sequences: bool,
    /// `[4·units, input]`
    pub w: Vec<f64>,
    /// `[4·units, units]`
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

/// Activated gates and new state of one cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn new(input: usize, units: usize, return_sequences: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = uniform_init(rng, 4 * units * input, input);
        let u = uniform_init(rng, 4 * units * units, units);
        let mut b = vec![0.0; 4 * units];
        // forget-gate bias of one keeps early gradients flowing through time
        b[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        Lstm {
            input,
            units,
            return_sequences,
            w,
            u,
            b,
        }
    }

    /// One step of the recurrence from state `(h, c)`.
    pub fn cell(&self, x: &[f64], h: &[f64], c: &[f64]) -> CellOutput {
        let n = self.units;
        let mut gates = vec![0.0; 4 * n];
        for (r, g) in gates.iter_mut().enumerate() {
            let z = self.b[r]
                + dot(&self.w[r * self.input..(r + 1) * self.input], x)
                + dot(&self.u[r * n..(r + 1) * n], h);
            *g = if (2 * n..3 * n).contains(&r) { z.tanh() } else { sigmoid(z) };
        }
        let mut c_new = vec![0.0; n];
        let mut h_new = vec![0.0; n];
        let mut tanh_c = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o) = (gates[k], gates[n + k], gates[2 * n + k], gates[3 * n + k]);
            c_new[k] = f * c[k] + i * g;
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o * tanh_c[k];
        }
        CellOutput {
            gates,
            c: c_new,
            h: h_new,
            tanh_c,
        }
    }
}

/// Valid-padding cross-correlation along time.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub input: usize,
    pub filters: usize,
    pub kernel: usize,
    /// `[filters, kernel, input]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv1d {
    pub fn new(input: usize, filters: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv1d {
            input,
            filters,
            kernel,
            w: uniform_init(rng, filters * kernel * input, kernel * input),
            b: vec![0.0; filters],
        }
    }
}

/// Per-channel normalisation over all batch and time positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn infer_row(&self, x: &[f64], y: &mut [f64]) {
        for c in 0..self.channels {
            let inv = 1.0 / (self.running_var[c] + BN_EPSILON).sqrt();
            y[c] = self.gamma[c] * (x[c] - self.running_mean[c]) * inv + self.beta[c];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Lstm(Lstm),
    Conv1d(Conv1d),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Dropout(f64),
    Flatten,
}

/// What a layer remembers from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Lstm {
        x: Tensor,
        h_prev: Vec<f64>,
        c_prev: Vec<f64>,
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Output(Tensor),
    Mask(Vec<f64>),
    Shape(Vec<usize>),
    None,
}

impl Layer {
    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&d.w, &d.b],
            Layer::Lstm(l) => vec![&l.w, &l.u, &l.b],
            Layer::Conv1d(c) => vec![&c.w, &c.b],
            Layer::BatchNorm(n) => vec![&n.gamma, &n.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.w, &mut d.b],
            Layer::Lstm(l) => vec![&mut l.w, &mut l.u, &mut l.b],
            Layer::Conv1d(c) => vec![&mut c.w, &mut c.b],
            Layer::BatchNorm(n) => vec![&mut n.gamma, &mut n.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state that still has to be persisted.
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::BatchNorm(n) => vec![&n.running_mean, &n.running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::BatchNorm(n) => vec![&mut n.running_mean, &mut n.running_var],
            _ => vec![],
        }
    }

    /// `rng` is `Some` in training mode and `None` for inference.
    pub(crate) fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Cache)> {
        let (bsz, steps, ch) = x.dims3()?;
        let train = rng.is_some();
        match self {
            Layer::Dense(d) => {
                expect_channels(ch, d.input, "dense")?;
                let mut y = Tensor::zeros(vec![bsz, steps, d.units]);
                for (xr, yr) in x.data.chunks(ch).zip(y.data.chunks_mut(d.units)) {
                    d.row(xr, yr);
                }
                Ok((y, if train { Cache::Input(x.clone()) } else { Cache::None }))
            }
            Layer::Lstm(l) => {
                expect_channels(ch, l.input, "recurrent")?;
                let n = l.units;
                let out_steps = if l.return_sequences { steps } else { 1 };
                let mut y = Tensor::zeros(vec![bsz, out_steps, n]);
                let rows = bsz * steps;
                let (mut h_prev, mut c_prev, mut gates, mut tanh_c) = if train {
                    (vec![0.0; rows * n], vec![0.0; rows * n], vec![0.0; rows * 4 * n], vec![0.0; rows * n])
                } else {
                    (vec![], vec![], vec![], vec![])
                };
                for b in 0..bsz {
                    let mut h = vec![0.0; n];
                    let mut c = vec![0.0; n];
                    for t in 0..steps {
                        let r = b * steps + t;
                        let out = l.cell(&x.data[r * ch..(r + 1) * ch], &h, &c);
                        if train {
                            h_prev[r * n..(r + 1) * n].copy_from_slice(&h);
                            c_prev[r * n..(r + 1) * n].copy_from_slice(&c);
                            gates[r * 4 * n..(r + 1) * 4 * n].copy_from_slice(&out.gates);
                            tanh_c[r * n..(r + 1) * n].copy_from_slice(&out.tanh_c);
                        }
                        h = out.h;
                        c = out.c;
                        if l.return_sequences {
                            y.data[r * n..(r + 1) * n].copy_from_slice(&h);
                        }
                    }
                    if !l.return_sequences {
                        y.data[b * n..(b + 1) * n].copy_from_slice(&h);
                    }
                }
                let cache = if train {
                    Cache::Lstm {
                        x: x.clone(),
                        h_prev,
                        c_prev,
                        gates,
                        tanh_c,
                    }
                } else {
                    Cache::None
                };
                Ok((y, cache))
            }
            Layer::Conv1d(cv) => {
                expect_channels(ch, cv.input, "convolution")?;
                if cv.kernel > steps {
                    return Err(Error::Shape(format!("kernel {} longer than input {steps}", cv.kernel)));
                }
                let out_steps = steps - cv.kernel + 1;
                let span = cv.kernel * ch;
                let mut y = Tensor::zeros(vec![bsz, out_steps, cv.filters]);
                for b in 0..bsz {
                    for t in 0..out_steps {
                        let xs = &x.data[(b * steps + t) * ch..(b * steps + t) * ch + span];
                        let yr = &mut y.data[(b * out_steps + t) * cv.filters..(b * out_steps + t + 1) * cv.filters];
                        for (f, yf) in yr.iter_mut().enumerate() {
                            *yf = cv.b[f] + dot(&cv.w[f * span..(f + 1) * span], xs);
                        }
                    }
                }
                Ok((y, if train { Cache::Input(x.clone()) } else { Cache::None }))
            }
            Layer::BatchNorm(bn) => {
                expect_channels(ch, bn.channels, "batch-norm")?;
                let mut y = Tensor::zeros(x.shape.clone());
                if !train {
                    for (xr, yr) in x.data.chunks(ch).zip(y.data.chunks_mut(ch)) {
                        bn.infer_row(xr, yr);
                    }
                    return Ok((y, Cache::None));
                }
                if bsz < 2 {
                    return Err(Error::Config("batch normalisation needs a batch of at least 2 in training".into()));
                }
                let rows = (bsz * steps) as f64;
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for xr in x.data.chunks(ch) {
                    axpy(1.0, xr, &mut mean);
                }
                mean.iter_mut().for_each(|m| *m /= rows);
                for xr in x.data.chunks(ch) {
                    for c in 0..ch {
                        var[c] += (xr[c] - mean[c]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                let mut xhat = vec![0.0; x.data.len()];
                for ((xr, hr), yr) in x.data.chunks(ch).zip(xhat.chunks_mut(ch)).zip(y.data.chunks_mut(ch)) {
                    for c in 0..ch {
                        hr[c] = (xr[c] - mean[c]) * inv_std[c];
                        yr[c] = bn.gamma[c] * hr[c] + bn.beta[c];
                    }
                }
                Ok((
                    y,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        mean,
                        var,
                    },
                ))
            }
            Layer::Activation(a) => {
                let y = Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|&v| a.apply(v)).collect(),
                };
                let cache = if train { Cache::Output(y.clone()) } else { Cache::None };
                Ok((y, cache))
            }
            Layer::Dropout(rate) => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.data.len())
                        .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    let y = Tensor {
                        shape: x.shape.clone(),
                        data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
                    };
                    Ok((y, Cache::Mask(mask)))
                }
                _ => Ok((x.clone(), Cache::None)),
            },
            Layer::Flatten => Ok((
                Tensor {
                    shape: vec![bsz, 1, steps * ch],
                    data: x.data.clone(),
                },
                Cache::Shape(x.shape.clone()),
            )),
        }
    }

    /// Accumulates parameter gradients into `grads` (one buffer per entry
    /// of `params()`) and returns the gradient with respect to the input.
    pub(crate) fn backward(&self, cache: &Cache, dy: &Tensor, grads: &mut [Vec<f64>]) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(x)) => {
                let (gw, rest) = grads.split_at_mut(1);
                let (gw, gb) = (&mut gw[0], &mut rest[0]);
                let mut dx = Tensor::zeros(x.shape.clone());
                for ((xr, dyr), dxr) in x.data.chunks(d.input).zip(dy.data.chunks(d.units)).zip(dx.data.chunks_mut(d.input)) {
                    for o in 0..d.units {
                        let g = dyr[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        axpy(g, xr, &mut gw[o * d.input..(o + 1) * d.input]);
                        axpy(g, &d.w[o * d.input..(o + 1) * d.input], dxr);
                    }
                }
                Ok(dx)
            }
            (
                Layer::Lstm(l),
                Cache::Lstm {
                    x,
                    h_prev,
                    c_prev,
                    gates,
                    tanh_c,
                },
            ) => {
                let (bsz, steps, ch) = x.dims3()?;
                let n = l.units;
                let [gw, gu, gb] = grads else {
                    return Err(Error::Shape("recurrent layer expects three gradient buffers".into()));
                };
                let mut dx = Tensor::zeros(x.shape.clone());
                let mut dz = vec![0.0; 4 * n];
                for b in 0..bsz {
                    let mut dh_next = vec![0.0; n];
                    let mut dc_next = vec![0.0; n];
                    for t in (0..steps).rev() {
                        let r = b * steps + t;
                        let upstream: Option<&[f64]> = if l.return_sequences {
                            Some(&dy.data[r * n..(r + 1) * n])
                        } else if t == steps - 1 {
                            Some(&dy.data[b * n..(b + 1) * n])
                        } else {
                            None
                        };
                        let g = &gates[r * 4 * n..(r + 1) * 4 * n];
                        let tc = &tanh_c[r * n..(r + 1) * n];
                        let cp = &c_prev[r * n..(r + 1) * n];
                        for k in 0..n {
                            let dh = dh_next[k] + upstream.map_or(0.0, |u| u[k]);
                            let (i, f, gg, o) = (g[k], g[n + k], g[2 * n + k], g[3 * n + k]);
                            let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
                            dz[k] = dc * gg * i * (1.0 - i);
                            dz[n + k] = dc * cp[k] * f * (1.0 - f);
                            dz[2 * n + k] = dc * i * (1.0 - gg * gg);
                            dz[3 * n + k] = dh * tc[k] * o * (1.0 - o);
                            dc_next[k] = dc * f;
                        }
                        let xr = &x.data[r * ch..(r + 1) * ch];
                        let hp = &h_prev[r * n..(r + 1) * n];
                        dh_next.iter_mut().for_each(|v| *v = 0.0);
                        let dxr = &mut dx.data[r * ch..(r + 1) * ch];
                        for (row, &d) in dz.iter().enumerate() {
                            if d == 0.0 {
                                continue;
                            }
                            gb[row] += d;
                            axpy(d, xr, &mut gw[row * ch..(row + 1) * ch]);
                            axpy(d, hp, &mut gu[row * n..(row + 1) * n]);
                            axpy(d, &l.w[row * ch..(row + 1) * ch], dxr);
                            axpy(d, &l.u[row * n..(row + 1) * n], &mut dh_next);
                        }
                    }
                }
                Ok(dx)
            }
            (Layer::Conv1d(cv), Cache::Input(x)) => {
                let (bsz, steps, ch) = x.dims3()?;
                let out_steps = steps - cv.kernel + 1;
                let span = cv.kernel * ch;
                let (gw, rest) = grads.split_at_mut(1);
                let (gw, gb) = (&mut gw[0], &mut rest[0]);
                let mut dx = Tensor::zeros(x.shape.clone());
                for b in 0..bsz {
                    for t in 0..out_steps {
                        let lo = (b * steps + t) * ch;
                        let xs = &x.data[lo..lo + span];
                        let dyr = &dy.data[(b * out_steps + t) * cv.filters..(b * out_steps + t + 1) * cv.filters];
                        for (f, &g) in dyr.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            gb[f] += g;
                            axpy(g, xs, &mut gw[f * span..(f + 1) * span]);
                            axpy(g, &cv.w[f * span..(f + 1) * span], &mut dx.data[lo..lo + span]);
                        }
                    }
                }
                Ok(dx)
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, .. }) => {
                let ch = bn.channels;
                let rows = (dy.data.len() / ch) as f64;
                let (gg, rest) = grads.split_at_mut(1);
                let (gg, gbeta) = (&mut gg[0], &mut rest[0]);
                let mut sum_dxhat = vec![0.0; ch];
                let mut sum_dxhat_xhat = vec![0.0; ch];
                for (dyr, hr) in dy.data.chunks(ch).zip(xhat.chunks(ch)) {
                    for c in 0..ch {
                        gg[c] += dyr[c] * hr[c];
                        gbeta[c] += dyr[c];
                        let dxh = dyr[c] * bn.gamma[c];
                        sum_dxhat[c] += dxh;
                        sum_dxhat_xhat[c] += dxh * hr[c];
                    }
                }
                let mut dx = Tensor::zeros(dy.shape.clone());
                for ((dyr, hr), dxr) in dy.data.chunks(ch).zip(xhat.chunks(ch)).zip(dx.data.chunks_mut(ch)) {
                    for c in 0..ch {
                        let dxh = dyr[c] * bn.gamma[c];
                        dxr[c] = inv_std[c] / rows * (rows * dxh - sum_dxhat[c] - hr[c] * sum_dxhat_xhat[c]);
                    }
                }
                Ok(dx)
            }
            (Layer::Activation(a), Cache::Output(y)) => Ok(Tensor {
                shape: dy.shape.clone(),
                data: dy.data.iter().zip(&y.data).map(|(g, &v)| g * a.grad_from_output(v)).collect(),
            }),
            (Layer::Dropout(_), Cache::Mask(mask)) => Ok(Tensor {
                shape: dy.shape.clone(),
                data: dy.data.iter().zip(mask).map(|(g, m)| g * m).collect(),
            }),
            (Layer::Dropout(_), Cache::None) => Ok(dy.clone()),
            (Layer::Flatten, Cache::Shape(shape)) => Ok(Tensor {
                shape: shape.clone(),
                data: dy.data.clone(),
            }),
            _ => Err(Error::Training("backward called without a matching training-mode forward".into())),
        }
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running averages.
    pub(crate) fn update_running_stats(&mut self, cache: &Cache) {
        if let (Layer::BatchNorm(bn), Cache::BatchNorm { mean, var, .. }) = (self, cache) {
            for c in 0..bn.channels {
                bn.running_mean[c] = BN_MOMENTUM * bn.running_mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                bn.running_var[c] = BN_MOMENTUM * bn.running_var[c] + (1.0 - BN_MOMENTUM) * var[c];
            }
        }
    }
}

fn expect_channels(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} layer expects {want} channels, got {got}")));
    }
    Ok(())
}
