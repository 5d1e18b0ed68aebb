use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_and_grad;
use super::train::Batch;
use super::Model;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    /// Fraction of parameters to probe.
    pub fraction: f64,
    /// Probe at least this many parameters (or all, if fewer).
    pub min_params: usize,
    pub h: f64,
    pub seed: u64,
    pub pos_weight: f64,
    /// Smallest denominator of the relative error. Central differences
    /// carry a round-off error near `f64::EPSILON * |loss| / h`, so smaller
    /// gradients cannot be resolved to a useful relative precision.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            fraction: 0.01,
            min_params: 50,
            h: 1e-5,
            seed: 0,
            pos_weight: 1.0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, index, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Training-mode loss with dropout masks drawn from a fixed seed so every
/// evaluation sees the same network.
fn loss_at(model: &Model, batch: &Batch, opts: &GradCheckOptions) -> Result<f64> {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (logits, _) = m.forward_train(&batch.x, &mut rng)?;
    Ok(loss_and_grad(m.config.head, &logits, &batch.targets, opts.pos_weight)?.0)
}

/// Analytic gradients of the training-mode loss on `batch`.
pub fn analytic_gradients(model: &Model, batch: &Batch, opts: &GradCheckOptions) -> Result<Vec<Vec<f64>>> {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (logits, tape) = m.forward_train(&batch.x, &mut rng)?;
    let (_, dlogits, _) = loss_and_grad(m.config.head, &logits, &batch.targets, opts.pos_weight)?;
    model.backward(&tape, &dlogits)
}

/// Compares `analytic` with central differences on a random parameter
/// subset. Relative error uses the denominator `max(|a|, |n|, floor)`.
pub fn compare_gradients(
    model: &Model,
    batch: &Batch,
    opts: &GradCheckOptions,
    analytic: &[Vec<f64>],
) -> Result<GradCheckReport> {
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut report = GradCheckReport {
        param_count: total,
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    if total == 0 {
        return Ok(report);
    }
    let k = ((opts.fraction * total as f64).ceil() as usize).max(opts.min_params).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED);
    let mut picks = rand::seq::index::sample(&mut rng, total, k).into_vec();
    picks.sort_unstable();
    let mut probe = model.clone();
    for flat in picks {
        let (mut tensor, mut index) = (0, flat);
        while index >= sizes[tensor] {
            index -= sizes[tensor];
            tensor += 1;
        }
        let original = probe.params()[tensor][index];
        probe.params_mut()[tensor][index] = original + opts.h;
        let plus = loss_at(&probe, batch, opts)?;
        probe.params_mut()[tensor][index] = original - opts.h;
        let minus = loss_at(&probe, batch, opts)?;
        probe.params_mut()[tensor][index] = original;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let a = analytic[tensor][index];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((tensor, index, a, numeric));
        }
    }
    Ok(report)
}

/// Finite-difference check of the model's own backward pass.
pub fn gradient_check(model: &Model, batch: &Batch, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, batch, opts)?;
    compare_gradients(model, batch, opts, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{make_batch, Example, Head, LayerSpec, ModelConfig, Targets};

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn check(config: ModelConfig, batch: usize, steps: usize, classes: bool) -> GradCheckReport {
        let model = Model::new(config.clone()).unwrap();
        let out_steps = if config.input_len.is_some() && config.layers.contains(&LayerSpec::Flatten) {
            1
        } else {
            steps
        };
        let examples: Vec<Example> = (0..batch)
            .map(|b| Example {
                input: random_input(steps * config.input_dim, b as u64 + 10),
                steps,
                targets: if classes {
                    Targets::Classes((0..out_steps).map(|t| Some((b + t) % model.output_dim)).collect())
                } else {
                    Targets::Binary(vec![Some((b % 2) as f64); out_steps])
                },
            })
            .collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let batch = make_batch(&refs, config.input_dim).unwrap();
        let opts = GradCheckOptions {
            fraction: 1.0,
            ..Default::default()
        };
        gradient_check(&model, &batch, &opts).unwrap()
    }

    #[test]
    fn dense_layer() {
        let r = check(
            ModelConfig {
                input_dim: 8,
                input_len: None,
                layers: vec![LayerSpec::Dense { units: 8 }, LayerSpec::Tanh, LayerSpec::Dense { units: 3 }],
                head: Head::Softmax,
                seed: 1,
            },
            3,
            2,
            true,
        );
        assert_eq!(r.checked, r.param_count);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn recurrent_cell_over_two_steps() {
        let r = check(
            ModelConfig {
                input_dim: 3,
                input_len: None,
                layers: vec![
                    LayerSpec::Lstm {
                        units: 4,
                        return_sequences: true,
                    },
                    LayerSpec::Dense { units: 3 },
                ],
                head: Head::Softmax,
                seed: 2,
            },
            2,
            2,
            true,
        );
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn conv_batchnorm_stack() {
        let r = check(
            ModelConfig {
                input_dim: 3,
                input_len: Some(12),
                layers: vec![
                    LayerSpec::Conv1d { filters: 2, kernel: 3 },
                    LayerSpec::BatchNorm,
                    LayerSpec::Sigmoid,
                    LayerSpec::Flatten,
                    LayerSpec::Dropout { rate: 0.2 },
                    LayerSpec::Dense { units: 1 },
                ],
                head: Head::Sigmoid,
                seed: 3,
            },
            4,
            12,
            false,
        );
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn sign_flip_is_caught() {
        let config = ModelConfig {
            input_dim: 4,
            input_len: None,
            layers: vec![LayerSpec::Dense { units: 3 }],
            head: Head::Softmax,
            seed: 4,
        };
        let model = Model::new(config).unwrap();
        let e = Example {
            input: random_input(8, 1),
            steps: 2,
            targets: Targets::Classes(vec![Some(0), Some(2)]),
        };
        let batch = make_batch(&[&e], 4).unwrap();
        let opts = GradCheckOptions::default();
        let mut g = analytic_gradients(&model, &batch, &opts).unwrap();
        g[0].iter_mut().for_each(|v| *v = -*v);
        assert!(compare_gradients(&model, &batch, &opts, &g).unwrap().max_rel_error > 0.1);
    }

    #[test]
    fn parameterless_model_passes_vacuously() {
        let model = Model::new(ModelConfig {
            input_dim: 2,
            input_len: None,
            layers: vec![LayerSpec::Relu],
            head: Head::Softmax,
            seed: 0,
        })
        .unwrap();
        let e = Example {
            input: vec![0.5, -0.5],
            steps: 1,
            targets: Targets::Classes(vec![Some(1)]),
        };
        let r = gradient_check(&model, &make_batch(&[&e], 2).unwrap(), &GradCheckOptions::default()).unwrap();
        assert_eq!((r.checked, r.max_rel_error), (0, 0.0));
    }
}
