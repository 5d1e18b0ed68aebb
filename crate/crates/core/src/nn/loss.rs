use super::layers::sigmoid;
use super::{Head, Tensor};
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of a softmax over `logits` against class `target`.
/// Returns the loss and its gradient with respect to the logits, `p − y`.
pub fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

/// Binary cross-entropy on a logit. Returns the loss and `σ(z) − y`.
pub fn sigmoid_bce(logit: f64, y: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

/// Per-position training targets; `None` positions are masked out.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<Option<usize>>),
    Binary(Vec<Option<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weighted mean loss over unmasked positions, its gradient on the logits
/// and the total weight. Binary positives are weighted by `pos_weight`.
pub fn loss_and_grad(head: Head, logits: &Tensor, targets: &Targets, pos_weight: f64) -> Result<(f64, Tensor, f64)> {
    let (b, t, k) = logits.dims3()?;
    if targets.len() != b * t {
        return Err(Error::Shape(format!("{} targets for {} positions", targets.len(), b * t)));
    }
    let mut grad = Tensor::zeros(logits.shape.clone());
    let mut total = 0.0;
    let mut weight = 0.0;
    match (head, targets) {
        (Head::Softmax, Targets::Classes(ys)) => {
            for (r, y) in ys.iter().enumerate() {
                let Some(y) = *y else { continue };
                if y >= k {
                    return Err(Error::Shape(format!("class {y} out of range for {k} outputs")));
                }
                let (l, g) = softmax_xent(&logits.data[r * k..(r + 1) * k], y);
                total += l;
                weight += 1.0;
                grad.data[r * k..(r + 1) * k].copy_from_slice(&g);
            }
        }
        (Head::Sigmoid, Targets::Binary(ys)) => {
            for (r, y) in ys.iter().enumerate() {
                let Some(y) = *y else { continue };
                let w = if y > 0.5 { pos_weight } else { 1.0 };
                let (l, g) = sigmoid_bce(logits.data[r], y);
                total += w * l;
                weight += w;
                grad.data[r] = w * g;
            }
        }
        _ => return Err(Error::Config("targets do not match the model head".into())),
    }
    if weight == 0.0 {
        return Ok((0.0, grad, 0.0));
    }
    grad.data.iter_mut().for_each(|g| *g /= weight);
    Ok((total / weight, grad, weight))
}
