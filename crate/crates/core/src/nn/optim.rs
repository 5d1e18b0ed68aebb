use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64, shapes: &[usize]) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape("gradient and parameter lengths differ".into()));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    /// Learning rate for the 1-based `epoch`.
    pub fn lr_at(&self, lr0: f64, epoch: usize) -> f64 {
        if self.every == 0 {
            return lr0;
        }
        lr0 * self.factor.powi((epoch.saturating_sub(1) / self.every) as i32)
    }
}

/// Stops after `patience` epochs without a validation improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    /// Records epoch `epoch`'s validation loss. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.waited = 0;
            (true, false)
        } else {
            self.waited += 1;
            (false, self.waited >= self.patience)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[2]);
        let mut p = vec![0.0, 5.0];
        adam.step(&mut [&mut p], &[vec![1.0, 0.0]], 0.01).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p[1], 5.0);
    }

    #[test]
    fn step_decay_schedule() {
        let d = StepDecay { factor: 0.5, every: 20 };
        assert_eq!(d.lr_at(1e-3, 1), 1e-3);
        assert_eq!(d.lr_at(1e-3, 20), 1e-3);
        assert_eq!(d.lr_at(1e-3, 21), 5e-4);
        assert_eq!(d.lr_at(1e-3, 45), 1e-3 / 4.0);
    }

    #[test]
    fn early_stopping_on_monotone_increase() {
        let mut es = EarlyStopping::new(10);
        let mut stopped = None;
        for epoch in 1..=100 {
            let (_, stop) = es.update(epoch, epoch as f64);
            if stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(11));
        assert_eq!(es.best_epoch, 1);
    }
}
