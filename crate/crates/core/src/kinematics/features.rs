use serde::{Deserialize, Serialize};

use super::{FeatureSubset, KinematicsSample, SlidingWindowSpec, Trajectory, NUM_FEATURES};
use crate::error::{Error, Result};

/// Zero-variance guard for z-scoring.
pub const STD_EPSILON: f64 = 1e-8;

pub fn select_features(sample: &KinematicsSample, subset: &FeatureSubset) -> Result<Vec<f64>> {
    subset.validate()?;
    let all = sample.features();
    Ok(subset.indices().into_iter().map(|i| all[i]).collect())
}

/// One row per sample, projected onto `subset`.
pub fn feature_matrix(traj: &Trajectory, subset: &FeatureSubset) -> Result<Vec<Vec<f64>>> {
    subset.validate()?;
    let idx = subset.indices();
    Ok(traj
        .samples
        .iter()
        .map(|s| {
            let all = s.features();
            idx.iter().map(|&i| all[i]).collect()
        })
        .collect())
}

/// A flattened `w × |subset|` window starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub data: Vec<f64>,
}

/// Sliding windows in start order. Shorter trajectories yield nothing.
pub fn windows(traj: &Trajectory, spec: SlidingWindowSpec, subset: &FeatureSubset) -> Result<Vec<Window>> {
    spec.validate()?;
    let rows = feature_matrix(traj, subset)?;
    let n = spec.count(rows.len());
    Ok((0..n)
        .map(|k| {
            let start = k * spec.stride;
            let data = rows[start..start + spec.length].concat();
            Window { start, data }
        })
        .collect())
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population moments over `rows`.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter().peekable();
        let dim = iter
            .peek()
            .map(|r| r.len())
            .ok_or_else(|| Error::Config("cannot fit normalisation on an empty corpus".into()))?;
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford keeps the moments stable for large offsets (positions in um)
        for row in iter {
            if row.len() != dim {
                return Err(Error::Shape(format!("row width {} != {dim}", row.len())));
            }
            n += 1;
            for j in 0..dim {
                let delta = row[j] - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        let std = m2.iter().map(|m| (m / n as f64).sqrt()).collect();
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s.max(STD_EPSILON);
        }
    }

    /// Applies the per-feature transform to a flattened window of rows.
    pub fn apply_flat(&self, data: &mut [f64]) {
        for row in data.chunks_mut(self.dim()) {
            self.apply(row);
        }
    }
}

/// Z-scores every one of the 38 features across a corpus.
///
/// When `stats` is given they are reused unchanged (test folds); otherwise
/// they are fitted on `corpus` (training folds).
pub fn zscore_normalize(
    corpus: &[Trajectory],
    stats: Option<&NormStats>,
) -> Result<(Vec<Trajectory>, NormStats)> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot normalise an empty corpus".into()));
    }
    let stats = match stats {
        Some(s) => {
            if s.dim() != NUM_FEATURES {
                return Err(Error::Shape(format!(
                    "normalisation stats have {} features, expected {NUM_FEATURES}",
                    s.dim()
                )));
            }
            s.clone()
        }
        None => {
            let rows: Vec<[f64; NUM_FEATURES]> = corpus
                .iter()
                .flat_map(|t| t.samples.iter().map(|s| s.features()))
                .collect();
            NormStats::fit(rows.iter().map(|r| &r[..]))?
        }
    };
    let out = corpus
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for s in &mut t.samples {
                let mut f = s.features();
                stats.apply(&mut f);
                *s = KinematicsSample::from_features(s.timestamp_ms, &f);
            }
            t
        })
        .collect();
    Ok((out, stats))
}
