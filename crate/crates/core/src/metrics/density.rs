//! Gaussian kernel density estimates and the Jensen-Shannon divergence
//! between them, computed by quadrature on a shared uniform grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{FeatureSubset, GestureId, Trajectory};

/// Relative bandwidth used when every dimension is constant.
const DEGENERATE_BANDWIDTH: f64 = 1e-6;
/// Support is taken as this many bandwidths (or deviations) past the data.
const SUPPORT_WIDTH: f64 = 4.0;
/// Largest tolerated deviation of the discretised mass from 1.
const MASS_TOLERANCE: f64 = 0.05;

fn std_normal(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Cell-centred uniform axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.step()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    /// Smallest box covering every density's support.
    pub fn covering(densities: &[&dyn Density], points_per_dim: usize) -> Result<Grid> {
        let first = densities
            .first()
            .ok_or_else(|| Error::Config("grid needs at least one density".into()))?;
        let d = first.dim();
        if densities.iter().any(|p| p.dim() != d) {
            return Err(Error::Shape("densities disagree on dimension".into()));
        }
        if points_per_dim == 0 {
            return Err(Error::Config("grid needs at least one point per dimension".into()));
        }
        let axes = (0..d)
            .map(|j| {
                let (lo, hi) = densities
                    .iter()
                    .map(|p| p.support(j))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| (a.min(l), b.max(h)));
                Axis { lo, hi, n: points_per_dim }
            })
            .collect();
        Ok(Grid { axes })
    }
}

/// A probability density that can be evaluated on marginals.
pub trait Density {
    fn dim(&self) -> usize;

    /// Marginal density over `dims`, evaluated at `x` (one value per dim).
    fn marginal_pdf(&self, dims: &[usize], x: &[f64]) -> f64;

    /// Interval outside which the density is negligible.
    fn support(&self, dim: usize) -> (f64, f64);

    fn pdf(&self, x: &[f64]) -> f64 {
        let dims: Vec<usize> = (0..self.dim()).collect();
        self.marginal_pdf(&dims, x)
    }

    /// Marginal over `dims` at every point of the product grid, row-major.
    fn grid_values(&self, dims: &[usize], axes: &[Axis]) -> Vec<f64> {
        let total: usize = axes.iter().map(|a| a.n).product();
        let mut x = vec![0.0; dims.len()];
        (0..total)
            .map(|mut flat| {
                for k in (0..axes.len()).rev() {
                    x[k] = axes[k].point(flat % axes[k].n);
                    flat /= axes[k].n;
                }
                self.marginal_pdf(dims, &x)
            })
            .collect()
    }
}

/// Independent normal per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Density for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn marginal_pdf(&self, dims: &[usize], x: &[f64]) -> f64 {
        dims.iter()
            .zip(x)
            .map(|(&j, &v)| std_normal((v - self.mean[j]) / self.std[j]) / self.std[j])
            .product()
    }

    fn support(&self, dim: usize) -> (f64, f64) {
        let w = 2.0 * SUPPORT_WIDTH * self.std[dim];
        (self.mean[dim] - w, self.mean[dim] + w)
    }
}

/// Product-Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    /// Samples restricted to the retained dimensions.
    pub samples: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
    /// Original indices of the retained dimensions.
    pub kept: Vec<usize>,
}

fn column_moments(samples: &[Vec<f64>], j: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|r| r[j]).sum::<f64>() / n;
    let var = samples.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_matrix(samples: &[Vec<f64>]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::Config(format!("KDE needs at least 2 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Config("KDE needs at least one dimension".into()));
    }
    if samples.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged KDE sample matrix".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("KDE samples must be finite".into()));
    }
    Ok(d)
}

/// Scott's-rule KDE. Constant dimensions are dropped with a warning; if
/// every dimension is constant they are all kept with a tiny bandwidth so
/// the estimate peaks at the repeated point.
pub fn kde_fit(samples: &[Vec<f64>]) -> Result<Kde> {
    let d = check_matrix(samples)?;
    let moments: Vec<(f64, f64)> = (0..d).map(|j| column_moments(samples, j)).collect();
    let mut kept: Vec<usize> = (0..d).filter(|&j| moments[j].1 > 0.0).collect();
    let dropped: Vec<usize> = (0..d).filter(|j| !kept.contains(j)).collect();
    if kept.is_empty() {
        warn!("every KDE dimension is constant; using a degenerate bandwidth");
        kept = (0..d).collect();
    } else if !dropped.is_empty() {
        warn!("dropping zero-variance KDE dimensions {dropped:?}");
    }
    let n = samples.len() as f64;
    let factor = n.powf(-1.0 / (kept.len() as f64 + 4.0));
    let bandwidth = kept
        .iter()
        .map(|&j| {
            let (mean, sd) = moments[j];
            if sd > 0.0 {
                sd * factor
            } else {
                DEGENERATE_BANDWIDTH * mean.abs().max(1.0)
            }
        })
        .collect();
    let samples = samples.iter().map(|r| kept.iter().map(|&j| r[j]).collect()).collect();
    Ok(Kde {
        samples,
        bandwidth,
        kept,
    })
}

impl Kde {
    /// Densities at `points`, given in the original (pre-drop) coordinates.
    pub fn eval(&self, points: &[Vec<f64>]) -> Vec<f64> {
        points
            .iter()
            .map(|p| {
                let x: Vec<f64> = self.kept.iter().map(|&j| p[j]).collect();
                self.pdf(&x)
            })
            .collect()
    }

    /// Raises every bandwidth to at least `floor[j]`.
    pub fn with_min_bandwidth(mut self, floor: &[f64]) -> Self {
        for (h, f) in self.bandwidth.iter_mut().zip(floor) {
            *h = h.max(*f);
        }
        self
    }

    fn kernel_matrix(&self, dim: usize, axis: &Axis) -> Vec<f64> {
        let h = self.bandwidth[dim];
        let mut k = Vec::with_capacity(self.samples.len() * axis.n);
        for s in &self.samples {
            for i in 0..axis.n {
                k.push(std_normal((axis.point(i) - s[dim]) / h) / h);
            }
        }
        k
    }
}

impl Density for Kde {
    fn dim(&self) -> usize {
        self.kept.len()
    }

    fn marginal_pdf(&self, dims: &[usize], x: &[f64]) -> f64 {
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| {
                dims.iter()
                    .zip(x)
                    .map(|(&j, &v)| std_normal((v - s[j]) / self.bandwidth[j]) / self.bandwidth[j])
                    .product::<f64>()
            })
            .sum();
        sum / self.samples.len() as f64
    }

    fn support(&self, dim: usize) -> (f64, f64) {
        let (lo, hi) = self
            .samples
            .iter()
            .map(|s| s[dim])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let w = SUPPORT_WIDTH * self.bandwidth[dim];
        (lo - w, hi + w)
    }

    // the kernel is separable, so a 2-D marginal is a product of two
    // per-axis kernel matrices summed over samples
    fn grid_values(&self, dims: &[usize], axes: &[Axis]) -> Vec<f64> {
        let n = self.samples.len();
        match dims {
            [a] => {
                let k = self.kernel_matrix(*a, &axes[0]);
                let m = axes[0].n;
                (0..m).map(|i| (0..n).map(|s| k[s * m + i]).sum::<f64>() / n as f64).collect()
            }
            [a, b] => {
                let (ka, kb) = (self.kernel_matrix(*a, &axes[0]), self.kernel_matrix(*b, &axes[1]));
                let (ma, mb) = (axes[0].n, axes[1].n);
                let mut out = vec![0.0; ma * mb];
                for s in 0..n {
                    let rb = &kb[s * mb..(s + 1) * mb];
                    for i in 0..ma {
                        let w = ka[s * ma + i];
                        if w == 0.0 {
                            continue;
                        }
                        for (o, v) in out[i * mb..(i + 1) * mb].iter_mut().zip(rb) {
                            *o += w * v;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= n as f64);
                out
            }
            _ => {
                let x_dims: Vec<usize> = dims.to_vec();
                let total: usize = axes.iter().map(|a| a.n).product();
                let mut x = vec![0.0; dims.len()];
                (0..total)
                    .map(|mut flat| {
                        for k in (0..axes.len()).rev() {
                            x[k] = axes[k].point(flat % axes[k].n);
                            flat /= axes[k].n;
                        }
                        self.marginal_pdf(&x_dims, &x)
                    })
                    .collect()
            }
        }
    }
}

fn discretise(p: &dyn Density, dims: &[usize], axes: &[Axis]) -> Result<Vec<f64>> {
    let mut v = p.grid_values(dims, axes);
    let cell: f64 = axes.iter().map(Axis::step).product();
    let total: f64 = v.iter().sum();
    let mass = total * cell;
    if !mass.is_finite() || (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::CoarseGrid { mass });
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

fn jsd_discrete(p: &[f64], q: &[f64]) -> f64 {
    // a / m is written 2a / (a + b): halving a subnormal mass underflows
    // to zero and would turn the term into 0 * inf
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let s = a + b;
        if a > 0.0 {
            acc += a * (2.0 * a / s).log2();
        }
        if b > 0.0 {
            acc += b * (2.0 * b / s).log2();
        }
    }
    (0.5 * acc).clamp(0.0, 1.0)
}

/// Base-2 Jensen-Shannon divergence on `grid`.
///
/// Up to two dimensions the full joint is discretised. Above that the
/// result is the mean over all two-dimensional marginals.
pub fn js_divergence(p: &dyn Density, q: &dyn Density, grid: &Grid) -> Result<f64> {
    let d = grid.axes.len();
    if p.dim() != d || q.dim() != d {
        return Err(Error::Shape(format!(
            "densities of dimension {} and {} on a {d}-D grid",
            p.dim(),
            q.dim()
        )));
    }
    let subsets: Vec<Vec<usize>> = if d <= 2 {
        vec![(0..d).collect()]
    } else {
        (0..d).flat_map(|i| (i + 1..d).map(move |j| vec![i, j])).collect()
    };
    let mut total = 0.0;
    for dims in &subsets {
        let axes: Vec<Axis> = dims.iter().map(|&j| grid.axes[j]).collect();
        total += jsd_discrete(&discretise(p, dims, &axes)?, &discretise(q, dims, &axes)?);
    }
    Ok(total / subsets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceOptions {
    pub min_samples: usize,
    pub points_per_dim: usize,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        DivergenceOptions {
            min_samples: 30,
            points_per_dim: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMatrix {
    pub classes: Vec<GestureId>,
    pub values: Vec<Vec<f64>>,
    /// Classes skipped for having too few samples.
    pub omitted: Vec<GestureId>,
    /// Feature dimensions dropped for being constant across all classes.
    pub dropped_dims: Vec<usize>,
}

impl DivergenceMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gesture");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.values) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Off-diagonal pairs, largest divergence first.
    pub fn ranked_pairs(&self) -> Vec<(GestureId, GestureId, f64)> {
        let mut out = Vec::new();
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                out.push((self.classes[i], self.classes[j], self.values[i][j]));
            }
        }
        out.sort_by(|a, b| b.2.total_cmp(&a.2));
        out
    }
}

/// Pairwise JSD between per-gesture sample sets.
///
/// All classes share one grid. Each class bandwidth is floored at one grid
/// cell so narrow classes stay resolvable on a grid sized for the widest.
pub fn divergence_from_groups(
    groups: &BTreeMap<GestureId, Vec<Vec<f64>>>,
    opts: &DivergenceOptions,
) -> Result<DivergenceMatrix> {
    let mut classes = Vec::new();
    let mut omitted = Vec::new();
    for (g, rows) in groups {
        if rows.len() >= opts.min_samples.max(2) {
            classes.push(*g);
        } else {
            warn!("omitting {g}: {} erroneous samples < {}", rows.len(), opts.min_samples);
            omitted.push(*g);
        }
    }
    if classes.len() < 2 {
        return Err(Error::Estimation(format!(
            "divergence needs two classes with at least {} samples, found {}",
            opts.min_samples,
            classes.len()
        )));
    }
    let pooled: Vec<Vec<f64>> = classes.iter().flat_map(|g| groups[g].iter().cloned()).collect();
    let d = check_matrix(&pooled)?;
    let kept: Vec<usize> = (0..d).filter(|&j| column_moments(&pooled, j).1 > 0.0).collect();
    let dropped_dims: Vec<usize> = (0..d).filter(|j| !kept.contains(j)).collect();
    if !dropped_dims.is_empty() {
        warn!("dropping constant feature dimensions {dropped_dims:?} from the divergence");
    }
    if kept.is_empty() {
        return Err(Error::Estimation("every feature dimension is constant".into()));
    }
    let project = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| kept.iter().map(|&j| r[j]).collect()).collect()
    };
    let fitted: Vec<Kde> = classes
        .iter()
        .map(|g| kde_fit_all_dims(&project(&groups[g])))
        .collect::<Result<_>>()?;
    let n = opts.points_per_dim.max(1);
    let axes: Vec<Axis> = (0..kept.len())
        .map(|j| {
            let (lo, hi) = fitted
                .iter()
                .flat_map(|k| k.samples.iter().map(move |s| s[j]))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let widest = fitted.iter().map(|k| k.bandwidth[j]).fold(0.0, f64::max);
            let pad = SUPPORT_WIDTH * widest + 8.0 * (hi - lo) / n as f64;
            Axis { lo: lo - pad, hi: hi + pad, n }
        })
        .collect();
    let floor: Vec<f64> = axes.iter().map(Axis::step).collect();
    let fitted: Vec<Kde> = fitted.into_iter().map(|k| k.with_min_bandwidth(&floor)).collect();
    let grid = Grid { axes };
    let c = classes.len();
    let mut values = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in i + 1..c {
            let v = js_divergence(&fitted[i], &fitted[j], &grid)?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(DivergenceMatrix {
        classes,
        values,
        omitted,
        dropped_dims,
    })
}

/// Scott's rule on every dimension; constant dimensions get the degenerate
/// bandwidth instead of being dropped so all classes share coordinates.
fn kde_fit_all_dims(samples: &[Vec<f64>]) -> Result<Kde> {
    let d = check_matrix(samples)?;
    let factor = (samples.len() as f64).powf(-1.0 / (d as f64 + 4.0));
    let bandwidth = (0..d)
        .map(|j| {
            let (mean, sd) = column_moments(samples, j);
            if sd > 0.0 {
                sd * factor
            } else {
                DEGENERATE_BANDWIDTH * mean.abs().max(1.0)
            }
        })
        .collect();
    Ok(Kde {
        samples: samples.to_vec(),
        bandwidth,
        kept: (0..d).collect(),
    })
}

/// Divergence between the erroneous samples of each gesture class.
pub fn divergence_matrix(
    corpus: &[Trajectory],
    subset: &FeatureSubset,
    opts: &DivergenceOptions,
) -> Result<DivergenceMatrix> {
    subset.validate()?;
    let idx = subset.indices();
    let mut groups: BTreeMap<GestureId, Vec<Vec<f64>>> = BTreeMap::new();
    for t in corpus {
        for seg in t.segments.iter().filter(|s| s.unsafe_) {
            let rows = groups.entry(seg.gesture).or_default();
            for s in &t.samples[seg.start..=seg.end] {
                let f = s.features();
                rows.push(idx.iter().map(|&i| f[i]).collect());
            }
        }
    }
    divergence_from_groups(&groups, opts)
}
