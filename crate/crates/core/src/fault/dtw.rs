use crate::error::{Error, Result};

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Classic dynamic time warping with Euclidean point cost and no window
/// constraint. Returns the cost of the optimal monotone alignment.
pub fn dtw_distance<P: AsRef<[f64]>>(a: &[P], b: &[P]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("DTW needs two non-empty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = euclidean(x.as_ref(), b[j - 1].as_ref());
            cur[j] = cost + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// DTW over scalar sequences (absolute-difference cost).
pub fn dtw_scalar(a: &[f64], b: &[f64]) -> Result<f64> {
    let wrap = |s: &[f64]| s.iter().map(|&v| [v]).collect::<Vec<_>>();
    dtw_distance(&wrap(a), &wrap(b))
}
