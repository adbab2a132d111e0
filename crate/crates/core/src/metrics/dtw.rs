use super::{MetricsError, Result};
use crate::dsp::FeatureMatrix;

/// Minimal-cost monotone alignment. `path` runs from `(0, 0)` to
/// `(Tx - 1, Ty - 1)` in steps of `(1,0)`, `(0,1)` or `(1,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    pub path: Vec<(usize, usize)>,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn dtw_align(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<DtwResult> {
    dtw_align_with(x, y, euclidean)
}

/// DTW under an arbitrary frame distance. On equal accumulated cost the
/// backtrack prefers the diagonal, then `(1,0)`, then `(0,1)`.
pub fn dtw_align_with(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    dist: impl Fn(&[f32], &[f32]) -> f64,
) -> Result<DtwResult> {
    if x.dim() != y.dim() {
        return Err(MetricsError::DimensionMismatch(x.dim(), y.dim()));
    }
    let (tx, ty) = (x.rows(), y.rows());
    if tx == 0 || ty == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut acc = vec![f64::INFINITY; tx * ty];
    let at = |i: usize, j: usize| i * ty + j;
    for i in 0..tx {
        for j in 0..ty {
            let d = dist(x.row(i), y.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = d + best;
        }
    }

    let mut path = vec![(tx - 1, ty - 1)];
    let (mut i, mut j) = (tx - 1, ty - 1);
    while (i, j) != (0, 0) {
        let mut candidates: [(f64, usize, usize); 3] = [(f64::INFINITY, 0, 0); 3];
        if i > 0 && j > 0 {
            candidates[0] = (acc[at(i - 1, j - 1)], i - 1, j - 1);
        }
        if i > 0 {
            candidates[1] = (acc[at(i - 1, j)], i - 1, j);
        }
        if j > 0 {
            candidates[2] = (acc[at(i, j - 1)], i, j - 1);
        }
        let mut best = candidates[0];
        for c in &candidates[1..] {
            if c.0 < best.0 {
                best = *c;
            }
        }
        i = best.1;
        j = best.2;
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        cost: acc[at(tx - 1, ty - 1)],
        path,
    })
}
