use ndarray::{Array2, ArrayView2, Axis};

use super::linalg::top_eigenpairs;
use crate::error::{Error, Result};

/// Classical (Torgerson) multidimensional scaling.
///
/// Double-centers the squared distances, `B = -½ J D² J`, and returns the
/// top-`dim` eigenvectors scaled by the square roots of their eigenvalues.
/// Negative eigenvalues are clamped to zero, the output is centered at the
/// origin, and each axis is signed so its largest-magnitude coordinate is
/// positive.
pub fn classical_mds(distances: ArrayView2<'_, f64>, dim: usize) -> Result<Array2<f64>> {
    let (k, cols) = distances.dim();
    if k != cols {
        return Err(Error::validation(format!("distance matrix is {k}×{cols}")));
    }
    if dim == 0 {
        return Err(Error::range("embedding dimension must be at least 1"));
    }
    validate_distances(distances)?;
    if k == 0 {
        return Ok(Array2::zeros((0, dim)));
    }

    let mut b = distances.mapv(|d| d * d);
    let row_means = b.mean_axis(Axis(1)).expect("k ≥ 1");
    let grand = row_means.mean().expect("k ≥ 1");
    for ((i, j), v) in b.indexed_iter_mut() {
        // D² is symmetric, so column means equal row means.
        *v = -0.5 * (*v - row_means[i] - row_means[j] + grand);
    }

    let (values, vectors) = top_eigenpairs(&b, dim);
    let mut coords = Array2::zeros((k, dim));
    for c in 0..values.len() {
        let scale = values[c].max(0.0).sqrt();
        let mut col = coords.column_mut(c);
        col.assign(&(&vectors.column(c) * scale));
        let mean = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - mean);
        let pivot = col
            .iter()
            .copied()
            .reduce(|best, v| if v.abs() > best.abs() + 1e-12 { v } else { best })
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok(coords)
}

fn validate_distances(d: ArrayView2<'_, f64>) -> Result<()> {
    let k = d.nrows();
    for i in 0..k {
        if d[[i, i]].abs() > 0.0 {
            return Err(Error::validation(format!(
                "distance matrix diagonal must be zero, d[{i},{i}] = {}",
                d[[i, i]]
            )));
        }
        for j in 0..i {
            let (a, b) = (d[[i, j]], d[[j, i]]);
            if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                return Err(Error::validation(format!(
                    "distances must be finite and non-negative, d[{i},{j}] = {a}"
                )));
            }
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::validation(format!(
                    "distance matrix is not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}
