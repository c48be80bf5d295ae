//! Principal component analysis by singular-value decomposition.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{from_nalgebra, gaussian_matrix, orthonormalize, to_nalgebra};
use crate::error::{Error, Result};

/// Scores of the rows of a matrix on its leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMatrix {
    /// `n × p` component scores (column-centered).
    pub values: Array2<f64>,
    /// Fraction of the total variance carried by each component, descending.
    pub explained_variance_ratio: Vec<f64>,
    /// `p × m` unit loading vectors.
    pub components: Array2<f64>,
    /// Column means removed before projection.
    pub mean: Array1<f64>,
}

impl ReducedMatrix {
    /// Wraps already-reduced coordinates (no loadings, ratios unknown).
    pub fn from_scores(values: Array2<f64>) -> Self {
        let p = values.ncols();
        Self {
            values,
            explained_variance_ratio: vec![0.0; p],
            components: Array2::zeros((p, 0)),
            mean: Array1::zeros(0),
        }
    }

    pub fn n_components(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

const OVERSAMPLE: usize = 10;
const POWER_ITERATIONS: usize = 6;
/// Below this `min(n, m)` the full thin SVD is used.
const EXACT_LIMIT: usize = 300;
const SKETCH_SEED: u64 = 0x7063_6121;

/// Projects the rows of `matrix` onto its top `n_components` principal
/// directions.
///
/// Small problems (or requests close to full rank) take the thin SVD of the
/// centered matrix. Wide or tall problems with a short target rank use a
/// randomized range finder with power iterations followed by an exact SVD of
/// the sketched matrix. Each direction is signed so that its largest-magnitude
/// loading is positive.
pub fn pca_fit_transform(matrix: ArrayView2<'_, f64>, n_components: usize) -> Result<ReducedMatrix> {
    let (n, m) = matrix.dim();
    if n < 2 {
        return Err(Error::validation(format!("PCA needs at least 2 rows, got {n}")));
    }
    let rank_bound = n.min(m);
    if n_components == 0 || n_components > rank_bound {
        return Err(Error::range(format!(
            "n_components must be in 1..={rank_bound}, got {n_components}"
        )));
    }

    let mean = matrix.mean_axis(Axis(0)).expect("n ≥ 2");
    let centered = &matrix - &mean.view().insert_axis(Axis(0));
    let total: f64 = centered.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok(ReducedMatrix {
            values: Array2::zeros((n, n_components)),
            explained_variance_ratio: vec![0.0; n_components],
            components: Array2::zeros((n_components, m)),
            mean,
        });
    }

    let exact = rank_bound <= EXACT_LIMIT || n_components + OVERSAMPLE >= rank_bound / 2;
    let (singular, mut directions) = if exact {
        thin_svd(&centered, n_components)
    } else {
        randomized_svd(&centered, n_components)
    };

    for mut dir in directions.columns_mut() {
        let pivot = dir
            .iter()
            .copied()
            .reduce(|best, v| if v.abs() > best.abs() { v } else { best })
            .unwrap_or(0.0);
        if pivot < 0.0 {
            dir.mapv_inplace(|v| -v);
        }
    }

    let values = centered.dot(&directions);
    let explained_variance_ratio = singular
        .iter()
        .map(|s| (s * s / total).clamp(0.0, 1.0))
        .collect();
    Ok(ReducedMatrix {
        values,
        explained_variance_ratio,
        components: directions.reversed_axes(),
        mean,
    })
}

/// Leading singular values and right singular vectors (`m × p`).
fn thin_svd(centered: &Array2<f64>, p: usize) -> (Vec<f64>, Array2<f64>) {
    let (n, m) = centered.dim();
    // nalgebra wants rows ≥ cols for the cheapest path; decompose Xᵀ when wide.
    let (sigma, v) = if n >= m {
        let svd = to_nalgebra(centered.view()).svd(false, true);
        let vt = svd.v_t.expect("requested V");
        (svd.singular_values, from_nalgebra(&vt.transpose()))
    } else {
        let svd = to_nalgebra(centered.t()).svd(true, false);
        (svd.singular_values, from_nalgebra(&svd.u.expect("requested U")))
    };
    take_leading(sigma.as_slice(), &v, p)
}

fn randomized_svd(centered: &Array2<f64>, p: usize) -> (Vec<f64>, Array2<f64>) {
    let (n, m) = centered.dim();
    let width = (p + OVERSAMPLE).min(n.min(m));
    let omega = gaussian_matrix(m, width, SKETCH_SEED);
    let mut q = orthonormalize(&centered.dot(&omega));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormalize(&centered.t().dot(&q));
        q = orthonormalize(&centered.dot(&z));
    }
    // B = Qᵀ X is width × m; its right singular vectors approximate X's.
    let b = q.t().dot(centered);
    let svd = to_nalgebra(b.t()).svd(true, false);
    let v = from_nalgebra(&svd.u.expect("requested U"));
    take_leading(svd.singular_values.as_slice(), &v, p)
}

fn take_leading(sigma: &[f64], v: &Array2<f64>, p: usize) -> (Vec<f64>, Array2<f64>) {
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let m = v.nrows();
    let mut values = Vec::with_capacity(p);
    let mut dirs = Array2::zeros((m, p));
    for (c, &idx) in order.iter().take(p).enumerate() {
        values.push(sigma[idx]);
        dirs.column_mut(c).assign(&v.column(idx));
    }
    // Fewer singular triplets than requested only happens for p = min(n, m)
    // on a wide matrix; the remaining directions carry no variance.
    values.resize(p, 0.0);
    (values, dirs)
}
