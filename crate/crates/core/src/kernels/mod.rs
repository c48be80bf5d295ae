//! Stateless numeric primitives shared by the pipeline.
//!
//! Every function here is pure and deterministic: parallel reductions are
//! gathered per element and summed in index order.

mod emd;
mod linalg;
mod mds;
mod pca;
mod rand_index;

pub use emd::{emd_1d, histogram, Histogram};
pub use mds::classical_mds;
pub use pca::{pca_fit_transform, ReducedMatrix};
pub use rand_index::rand_index;

#[allow(unused_imports)]
pub(crate) use linalg::{to_nalgebra, top_eigenpairs};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Contiguous row-major copy of `data` so rows can be handed out as slices.
pub(crate) fn row_major(data: ArrayView2<'_, f64>) -> Array2<f64> {
    if data.is_standard_layout() {
        data.to_owned()
    } else {
        data.as_standard_layout().into_owned()
    }
}

/// Full Euclidean distance matrix between the rows of `data`.
pub fn pairwise_distances(data: ArrayView2<'_, f64>) -> Array2<f64> {
    let data = row_major(data);
    let n = data.nrows();
    let rows: Vec<&[f64]> = data.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    let flat: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (0..n).map(move |j| euclidean(rows[i], rows[j]))
        })
        .collect();
    Array2::from_shape_vec((n, n), flat).expect("n×n buffer")
}

/// Mean silhouette coefficient of `points` under `labels`.
///
/// Points in singleton groups contribute 0. Requires at least two groups.
pub fn silhouette(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::validation("silhouette needs at least two groups"));
    }
    let points = row_major(points);
    let rows: Vec<&[f64]> = points.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                sums[labels[j]] += euclidean(rows[i], rows[j]);
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&g| g != own && sizes[g] > 0)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pairwise_distance_matrix_is_symmetric_with_zero_diagonal() {
        let d = pairwise_distances(array![[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]].view());
        assert_eq!(d, array![[0.0, 5.0, 10.0], [5.0, 0.0, 5.0], [10.0, 5.0, 0.0]]);
    }

    #[test]
    fn silhouette_of_two_tight_far_groups_is_near_one() {
        let pts = array![[0.0, 0.0], [0.0, 0.1], [10.0, 0.0], [10.0, 0.1]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98, "{s}");
        assert!(silhouette(pts.view(), &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn silhouette_matches_hand_computation() {
        // 1-D points 0, 1 | 4: a(0)=1, b(0)=4 -> 0.75; a(1)=1, b(1)=3 -> 2/3; singleton -> 0.
        let pts = array![[0.0], [1.0], [4.0]];
        let s = silhouette(pts.view(), &[0, 0, 1]).unwrap();
        assert!((s - (0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }
}
