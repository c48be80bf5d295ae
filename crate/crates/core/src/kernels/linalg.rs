//! Conversions to nalgebra and the symmetric eigen-solver used by MDS.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Orthonormal basis of the column space of `a` (thin QR).
pub(crate) fn orthonormalize(a: &Array2<f64>) -> Array2<f64> {
    let qr = to_nalgebra(a.view()).qr();
    from_nalgebra(&qr.q())
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Dense solve is cheap enough below this order.
const DENSE_EIGEN_LIMIT: usize = 400;
const SUBSPACE_MAX_ITER: usize = 2000;
const SUBSPACE_TOL: f64 = 1e-11;
const SUBSPACE_GUARD: usize = 8;

/// The `count` algebraically largest eigenpairs of the symmetric matrix
/// `sym`, eigenvalues descending, eigenvectors as columns.
///
/// Small matrices use a dense decomposition. Larger ones use block subspace
/// iteration with Rayleigh-Ritz extraction over `count + 8` vectors, which
/// converges to the dominant-magnitude part of the spectrum; the requested
/// pairs are the largest Ritz values of that block.
pub(crate) fn top_eigenpairs(sym: &Array2<f64>, count: usize) -> (Array1<f64>, Array2<f64>) {
    let n = sym.nrows();
    let count = count.min(n);
    if n <= DENSE_EIGEN_LIMIT {
        let eig = SymmetricEigen::new(to_nalgebra(sym.view()));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = Array1::from_iter(order[..count].iter().map(|&i| eig.eigenvalues[i]));
        let vectors =
            Array2::from_shape_fn((n, count), |(r, c)| eig.eigenvectors[(r, order[c])]);
        return (values, vectors);
    }

    let block = (count + SUBSPACE_GUARD).min(n);
    let mut q = orthonormalize(&gaussian_matrix(n, block, 0x6d64_7300));
    let mut ritz_values = Array1::zeros(count);
    let mut ritz_vectors = Array2::zeros((n, count));
    for _ in 0..SUBSPACE_MAX_ITER {
        let z = sym.dot(&q);
        let h = q.t().dot(&z);
        let h = (&h + &h.t()) * 0.5;
        let eig = SymmetricEigen::new(to_nalgebra(h.view()));
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let w = Array2::from_shape_fn((block, count), |(r, c)| eig.eigenvectors[(r, order[c])]);
        let theta = Array1::from_iter(order[..count].iter().map(|&i| eig.eigenvalues[i]));
        let x = q.dot(&w);
        let bx = z.dot(&w);
        let scale = theta.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
        let converged = (0..count).all(|c| {
            let r = &bx.column(c) - &(&x.column(c) * theta[c]);
            r.dot(&r).sqrt() <= SUBSPACE_TOL * scale
        });
        ritz_values = theta;
        ritz_vectors = x;
        if converged {
            break;
        }
        q = orthonormalize(&z);
    }
    (ritz_values, ritz_vectors)
}
