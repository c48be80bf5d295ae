use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::AttributionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 10_000, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// `n × 2`, columns A and B.
    pub features: Array2<f64>,
    /// 1 or 2.
    pub classes: Vec<u8>,
    /// 0 for the first half, 1 for the second.
    pub halves: Vec<usize>,
}

/// Two halves of `n / 2` rows each.
///
/// First half: A ~ U[0,1] (class 1) or U[1,2] (class 2), B ~ U[1,2].
/// Second half: A ~ U[2,3], B ~ U[3,4] (class 1) or U[4,5] (class 2).
/// Classes alternate within each half so both are exactly balanced.
pub fn gen_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.n == 0 || spec.n % 2 != 0 {
        return Err(Error::validation(format!(
            "n must be a positive even count, got {}",
            spec.n
        )));
    }
    let half = spec.n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Array2::zeros((spec.n, 2));
    let mut classes = Vec::with_capacity(spec.n);
    let mut halves = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let h = usize::from(i >= half);
        let class = if (i - h * half) % 2 == 0 { 1u8 } else { 2u8 };
        let (a, b) = if h == 0 {
            let lo = if class == 1 { 0.0 } else { 1.0 };
            (rng.random_range(lo..lo + 1.0), rng.random_range(1.0..2.0))
        } else {
            let lo = if class == 1 { 3.0 } else { 4.0 };
            (rng.random_range(2.0..3.0), rng.random_range(lo..lo + 1.0))
        };
        features[[i, 0]] = a;
        features[[i, 1]] = b;
        classes.push(class);
        halves.push(h);
    }
    Ok(SyntheticDataset {
        features,
        classes,
        halves,
    })
}

/// The generating rule: first half is class 2 iff A > 1, second half iff B > 4.
pub fn blackbox_predict(row: &[f64], half: usize) -> u8 {
    let predictive = if half == 0 { row[0] > 1.0 } else { row[1] > 4.0 };
    if predictive {
        2
    } else {
        1
    }
}

/// A model scored on arbitrary (perturbed) rows.
pub trait BlackBox: Sync {
    fn score(&self, row: &[f64]) -> f64;
}

impl<F> BlackBox for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, row: &[f64]) -> f64 {
        self(row)
    }
}

/// [`blackbox_predict`] on raw rows, half inferred from B (B < 2.5 is the
/// first half). Scores class 2 as +1 and class 1 as −1.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBlackBox;

impl RuleBlackBox {
    pub fn half_of(row: &[f64]) -> usize {
        usize::from(row[1] >= 2.5)
    }

    pub fn predict(&self, row: &[f64]) -> u8 {
        blackbox_predict(row, Self::half_of(row))
    }
}

impl BlackBox for RuleBlackBox {
    fn score(&self, row: &[f64]) -> f64 {
        if self.predict(row) == 2 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub n_samples: usize,
    /// Kernel width on the standardized perturbation offset.
    pub kernel_width: f64,
    pub ridge: f64,
    /// Perturbation std as a multiple of each feature's global std.
    pub perturbation_scale: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            kernel_width: 2.5,
            ridge: 1e-3,
            perturbation_scale: 3.0,
            seed: 42,
        }
    }
}

impl SurrogateConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::validation("n_samples must be at least 2"));
        }
        for (name, v) in [
            ("kernel_width", self.kernel_width),
            ("ridge", self.ridge),
            ("perturbation_scale", self.perturbation_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Local linear surrogate attributions.
///
/// Around each instance, samples Gaussian perturbations, weights them with
/// `exp(−d²/width²)` on the standardized offset, fits a weighted ridge
/// regression of the black-box score and reports `|coefficient| × std` of
/// each perturbed feature. Each instance draws from its own ChaCha stream,
/// so the result does not depend on thread count.
pub fn surrogate_attributions(
    features: ArrayView2<'_, f64>,
    blackbox: &dyn BlackBox,
    cfg: &SurrogateConfig,
) -> Result<AttributionMatrix> {
    cfg.validate()?;
    let (n, m) = features.dim();
    if n == 0 || m == 0 {
        return Err(Error::validation("no instances to explain"));
    }
    let scale: Vec<f64> = features
        .std_axis(Axis(0), 0.0)
        .iter()
        .map(|&s| if s > 0.0 { s } else { 1.0 })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = features.row(i).to_vec();
            explain_one(&x, i as u64, &scale, blackbox, cfg)
        })
        .collect();
    let values = Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]);
    let names = if m == 2 {
        vec!["A".to_string(), "B".to_string()]
    } else {
        (0..m).map(|j| format!("f{j}")).collect()
    };
    let ids = (0..n).map(|i| i.to_string()).collect();
    AttributionMatrix::new(ids, names, values, None)
}

fn explain_one(x: &[f64], stream: u64, scale: &[f64], bb: &dyn BlackBox, cfg: &SurrogateConfig) -> Vec<f64> {
    let m = x.len();
    let s = cfg.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut z = DMatrix::<f64>::zeros(s, m);
    let mut w = DVector::<f64>::zeros(s);
    let mut y = DVector::<f64>::zeros(s);
    let mut row = vec![0.0; m];
    let width2 = cfg.kernel_width * cfg.kernel_width;
    for r in 0..s {
        let mut d2 = 0.0;
        for j in 0..m {
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.perturbation_scale;
            d2 += e * e;
            row[j] = x[j] + e * scale[j];
            z[(r, j)] = row[j];
        }
        w[r] = (-d2 / width2).exp();
        y[r] = bb.score(&row);
    }

    let total = w.sum();
    if !(total > 0.0) {
        return vec![0.0; m];
    }
    let z_mean: Vec<f64> = (0..m).map(|j| z.column(j).dot(&w) / total).collect();
    let y_mean = y.dot(&w) / total;
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for r in 0..s {
        let yc = y[r] - y_mean;
        for a in 0..m {
            let za = w[r] * (z[(r, a)] - z_mean[a]);
            rhs[a] += za * yc;
            for b in 0..=a {
                gram[(a, b)] += za * (z[(r, b)] - z_mean[b]);
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let coef = solve_ridge(gram, &rhs, cfg.ridge);

    (0..m)
        .map(|j| {
            let col = z.column(j);
            let mean = col.mean();
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64).sqrt();
            coef[j].abs() * std
        })
        .collect()
}

fn solve_ridge(mut gram: DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let m = gram.nrows();
    let mut lambda = ridge;
    for _ in 0..8 {
        let mut g = gram.clone();
        for a in 0..m {
            g[(a, a)] += lambda;
        }
        if let Some(ch) = g.cholesky() {
            return ch.solve(rhs);
        }
        lambda *= 10.0;
    }
    for a in 0..m {
        gram[(a, a)] += lambda;
    }
    gram.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(m))
}

/// Appends `count` columns of U[0, 0.5] values named `noise_0`, `noise_1`, ...
pub fn add_noise_columns(matrix: &AttributionMatrix, count: usize, seed: u64) -> Result<AttributionMatrix> {
    if count == 0 {
        return Ok(matrix.clone());
    }
    let values = append_noise(matrix.values().view(), count, seed);
    let mut names = matrix.feature_names().to_vec();
    let taken: std::collections::HashSet<&str> = names.iter().map(String::as_str).collect();
    let prefix = (0..)
        .map(|k| if k == 0 { "noise_".to_string() } else { format!("noise{k}_") })
        .find(|p| !taken.iter().any(|t| t.starts_with(p.as_str())))
        .expect("a free prefix exists");
    names.extend((0..count).map(|c| format!("{prefix}{c}")));
    AttributionMatrix::new(
        matrix.instance_ids().to_vec(),
        names,
        values,
        matrix.prior_labels().map(<[i64]>::to_vec),
    )
}

/// Raw-array form of [`add_noise_columns`].
pub fn append_noise(values: ArrayView2<'_, f64>, count: usize, seed: u64) -> Array2<f64> {
    let (n, m) = values.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, m + count));
    for i in 0..n {
        for j in 0..m {
            out[[i, j]] = values[[i, j]];
        }
        for j in m..m + count {
            out[[i, j]] = rng.random_range(0.0..=0.5);
        }
    }
    out
}
