use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform-bin histogram whose mass is normalized by a caller-supplied
/// total weight (the size of the group it summarizes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub bin_width: f64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Bins `values` uniformly over `[lo, hi]`, each contributing
/// `1 / total_weight`. A value equal to `hi` lands in the last bin and values
/// outside the range are clamped into the boundary bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize, total_weight: usize) -> Result<Histogram> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::range(format!("histogram range [{lo}, {hi}] is empty")));
    }
    if bins == 0 {
        return Err(Error::range("histogram needs at least one bin"));
    }
    if total_weight < values.len().max(1) {
        return Err(Error::range(format!(
            "total weight {total_weight} is below the {} values binned",
            values.len()
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    bin_edges[bins] = hi;
    let unit = 1.0 / total_weight as f64;
    let mut mass = vec![0.0; bins];
    for &v in values {
        let slot = ((v - lo) / width).floor();
        let idx = if slot.is_nan() || slot < 0.0 {
            0
        } else {
            (slot as usize).min(bins - 1)
        };
        mass[idx] += unit;
    }
    Ok(Histogram {
        bin_edges,
        mass,
        bin_width: width,
    })
}

/// Earth mover's distance between two histograms on the same bins.
///
/// With a shared uniform 1-D support the optimal transport cost reduces to
/// `bin_width · Σ |CDF_a − CDF_b|`.
pub fn emd_1d(a: &Histogram, b: &Histogram) -> Result<f64> {
    let same_edges = a.bin_edges.len() == b.bin_edges.len()
        && a
            .bin_edges
            .iter()
            .zip(&b.bin_edges)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
    if !same_edges || a.mass.len() != b.mass.len() {
        return Err(Error::validation("histograms do not share bin edges"));
    }
    let mut cdf_gap = 0.0;
    let mut work = 0.0;
    for (ma, mb) in a.mass.iter().zip(&b.mass) {
        cdf_gap += ma - mb;
        work += cdf_gap.abs();
    }
    Ok(work * a.bin_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(mass: Vec<f64>, width: f64) -> Histogram {
        let bin_edges = (0..=mass.len()).map(|i| i as f64 * width).collect();
        Histogram {
            bin_edges,
            mass,
            bin_width: width,
        }
    }

    #[test]
    fn group_histogram_sums_to_one() {
        let h = histogram(&[0.1, 0.2, 0.5, 0.9, 1.0], 0.0, 1.0, 4, 5).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(h.bin_edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn upper_edge_and_outliers_clamp_into_boundary_bins() {
        let h = histogram(&[1.0, -3.0, 7.0], 0.0, 1.0, 10, 3).unwrap();
        assert!((h.mass[9] - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.mass[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_samples_fill_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let h = histogram(&xs, 0.0, 1.0, 10, xs.len()).unwrap();
        assert!(h.mass.iter().all(|m| (m - 0.1).abs() < 0.02), "{:?}", h.mass);
    }

    #[test]
    fn invalid_histogram_requests() {
        assert!(matches!(histogram(&[1.0], 1.0, 1.0, 3, 1), Err(Error::Range(_))));
        assert!(matches!(histogram(&[1.0], 0.0, 1.0, 0, 1), Err(Error::Range(_))));
        assert!(matches!(histogram(&[1.0, 2.0], 0.0, 3.0, 3, 1), Err(Error::Range(_))));
        let empty = histogram(&[], 0.0, 1.0, 3, 1).unwrap();
        assert_eq!(empty.total_mass(), 0.0);
    }

    #[test]
    fn emd_basic_values() {
        let a = hist(vec![1.0, 0.0], 1.0);
        let b = hist(vec![0.0, 1.0], 1.0);
        assert_eq!(emd_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(emd_1d(&a, &b).unwrap(), 1.0);
        assert_eq!(emd_1d(&b, &a).unwrap(), 1.0);
    }

    #[test]
    fn point_masses_at_the_range_ends() {
        // 20 bins over [0,1]: all mass in the first vs. the last bin.
        let a = histogram(&[0.0], 0.0, 1.0, 20, 1).unwrap();
        let b = histogram(&[1.0], 0.0, 1.0, 20, 1).unwrap();
        assert!((emd_1d(&a, &b).unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn mismatched_edges_are_rejected() {
        let a = hist(vec![1.0, 0.0], 1.0);
        let b = hist(vec![1.0, 0.0], 0.5);
        assert!(matches!(emd_1d(&a, &b), Err(Error::Validation(_))));
        let c = hist(vec![1.0, 0.0, 0.0], 1.0);
        assert!(emd_1d(&a, &c).is_err());
    }
}
