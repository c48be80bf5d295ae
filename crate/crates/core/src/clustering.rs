//! k-means subpopulations, group medoids and outlier scores.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Selection;
use crate::error::{Error, Result};
use crate::kernels::{euclidean, row_major, squared_distance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Algorithmic,
    UserEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub group_id: usize,
    pub member_count: usize,
    pub medoid_index: usize,
}

/// Group label per instance with per-group metadata.
///
/// Group ids are contiguous from 0, every group is non-empty and each
/// medoid is a member of its group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    groups: Vec<GroupInfo>,
    provenance: Provenance,
}

impl Partition {
    /// Builds a partition from arbitrary labels. Ids are compacted to
    /// `0..k` preserving their relative order; medoids are computed on `data`.
    pub fn from_labels(
        labels: Vec<usize>,
        data: ArrayView2<'_, f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::validation(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::validation("partition must cover at least one instance"));
        }
        let labels = compact(labels);
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let members = members_by_group(&labels, k);
        let data = row_major(data);
        let medoids: Vec<usize> = members
            .par_iter()
            .map(|m| medoid(data.view(), m))
            .collect::<Result<_>>()?;
        let groups = members
            .iter()
            .zip(medoids)
            .enumerate()
            .map(|(group_id, (m, medoid_index))| GroupInfo {
                group_id,
                member_count: m.len(),
                medoid_index,
            })
            .collect();
        Ok(Self {
            labels,
            groups,
            provenance,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn group(&self, group_id: usize) -> Option<&GroupInfo> {
        self.groups.get(group_id)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn members(&self, group_id: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == group_id)
            .collect()
    }

    pub fn members_by_group(&self) -> Vec<Vec<usize>> {
        members_by_group(&self.labels, self.groups.len())
    }
}

/// Maps label values onto `0..k` preserving their order.
fn compact(mut labels: Vec<usize>) -> Vec<usize> {
    let mut present: Vec<usize> = labels.clone();
    present.sort_unstable();
    present.dedup();
    for l in labels.iter_mut() {
        *l = present.binary_search(l).expect("label present");
    }
    labels
}

pub(crate) fn members_by_group(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// k-means settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative change in inertia drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_iter: 300,
            tol: 1e-4,
            seed: 42,
        }
    }
}

impl ClusterConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::validation(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub partition: Partition,
    /// `k × p` centroids the final labels were assigned against.
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's k-means from k-means++ seeding.
///
/// Runs until `max_iter` assignment steps or until the relative inertia change
/// falls below `tol`. Clusters that empty out are re-seeded with the point
/// farthest from its centroid. Deterministic for a given seed regardless of
/// thread count.
pub fn kmeans(data: ArrayView2<'_, f64>, cfg: &ClusterConfig) -> Result<KMeansResult> {
    cfg.validate()?;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::validation("cannot cluster an empty matrix"));
    }
    if cfg.k > n {
        return Err(Error::range(format!("k = {} exceeds the {n} instances", cfg.k)));
    }
    let data = row_major(data);
    let p = data.ncols();
    let rows: Vec<&[f64]> = data.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_seeds(&rows, cfg.k, &mut rng);

    let mut labels = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        assign(&rows, &centroids, p, &mut labels, &mut dist);
        let reseeded = reseed_empty(&rows, &mut centroids, p, &mut labels, &mut dist);
        let inertia: f64 = dist.iter().sum();
        let converged = match history.last() {
            Some(&prev) if !reseeded => {
                inertia == 0.0 || (prev - inertia).abs() <= cfg.tol * f64::abs(prev)
            }
            _ => inertia == 0.0 && !reseeded,
        };
        history.push(inertia);
        if converged || iterations >= cfg.max_iter {
            break;
        }
        update_centroids(&rows, &labels, &mut centroids, cfg.k, p);
    }

    let inertia = *history.last().expect("at least one iteration");
    let centroids = Array2::from_shape_vec((cfg.k, p), centroids).expect("k×p");
    let partition = Partition::from_labels(labels, data.view(), Provenance::Algorithmic)?;
    Ok(KMeansResult {
        partition,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn plus_plus_seeds(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = rows[first].to_vec();
    let mut d2: Vec<f64> = rows.par_iter().map(|r| squared_distance(r, rows[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final partial sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // Every remaining point duplicates a seed: take an unused index.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(rows[next]);
        let seed = rows[next];
        d2.par_iter_mut()
            .zip(rows.par_iter())
            .for_each(|(d, r)| *d = d.min(squared_distance(r, seed)));
    }
    centroids
}

fn assign(rows: &[&[f64]], centroids: &[f64], p: usize, labels: &mut [usize], dist: &mut [f64]) {
    labels
        .par_iter_mut()
        .zip(dist.par_iter_mut())
        .zip(rows.par_iter())
        .for_each(|((label, d), row)| {
            let (best, best_d) = nearest(row, centroids, p);
            *label = best;
            *d = best_d;
        });
}

/// Nearest centroid; ties go to the lowest index.
#[inline]
fn nearest(row: &[f64], centroids: &[f64], p: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.chunks_exact(p.max(1)).enumerate() {
        let d = squared_distance(row, &centroid[..p]);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn reseed_empty(
    rows: &[&[f64]],
    centroids: &mut [f64],
    p: usize,
    labels: &mut [usize],
    dist: &mut [f64],
) -> bool {
    let k = centroids.len() / p.max(1);
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut reseeded = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        // Farthest point whose own cluster can spare it.
        let far = (0..rows.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        let Some(far) = far else { break };
        counts[labels[far]] -= 1;
        counts[c] += 1;
        labels[far] = c;
        dist[far] = 0.0;
        centroids[c * p..(c + 1) * p].copy_from_slice(rows[far]);
        reseeded = true;
    }
    reseeded
}

fn update_centroids(rows: &[&[f64]], labels: &[usize], centroids: &mut [f64], k: usize, p: usize) {
    let mut sums = vec![0.0; k * p];
    let mut counts = vec![0usize; k];
    for (row, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * p..(l + 1) * p].iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, s) in centroids[c * p..(c + 1) * p].iter_mut().zip(&sums[c * p..(c + 1) * p]) {
            *dst = s * inv;
        }
    }
}

/// Member minimizing the summed Euclidean distance to all other members.
/// Ties go to the smallest index.
pub fn medoid(data: ArrayView2<'_, f64>, members: &[usize]) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::validation("medoid of an empty group"));
    }
    let n = data.nrows();
    if let Some(&bad) = members.iter().find(|&&i| i >= n) {
        return Err(Error::range(format!("member {bad} out of range for {n} rows")));
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() == 1 {
        return Ok(sorted[0]);
    }
    let data = row_major(data);
    let rows: Vec<&[f64]> = sorted.iter().map(|&i| data.row(i).to_slice().unwrap()).collect();
    let costs: Vec<f64> = rows
        .par_iter()
        .map(|a| rows.iter().map(|b| euclidean(a, b)).sum())
        .collect();
    let best = (0..sorted.len())
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)))
        .expect("non-empty");
    Ok(sorted[best])
}

/// Mean Euclidean distance from each point to its `k_neighbors` nearest
/// other points.
pub fn outlier_scores(data: ArrayView2<'_, f64>, k_neighbors: usize) -> Result<Vec<f64>> {
    let n = data.nrows();
    if k_neighbors == 0 || k_neighbors >= n {
        return Err(Error::range(format!(
            "k_neighbors must be in 1..{n}, got {k_neighbors}"
        )));
    }
    let data = row_major(data);
    let rows: Vec<&[f64]> = data.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(rows[i], rows[j]))
                .collect();
            d.select_nth_unstable_by(k_neighbors - 1, f64::total_cmp);
            let mut nearest = d[..k_neighbors].to_vec();
            nearest.sort_by(f64::total_cmp);
            nearest.iter().sum::<f64>() / k_neighbors as f64
        })
        .collect())
}

/// Indices whose score is strictly above the given percentile of `scores`
/// (linear interpolation between order statistics).
pub fn flag_outliers(scores: &[f64], percentile: f64) -> Result<Selection> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::range(format!("percentile {percentile} outside [0, 100]")));
    }
    if scores.is_empty() {
        return Ok(Selection::empty());
    }
    let threshold = percentile_of(scores, percentile);
    Selection::new(
        scores.iter().enumerate().filter(|(_, &s)| s > threshold).map(|(i, _)| i),
        scores.len(),
    )
}

pub(crate) fn percentile_of(values: &[f64], percentile: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Uniform sample of `min(count, members.len())` members, sorted.
pub(crate) fn sample_members(members: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let take = count.min(members.len());
    let mut picked: Vec<usize> = sample(rng, members.len(), take)
        .into_iter()
        .map(|i| members[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rand_index;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, Normal};

    fn blobs(per: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut x = Array2::zeros((per * centers.len(), 2));
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                x[[r, 0]] = center[0] + noise.sample(&mut rng);
                x[[r, 1]] = center[1] + noise.sample(&mut rng);
                labels.push(c);
            }
        }
        (x, labels)
    }

    fn brute_medoid(data: &Array2<f64>, members: &[usize]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in members {
            let mut s = 0.0;
            for &j in members {
                let dx = data[[i, 0]] - data[[j, 0]];
                let dy = data[[i, 1]] - data[[j, 1]];
                s += (dx * dx + dy * dy).sqrt();
            }
            if s < best.0 || (s == best.0 && i < best.1) {
                best = (s, i);
            }
        }
        best.1
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (x, truth) = blobs(100, &[[0.0, 0.0], [50.0, 50.0]], 1.0, 3);
        let res = kmeans(x.view(), &ClusterConfig::with_k(2)).unwrap();
        assert_eq!(rand_index(res.partition.labels(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn k_equals_n_isolates_every_point() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [5.0, 5.0]];
        let res = kmeans(x.view(), &ClusterConfig::with_k(4)).unwrap();
        assert_eq!(res.partition.n_groups(), 4);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn k_one_medoid_is_global_medoid() {
        let (x, _) = blobs(30, &[[0.0, 0.0], [4.0, 1.0]], 1.0, 5);
        let res = kmeans(x.view(), &ClusterConfig::with_k(1)).unwrap();
        let all: Vec<usize> = (0..60).collect();
        assert_eq!(res.partition.groups()[0].medoid_index, brute_medoid(&x, &all));
    }

    #[test]
    fn k_above_n_is_a_range_error() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(kmeans(x.view(), &ClusterConfig::with_k(3)), Err(Error::Range(_))));
        let bad = ClusterConfig { tol: 0.0, ..ClusterConfig::with_k(1) };
        assert!(matches!(kmeans(x.view(), &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_points_still_give_k_groups() {
        let x = Array2::from_elem((6, 2), 1.0);
        let res = kmeans(x.view(), &ClusterConfig::with_k(3)).unwrap();
        assert_eq!(res.partition.n_groups(), 3);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn inertia_never_increases_and_runs_are_reproducible() {
        let (x, _) = blobs(80, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 1.2, 8);
        let cfg = ClusterConfig { tol: 1e-12, ..ClusterConfig::with_k(4) };
        let a = kmeans(x.view(), &cfg).unwrap();
        assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let b = kmeans(x.view(), &cfg).unwrap();
        assert_eq!(a.partition, b.partition);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn final_assignment_is_locally_optimal() {
        let (x, _) = blobs(60, &[[0.0, 0.0], [2.0, 0.5], [1.0, 2.0]], 0.8, 12);
        let res = kmeans(x.view(), &ClusterConfig::with_k(3)).unwrap();
        for (i, &l) in res.partition.labels().iter().enumerate() {
            let row = x.row(i).to_vec();
            let own = squared_distance(&row, res.centroids.row(l).as_slice().unwrap());
            for c in 0..3 {
                let other = squared_distance(&row, res.centroids.row(c).as_slice().unwrap());
                assert!(other >= own, "point {i} prefers centroid {c}");
            }
        }
    }

    #[test]
    fn medoid_cases() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [9.0, 9.0]];
        assert_eq!(medoid(x.view(), &[3]).unwrap(), 3);
        assert_eq!(medoid(x.view(), &[2, 0, 1]).unwrap(), 1);
        assert!(matches!(medoid(x.view(), &[]), Err(Error::Validation(_))));
        // Two-point group: tie broken by the smaller index.
        assert_eq!(medoid(x.view(), &[2, 1]).unwrap(), 1);
    }

    #[test]
    fn medoid_matches_exhaustive_search_in_any_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array2::from_shape_simple_fn((40, 2), || rng.random_range(-3.0..3.0));
        for trial in 0..20 {
            let mut members: Vec<usize> = sample(&mut rng, 40, 10).into_vec();
            let expect = brute_medoid(&x, &members);
            assert_eq!(medoid(x.view(), &members).unwrap(), expect, "trial {trial}");
            members.reverse();
            assert_eq!(medoid(x.view(), &members).unwrap(), expect);
        }
    }

    #[test]
    fn displaced_point_is_flagged() {
        let (mut x, _) = blobs(200, &[[0.0, 0.0]], 1.0, 4);
        x[[17, 0]] = 100.0;
        let scores = outlier_scores(x.view(), 5).unwrap();
        let flagged = flag_outliers(&scores, 98.0).unwrap();
        assert!(flagged.contains(17));
        assert!(flagged.len() <= 4);
    }

    #[test]
    fn identical_points_flag_nothing() {
        let x = Array2::from_elem((10, 3), 0.5);
        let scores = outlier_scores(x.view(), 3).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
        assert!(flag_outliers(&scores, 98.0).unwrap().is_empty());
    }

    #[test]
    fn percentile_hundred_flags_nothing() {
        let scores = [1.0, 5.0, 2.0, 100.0];
        assert!(flag_outliers(&scores, 100.0).unwrap().is_empty());
        assert_eq!(flag_outliers(&scores, 50.0).unwrap().indices(), [1, 3]);
    }

    #[test]
    fn outlier_neighbor_count_is_range_checked() {
        let x = array![[0.0], [1.0], [2.0]];
        assert!(matches!(outlier_scores(x.view(), 3), Err(Error::Range(_))));
        assert!(matches!(outlier_scores(x.view(), 0), Err(Error::Range(_))));
        assert_eq!(outlier_scores(x.view(), 1).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn from_labels_compacts_ids() {
        let x = array![[0.0], [1.0], [5.0], [6.0]];
        let p = Partition::from_labels(vec![7, 7, 3, 3], x.view(), Provenance::UserEdited).unwrap();
        assert_eq!(p.labels(), [1, 1, 0, 0]);
        assert_eq!(p.groups()[0].member_count, 2);
        assert!([2, 3].contains(&p.groups()[0].medoid_index));
    }
}
