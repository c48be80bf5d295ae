//! Per-group feature statistics, rankings and partition edits.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{Partition, Provenance};
use crate::data::Selection;
use crate::error::{Error, Result};
use crate::kernels::{emd_1d, histogram, row_major, squared_distance, Histogram};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingBasis {
    GroupMean,
    DeviationEmd,
}

/// Features ordered by descending score, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub basis: RankingBasis,
    /// Set for [`RankingBasis::GroupMean`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub order: Vec<usize>,
    /// Indexed by feature, not by rank.
    pub scores: Vec<f64>,
}

impl FeatureRanking {
    fn from_scores(basis: RankingBasis, group: Option<usize>, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self {
            basis,
            group,
            order,
            scores,
        }
    }
}

fn check_cover(data: ArrayView2<'_, f64>, partition: &Partition) -> Result<()> {
    if partition.n_instances() != data.nrows() {
        return Err(Error::validation(format!(
            "partition covers {} instances, data has {}",
            partition.n_instances(),
            data.nrows()
        )));
    }
    Ok(())
}

fn column_means(data: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0; data.ncols()];
    for &i in rows {
        for (s, v) in sums.iter_mut().zip(data.row(i)) {
            *s += v;
        }
    }
    if !rows.is_empty() {
        let inv = 1.0 / rows.len() as f64;
        sums.iter_mut().for_each(|s| *s *= inv);
    }
    sums
}

/// Ranks features by their mean attribution within one group.
pub fn rank_features_by_group_mean(
    matrix: ArrayView2<'_, f64>,
    partition: &Partition,
    group_id: usize,
) -> Result<FeatureRanking> {
    check_cover(matrix, partition)?;
    if partition.group(group_id).is_none() {
        return Err(Error::validation(format!("unknown group {group_id}")));
    }
    let members = partition.members(group_id);
    let scores = column_means(matrix, &members);
    Ok(FeatureRanking::from_scores(
        RankingBasis::GroupMean,
        Some(group_id),
        scores,
    ))
}

/// Per-group histograms of one feature on a shared range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistograms {
    pub feature: usize,
    pub lo: f64,
    pub hi: f64,
    /// One histogram per group id, each normalized by the group size.
    pub groups: Vec<Histogram>,
}

fn feature_range(column: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    // A constant feature still needs a non-empty range.
    if lo < hi {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn histograms_for(
    matrix: ArrayView2<'_, f64>,
    members: &[Vec<usize>],
    feature: usize,
    bins: usize,
) -> Result<FeatureHistograms> {
    let column = matrix.column(feature);
    let (lo, hi) = feature_range(column.iter().copied());
    let groups = members
        .iter()
        .map(|rows| {
            let values: Vec<f64> = rows.iter().map(|&i| column[i]).collect();
            histogram(&values, lo, hi, bins, rows.len().max(1))
        })
        .collect::<Result<_>>()?;
    Ok(FeatureHistograms {
        feature,
        lo,
        hi,
        groups,
    })
}

/// Histograms of every feature, binned over each feature's full `[min, max]`.
pub fn feature_histograms(
    matrix: ArrayView2<'_, f64>,
    partition: &Partition,
    bins: usize,
) -> Result<Vec<FeatureHistograms>> {
    check_cover(matrix, partition)?;
    if bins == 0 {
        return Err(Error::validation("bins must be at least 1"));
    }
    let members = partition.members_by_group();
    (0..matrix.ncols())
        .into_par_iter()
        .map(|f| histograms_for(matrix, &members, f, bins))
        .collect()
}

/// Ranks features by the sum of pairwise EMDs between their per-group
/// distributions.
pub fn rank_features_by_deviation(
    matrix: ArrayView2<'_, f64>,
    partition: &Partition,
    bins: usize,
) -> Result<FeatureRanking> {
    check_cover(matrix, partition)?;
    if partition.n_groups() < 2 {
        return Err(Error::validation(
            "deviation ranking needs at least two groups",
        ));
    }
    let hists = feature_histograms(matrix, partition, bins)?;
    let scores = hists
        .par_iter()
        .map(|fh| {
            let mut total = 0.0;
            for a in 0..fh.groups.len() {
                for b in a + 1..fh.groups.len() {
                    total += emd_1d(&fh.groups[a], &fh.groups[b])?;
                }
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FeatureRanking::from_scores(
        RankingBasis::DeviationEmd,
        None,
        scores,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub group_id: usize,
    pub selected_count: usize,
    pub unselected_count: usize,
    pub selected_mean: Vec<f64>,
    pub unselected_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSplitStats {
    pub groups: Vec<GroupSplit>,
}

/// Per-group means over the selected and the unselected members. An empty
/// side has count 0 and zero means.
pub fn selection_split_stats(
    matrix: ArrayView2<'_, f64>,
    partition: &Partition,
    selection: &Selection,
) -> Result<SelectionSplitStats> {
    check_cover(matrix, partition)?;
    selection.check_against(matrix.nrows())?;
    let groups = partition
        .members_by_group()
        .into_iter()
        .enumerate()
        .map(|(group_id, members)| {
            let (sel, rest): (Vec<usize>, Vec<usize>) =
                members.into_iter().partition(|&i| selection.contains(i));
            GroupSplit {
                group_id,
                selected_count: sel.len(),
                unselected_count: rest.len(),
                selected_mean: column_means(matrix, &sel),
                unselected_mean: column_means(matrix, &rest),
            }
        })
        .collect();
    Ok(SelectionSplitStats { groups })
}

/// Moves the selected instances into a new group with the next id. Groups
/// left empty are dropped and ids compacted. `data` is the space medoids are
/// measured in.
pub fn add_subpopulation(
    partition: &Partition,
    selection: &Selection,
    data: ArrayView2<'_, f64>,
) -> Result<Partition> {
    check_cover(data, partition)?;
    if selection.is_empty() {
        return Err(Error::validation("cannot create a subpopulation from an empty selection"));
    }
    selection.check_against(partition.n_instances())?;
    let new_id = partition.n_groups();
    let mut labels = partition.labels().to_vec();
    for &i in selection.indices() {
        labels[i] = new_id;
    }
    Partition::from_labels(labels, data, Provenance::UserEdited)
}

/// Dissolves a group, sending each member to the remaining group whose
/// medoid is nearest in `data`. Ties go to the lower group id.
pub fn remove_subpopulation(
    partition: &Partition,
    group_id: usize,
    data: ArrayView2<'_, f64>,
) -> Result<Partition> {
    check_cover(data, partition)?;
    if partition.group(group_id).is_none() {
        return Err(Error::validation(format!("unknown group {group_id}")));
    }
    if partition.n_groups() < 2 {
        return Err(Error::validation("cannot remove the last remaining group"));
    }
    let data = row_major(data);
    let row = |i: usize| data.row(i).to_slice().unwrap();
    let targets: Vec<(usize, &[f64])> = partition
        .groups()
        .iter()
        .filter(|g| g.group_id != group_id)
        .map(|g| (g.group_id, row(g.medoid_index)))
        .collect();
    let mut labels = partition.labels().to_vec();
    for l in labels.iter_mut().filter(|l| **l == group_id) {
        *l = usize::MAX;
    }
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == usize::MAX {
            let x = row(i);
            *l = targets
                .iter()
                .map(|&(g, m)| (g, squared_distance(x, m)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("at least one remaining group")
                .0;
        }
    }
    Partition::from_labels(labels, data.view(), Provenance::UserEdited)
}

/// Cutoff for "insignificant" attributions, relative to the largest |w|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub relative_threshold: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            relative_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Absolute cutoff: `relative_threshold · max|w|`.
    pub threshold: f64,
    /// Fraction of all entries with |w| below the cutoff.
    pub near_zero_fraction: f64,
    /// Mean number of entries per instance at or above the cutoff.
    pub mean_active_features: f64,
    /// Instances whose mean |w| falls below the cutoff.
    pub low_attribution: Selection,
}

fn max_abs(matrix: ArrayView2<'_, f64>) -> f64 {
    matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_threshold(cfg: &DiagnosticsConfig) -> Result<()> {
    if !(cfg.relative_threshold >= 0.0) || !cfg.relative_threshold.is_finite() {
        return Err(Error::validation(format!(
            "relative_threshold must be a non-negative number, got {}",
            cfg.relative_threshold
        )));
    }
    Ok(())
}

/// Instances with no significant attribution: mean |w| below the cutoff.
pub fn low_attribution_instances(
    matrix: ArrayView2<'_, f64>,
    cfg: &DiagnosticsConfig,
) -> Result<Selection> {
    check_threshold(cfg)?;
    let cutoff = cfg.relative_threshold * max_abs(matrix);
    let m = matrix.ncols().max(1) as f64;
    Selection::new(
        matrix
            .outer_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().map(|v| v.abs()).sum::<f64>() / m < cutoff)
            .map(|(i, _)| i),
        matrix.nrows(),
    )
}

pub fn sparsity_report(matrix: ArrayView2<'_, f64>, cfg: &DiagnosticsConfig) -> Result<SparsityReport> {
    check_threshold(cfg)?;
    let threshold = cfg.relative_threshold * max_abs(matrix);
    let total = matrix.len().max(1) as f64;
    let near_zero = matrix.iter().filter(|v| v.abs() < threshold).count() as f64;
    let active = matrix.len() as f64 - near_zero;
    Ok(SparsityReport {
        threshold,
        near_zero_fraction: near_zero / total,
        mean_active_features: active / matrix.nrows().max(1) as f64,
        low_attribution: low_attribution_instances(matrix, cfg)?,
    })
}
