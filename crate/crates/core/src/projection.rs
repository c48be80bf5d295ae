//! Class-aware local affine multidimensional projection (LAMP).
//!
//! A few control points per group are laid out first with classical MDS
//! (same-group distances shrunk), then every instance is placed by the
//! orthogonal affine map that best carries the nearby controls onto their
//! 2-D positions. Controls from the instance's own group get a boosted
//! weight, which pulls groups apart in the layout.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{flag_outliers, outlier_scores, sample_members, Partition};
use crate::error::{Error, Result};
use crate::kernels::{classical_mds, euclidean, row_major, squared_distance};

/// Distance below which a point is placed exactly on a control.
pub const SNAP_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    /// Controls sampled per group; `None` means `max(5, ⌈√size⌉)`.
    pub controls_per_cluster: Option<usize>,
    /// Factor applied to same-group control distances before MDS.
    pub inner_shrink: f64,
    /// Weight multiplier for controls in the mapped point's own group.
    pub same_class_boost: f64,
    /// Added to squared distances in the weight kernel.
    pub epsilon: f64,
    pub seed: u64,
    pub outlier_neighbors: usize,
    pub outlier_percentile: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            controls_per_cluster: None,
            inner_shrink: 0.7,
            same_class_boost: 1.3,
            epsilon: 1e-9,
            seed: 42,
            outlier_neighbors: 10,
            outlier_percentile: 98.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.controls_per_cluster == Some(0) {
            return Err(Error::validation("controls_per_cluster must be at least 1"));
        }
        if !(self.inner_shrink > 0.0 && self.inner_shrink <= 1.0) {
            return Err(Error::validation(format!(
                "inner_shrink must be in (0, 1], got {}",
                self.inner_shrink
            )));
        }
        if !(self.same_class_boost >= 1.0) || !self.same_class_boost.is_finite() {
            return Err(Error::validation(format!(
                "same_class_boost must be ≥ 1, got {}",
                self.same_class_boost
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.outlier_neighbors == 0 {
            return Err(Error::validation("outlier_neighbors must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.outlier_percentile) {
            return Err(Error::validation("outlier_percentile must be in [0, 100]"));
        }
        Ok(())
    }

    pub fn controls_for(&self, group_size: usize) -> usize {
        let count = self
            .controls_per_cluster
            .unwrap_or_else(|| 5.max((group_size as f64).sqrt().ceil() as usize));
        count.min(group_size)
    }
}

/// Control points and their 2-D seed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayout {
    pub indices: Vec<usize>,
    /// `c × 2`, row `i` belongs to `indices[i]`.
    pub coords: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLayout {
    /// `n × 2` layout coordinates.
    pub coords: Array2<f64>,
    pub control_indices: Vec<usize>,
    pub control_coords: Array2<f64>,
    /// Position of each group's medoid, indexed by group id.
    pub medoid_coords: Vec<[f64; 2]>,
    pub outlier_flags: Vec<bool>,
}

/// Samples `min(controls, size)` members of every group without
/// replacement. Output is grouped by group id, sorted within each block.
pub fn select_control_points(partition: &Partition, cfg: &ProjectionConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    partition
        .members_by_group()
        .iter()
        .flat_map(|members| sample_members(members, cfg.controls_for(members.len()), &mut rng))
        .collect()
}

/// 2-D positions for the controls: pairwise distances with same-group pairs
/// scaled by `inner_shrink`, embedded by classical MDS.
pub fn seed_control_layout(
    control_rows: ArrayView2<'_, f64>,
    control_groups: &[usize],
    cfg: &ProjectionConfig,
) -> Result<Array2<f64>> {
    let c = control_rows.nrows();
    if c == 0 {
        return Err(Error::validation("no control points to lay out"));
    }
    if control_groups.len() != c {
        return Err(Error::validation(format!(
            "{} group labels for {c} controls",
            control_groups.len()
        )));
    }
    let rows = row_major(control_rows);
    let mut d = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..i {
            let mut dij = euclidean(
                rows.row(i).as_slice().unwrap(),
                rows.row(j).as_slice().unwrap(),
            );
            if control_groups[i] == control_groups[j] {
                dij *= cfg.inner_shrink;
            }
            d[[i, j]] = dij;
            d[[j, i]] = dij;
        }
    }
    classical_mds(d.view(), 2)
}

/// Selects controls and seeds their layout.
pub fn place_controls(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    cfg: &ProjectionConfig,
) -> Result<ControlLayout> {
    cfg.validate()?;
    check_cover(data, partition)?;
    let indices = select_control_points(partition, cfg);
    let rows = data.select(ndarray::Axis(0), &indices);
    let groups: Vec<usize> = indices.iter().map(|&i| partition.labels()[i]).collect();
    let coords = seed_control_layout(rows.view(), &groups, cfg)?;
    Ok(ControlLayout { indices, coords })
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

struct Controls<'a> {
    rows: Vec<&'a [f64]>,
    coords: Vec<[f64; 2]>,
    groups: Vec<usize>,
}

/// Maps only the rows listed in `points`. Each point is mapped
/// independently, so any subset yields the same coordinates as a full run.
pub fn lamp_map_points(
    data: ArrayView2<'_, f64>,
    controls: &ControlLayout,
    labels: &[usize],
    cfg: &ProjectionConfig,
    points: &[usize],
) -> Result<Array2<f64>> {
    let n = data.nrows();
    if controls.indices.is_empty() {
        return Err(Error::validation("LAMP needs at least one control point"));
    }
    if controls.coords.nrows() != controls.indices.len() || controls.coords.ncols() != 2 {
        return Err(Error::validation("control coordinates must be c × 2"));
    }
    if labels.len() != n {
        return Err(Error::validation(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = controls.indices.iter().chain(points).find(|&&i| i >= n) {
        return Err(Error::range(format!("row index {bad} out of range for {n} rows")));
    }
    let data = row_major(data);
    let ctrl = Controls {
        rows: controls
            .indices
            .iter()
            .map(|&i| data.row(i).to_slice().unwrap())
            .collect(),
        coords: controls.coords.outer_iter().map(|r| [r[0], r[1]]).collect(),
        groups: controls.indices.iter().map(|&i| labels[i]).collect(),
    };
    let mapped: Vec<[f64; 2]> = points
        .par_iter()
        .map(|&i| map_point(data.row(i).as_slice().unwrap(), labels[i], &ctrl, cfg))
        .collect();
    Ok(Array2::from_shape_fn((points.len(), 2), |(r, c)| mapped[r][c]))
}

fn map_point(x: &[f64], group: usize, ctrl: &Controls<'_>, cfg: &ProjectionConfig) -> [f64; 2] {
    let m = x.len();
    let c = ctrl.rows.len();
    let mut alpha = Vec::with_capacity(c);
    for (i, row) in ctrl.rows.iter().enumerate() {
        let d2 = squared_distance(x, row);
        if d2 < SNAP_DISTANCE * SNAP_DISTANCE {
            return ctrl.coords[i];
        }
        let boost = if ctrl.groups[i] == group {
            cfg.same_class_boost
        } else {
            1.0
        };
        alpha.push(boost / (d2 + cfg.epsilon));
    }
    let total: f64 = alpha.iter().sum();

    let mut x_bar = vec![0.0; m];
    let mut y_bar = [0.0; 2];
    for ((a, row), y) in alpha.iter().zip(&ctrl.rows).zip(&ctrl.coords) {
        for (acc, v) in x_bar.iter_mut().zip(row.iter()) {
            *acc += a * v;
        }
        y_bar[0] += a * y[0];
        y_bar[1] += a * y[1];
    }
    x_bar.iter_mut().for_each(|v| *v /= total);
    y_bar[0] /= total;
    y_bar[1] /= total;

    // Weighted cross-covariance Σ αᵢ x̂ᵢᵀ ŷᵢ (m × 2).
    let mut cross = DMatrix::<f64>::zeros(m, 2);
    for ((a, row), y) in alpha.iter().zip(&ctrl.rows).zip(&ctrl.coords) {
        let dy = [y[0] - y_bar[0], y[1] - y_bar[1]];
        for j in 0..m {
            let dx = a * (row[j] - x_bar[j]);
            cross[(j, 0)] += dx * dy[0];
            cross[(j, 1)] += dx * dy[1];
        }
    }

    let rotation = orthogonal_factor(cross);
    let mut out = y_bar;
    for j in 0..m {
        let dx = x[j] - x_bar[j];
        out[0] += dx * rotation[(j, 0)];
        out[1] += dx * rotation[(j, 1)];
    }
    out
}

/// `U Vᵀ` from the thin SVD of `cross`; identity axes when it vanishes.
fn orthogonal_factor(cross: DMatrix<f64>) -> DMatrix<f64> {
    let m = cross.nrows();
    let scale = cross.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale <= f64::MIN_POSITIVE {
        return DMatrix::from_fn(m, 2, |r, c| if r == c { 1.0 } else { 0.0 });
    }
    let svd = cross.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => DMatrix::from_fn(m, 2, |r, c| if r == c { 1.0 } else { 0.0 }),
    }
}

/// Maps every row and attaches medoid positions and outlier flags.
pub fn lamp_map(
    data: ArrayView2<'_, f64>,
    controls: &ControlLayout,
    partition: &Partition,
    cfg: &ProjectionConfig,
) -> Result<ProjectionLayout> {
    cfg.validate()?;
    check_cover(data, partition)?;
    let n = data.nrows();
    let all: Vec<usize> = (0..n).collect();
    let coords = lamp_map_points(data, controls, partition.labels(), cfg, &all)?;
    let medoid_coords = partition
        .groups()
        .iter()
        .map(|g| [coords[[g.medoid_index, 0]], coords[[g.medoid_index, 1]]])
        .collect();
    let outlier_flags = if n >= 2 {
        let scores = outlier_scores(data, cfg.outlier_neighbors.min(n - 1))?;
        flag_outliers(&scores, cfg.outlier_percentile)?.mask(n)
    } else {
        vec![false; n]
    };
    Ok(ProjectionLayout {
        coords,
        control_indices: controls.indices.clone(),
        control_coords: controls.coords.clone(),
        medoid_coords,
        outlier_flags,
    })
}

/// Full projection: control selection, MDS seeding and LAMP mapping.
pub fn project(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    cfg: &ProjectionConfig,
) -> Result<ProjectionLayout> {
    let controls = place_controls(data, partition, cfg)?;
    lamp_map(data, &controls, partition, cfg)
}

/// Layout document served to the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub points: Vec<LayoutPoint>,
    pub medoids: Vec<LayoutMedoid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub group: usize,
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMedoid {
    pub group: usize,
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl ProjectionLayout {
    pub fn to_document(&self, ids: &[String], partition: &Partition) -> LayoutDocument {
        let points = (0..self.coords.nrows())
            .map(|i| LayoutPoint {
                id: ids[i].clone(),
                x: self.coords[[i, 0]],
                y: self.coords[[i, 1]],
                group: partition.labels()[i],
                outlier: self.outlier_flags[i],
            })
            .collect();
        let medoids = partition
            .groups()
            .iter()
            .zip(&self.medoid_coords)
            .map(|(g, xy)| LayoutMedoid {
                group: g.group_id,
                id: ids[g.medoid_index].clone(),
                x: xy[0],
                y: xy[1],
            })
            .collect();
        LayoutDocument { points, medoids }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Provenance;
    use crate::kernels::pairwise_distances;
    use ndarray::array;
    use rand::Rng;

    fn partition(labels: Vec<usize>, data: &Array2<f64>) -> Partition {
        Partition::from_labels(labels, data.view(), Provenance::Algorithmic).unwrap()
    }

    #[test]
    fn control_selection_respects_group_sizes() {
        let mut labels = vec![0; 100];
        labels.extend([1, 1, 1]);
        let data = Array2::from_shape_fn((103, 1), |(i, _)| i as f64);
        let part = partition(labels, &data);
        let cfg = ProjectionConfig {
            controls_per_cluster: Some(10),
            ..Default::default()
        };
        let picked = select_control_points(&part, &cfg);
        assert_eq!(picked.len(), 13);
        assert!(picked[..10].iter().all(|&i| i < 100));
        assert_eq!(&picked[10..], &[100, 101, 102]);
        assert_eq!(picked, select_control_points(&part, &cfg));
    }

    #[test]
    fn default_control_count_scales_with_group() {
        let cfg = ProjectionConfig::default();
        assert_eq!(cfg.controls_for(3), 3);
        assert_eq!(cfg.controls_for(20), 5);
        assert_eq!(cfg.controls_for(100), 10);
        assert_eq!(cfg.controls_for(101), 11);
    }

    #[test]
    fn single_control_seeds_at_origin() {
        let y = seed_control_layout(array![[1.0, 2.0, 3.0]].view(), &[0], &ProjectionConfig::default())
            .unwrap();
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn unit_shrink_matches_plain_mds() {
        let rows = array![[0.0, 0.0, 1.0], [1.0, 0.5, 0.0], [3.0, 1.0, 1.0], [4.0, 2.0, 0.5]];
        let cfg = ProjectionConfig {
            inner_shrink: 1.0,
            ..Default::default()
        };
        let seeded = seed_control_layout(rows.view(), &[0, 0, 1, 1], &cfg).unwrap();
        let plain = classical_mds(pairwise_distances(rows.view()).view(), 2).unwrap();
        assert!((&seeded - &plain).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shrink_tightens_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = Array2::from_shape_fn((12, 4), |(i, _)| {
            (i / 6) as f64 * 3.0 + rng.random_range(-1.0..1.0)
        });
        let groups: Vec<usize> = (0..12).map(|i| i / 6).collect();
        let within = |cfg: &ProjectionConfig| {
            let y = seed_control_layout(rows.view(), &groups, cfg).unwrap();
            let d = pairwise_distances(y.view());
            let mut s = 0.0;
            let mut c = 0;
            for i in 0..12 {
                for j in 0..i {
                    if groups[i] == groups[j] {
                        s += d[[i, j]];
                        c += 1;
                    }
                }
            }
            s / c as f64
        };
        let shrunk = within(&ProjectionConfig::default());
        let plain = within(&ProjectionConfig {
            inner_shrink: 1.0,
            ..Default::default()
        });
        assert!(shrunk < plain, "{shrunk} vs {plain}");
    }

    #[test]
    fn coincident_point_snaps_to_its_control() {
        let data = array![[0.0, 0.0, 0.0], [1.0, 2.0, 0.0], [5.0, 1.0, 1.0], [1.0, 2.0, 0.0]];
        let part = partition(vec![0, 0, 1, 1], &data);
        let controls = ControlLayout {
            indices: vec![0, 1, 2],
            coords: array![[10.0, -3.0], [0.25, 7.5], [-4.0, 4.0]],
        };
        let layout = lamp_map(data.view(), &controls, &part, &ProjectionConfig::default()).unwrap();
        // Row 3 duplicates control row 1 even though it is in another group.
        assert_eq!(layout.coords.row(3).to_vec(), vec![0.25, 7.5]);
        assert_eq!(layout.coords.row(0).to_vec(), vec![10.0, -3.0]);
    }

    #[test]
    fn planar_data_is_reproduced_up_to_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let data = Array2::from_shape_simple_fn((30, 2), || rng.random_range(-5.0..5.0));
        let part = partition((0..30).map(|i| i % 3).collect(), &data);
        // Controls placed by a rotation + translation of their own coordinates.
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let idx = vec![0, 4, 9, 13, 22, 27];
        let coords = Array2::from_shape_fn((idx.len(), 2), |(r, k)| {
            let (x, y) = (data[[idx[r], 0]], data[[idx[r], 1]]);
            if k == 0 { c * x - s * y + 2.0 } else { s * x + c * y - 1.0 }
        });
        let controls = ControlLayout { indices: idx, coords };
        let layout = lamp_map(data.view(), &controls, &part, &ProjectionConfig::default()).unwrap();
        let err = (&pairwise_distances(layout.coords.view()) - &pairwise_distances(data.view()))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn translating_controls_translates_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array2::from_shape_simple_fn((40, 5), || rng.random_range(0.0..1.0));
        let part = partition((0..40).map(|i| i % 2).collect(), &data);
        let cfg = ProjectionConfig::default();
        let controls = place_controls(data.view(), &part, &cfg).unwrap();
        let base = lamp_map(data.view(), &controls, &part, &cfg).unwrap();
        let shifted = ControlLayout {
            indices: controls.indices.clone(),
            coords: &controls.coords + &array![[3.5, -8.25]],
        };
        let moved = lamp_map(data.view(), &shifted, &part, &cfg).unwrap();
        let diff = &moved.coords - &base.coords;
        for r in diff.outer_iter() {
            assert!((r[0] - 3.5).abs() < 1e-9 && (r[1] + 8.25).abs() < 1e-9);
        }
    }

    #[test]
    fn subset_mapping_matches_full_mapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Array2::from_shape_simple_fn((50, 4), || rng.random_range(-1.0..1.0));
        let part = partition((0..50).map(|i| i % 3).collect(), &data);
        let cfg = ProjectionConfig::default();
        let controls = place_controls(data.view(), &part, &cfg).unwrap();
        let full = lamp_map(data.view(), &controls, &part, &cfg).unwrap();
        let subset = [3, 17, 41, 8];
        let some = lamp_map_points(data.view(), &controls, part.labels(), &cfg, &subset).unwrap();
        for (r, &i) in subset.iter().enumerate() {
            assert_eq!(some.row(r), full.coords.row(i));
        }
    }

    #[test]
    fn layout_carries_medoids_and_document_shape() {
        let data = array![[0.0, 0.0], [0.1, 0.0], [0.2, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.2]];
        let part = partition(vec![0, 0, 0, 1, 1, 1], &data);
        let layout = project(data.view(), &part, &ProjectionConfig::default()).unwrap();
        for g in part.groups() {
            let xy = layout.medoid_coords[g.group_id];
            assert_eq!(xy, [layout.coords[[g.medoid_index, 0]], layout.coords[[g.medoid_index, 1]]]);
        }
        let ids: Vec<String> = (0..6).map(|i| format!("r{i}")).collect();
        let doc = layout.to_document(&ids, &part);
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["points"].as_array().unwrap().len(), 6);
        assert_eq!(json["medoids"][1]["group"], 1);
        assert!(json["points"][0].get("outlier").is_some());
    }

    #[test]
    fn empty_controls_are_rejected() {
        let data = array![[0.0], [1.0]];
        let part = partition(vec![0, 0], &data);
        let controls = ControlLayout {
            indices: vec![],
            coords: Array2::zeros((0, 2)),
        };
        assert!(matches!(
            lamp_map(data.view(), &controls, &part, &ProjectionConfig::default()),
            Err(Error::Validation(_))
        ));
    }
}
