//! PCA → k-means → projection → rankings, with stage timings.

use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::analysis::{rank_features_by_deviation, rank_features_by_group_mean, FeatureRanking, DEFAULT_BINS};
use crate::clustering::{kmeans, ClusterConfig, Partition};
use crate::error::{Error, Result};
use crate::kernels::{pca_fit_transform, ReducedMatrix};
use crate::projection::{project, ProjectionConfig, ProjectionLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// PCA components before clustering, capped at `min(n, m)`. 0 clusters
    /// the raw attributions.
    pub n_components: usize,
    pub cluster: ClusterConfig,
    pub projection: ProjectionConfig,
    /// Histogram bins for the deviation ranking.
    pub bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_components: 10,
            cluster: ClusterConfig::default(),
            projection: ProjectionConfig::default(),
            bins: DEFAULT_BINS,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.projection.validate()?;
        if self.bins == 0 {
            return Err(Error::validation("bins must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub pca_ms: f64,
    pub cluster_ms: f64,
    pub project_ms: f64,
    pub rank_ms: f64,
    pub total_ms: f64,
}

/// Everything derived from a partition: layout and rankings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedViews {
    pub layout: ProjectionLayout,
    /// One ranking per group id.
    pub mean_rankings: Vec<FeatureRanking>,
    /// `None` when only one group exists.
    pub deviation_ranking: Option<FeatureRanking>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// The space clustering, medoids and projection work in.
    pub reduced: ReducedMatrix,
    pub partition: Partition,
    pub inertia: f64,
    pub iterations: usize,
    pub views: DerivedViews,
    pub timings: StageTimings,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Reduces `values` with PCA (or copies them when `n_components` is 0).
pub fn reduce(values: ArrayView2<'_, f64>, n_components: usize) -> Result<ReducedMatrix> {
    if n_components == 0 {
        return Ok(ReducedMatrix::from_scores(values.to_owned()));
    }
    let (n, m) = values.dim();
    if n < 2 {
        return Err(Error::validation("PCA needs at least two instances"));
    }
    pca_fit_transform(values, n_components.min(n.min(m)))
}

/// Layout and rankings for `partition`. Returns the projection and ranking
/// times alongside.
pub fn derive_views(
    values: ArrayView2<'_, f64>,
    reduced: ArrayView2<'_, f64>,
    partition: &Partition,
    cfg: &PipelineConfig,
) -> Result<(DerivedViews, f64, f64)> {
    let start = Instant::now();
    let layout = project(reduced, partition, &cfg.projection)?;
    let project_ms = ms(start);

    let start = Instant::now();
    let mean_rankings = (0..partition.n_groups())
        .map(|g| rank_features_by_group_mean(values, partition, g))
        .collect::<Result<_>>()?;
    let deviation_ranking = if partition.n_groups() >= 2 {
        Some(rank_features_by_deviation(values, partition, cfg.bins)?)
    } else {
        None
    };
    let rank_ms = ms(start);
    Ok((
        DerivedViews {
            layout,
            mean_rankings,
            deviation_ranking,
        },
        project_ms,
        rank_ms,
    ))
}

/// Runs the full pipeline on an attribution matrix.
pub fn run_pipeline(values: ArrayView2<'_, f64>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let total = Instant::now();

    let start = Instant::now();
    let reduced = reduce(values, cfg.n_components)?;
    let pca_ms = ms(start);

    let start = Instant::now();
    let fit = kmeans(reduced.view(), &cfg.cluster)?;
    let cluster_ms = ms(start);

    let (views, project_ms, rank_ms) = derive_views(values, reduced.view(), &fit.partition, cfg)?;
    Ok(PipelineOutput {
        reduced,
        partition: fit.partition,
        inertia: fit.inertia,
        iterations: fit.iterations,
        views,
        timings: StageTimings {
            pca_ms,
            cluster_ms,
            project_ms,
            rank_ms,
            total_ms: ms(total),
        },
    })
}
