//! Per-session state and the operations the routes delegate to.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use subplex_core::analysis::{self, FeatureHistograms, FeatureRanking, SelectionSplitStats};
use subplex_core::clustering::{kmeans, Partition, Provenance};
use subplex_core::data::{
    export_group_aggregates, export_selected_instances, AttributionMatrix, GroupAggregate, Selection,
};
use subplex_core::kernels::ReducedMatrix;
use subplex_core::pipeline::{derive_views, reduce, DerivedViews, PipelineConfig, StageTimings};
use subplex_core::projection::LayoutDocument;
use subplex_core::Error;

use crate::error::{ApiError, ApiResult};

/// Clustering results plus everything derived from them.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub reduced: Arc<ReducedMatrix>,
    pub partition: Partition,
    pub views: DerivedViews,
    pub timings: StageTimings,
    pub inertia: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    matrix: Option<Arc<AttributionMatrix>>,
    /// Bumped on every upload; pipeline results for an older upload are discarded.
    upload: u64,
    analysis: Option<Analysis>,
    selection: Selection,
    config: PipelineConfig,
    /// Bumped on every partition change.
    version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub n_instances: Option<usize>,
    pub n_features: Option<usize>,
    pub feature_names: Vec<String>,
    pub n_groups: Option<usize>,
    pub selection_size: usize,
    pub version: u64,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStatus {
    pub session_id: String,
    pub version: u64,
    pub n_groups: usize,
    pub group_sizes: Vec<usize>,
    pub inertia: Option<f64>,
    pub iterations: Option<usize>,
    pub explained_variance_ratio: Vec<f64>,
    pub timings: StageTimings,
    pub layout: String,
    pub ranking: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPayload {
    pub version: u64,
    pub labels: Vec<usize>,
    pub groups: Vec<subplex_core::clustering::GroupInfo>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPayload {
    pub version: u64,
    #[serde(flatten)]
    pub layout: LayoutDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRow {
    pub index: usize,
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedInstances {
    pub feature_names: Vec<String>,
    pub rows: Vec<SelectedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPayload {
    pub bins: usize,
    pub feature_names: Vec<String>,
    pub features: Vec<FeatureHistograms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSnapshot {
    pub instance_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub prior_labels: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSnapshot {
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

/// Everything needed to rebuild a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub matrix: Option<MatrixSnapshot>,
    pub config: PipelineConfig,
    pub partition: Option<PartitionSnapshot>,
    pub selection: Vec<usize>,
    pub version: u64,
}

/// Work order for a pipeline run, taken under a read lock and computed
/// without holding any lock.
#[derive(Debug, Clone)]
pub struct PipelineJob {
    pub matrix: Arc<AttributionMatrix>,
    pub upload: u64,
    pub config: PipelineConfig,
}

impl PipelineJob {
    pub fn compute(&self) -> ApiResult<Analysis> {
        let started = std::time::Instant::now();
        let values = self.matrix.values().view();
        let cfg = &self.config;
        let stage = std::time::Instant::now();
        let reduced = reduce(values, cfg.n_components).map_err(|e| ApiError::at_stage("pca", e))?;
        let pca_ms = ms(stage);
        let stage = std::time::Instant::now();
        let fit = kmeans(reduced.view(), &cfg.cluster).map_err(|e| ApiError::at_stage("cluster", e))?;
        let cluster_ms = ms(stage);
        let (views, project_ms, rank_ms) = derive_views(values, reduced.view(), &fit.partition, cfg)
            .map_err(|e| ApiError::at_stage("project", e))?;
        Ok(Analysis {
            reduced: Arc::new(reduced),
            partition: fit.partition,
            views,
            timings: StageTimings {
                pca_ms,
                cluster_ms,
                project_ms,
                rank_ms,
                total_ms: ms(started),
            },
            inertia: Some(fit.inertia),
            iterations: Some(fit.iterations),
        })
    }
}

fn ms(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

impl Session {
    pub fn new(id: String) -> Self {
        Self {
            id,
            matrix: None,
            upload: 0,
            analysis: None,
            selection: Selection::empty(),
            config: PipelineConfig::default(),
            version: 0,
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            n_instances: self.matrix.as_ref().map(|m| m.n_instances()),
            n_features: self.matrix.as_ref().map(|m| m.n_features()),
            feature_names: self
                .matrix
                .as_ref()
                .map(|m| m.feature_names().to_vec())
                .unwrap_or_default(),
            n_groups: self.analysis.as_ref().map(|a| a.partition.n_groups()),
            selection_size: self.selection.len(),
            version: self.version,
            config: self.config.clone(),
        }
    }

    pub fn matrix(&self) -> ApiResult<&Arc<AttributionMatrix>> {
        self.matrix.as_ref().ok_or_else(ApiError::no_matrix)
    }

    pub fn analysis(&self) -> ApiResult<&Analysis> {
        self.analysis.as_ref().ok_or_else(ApiError::no_partition)
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Replaces the matrix; clears analysis and selection.
    pub fn upload(&mut self, matrix: AttributionMatrix) {
        self.matrix = Some(Arc::new(matrix));
        self.upload += 1;
        self.analysis = None;
        self.selection = Selection::empty();
        self.version += 1;
    }

    pub fn pipeline_job(&self, config: PipelineConfig) -> ApiResult<PipelineJob> {
        config.validate().map_err(|e| ApiError::at_stage("config", e))?;
        let matrix = self.matrix()?.clone();
        if config.cluster.k > matrix.n_instances() {
            return Err(ApiError::at_stage(
                "config",
                Error::Range(format!(
                    "k = {} exceeds the {} instances",
                    config.cluster.k,
                    matrix.n_instances()
                )),
            ));
        }
        Ok(PipelineJob {
            matrix,
            upload: self.upload,
            config,
        })
    }

    /// Installs a finished pipeline run unless the matrix changed meanwhile.
    pub fn install(&mut self, job: &PipelineJob, analysis: Analysis) -> ApiResult<PipelineStatus> {
        if job.upload != self.upload {
            return Err(ApiError::conflict("attributions were replaced while the pipeline ran"));
        }
        self.config = job.config.clone();
        self.analysis = Some(analysis);
        self.version += 1;
        self.status()
    }

    pub fn status(&self) -> ApiResult<PipelineStatus> {
        let a = self.analysis()?;
        Ok(PipelineStatus {
            session_id: self.id.clone(),
            version: self.version,
            n_groups: a.partition.n_groups(),
            group_sizes: a.partition.groups().iter().map(|g| g.member_count).collect(),
            inertia: a.inertia,
            iterations: a.iterations,
            explained_variance_ratio: a.reduced.explained_variance_ratio.clone(),
            timings: a.timings,
            layout: format!("/sessions/{}/layout", self.id),
            ranking: format!("/sessions/{}/ranking?basis=deviation", self.id),
        })
    }

    pub fn layout(&self) -> ApiResult<LayoutPayload> {
        let a = self.analysis()?;
        let ids = self.matrix()?.instance_ids();
        Ok(LayoutPayload {
            version: self.version,
            layout: a.views.layout.to_document(ids, &a.partition),
        })
    }

    pub fn partition(&self) -> ApiResult<PartitionPayload> {
        let a = self.analysis()?;
        Ok(PartitionPayload {
            version: self.version,
            labels: a.partition.labels().to_vec(),
            groups: a.partition.groups().to_vec(),
            provenance: a.partition.provenance(),
        })
    }

    pub fn mean_ranking(&self, group: usize) -> ApiResult<FeatureRanking> {
        let a = self.analysis()?;
        a.views
            .mean_rankings
            .get(group)
            .cloned()
            .ok_or_else(|| ApiError::unprocessable(format!("unknown group {group}")))
    }

    pub fn deviation_ranking(&self, bins: Option<usize>) -> ApiResult<FeatureRanking> {
        let a = self.analysis()?;
        if a.partition.n_groups() < 2 {
            return Err(ApiError::conflict("deviation ranking needs at least two groups"));
        }
        match bins {
            Some(b) if b != self.config.bins => Ok(analysis::rank_features_by_deviation(
                self.matrix()?.values().view(),
                &a.partition,
                b,
            )?),
            _ => Ok(a.views.deviation_ranking.clone().expect("cached with ≥ 2 groups")),
        }
    }

    pub fn histograms(&self, bins: Option<usize>) -> ApiResult<HistogramPayload> {
        let a = self.analysis()?;
        let matrix = self.matrix()?;
        let bins = bins.unwrap_or(self.config.bins);
        Ok(HistogramPayload {
            bins,
            feature_names: matrix.feature_names().to_vec(),
            features: analysis::feature_histograms(matrix.values().view(), &a.partition, bins)?,
        })
    }

    /// Replaces the selection. Out-of-range indices are reported by value.
    pub fn set_selection(&mut self, indices: Vec<usize>) -> ApiResult<&Selection> {
        let n = self.matrix()?.n_instances();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(ApiError::unprocessable(format!(
                "index {bad} out of range for {n} instances"
            ))
            .with("index", bad));
        }
        self.selection = Selection::new(indices, n)?;
        Ok(&self.selection)
    }

    pub fn selected_instances(&self) -> ApiResult<SelectedInstances> {
        let matrix = self.matrix()?;
        let table = export_selected_instances(matrix, &self.selection)?;
        let labels = self.analysis.as_ref().map(|a| a.partition.labels());
        Ok(SelectedInstances {
            feature_names: table.feature_names,
            rows: table
                .rows
                .into_iter()
                .map(|r| SelectedRow {
                    group: labels.map(|l| l[r.index]),
                    index: r.index,
                    id: r.id,
                    values: r.values,
                })
                .collect(),
        })
    }

    pub fn selected_instances_csv(&self) -> ApiResult<Vec<u8>> {
        let table = export_selected_instances(self.matrix()?, &self.selection)?;
        let mut out = Vec::new();
        table.write_csv(&mut out)?;
        Ok(out)
    }

    pub fn selected_groups(&self) -> ApiResult<Vec<GroupAggregate>> {
        let a = self.analysis()?;
        Ok(export_group_aggregates(
            self.matrix()?,
            &a.partition,
            Some(&self.selection),
        )?)
    }

    pub fn selection_split(&self) -> ApiResult<SelectionSplitStats> {
        let a = self.analysis()?;
        Ok(analysis::selection_split_stats(
            self.matrix()?.values().view(),
            &a.partition,
            &self.selection,
        )?)
    }

    pub fn diagnostics(&self, cfg: &analysis::DiagnosticsConfig) -> ApiResult<analysis::SparsityReport> {
        Ok(analysis::sparsity_report(self.matrix()?.values().view(), cfg)?)
    }

    fn replace_partition(&mut self, partition: Partition) -> ApiResult<()> {
        let matrix = self.matrix()?.clone();
        let a = self.analysis.as_ref().ok_or_else(ApiError::no_partition)?;
        let reduced = a.reduced.clone();
        let started = std::time::Instant::now();
        let (views, project_ms, rank_ms) =
            derive_views(matrix.values().view(), reduced.view(), &partition, &self.config)
                .map_err(|e| ApiError::at_stage("project", e))?;
        let timings = StageTimings {
            project_ms,
            rank_ms,
            total_ms: ms(started),
            ..Default::default()
        };
        self.analysis = Some(Analysis {
            reduced,
            partition,
            views,
            timings,
            inertia: None,
            iterations: None,
        });
        self.version += 1;
        Ok(())
    }

    /// Turns the current selection into a new group and regenerates views.
    pub fn add_subpopulation(&mut self) -> ApiResult<PartitionPayload> {
        let a = self.analysis()?;
        if self.selection.is_empty() {
            return Err(ApiError::unprocessable("selection is empty"));
        }
        let next = analysis::add_subpopulation(&a.partition, &self.selection, a.reduced.view())?;
        self.replace_partition(next)?;
        self.partition()
    }

    pub fn remove_subpopulation(&mut self, group: usize) -> ApiResult<PartitionPayload> {
        let a = self.analysis()?;
        let next = analysis::remove_subpopulation(&a.partition, group, a.reduced.view())?;
        self.replace_partition(next)?;
        self.partition()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            matrix: self.matrix.as_ref().map(|m| MatrixSnapshot {
                instance_ids: m.instance_ids().to_vec(),
                feature_names: m.feature_names().to_vec(),
                values: m.values().outer_iter().map(|r| r.to_vec()).collect(),
                prior_labels: m.prior_labels().map(<[i64]>::to_vec),
            }),
            config: self.config.clone(),
            partition: self.analysis.as_ref().map(|a| PartitionSnapshot {
                labels: a.partition.labels().to_vec(),
                provenance: a.partition.provenance(),
            }),
            selection: self.selection.indices().to_vec(),
            version: self.version,
        }
    }

    /// Rebuilds a session from a snapshot under a new id. The reduced space
    /// is recomputed from the stored config; medoids and views follow.
    pub fn restore(id: String, snap: SessionSnapshot) -> ApiResult<Self> {
        let mut session = Session::new(id);
        session.config = snap.config;
        session.config.validate()?;
        let Some(m) = snap.matrix else {
            if snap.partition.is_some() || !snap.selection.is_empty() {
                return Err(ApiError::unprocessable("snapshot has a partition or selection but no matrix"));
            }
            return Ok(session);
        };
        let n = m.values.len();
        let width = m.feature_names.len();
        if m.values.iter().any(|r| r.len() != width) {
            return Err(ApiError::unprocessable("snapshot values are ragged"));
        }
        let values = ndarray::Array2::from_shape_vec((n, width), m.values.concat())
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        session.upload(AttributionMatrix::new(m.instance_ids, m.feature_names, values, m.prior_labels)?);
        session.set_selection(snap.selection)?;
        if let Some(p) = snap.partition {
            let matrix = session.matrix()?.clone();
            let reduced = reduce(matrix.values().view(), session.config.n_components)
                .map_err(|e| ApiError::at_stage("pca", e))?;
            let partition = Partition::from_labels(p.labels, reduced.view(), p.provenance)?;
            let (views, project_ms, rank_ms) =
                derive_views(matrix.values().view(), reduced.view(), &partition, &session.config)
                    .map_err(|e| ApiError::at_stage("project", e))?;
            session.analysis = Some(Analysis {
                reduced: Arc::new(reduced),
                partition,
                views,
                timings: StageTimings {
                    project_ms,
                    rank_ms,
                    ..Default::default()
                },
                inertia: None,
                iterations: None,
            });
        }
        session.version = snap.version.max(session.version);
        Ok(session)
    }
}
