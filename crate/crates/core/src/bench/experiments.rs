use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bench::synthetic::append_noise;
use crate::clustering::{kmeans, ClusterConfig, Partition, Provenance};
use crate::error::{Error, Result};
use crate::kernels::{classical_mds, pairwise_distances, pca_fit_transform, rand_index, silhouette};
use crate::projection::{lamp_map_points, place_controls, ProjectionConfig};

/// Rows of one experiment, exportable as CSV or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport<R> {
    pub rows: Vec<R>,
}

impl<R: Serialize> ExperimentReport<R> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Io(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    // Keep runtimes strictly positive even on coarse clocks.
    (start.elapsed().as_secs_f64() * 1e3).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Raw,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise_columns: usize,
    pub pipeline: Pipeline,
    /// Mean over repeats.
    pub rand_index: f64,
    pub rand_index_min: f64,
    /// Mean wall clock of the whole pipeline (PCA included for `pca`).
    pub runtime_ms: f64,
    /// Mean wall clock of the k-means step alone.
    pub cluster_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseExperimentConfig {
    pub noise_counts: Vec<usize>,
    pub pca_components: usize,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Worker threads for the timed section; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for NoiseExperimentConfig {
    fn default() -> Self {
        Self {
            noise_counts: vec![500, 1000, 2000, 4000],
            pca_components: 10,
            k: 2,
            repeats: 5,
            seed: 7,
            threads: Some(1),
        }
    }
}

/// Clusters `attributions` augmented with noise columns, with and without
/// PCA, and scores each run against `truth` with the Rand index.
pub fn run_noise_experiment(
    attributions: ArrayView2<'_, f64>,
    truth: &[usize],
    cfg: &NoiseExperimentConfig,
) -> Result<ExperimentReport<NoiseRow>> {
    if truth.len() != attributions.nrows() {
        return Err(Error::validation(format!(
            "{} truth labels for {} rows",
            truth.len(),
            attributions.nrows()
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::validation("repeats must be at least 1"));
    }
    let mut rows = Vec::new();
    for &count in &cfg.noise_counts {
        let mut stats = [Vec::new(), Vec::new()];
        for r in 0..cfg.repeats {
            let seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((count as u64) << 16 | r as u64);
            let augmented = append_noise(attributions, count, seed);
            let cluster_cfg = ClusterConfig {
                k: cfg.k,
                seed,
                ..ClusterConfig::default()
            };
            let (raw, pca) = in_pool(cfg.threads, || -> Result<_> {
                let start = Instant::now();
                let fit = kmeans(augmented.view(), &cluster_cfg)?;
                let raw_ms = elapsed_ms(start);
                let raw = (fit.partition.labels().to_vec(), raw_ms, raw_ms);

                let start = Instant::now();
                let reduced = pca_fit_transform(augmented.view(), cfg.pca_components.min(augmented.ncols()))?;
                let cluster_start = Instant::now();
                let fit = kmeans(reduced.view(), &cluster_cfg)?;
                let pca = (
                    fit.partition.labels().to_vec(),
                    elapsed_ms(start),
                    elapsed_ms(cluster_start),
                );
                Ok((raw, pca))
            })??;
            for (slot, (labels, total, cluster)) in stats.iter_mut().zip([raw, pca]) {
                slot.push((rand_index(&labels, truth)?, total, cluster));
            }
        }
        for (pipeline, runs) in [Pipeline::Raw, Pipeline::Pca].into_iter().zip(stats) {
            let reps = runs.len() as f64;
            rows.push(NoiseRow {
                noise_columns: count,
                pipeline,
                rand_index: runs.iter().map(|r| r.0).sum::<f64>() / reps,
                rand_index_min: runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
                runtime_ms: runs.iter().map(|r| r.1).sum::<f64>() / reps,
                cluster_ms: runs.iter().map(|r| r.2).sum::<f64>() / reps,
            });
        }
    }
    Ok(ExperimentReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub clusters: usize,
    pub attrs: usize,
    pub n: usize,
    /// Distance of each center from the origin, in units of the blob std.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            attrs: 30,
            n: 1000,
            separation: 5.0,
            seed: 42,
        }
    }
}

/// Isotropic unit-variance Gaussian blobs centred at `separation · e_c`.
/// Row `i` belongs to blob `i mod clusters`.
pub fn gen_cluster_blobs(spec: &BlobSpec) -> Result<(Array2<f64>, Vec<usize>)> {
    if spec.clusters == 0 || spec.clusters > spec.attrs {
        return Err(Error::validation(format!(
            "need 1 ≤ clusters ≤ attrs, got {} clusters and {} attrs",
            spec.clusters, spec.attrs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.clusters).collect();
    let mut x = Array2::zeros((spec.n, spec.attrs));
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..spec.attrs {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[[i, j]] = z + if j == c { spec.separation } else { 0.0 };
        }
    }
    Ok((x, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Lamp,
    Mds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub n: usize,
    pub method: ProjectionMethod,
    pub runtime_ms: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionTimingConfig {
    pub sizes: Vec<usize>,
    pub clusters: usize,
    pub attrs: usize,
    pub separation: f64,
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub threads: Option<usize>,
    /// Timed runs per size; the median is reported.
    pub repeats: usize,
}

impl Default for ProjectionTimingConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000],
            clusters: 3,
            attrs: 30,
            separation: 5.0,
            seed: 42,
            projection: ProjectionConfig::default(),
            threads: Some(1),
            repeats: 3,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Wall clock of LAMP (control selection, MDS seeding, mapping) against
/// classical MDS of all points, with the 2-D silhouette of each layout
/// against the blob labels. Runtimes are medians over `repeats` runs.
pub fn run_projection_timing(cfg: &ProjectionTimingConfig) -> Result<ExperimentReport<ProjectionRow>> {
    if cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("sizes must be strictly ascending"));
    }
    if cfg.repeats == 0 {
        return Err(Error::validation("repeats must be at least 1"));
    }
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let (x, labels) = gen_cluster_blobs(&BlobSpec {
            clusters: cfg.clusters,
            attrs: cfg.attrs,
            n,
            separation: cfg.separation,
            seed: cfg.seed ^ n as u64,
        })?;
        let partition = Partition::from_labels(labels.clone(), x.view(), Provenance::Algorithmic)?;
        let all: Vec<usize> = (0..n).collect();
        let (lamp, lamp_ms, mds, mds_ms) = in_pool(cfg.threads, || -> Result<_> {
            let mut lamp_times = Vec::with_capacity(cfg.repeats);
            let mut mds_times = Vec::with_capacity(cfg.repeats);
            let mut layouts = None;
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                let controls = place_controls(x.view(), &partition, &cfg.projection)?;
                let lamp = lamp_map_points(x.view(), &controls, partition.labels(), &cfg.projection, &all)?;
                lamp_times.push(elapsed_ms(start));

                let start = Instant::now();
                let mds = classical_mds(pairwise_distances(x.view()).view(), 2)?;
                mds_times.push(elapsed_ms(start));
                layouts = Some((lamp, mds));
            }
            let (lamp, mds) = layouts.expect("at least one repeat");
            Ok((lamp, median(lamp_times), mds, median(mds_times)))
        })??;
        rows.push(ProjectionRow {
            n,
            method: ProjectionMethod::Lamp,
            runtime_ms: lamp_ms,
            silhouette: silhouette(lamp.view(), &labels)?,
        });
        rows.push(ProjectionRow {
            n,
            method: ProjectionMethod::Mds,
            runtime_ms: mds_ms,
            silhouette: silhouette(mds.view(), &labels)?,
        });
    }
    Ok(ExperimentReport { rows })
}
