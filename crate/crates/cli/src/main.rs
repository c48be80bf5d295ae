//! `subplex`: headless pipeline runs, benchmark sweeps and the HTTP service.
//!
//! Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use subplex_core::analysis::FeatureRanking;
use subplex_core::bench::{
    gen_synthetic_dataset, run_noise_experiment, run_projection_timing, surrogate_attributions,
    ExperimentReport, NoiseExperimentConfig, ProjectionTimingConfig, RuleBlackBox, SurrogateConfig,
    SyntheticSpec,
};
use subplex_core::clustering::{ClusterConfig, GroupInfo, Provenance};
use subplex_core::data::{load_attributions, IngestConfig};
use subplex_core::pipeline::{run_pipeline, PipelineConfig};
use subplex_core::projection::ProjectionConfig;
use subplex_core::Error;
use subplex_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "subplex", version, about = "Subpopulation analysis of feature attributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster, project and rank an attribution file; writes layout.json,
    /// partition.json and ranking.json.
    Run(RunArgs),
    /// Rand index and runtime of clustering with and without PCA as noise
    /// columns are added.
    BenchNoise(NoiseArgs),
    /// Runtime and silhouette of LAMP against classical MDS.
    BenchProjection(ProjectionArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// 0 clusters the raw attributions.
    #[arg(long, default_value_t = 10)]
    pca_components: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    /// Synthetic instances (even).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    noise_counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    pca_components: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads for the timed sections; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// n = 10000 and 1000..=10000 noise columns.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ProjectionArgs {
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Adds n = 10000.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "SUBPLEX_PORT", default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Static UI bundle to serve at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Enables `POST /sessions/{id}/snapshot`.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::BenchNoise(a) => bench_noise(a),
        Command::BenchProjection(a) => bench_projection(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(&path, e))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

#[derive(Serialize)]
struct PartitionFile<'a> {
    instance_ids: &'a [String],
    labels: &'a [usize],
    groups: &'a [GroupInfo],
    provenance: Provenance,
}

#[derive(Serialize)]
struct RankingFile<'a> {
    feature_names: &'a [String],
    deviation: Option<&'a FeatureRanking>,
    group_means: &'a [FeatureRanking],
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let file = File::open(&a.input).map_err(|e| Failure::Usage(format!("{}: {e}", a.input.display())))?;
    let ingest = IngestConfig {
        id_column: a.id_column,
        label_column: a.label_column,
        ..Default::default()
    };
    let matrix = load_attributions(file, &ingest)?;
    if a.k > matrix.n_instances() {
        return Err(Failure::Usage(format!(
            "out of range: k = {} exceeds the {} instances",
            a.k,
            matrix.n_instances()
        )));
    }
    let cfg = PipelineConfig {
        n_components: a.pca_components,
        cluster: ClusterConfig {
            k: a.k,
            seed: a.seed,
            ..Default::default()
        },
        projection: ProjectionConfig {
            seed: a.seed,
            ..Default::default()
        },
        bins: a.bins,
    };
    let out = run_pipeline(matrix.values().view(), &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_failure(&a.out_dir, e))?;
    let ids = matrix.instance_ids();
    write_json(&a.out_dir, "layout.json", &out.views.layout.to_document(ids, &out.partition))?;
    write_json(
        &a.out_dir,
        "partition.json",
        &PartitionFile {
            instance_ids: ids,
            labels: out.partition.labels(),
            groups: out.partition.groups(),
            provenance: out.partition.provenance(),
        },
    )?;
    write_json(
        &a.out_dir,
        "ranking.json",
        &RankingFile {
            feature_names: matrix.feature_names(),
            deviation: out.views.deviation_ranking.as_ref(),
            group_means: &out.views.mean_rankings,
        },
    )?;
    let t = out.timings;
    println!(
        "{} instances, {} features, {} groups -> {}",
        matrix.n_instances(),
        matrix.n_features(),
        out.partition.n_groups(),
        a.out_dir.display()
    );
    println!(
        "pca {:.1} ms, cluster {:.1} ms, project {:.1} ms, rank {:.1} ms, total {:.1} ms",
        t.pca_ms, t.cluster_ms, t.project_ms, t.rank_ms, t.total_ms
    );
    Ok(())
}

fn threads(t: usize) -> Option<usize> {
    (t > 0).then_some(t)
}

fn write_report<R: Serialize>(dir: &Path, stem: &str, report: &ExperimentReport<R>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    report
        .write_csv(File::create(&csv).map_err(|e| io_failure(&csv, e))?)
        .map_err(|e| io_failure(&csv, e))?;
    write_json(dir, &format!("{stem}.json"), report)?;
    Ok(())
}

fn bench_noise(a: NoiseArgs) -> Result<(), Failure> {
    let n = a.n.unwrap_or(if a.full { 10_000 } else { 2000 });
    let counts = a.noise_counts.unwrap_or_else(|| {
        if a.full {
            (1..=10).map(|c| c * 1000).collect()
        } else {
            vec![500, 1000, 2000, 4000]
        }
    });
    let data = gen_synthetic_dataset(&SyntheticSpec { n, seed: a.seed })?;
    let attr = surrogate_attributions(
        data.features.view(),
        &RuleBlackBox,
        &SurrogateConfig {
            seed: a.seed,
            ..Default::default()
        },
    )?;
    let cfg = NoiseExperimentConfig {
        noise_counts: counts,
        pca_components: a.pca_components,
        k: 2,
        repeats: a.repeats,
        seed: a.seed,
        threads: threads(a.threads),
    };
    let report = run_noise_experiment(attr.values().view(), &data.halves, &cfg)?;
    write_report(&a.out_dir, "noise_report", &report)?;
    println!("{:>8}  {:<8} {:>10} {:>12} {:>12}", "noise", "pipeline", "rand", "runtime_ms", "cluster_ms");
    for r in &report.rows {
        println!(
            "{:>8}  {:<8} {:>10.4} {:>12.1} {:>12.1}",
            r.noise_columns,
            format!("{:?}", r.pipeline).to_lowercase(),
            r.rand_index,
            r.runtime_ms,
            r.cluster_ms
        );
    }
    Ok(())
}

fn bench_projection(a: ProjectionArgs) -> Result<(), Failure> {
    let sizes = a.sizes.unwrap_or_else(|| {
        let mut s = vec![500, 1000, 2000, 5000];
        if a.full {
            s.push(10_000);
        }
        s
    });
    let cfg = ProjectionTimingConfig {
        sizes,
        seed: a.seed,
        projection: ProjectionConfig {
            seed: a.seed,
            ..Default::default()
        },
        threads: threads(a.threads),
        ..Default::default()
    };
    let report = run_projection_timing(&cfg)?;
    write_report(&a.out_dir, "projection_report", &report)?;
    println!("{:>8}  {:<6} {:>12} {:>10}", "n", "method", "runtime_ms", "silhouette");
    for r in &report.rows {
        println!(
            "{:>8}  {:<6} {:>12.1} {:>10.4}",
            r.n,
            format!("{:?}", r.method).to_lowercase(),
            r.runtime_ms,
            r.silhouette
        );
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = ServiceConfig {
        ui_dir: a.ui_dir,
        snapshot_dir: a.snapshot_dir,
        ..Default::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime
        .block_on(subplex_service::serve_on(SocketAddr::new(a.host, a.port), config))
        .map_err(|e| Failure::Runtime(e.to_string()))
}
