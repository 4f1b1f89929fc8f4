mod config;
mod options;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use groundmetric::dataset::{generate_synthetic, LabeledDataset, SynthConfig};
use groundmetric::eval::{self, ClusterTarget, Method};
use groundmetric::metric::{self, GroundMetric, LowRankMahalanobis};
use groundmetric::trainer;
use groundmetric::triplets::build_triplets;
use ndarray::Axis;

use config::{manifest_path, Config, Manifest};
use options::*;

/// Environment variable read when `--threads` is absent.
const THREADS_ENV: &str = "GROUNDMETRIC_THREADS";

/// Learn and evaluate ground metrics for optimal transport between labeled
/// point clouds.
#[derive(Parser)]
#[command(name = "groundmetric", version)]
struct Cli {
    /// TOML file with default values for any option (a manifest works too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; falls back to GROUNDMETRIC_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth {
        #[command(flatten)]
        synth: SynthOpts,
        #[command(flatten)]
        seed: SeedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Learn a low-rank Mahalanobis ground metric.
    Train {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        seed: SeedOpts,
        #[command(flatten)]
        out: OutDirOpts,
    },
    /// kNN classification accuracy over repeated group splits.
    EvalClassify {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        metric: MetricOpts,
        #[command(flatten)]
        bench: BenchOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        seed: SeedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Agglomerative clustering of distributions by Wasserstein distance.
    EvalCluster {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        metric: MetricOpts,
        #[command(flatten)]
        cluster: ClusterOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Export a distance matrix between distributions or points.
    Distances {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        metric: MetricOpts,
        #[command(flatten)]
        bench: BenchOpts,
        #[command(flatten)]
        filter: PointFilterOpts,
        #[command(flatten)]
        seed: SeedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Rank features by the diagonal of the learned Mahalanobis matrix.
    Importance {
        #[command(flatten)]
        metric: MetricOpts,
        #[command(flatten)]
        names: ImportanceOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Validation accuracy over a grid of margins and regularization weights.
    Grid {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        grid: GridOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        bench: BenchOpts,
        #[command(flatten)]
        seed: SeedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("failed to start thread pool")?;
    }
    let threads = rayon::current_num_threads();
    let file = Config::load(cli.config.as_deref(), &known_keys())?;
    let started = Instant::now();
    let ctx = Ctx { file, started, threads };
    match cli.command {
        Command::Synth { synth, seed, out } => cmd_synth(&ctx, &synth, &seed, &out),
        Command::Train { data, train, seed, out } => cmd_train(&ctx, &data, &train, &seed, &out),
        Command::EvalClassify { data, metric, bench, train, seed, out } => {
            cmd_eval_classify(&ctx, &data, &metric, &bench, &train, &seed, &out)
        }
        Command::EvalCluster { data, metric, cluster, out } => cmd_eval_cluster(&ctx, &data, &metric, &cluster, &out),
        Command::Distances { data, metric, bench, filter, seed, out } => {
            cmd_distances(&ctx, &data, &metric, &bench, &filter, &seed, &out)
        }
        Command::Importance { metric, names, out } => cmd_importance(&ctx, &metric, &names, &out),
        Command::Grid { data, grid, train, bench, seed, out } => cmd_grid(&ctx, &data, &grid, &train, &bench, &seed, &out),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        bail!("thread count must be positive");
    }
    Ok(n)
}

/// Every option id of every subcommand.
fn known_keys() -> BTreeSet<String> {
    Cli::command()
        .get_subcommands()
        .flat_map(|sub| sub.get_arguments().map(|a| a.get_id().to_string()).collect::<Vec<_>>())
        .filter(|id| !matches!(id.as_str(), "help" | "version" | "config" | "threads"))
        .collect()
}

struct Ctx {
    file: Config,
    started: Instant,
    threads: usize,
}

impl Ctx {
    fn finish(&self, manifest: Manifest, path: &Path) -> Result<()> {
        manifest.write(path, self.started.elapsed(), self.threads)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| format!("--{flag} is required"))
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load_csv(path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_params(path: &Path) -> Result<(LowRankMahalanobis, Vec<String>)> {
    LowRankMahalanobis::load_csv(path).with_context(|| format!("cannot load parameters {}", path.display()))
}

/// Writes `bytes` to `out` or, without a path, to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("failed to create {}", parent.display()))?;
            }
            std::fs::write(path, bytes).with_context(|| format!("failed to write {}", path.display()))
        }
        None => std::io::stdout().write_all(bytes).context("failed to write to stdout"),
    }
}

fn fixed_metric(opts: &MetricOpts, dimension: Option<usize>) -> Result<GroundMetric> {
    let metric = match opts.metric.unwrap() {
        MetricArg::Euclidean => GroundMetric::Euclidean,
        MetricArg::Manhattan => GroundMetric::Manhattan,
        MetricArg::Cosine => GroundMetric::Cosine,
        MetricArg::Mahalanobis => {
            let (params, _) = load_params(required(&opts.params, "params")?)?;
            if let Some(d) = dimension {
                ensure!(params.dimension() == d, "parameters have {} features, dataset has {d}", params.dimension());
            }
            GroundMetric::LowRankMahalanobis(params)
        }
        MetricArg::Learned => bail!("metric `learned` is only available in eval-classify and grid; pass --params instead"),
    };
    Ok(metric)
}

fn cmd_synth(ctx: &Ctx, synth: &SynthOpts, seed: &SeedOpts, out: &OutOpts) -> Result<()> {
    let synth = ctx.file.resolve(synth)?;
    let seed = ctx.file.resolve(seed)?;
    let out = ctx.file.resolve(out)?;

    let dim = synth.dim.unwrap_or(2);
    let mut cfg = if dim == 2 { SynthConfig::two_dimensional() } else { SynthConfig::isotropic(dim) };
    let default_noise = if dim == 2 { 10.0 } else { 1.0 };
    let noise = synth.noise.unwrap_or(default_noise);
    let signal_noise = synth.signal_noise.unwrap_or(SynthConfig::SIGNAL_NOISE);
    let corner = synth.corner.unwrap_or(4.0);
    cfg.class_count = synth.classes.unwrap_or(cfg.class_count);
    cfg.distributions_per_class = synth.distributions_per_class.unwrap_or(cfg.distributions_per_class);
    cfg.points_per_distribution = synth.points.unwrap_or(cfg.points_per_distribution);
    cfg.class_offset = synth.class_offset.unwrap_or(cfg.class_offset);
    cfg.noise_scales = (0..dim).map(|i| if i == cfg.signal_axis { signal_noise } else { noise }).collect();
    cfg.mode_offsets = SynthConfig::diagonal_corners(dim, corner);
    cfg.seed = seed.seed.unwrap_or(0);

    let dataset = generate_synthetic(&cfg).context("invalid synthetic dataset settings")?;
    let mut bytes = Vec::new();
    dataset.write_csv(&mut bytes)?;
    emit(out.out.as_deref(), &bytes)?;

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("synth");
        manifest.settings(&SynthOpts {
            dim: Some(dim),
            classes: Some(cfg.class_count),
            distributions_per_class: Some(cfg.distributions_per_class),
            points: Some(cfg.points_per_distribution),
            class_offset: Some(cfg.class_offset),
            noise: Some(noise),
            signal_noise: Some(signal_noise),
            corner: Some(corner),
        })?;
        manifest.settings(&SeedOpts { seed: Some(cfg.seed) })?;
        manifest.settings(&out)?;
        manifest.artifact("dataset", path)?;
        ctx.finish(manifest, &manifest_path(path))?;
        eprintln!("wrote {} distributions to {}", dataset.len(), path.display());
    }
    Ok(())
}

fn cmd_train(ctx: &Ctx, data: &DataOpts, train: &TrainOpts, seed: &SeedOpts, out: &OutDirOpts) -> Result<()> {
    let data = ctx.file.resolve(data)?;
    let train = ctx.file.resolve(train)?.complete();
    let seed = ctx.file.resolve(seed)?;
    let out = ctx.file.resolve(out)?;
    let data_path = required(&data.data, "data")?;
    let out_dir = required(&out.out, "out")?;
    let seed_value = seed.seed.unwrap_or(0);

    let dataset = load_dataset(data_path)?;
    let cfg = train.config(seed_value);
    cfg.validate(dataset.dimension()).context("invalid training settings")?;
    let set = build_triplets(&dataset, cfg.neighbor_t, train.neighbor_source(), seed_value)?;
    let report = trainer::train(&dataset, &set.triplets, &cfg)?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("failed to create {}", out_dir.display()))?;
    let params_path = out_dir.join("params.csv");
    let loss_path = out_dir.join("loss.csv");
    let mut bytes = Vec::new();
    let names = dataset.feature_names_or_default();
    report.final_params.write_csv(&mut bytes, Some(&names))?;
    emit(Some(&params_path), &bytes)?;

    let mut loss = String::from("epoch,loss\n");
    loss.push_str(&format!("0,{}\n", report.initial_loss));
    for (epoch, value) in report.loss_trace.iter().enumerate() {
        loss.push_str(&format!("{},{value}\n", epoch + 1));
    }
    emit(Some(&loss_path), loss.as_bytes())?;

    let mut manifest = Manifest::new("train");
    manifest.settings(&data)?;
    manifest.settings(&train)?;
    manifest.settings(&SeedOpts { seed: Some(seed_value) })?;
    manifest.settings(&out)?;
    manifest.input("data", data_path)?;
    manifest.artifact("params", &params_path)?;
    manifest.artifact("loss", &loss_path)?;
    manifest.result("triplets", set.triplets.len() as i64);
    manifest.result("initial_loss", report.initial_loss);
    manifest.result("final_loss", report.loss_trace.last().copied().unwrap_or(report.initial_loss));
    ctx.finish(manifest, &out_dir.join("manifest.toml"))?;
    eprintln!(
        "trained on {} triplets: loss {} -> {}",
        set.triplets.len(),
        report.initial_loss,
        report.loss_trace.last().copied().unwrap_or(report.initial_loss)
    );
    Ok(())
}

fn cmd_eval_classify(
    ctx: &Ctx,
    data: &DataOpts,
    metric: &MetricOpts,
    bench: &BenchOpts,
    train: &TrainOpts,
    seed: &SeedOpts,
    out: &OutOpts,
) -> Result<()> {
    let data = ctx.file.resolve(data)?;
    let metric = ctx.file.resolve(metric)?.complete();
    let bench = ctx.file.resolve(bench)?.complete(PartitionArg::Test);
    let seed = ctx.file.resolve(seed)?;
    let out = ctx.file.resolve(out)?;
    let data_path = required(&data.data, "data")?;
    let seed_value = seed.seed.unwrap_or(0);
    let dataset = load_dataset(data_path)?;

    let learned = metric.metric == Some(MetricArg::Learned);
    let train = learned.then(|| ctx.file.resolve(train).map(TrainOpts::complete)).transpose()?;
    let method = match &train {
        Some(train) => Method::Learned { config: train.config(seed_value), neighbors: train.neighbor_source() },
        None => Method::Fixed(fixed_metric(&metric, Some(dataset.dimension()))?),
    };
    let result = eval::classification_benchmark(&dataset, &method, &bench.config(seed_value))?;
    let mut bytes = Vec::new();
    result.write_csv(&mut bytes)?;
    emit(out.out.as_deref(), &bytes)?;
    eprintln!("{}: mean accuracy {:.4}, variance {:.6}", method.name(), result.mean, result.variance);

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("eval-classify");
        manifest.settings(&data)?;
        manifest.settings(&metric)?;
        manifest.settings(&bench)?;
        if let Some(train) = &train {
            manifest.settings(train)?;
        }
        manifest.settings(&SeedOpts { seed: Some(seed_value) })?;
        manifest.settings(&out)?;
        manifest.input("data", data_path)?;
        if let Some(params) = metric.params.as_deref().filter(|_| !learned) {
            manifest.input("params", params)?;
        }
        manifest.artifact("benchmark", path)?;
        manifest.result("mean", result.mean);
        manifest.result("variance", result.variance);
        ctx.finish(manifest, &manifest_path(path))?;
    }
    Ok(())
}

fn cmd_eval_cluster(ctx: &Ctx, data: &DataOpts, metric: &MetricOpts, cluster: &ClusterOpts, out: &OutOpts) -> Result<()> {
    let data = ctx.file.resolve(data)?;
    let metric = ctx.file.resolve(metric)?.complete();
    let cluster = ctx.file.resolve(cluster)?;
    let out = ctx.file.resolve(out)?;
    let data_path = required(&data.data, "data")?;
    let dataset = load_dataset(data_path)?;
    let ground = fixed_metric(&metric, Some(dataset.dimension()))?;

    let linkage = cluster.linkage.unwrap_or(LinkageArg::Average);
    let median = cluster.median_threshold.unwrap_or(false);
    let count = cluster.clusters.unwrap_or(dataset.classes().len());
    ensure!(!(median && cluster.clusters.is_some()), "--clusters and --median-threshold are mutually exclusive");
    let target = if median { ClusterTarget::MedianThreshold } else { ClusterTarget::Count(count) };

    let distances = eval::pairwise_wasserstein(&dataset, &ground)?;
    let labels = eval::agglomerative_cluster(distances.values().view(), linkage.into(), target)?;
    let scores = eval::clustering_metrics(&labels, &dataset.class_indices())?;
    let mut bytes = Vec::new();
    eval::write_cluster_labels_csv(distances.ids(), &labels, &mut bytes)?;
    emit(out.out.as_deref(), &bytes)?;
    eprintln!("mi {:.4} nats, ari {:.4}, vi {:.4} nats", scores.mi, scores.ari, scores.vi);

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("eval-cluster");
        manifest.settings(&data)?;
        manifest.settings(&metric)?;
        manifest.settings(&ClusterOpts {
            linkage: Some(linkage),
            clusters: (!median).then_some(count),
            median_threshold: Some(median),
        })?;
        manifest.settings(&out)?;
        manifest.input("data", data_path)?;
        if let Some(params) = metric.params.as_deref() {
            manifest.input("params", params)?;
        }
        manifest.artifact("labels", path)?;
        manifest.result("mi", scores.mi);
        manifest.result("ari", scores.ari);
        manifest.result("vi", scores.vi);
        manifest.result("clusters", (labels.iter().max().map_or(0, |m| m + 1)) as i64);
        ctx.finish(manifest, &manifest_path(path))?;
    }
    Ok(())
}

fn cmd_distances(
    ctx: &Ctx,
    data: &DataOpts,
    metric: &MetricOpts,
    bench: &BenchOpts,
    filter: &PointFilterOpts,
    seed: &SeedOpts,
    out: &OutOpts,
) -> Result<()> {
    let data = ctx.file.resolve(data)?;
    let metric = ctx.file.resolve(metric)?.complete();
    let bench = ctx.file.resolve(bench)?.complete(PartitionArg::Test);
    let filter = ctx.file.resolve(filter)?;
    let seed = ctx.file.resolve(seed)?;
    let out = ctx.file.resolve(out)?;
    let data_path = required(&data.data, "data")?;
    let seed_value = seed.seed.unwrap_or(0);
    let dataset = load_dataset(data_path)?;
    let ground = fixed_metric(&metric, Some(dataset.dimension()))?;

    let matrix = match (bench.level.unwrap(), filter.min_point_accuracy) {
        (LevelArg::Distribution, None) => eval::pairwise_wasserstein(&dataset, &ground)?,
        (LevelArg::Distribution, Some(_)) => bail!("--min-point-accuracy requires --level point"),
        (LevelArg::Point, None) => eval::pairwise_ground(&dataset, &ground)?,
        (LevelArg::Point, Some(threshold)) => {
            ensure!((0.0..=1.0).contains(&threshold), "--min-point-accuracy must lie in [0, 1], got {threshold}");
            let rates = eval::point_hit_rates(&dataset, &ground, &bench.config(seed_value))?;
            let keep: Vec<usize> = rates
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_some_and(|r| r >= threshold))
                .map(|(i, _)| i)
                .collect();
            let (points, _) = eval::stacked_points(&dataset);
            let ids = eval::point_ids(&dataset);
            let kept_ids = keep.iter().map(|&i| ids[i].clone()).collect();
            eprintln!("{} of {} points pass the accuracy filter", keep.len(), ids.len());
            eval::pairwise_ground_points(points.select(Axis(0), &keep).view(), kept_ids, &ground)?
        }
    };
    let mut bytes = Vec::new();
    matrix.write_csv(&mut bytes)?;
    emit(out.out.as_deref(), &bytes)?;

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("distances");
        manifest.settings(&data)?;
        manifest.settings(&metric)?;
        manifest.settings(&bench)?;
        manifest.settings(&filter)?;
        manifest.settings(&SeedOpts { seed: Some(seed_value) })?;
        manifest.settings(&out)?;
        manifest.input("data", data_path)?;
        if let Some(params) = metric.params.as_deref() {
            manifest.input("params", params)?;
        }
        manifest.artifact("distances", path)?;
        manifest.result("items", matrix.len() as i64);
        ctx.finish(manifest, &manifest_path(path))?;
    }
    Ok(())
}

fn cmd_importance(ctx: &Ctx, metric: &MetricOpts, names: &ImportanceOpts, out: &OutOpts) -> Result<()> {
    let metric = ctx.file.resolve(metric)?;
    let names = ctx.file.resolve(names)?;
    let out = ctx.file.resolve(out)?;
    let params_path = required(&metric.params, "params")?;
    let (params, header) = load_params(params_path)?;
    let feature_names = match names.names.as_deref() {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("failed to read {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => header,
    };
    let ranked = metric::feature_importance(&params, Some(&feature_names))?;
    let mut bytes = Vec::new();
    metric::write_importance_csv(&ranked, &mut bytes)?;
    emit(out.out.as_deref(), &bytes)?;

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("importance");
        manifest.settings(&MetricOpts { metric: None, params: Some(params_path.to_path_buf()) })?;
        manifest.settings(&names)?;
        manifest.settings(&out)?;
        manifest.input("params", params_path)?;
        manifest.artifact("importance", path)?;
        ctx.finish(manifest, &manifest_path(path))?;
    }
    Ok(())
}

fn cmd_grid(
    ctx: &Ctx,
    data: &DataOpts,
    grid: &GridOpts,
    train: &TrainOpts,
    bench: &BenchOpts,
    seed: &SeedOpts,
    out: &OutOpts,
) -> Result<()> {
    let data = ctx.file.resolve(data)?;
    let grid = ctx.file.resolve(grid)?;
    let train = ctx.file.resolve(train)?.complete();
    let bench = ctx.file.resolve(bench)?.complete(PartitionArg::Validation);
    let seed = ctx.file.resolve(seed)?;
    let out = ctx.file.resolve(out)?;
    let data_path = required(&data.data, "data")?;
    let seed_value = seed.seed.unwrap_or(0);
    let alphas = grid.alphas.clone().unwrap_or_else(|| vec![0.1, 1.0, 10.0]);
    let lambdas = grid.lambdas.clone().unwrap_or_else(|| vec![0.1, 1.0, 10.0]);
    ensure!(!alphas.is_empty() && !lambdas.is_empty(), "--alphas and --lambdas must be nonempty");
    let dataset = load_dataset(data_path)?;

    let base = train.config(seed_value);
    let config = bench.config(seed_value);
    let mut text = String::from("alpha,lambda,val_accuracy\n");
    for &alpha in &alphas {
        for &lambda in &lambdas {
            let cfg = trainer::TrainConfig { alpha, lambda, ..base.clone() };
            cfg.validate(dataset.dimension()).with_context(|| format!("grid point alpha={alpha}, lambda={lambda}"))?;
            let method = Method::Learned { config: cfg, neighbors: train.neighbor_source() };
            let result = eval::classification_benchmark(&dataset, &method, &config)?;
            eprintln!("alpha {alpha}, lambda {lambda}: {:.4}", result.mean);
            text.push_str(&format!("{alpha},{lambda},{}\n", result.mean));
        }
    }
    emit(out.out.as_deref(), text.as_bytes())?;

    if let Some(path) = out.out.as_deref() {
        let mut manifest = Manifest::new("grid");
        manifest.settings(&data)?;
        manifest.settings(&GridOpts { alphas: Some(alphas), lambdas: Some(lambdas) })?;
        manifest.settings(&train)?;
        manifest.settings(&bench)?;
        manifest.settings(&SeedOpts { seed: Some(seed_value) })?;
        manifest.settings(&out)?;
        manifest.input("data", data_path)?;
        manifest.artifact("grid", path)?;
        ctx.finish(manifest, &manifest_path(path))?;
    }
    Ok(())
}
