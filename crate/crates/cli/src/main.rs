use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use pcq::autoencoder::{
    load_params, save_params, synthetic_dataset, train_with, AdaptiveMseConfig, Architecture,
    FocalConfig, TrainConfig, TrainLoss,
};
use pcq::eval::{evaluate, StimulusSet};
use pcq::perceptual::{
    detect_unused_features, perceptual_distance_per_feature, select_best_feature, FeatureSelector,
};
use pcq::pipeline::{cloud_block_tensors, compute_metric, GridConfig, MetricName, MetricOptions};
use pcq::pointcloud::{read_ply, write_ply, PlyFormat};
use pcq::pointset::PsnrConfig;
use pcq::voxel::{partition_blocks, voxelize, TdfConfig};
use pcq::voxel_metrics::{Aggregation, Clip, VoxelMetricConfig};
use pcq::{Error, PointCloud, Repr};

/// Point cloud geometry quality toolkit.
#[derive(Debug, Parser)]
#[command(name = "pcq", version)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "PCQ_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition a cloud into blocks and dump one voxel grid per block.
    Voxelize(VoxelizeArgs),
    /// Compute one metric between a reference and a distorted cloud.
    Metric(MetricArgs),
    /// Train an autoencoder on every PLY file of a directory.
    Train(TrainArgs),
    /// Cross-validated evaluation of metric scores against MOS.
    Eval(EvalArgs),
    /// Report unused latent feature maps and pick the best one.
    Features(FeaturesArgs),
    /// Write synthetic shape clouds (planes, spheres, boxes) as PLY files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Block edge length in voxels.
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Truncation distance of distance fields, in voxels.
    #[arg(long, default_value_t = 5.0)]
    u: f64,
}

impl GridArgs {
    fn config(&self) -> pcq::Result<GridConfig> {
        Ok(GridConfig {
            block_size: self.block_size,
            tdf: TdfConfig::new(self.u)?,
        })
    }
}

#[derive(Debug, Args)]
struct VoxelizeArgs {
    input: PathBuf,
    /// Output directory, one `block_X_Y_Z.grid` file per block.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "tdf")]
    repr: Repr,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct MetricArgs {
    /// Reference cloud.
    reference: PathBuf,
    /// Distorted cloud.
    distorted: PathBuf,
    #[arg(long)]
    metric: MetricName,
    #[command(flatten)]
    grid: GridArgs,
    /// WBCE / naBCE balancing weight.
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    /// naBCE window edge length.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Block aggregation (defaults to the metric's usual choice).
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// PSNR peak resolution (defaults to the reference's bit depth or extent).
    #[arg(long)]
    resolution: Option<f64>,
    /// Autoencoder checkpoint, required by bin-pl and tdf-pl.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Latent feature map: `all` or a 0-based index.
    #[arg(long, default_value = "all")]
    feature: FeatureSelector,
    /// Print the perceptual distance of every feature map, one per line.
    #[arg(long)]
    per_feature: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrainRepr {
    Binary,
    Tdf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Focal,
    AdaptiveMse,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of PLY files.
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "tdf")]
    repr: TrainRepr,
    /// Defaults to focal for binary and adaptive-mse for tdf.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Focal loss balancing weight.
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    /// Focal loss exponent.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Adaptive MSE weight bound.
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Channel widths of the three analysis layers.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 16])]
    channels: Vec<usize>,
    /// Use at most this many blocks (in file and origin order).
    #[arg(long)]
    max_blocks: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupBy {
    Codec,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Score table: stimulus_id,content_id,codec,rate_level,mos[,mos_ci95],<metrics...>
    scores: PathBuf,
    /// Output directory for report.csv, predictions.csv and significance.csv.
    #[arg(long)]
    out: PathBuf,
    /// Metric columns to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Also write one report per group.
    #[arg(long, value_enum)]
    group_by: Option<GroupBy>,
    /// Drop reference stimuli (codec `ref` or `reference`).
    #[arg(long)]
    exclude_references: bool,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Directory of PLY files used to probe the latent space.
    #[arg(long)]
    probe: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Score table whose metric columns are per-feature-map scores, in map
    /// order; selects the map that best follows the MOS.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            Cli::command()
                .error(ErrorKind::ValueValidation, "--threads must be at least 1")
                .exit();
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Voxelize(a) => cmd_voxelize(a),
        Command::Metric(a) => cmd_metric(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Features(a) => cmd_features(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn create_dir(dir: &Path) -> pcq::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// PLY files of a directory, sorted by name.
fn ply_files(dir: &Path) -> pcq::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no PLY file in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn load_tensors(
    dir: &Path,
    repr: Repr,
    grid: &GridConfig,
    limit: Option<usize>,
) -> pcq::Result<Vec<pcq::autoencoder::Tensor4>> {
    let mut out = Vec::new();
    for path in ply_files(dir)? {
        out.extend(cloud_block_tensors(&read_ply(&path)?, repr, grid)?);
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
    }
    if let Some(n) = limit {
        out.truncate(n);
    }
    Ok(out)
}

fn cmd_voxelize(a: VoxelizeArgs) -> pcq::Result<()> {
    let grid = a.grid.config()?;
    let pc = read_ply(&a.input)?;
    let blocks = partition_blocks(&pc, grid.block_size)?;
    create_dir(&a.out)?;
    for (origin, block) in blocks.blocks() {
        let g = voxelize(block, grid.block_size, a.repr, &grid.tdf)?;
        let path = a.out.join(format!(
            "block_{}_{}_{}.grid",
            origin[0], origin[1], origin[2]
        ));
        let file = std::fs::File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut w = std::io::BufWriter::new(file);
        g.write_dump(&mut w)
            .and_then(|_| std::io::Write::flush(&mut w))
            .map_err(|e| Error::Io { path, source: e })?;
    }
    println!("{}", blocks.len());
    Ok(())
}

fn cmd_metric(a: MetricArgs) -> pcq::Result<()> {
    if a.metric.is_perceptual() && a.weights.is_none() {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                format!("--metric {} requires --weights", a.metric),
            )
            .exit();
    }
    if a.per_feature && !a.metric.is_perceptual() {
        Cli::command()
            .error(
                ErrorKind::ArgumentConflict,
                "--per-feature applies to bin-pl and tdf-pl only",
            )
            .exit();
    }
    let reference = read_ply(&a.reference)?;
    let distorted = read_ply(&a.distorted)?;
    let weights = a.weights.as_ref().map(load_params).transpose()?;
    let opts = MetricOptions {
        grid: a.grid.config()?,
        voxel: VoxelMetricConfig {
            alpha: a.alpha,
            nabce_window: a.window,
            ..VoxelMetricConfig::default()
        },
        aggregation_override: a.aggregation,
        psnr: a.resolution.map(PsnrConfig::new).transpose()?,
        weights,
        feature: a.feature,
    };
    if a.per_feature {
        let params = opts.weights.as_ref().expect("checked above");
        params.ensure_repr(a.metric.repr().expect("perceptual metric"))?;
        let values = perceptual_distance_per_feature(
            &reference,
            &distorted,
            params,
            opts.aggregation_for(a.metric),
            &opts.grid,
        )?;
        for v in values {
            println!("{v}");
        }
        return Ok(());
    }
    println!(
        "{}",
        compute_metric(&reference, &distorted, a.metric, &opts)?
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> pcq::Result<()> {
    if a.channels.len() != 3 {
        Cli::command()
            .error(
                ErrorKind::WrongNumberOfValues,
                "--channels takes three comma-separated widths",
            )
            .exit();
    }
    let repr = match a.repr {
        TrainRepr::Binary => Repr::Binary,
        TrainRepr::Tdf => Repr::Tdf,
    };
    let loss = match a.loss {
        None => TrainLoss::default_for(repr),
        Some(LossArg::Focal) => TrainLoss::Focal(FocalConfig {
            alpha: a.alpha,
            gamma: a.gamma,
        }),
        Some(LossArg::AdaptiveMse) => TrainLoss::AdaptiveMse(AdaptiveMseConfig::new(a.beta)?),
    };
    let grid = a.grid.config()?;
    if grid.block_size % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {} is not a multiple of 8",
            grid.block_size
        )));
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        epsilon: a.epsilon,
        batch_size: a.batch_size,
        steps: a.steps,
        seed: a.seed,
        loss,
        clip: Clip::default(),
        architecture: Architecture {
            channels: [a.channels[0], a.channels[1], a.channels[2]],
        },
    };
    let blocks = load_tensors(&a.data, repr, &grid, a.max_blocks)?;
    eprintln!(
        "training on {} blocks of {}^3",
        blocks.len(),
        grid.block_size
    );
    let report_every = (cfg.steps / 10).max(1);
    let outcome = train_with(&blocks, repr, &cfg, |step, loss| {
        if step % report_every == 0 || step + 1 == cfg.steps {
            eprintln!("step {step}: loss {loss}");
        }
    })?;
    save_params(&outcome.params, &a.out)?;
    println!("{}", outcome.final_loss);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> pcq::Result<()> {
    let mut set = StimulusSet::read_csv(&a.scores)?;
    if a.exclude_references {
        set = set.without_references();
    }
    let metrics = if a.metrics.is_empty() {
        set.metrics.clone()
    } else {
        a.metrics.clone()
    };
    let report = evaluate(&set, &metrics, a.confidence)?;
    report.write_to_dir(&a.out, "")?;
    for r in &report.results {
        println!(
            "{},{},{},{},{}",
            r.metric, r.stats.pcc, r.stats.srocc, r.stats.rmse, r.stats.or_
        );
    }
    if let Some(GroupBy::Codec) = a.group_by {
        for (codec, group) in set.group_by_codec() {
            let name: String = codec
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            evaluate(&group, &metrics, a.confidence)?
                .write_to_dir(&a.out, &format!("_codec-{name}"))?;
        }
    }
    Ok(())
}

fn cmd_features(a: FeaturesArgs) -> pcq::Result<()> {
    let params = load_params(&a.weights)?;
    let grid = a.grid.config()?;
    let probe = load_tensors(&a.probe, params.repr, &grid, None)?;
    let usage = detect_unused_features(&params, &probe)?;
    for (k, (used, (lo, hi))) in usage.used.iter().zip(&usage.ranges).enumerate() {
        println!(
            "map {k} {} {lo} {hi}",
            if *used { "used" } else { "unused" }
        );
    }
    if let Some(path) = a.scores {
        let set = StimulusSet::read_csv(&path)?;
        let rows: Vec<Vec<f64>> = set
            .records
            .iter()
            .map(|r| {
                set.metrics
                    .iter()
                    .map(|m| {
                        r.metric_scores.get(m).copied().ok_or_else(|| {
                            Error::MissingData(format!("{m} for stimulus {}", r.stimulus_id))
                        })
                    })
                    .collect()
            })
            .collect::<pcq::Result<_>>()?;
        let mos: Vec<f64> = set.records.iter().map(|r| r.mos).collect();
        let best = select_best_feature(&rows, &mos, Some(&usage))?;
        println!("best {best}");
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> pcq::Result<()> {
    create_dir(&a.out)?;
    let clouds: Vec<PointCloud> = synthetic_dataset(a.count, a.size, a.seed);
    for (i, pc) in clouds.iter().enumerate() {
        write_ply(
            pc,
            a.out.join(format!("shape_{i:03}.ply")),
            PlyFormat::BinaryLittleEndian,
        )?;
    }
    println!("{}", clouds.len());
    Ok(())
}
