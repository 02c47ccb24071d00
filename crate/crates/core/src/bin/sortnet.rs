//! Command-line front end: training runs, the fusion ablation grid,
//! gradient audits, the overhead benchmark, and response-surface emission.
//!
//! Exit codes: 0 success, 1 check/convergence failure or runtime error,
//! 2 usage error (from argument parsing).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sortnet::bench::{run_bench, BenchBlock, BenchConfig};
use sortnet::data::{cifar10_present, default_data_dir};
use sortnet::experiment::{
    parse_sections, parse_seeds, run_ablate, run_train, DataChoice, ExperimentConfig, NetChoice,
};
use sortnet::fusion::{
    nonlinearity_surface, write_surface_csv, FusionSpec, GridSpec, SurfaceKind,
};
use sortnet::gradcheck::{run_scope, CheckScope};
use sortnet::train::scale_sections;

#[derive(Parser)]
#[command(
    name = "sortnet",
    version,
    about = "Second-order response fusion: training, ablations, audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network for each seed; write per-run CSVs and a summary.
    Train(TrainArgs),
    /// Run the 7-row fusion ablation grid under identical seeds/data.
    Ablate(TrainArgs),
    /// Verify tape gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time a fused block against its plain-sum twin.
    Bench(BenchArgs),
    /// Emit first/second-order response surfaces as CSV grids.
    Surface(SurfaceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NetKind {
    Lenet,
    LenetStar,
    Resnet,
    Wrn,
    Vggish,
    VggishStar,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Cifar10,
    Blobs,
    Xor,
    SynthImages,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture family.
    #[arg(long, value_enum, default_value = "lenet-star")]
    net: NetKind,
    /// Residual blocks per stage (resnet/wrn).
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Channel width multiplier (wrn).
    #[arg(long, default_value_t = 1)]
    width: usize,
    /// Conv count (vggish).
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Hidden layer sizes for mlp, comma-separated.
    #[arg(long, default_value = "16")]
    hidden: String,
    /// Enable the second-order product term in every block fusion.
    #[arg(long)]
    sort: bool,
    /// Explicit fusion spec (overrides --sort), e.g. `sum+prod,gate=relu`.
    #[arg(long)]
    fusion: Option<String>,
    /// Dataset.
    #[arg(long, value_enum, default_value = "blobs")]
    data: DataKind,
    /// Subsample the training split to N (test split to N/5).
    #[arg(long)]
    subset: Option<usize>,
    /// Seed for subsampling and synthetic data generation.
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    /// Skip per-channel standardization.
    #[arg(long)]
    no_standardize: bool,
    /// Pad-4/random-crop/flip augmentation on image data.
    #[arg(long)]
    augment: bool,
    /// Schedule sections `lr:iters[,lr:iters...]`; default is the
    /// architecture's standard schedule.
    #[arg(long)]
    sections: Option<String>,
    /// Scale factor on the schedule's iteration counts (ratios preserved).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Evaluate test error every N iterations (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    eval_every: u64,
    /// Record a train metric row every N iterations.
    #[arg(long, default_value_t = 1)]
    record_every: u64,
    /// Comma-separated seeds; one full run per seed.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Max concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit 0 even when a run diverges (divergence stays in the report).
    #[arg(long)]
    allow_diverge: bool,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Load a config echo file; explicit flags are ignored except --out.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Fusion,
    AllOps,
    FullNet,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Which suite to run.
    #[arg(long, value_enum, default_value = "fusion")]
    scope: Scope,
    /// Randomized instances per op scenario.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Max allowed relative error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockKind {
    Residual,
    Branch,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "residual")]
    block: BlockKind,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Spatial side length.
    #[arg(long, default_value_t = 32)]
    hw: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Timed repetitions per side.
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Output directory for the two CSV files.
    #[arg(long, default_value = "surfaces")]
    out: PathBuf,
    /// Half-extent of the square grid.
    #[arg(long, default_value_t = 2.0)]
    extent: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

fn to_experiment_config(a: &TrainArgs) -> Result<ExperimentConfig, sortnet::Error> {
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::from_text(&text)?;
        cfg.out_dir = a.out.clone();
        return Ok(cfg);
    }
    let net = match a.net {
        NetKind::Lenet => NetChoice::Lenet { star: false },
        NetKind::LenetStar => NetChoice::Lenet { star: true },
        NetKind::Resnet => NetChoice::Resnet {
            blocks: a.blocks,
            width: 1,
        },
        NetKind::Wrn => NetChoice::Resnet {
            blocks: a.blocks,
            width: a.width.max(2),
        },
        NetKind::Vggish => NetChoice::Vggish {
            depth: a.depth,
            star: false,
        },
        NetKind::VggishStar => NetChoice::Vggish {
            depth: a.depth,
            star: true,
        },
        NetKind::Mlp => NetChoice::Mlp {
            hidden: a
                .hidden
                .split(',')
                .map(|d| {
                    d.trim()
                        .parse::<usize>()
                        .map_err(|_| sortnet::Error::Config(format!("bad hidden size `{d}`")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        },
    };
    let sections = match &a.sections {
        Some(s) => parse_sections(s)?,
        None => net.default_sections(),
    };
    let sections = scale_sections(&sections, a.scale)?;
    Ok(ExperimentConfig {
        net,
        sort: a.sort,
        fusion_override: a.fusion.as_deref().map(FusionSpec::parse).transpose()?,
        data: match a.data {
            DataKind::Cifar10 => DataChoice::Cifar10,
            DataKind::Blobs => DataChoice::Blobs,
            DataKind::Xor => DataChoice::Xor,
            DataKind::SynthImages => DataChoice::SynthImages,
        },
        subset: a.subset.map(|n| (n, (n / 5).max(1))),
        subset_seed: a.subset_seed,
        standardize: !a.no_standardize,
        augment: a.augment,
        sections,
        batch_size: a.batch,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        eval_every: a.eval_every,
        record_every: a.record_every,
        seeds: parse_seeds(&a.seeds)?,
        jobs: a.jobs,
        allow_diverge: a.allow_diverge,
        out_dir: a.out.clone(),
    })
}

fn cmd_train(args: &TrainArgs) -> Result<u8, sortnet::Error> {
    let cfg = to_experiment_config(args)?;
    if cfg.data == DataChoice::Cifar10 && !cifar10_present(&default_data_dir()) {
        return Err(sortnet::Error::Config(format!(
            "CIFAR-10 binaries not found under {} (set SORTNET_DATA_DIR)",
            default_data_dir().display()
        )));
    }
    let outcome = run_train(&cfg)?;
    print!("{}", outcome.summary_text());
    println!("artifacts in {}", cfg.out_dir.display());
    if outcome.any_diverged() && !cfg.allow_diverge {
        eprintln!("error: at least one seed diverged (pass --allow-diverge to accept)");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_ablate(args: &TrainArgs) -> Result<u8, sortnet::Error> {
    let cfg = to_experiment_config(args)?;
    if cfg.data == DataChoice::Cifar10 && !cifar10_present(&default_data_dir()) {
        return Err(sortnet::Error::Config(format!(
            "CIFAR-10 binaries not found under {} (set SORTNET_DATA_DIR)",
            default_data_dir().display()
        )));
    }
    let report = run_ablate(&cfg)?;
    print!("{}", report.table_text());
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8, sortnet::Error> {
    let scope = match args.scope {
        Scope::Fusion => CheckScope::Fusion,
        Scope::AllOps => CheckScope::AllOps,
        Scope::FullNet => CheckScope::FullNet,
    };
    let reports = run_scope(scope, args.instances, args.h, args.tol, args.seed)?;
    let mut failed = 0usize;
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("error: {failed} op(s) failed the gradient check");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, sortnet::Error> {
    let cfg = BenchConfig {
        block: match args.block {
            BlockKind::Residual => BenchBlock::Residual,
            BlockKind::Branch => BenchBlock::Branch,
        },
        channels: args.channels,
        hw: args.hw,
        batch: args.batch,
        reps: args.reps,
        seed: args.seed,
    };
    let res = run_bench(&cfg)?;
    println!("{res}");
    Ok(0)
}

fn cmd_surface(args: &SurfaceArgs) -> Result<u8, sortnet::Error> {
    let grid = GridSpec::square(args.extent, args.step)?;
    std::fs::create_dir_all(&args.out)?;
    for (kind, file) in [
        (SurfaceKind::FirstOrder, "surface_first_order.csv"),
        (SurfaceKind::SecondOrder, "surface_second_order.csv"),
    ] {
        let rows = nonlinearity_surface(kind, &grid)?;
        let path = args.out.join(file);
        let mut f = std::fs::File::create(&path)?;
        write_surface_csv(&rows, &mut f)?;
        println!("{} ({} rows)", path.display(), rows.len());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Surface(a) => cmd_surface(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
