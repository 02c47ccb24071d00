//! Experiment orchestration: resolving a run configuration into (network,
//! dataset, schedule), executing multi-seed training runs, and the 7-row
//! fusion ablation grid.
//!
//! Every run writes per-seed metric CSVs, a plain-text summary with
//! mean ± std error, and a config echo that reconstructs the run exactly
//! (echo → re-run → identical trajectories). Seeds and grid rows can run
//! concurrently, bounded by `jobs`; each run owns its output files so there
//! is no shared mutable state.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Mutex;

use crate::data::{self, DatasetHandle, SyntheticKind};
use crate::error::{Error, Result};
use crate::fusion::{FusionSpec, ProdInputGate, ProdWrapper, RESIDUAL_FUSE_EPS};
use crate::netbuild::{self, NetworkSpec};
use crate::network::Network;
use crate::train::{self, RunMetrics, Section, TrainConfig};

/// Which architecture family a run uses.
#[derive(Clone, Debug, PartialEq)]
pub enum NetChoice {
    Lenet { star: bool },
    Resnet { blocks: usize, width: usize },
    Vggish { depth: usize, star: bool },
    Mlp { hidden: Vec<usize> },
}

impl NetChoice {
    pub fn parse(s: &str) -> Result<NetChoice> {
        let bad = || Error::Config(format!("unknown net `{s}`"));
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let arg = parts.next();
        Ok(match head {
            "lenet" => NetChoice::Lenet { star: false },
            "lenet_star" => NetChoice::Lenet { star: true },
            "resnet" => {
                let blocks = arg.map(|a| a.parse()).transpose().map_err(|_| bad())?.unwrap_or(3);
                NetChoice::Resnet { blocks, width: 1 }
            }
            "wrn" => {
                let width = arg.map(|a| a.parse()).transpose().map_err(|_| bad())?.unwrap_or(4);
                NetChoice::Resnet { blocks: 4, width }
            }
            "vggish" => {
                let depth = arg.map(|a| a.parse()).transpose().map_err(|_| bad())?.unwrap_or(10);
                NetChoice::Vggish { depth, star: false }
            }
            "vggish_star" => {
                let depth = arg.map(|a| a.parse()).transpose().map_err(|_| bad())?.unwrap_or(10);
                NetChoice::Vggish { depth, star: true }
            }
            "mlp" => {
                let hidden = arg
                    .map(|a| {
                        a.split('-')
                            .map(|d| d.parse::<usize>().map_err(|_| bad()))
                            .collect::<Result<Vec<_>>>()
                    })
                    .transpose()?
                    .unwrap_or_else(|| vec![16]);
                NetChoice::Mlp { hidden }
            }
            _ => return Err(bad()),
        })
    }

    /// The standard training schedule for this architecture family.
    pub fn default_sections(&self) -> Vec<Section> {
        match self {
            NetChoice::Lenet { .. } | NetChoice::Mlp { .. } => train::lenet_schedule(),
            NetChoice::Resnet { .. } => train::resnet_schedule(),
            NetChoice::Vggish { .. } => train::vggish_schedule(),
        }
    }

    /// Is the second-order merge the residual (gated sqrt) form?
    pub fn residual_style(&self) -> bool {
        matches!(self, NetChoice::Resnet { .. })
    }
}

impl std::fmt::Display for NetChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetChoice::Lenet { star: false } => write!(f, "lenet"),
            NetChoice::Lenet { star: true } => write!(f, "lenet_star"),
            NetChoice::Resnet { blocks, width: 1 } => write!(f, "resnet:{blocks}"),
            NetChoice::Resnet { width, .. } => write!(f, "wrn:{width}"),
            NetChoice::Vggish { depth, star: false } => write!(f, "vggish:{depth}"),
            NetChoice::Vggish { depth, star: true } => write!(f, "vggish_star:{depth}"),
            NetChoice::Mlp { hidden } => {
                let dims: Vec<String> = hidden.iter().map(|d| d.to_string()).collect();
                write!(f, "mlp:{}", dims.join("-"))
            }
        }
    }
}

/// Which dataset a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataChoice {
    Cifar10,
    Blobs,
    Xor,
    /// Synthetic 10-class image gratings (conv-pipeline stand-in).
    SynthImages,
}

impl DataChoice {
    pub fn parse(s: &str) -> Result<DataChoice> {
        Ok(match s {
            "cifar10" => DataChoice::Cifar10,
            "blobs" => DataChoice::Blobs,
            "xor" => DataChoice::Xor,
            "synth-images" => DataChoice::SynthImages,
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        })
    }
}

impl std::fmt::Display for DataChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataChoice::Cifar10 => "cifar10",
            DataChoice::Blobs => "blobs",
            DataChoice::Xor => "xor",
            DataChoice::SynthImages => "synth-images",
        })
    }
}

/// A fully-specified experiment: resolvable to (NetworkSpec, DatasetHandle,
/// TrainConfig) triples, one per seed.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub net: NetChoice,
    pub sort: bool,
    /// Overrides the sort flag's fusion when set (ablation rows).
    pub fusion_override: Option<FusionSpec>,
    pub data: DataChoice,
    /// Subsample sizes (train, test) applied after loading.
    pub subset: Option<(usize, usize)>,
    pub subset_seed: u64,
    pub standardize: bool,
    pub augment: bool,
    pub sections: Vec<Section>,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eval_every: u64,
    pub record_every: u64,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub allow_diverge: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The fusion each block uses under this config.
    pub fn fusion(&self) -> FusionSpec {
        if let Some(f) = self.fusion_override {
            return f;
        }
        match (&self.net, self.sort) {
            (_, false) => FusionSpec::sum_only(),
            (n, true) if n.residual_style() => FusionSpec::residual_sort(RESIDUAL_FUSE_EPS),
            (_, true) => FusionSpec::sort_branched(),
        }
    }

    /// Builds the architecture for this config and a dataset sample shape.
    pub fn build_net_spec(&self, sample_shape: &[usize]) -> Result<NetworkSpec> {
        let fusion = self.fusion();
        let uses_product = fusion.use_prod || fusion.use_max;
        match &self.net {
            NetChoice::Lenet { star } => {
                if !star && (self.sort || self.fusion_override.is_some()) {
                    return Err(Error::Config(
                        "plain lenet has no fusion point; use lenet_star".into(),
                    ));
                }
                if *star {
                    let mut spec = netbuild::build_lenet(true, uses_product);
                    override_fusions(&mut spec, fusion);
                    Ok(spec)
                } else {
                    Ok(netbuild::build_lenet(false, false))
                }
            }
            NetChoice::Resnet { blocks, width } => {
                netbuild::build_resnet_fused(*blocks, *width, fusion, self.sort)
            }
            NetChoice::Vggish { depth, star } => {
                if !star && (self.sort || self.fusion_override.is_some()) {
                    return Err(Error::Config(
                        "plain vggish has no fusion point; use vggish_star".into(),
                    ));
                }
                let mut spec = netbuild::build_vggish(*depth, *star, uses_product)?;
                if *star {
                    override_fusions(&mut spec, fusion);
                }
                Ok(spec)
            }
            NetChoice::Mlp { hidden } => {
                let d_in = sample_shape.iter().product();
                let classes = match self.data {
                    DataChoice::Blobs | DataChoice::Xor => 2,
                    _ => 10,
                };
                netbuild::build_mlp(d_in, hidden, classes)
            }
        }
    }

    /// Loads (and optionally subsets/standardizes) the dataset.
    pub fn load_data(&self) -> Result<DatasetHandle> {
        let mut ds = match self.data {
            DataChoice::Cifar10 => data::load_cifar10_binary(&data::default_data_dir())?,
            DataChoice::Blobs => data::make_synthetic(SyntheticKind::Blobs, 256, self.subset_seed)?,
            DataChoice::Xor => data::make_synthetic(SyntheticKind::Xor, 256, self.subset_seed)?,
            DataChoice::SynthImages => {
                // Same [3,32,32] geometry as the real image set, so every
                // architecture (and its hard-wired classifier head) runs on
                // the stand-in unchanged.
                data::make_synthetic_images(500, 100, 32, 0.15, self.subset_seed)?
            }
        };
        if let Some((n_train, n_test)) = self.subset {
            ds = ds.subset(n_train, n_test, self.subset_seed)?;
        }
        if self.standardize {
            ds = data::standardize(&ds)?;
        }
        Ok(ds)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            sections: self.sections.clone(),
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            eval_every: self.eval_every,
            record_every: self.record_every,
            augment: self.augment,
        }
    }

    /// Plain-text echo that [`ExperimentConfig::from_text`] inverts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "net {}", self.net);
        let _ = writeln!(s, "sort {}", self.sort);
        if let Some(f) = self.fusion_override {
            let _ = writeln!(s, "fusion {f}");
        }
        let _ = writeln!(s, "data {}", self.data);
        if let Some((tr, te)) = self.subset {
            let _ = writeln!(s, "subset {tr} {te}");
        }
        let _ = writeln!(s, "subset_seed {}", self.subset_seed);
        let _ = writeln!(s, "standardize {}", self.standardize);
        let _ = writeln!(s, "augment {}", self.augment);
        let secs: Vec<String> = self
            .sections
            .iter()
            .map(|x| format!("{}:{}", x.lr, x.iters))
            .collect();
        let _ = writeln!(s, "sections {}", secs.join(","));
        let _ = writeln!(s, "batch {}", self.batch_size);
        let _ = writeln!(s, "momentum {}", self.momentum);
        let _ = writeln!(s, "weight_decay {}", self.weight_decay);
        let _ = writeln!(s, "eval_every {}", self.eval_every);
        let _ = writeln!(s, "record_every {}", self.record_every);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds {}", seeds.join(","));
        let _ = writeln!(s, "jobs {}", self.jobs);
        let _ = writeln!(s, "allow_diverge {}", self.allow_diverge);
        let _ = writeln!(s, "out_dir {}", self.out_dir.display());
        s
    }

    /// Parses a config echo. Unknown keys error; missing keys keep defaults.
    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, val) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| bad(format!("expected `key value`, got `{line}`")))?;
            let val = val.trim();
            match key {
                "net" => cfg.net = NetChoice::parse(val)?,
                "sort" => cfg.sort = parse_bool(val).map_err(|m| bad(m))?,
                "fusion" => cfg.fusion_override = Some(FusionSpec::parse(val)?),
                "data" => cfg.data = DataChoice::parse(val)?,
                "subset" => {
                    let mut it = val.split_whitespace();
                    let tr = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("subset needs `train test`".into()))?;
                    let te = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("subset needs `train test`".into()))?;
                    cfg.subset = Some((tr, te));
                }
                "subset_seed" => {
                    cfg.subset_seed = val.parse().map_err(|_| bad(format!("bad seed `{val}`")))?
                }
                "standardize" => cfg.standardize = parse_bool(val).map_err(|m| bad(m))?,
                "augment" => cfg.augment = parse_bool(val).map_err(|m| bad(m))?,
                "sections" => cfg.sections = parse_sections(val)?,
                "batch" => cfg.batch_size = val.parse().map_err(|_| bad(format!("bad batch `{val}`")))?,
                "momentum" => {
                    cfg.momentum = val.parse().map_err(|_| bad(format!("bad momentum `{val}`")))?
                }
                "weight_decay" => {
                    cfg.weight_decay = val.parse().map_err(|_| bad(format!("bad wd `{val}`")))?
                }
                "eval_every" => {
                    cfg.eval_every = val.parse().map_err(|_| bad(format!("bad interval `{val}`")))?
                }
                "record_every" => {
                    cfg.record_every = val.parse().map_err(|_| bad(format!("bad interval `{val}`")))?
                }
                "seeds" => cfg.seeds = parse_seeds(val)?,
                "jobs" => cfg.jobs = val.parse().map_err(|_| bad(format!("bad jobs `{val}`")))?,
                "allow_diverge" => cfg.allow_diverge = parse_bool(val).map_err(|m| bad(m))?,
                "out_dir" => cfg.out_dir = PathBuf::from(val),
                other => return Err(bad(format!("unknown config key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            net: NetChoice::Lenet { star: true },
            sort: true,
            fusion_override: None,
            data: DataChoice::Blobs,
            subset: None,
            subset_seed: 0,
            standardize: true,
            augment: false,
            sections: vec![Section { lr: 1e-2, iters: 100 }],
            batch_size: 100,
            momentum: 0.9,
            weight_decay: 1e-4,
            eval_every: 0,
            record_every: 1,
            seeds: vec![1],
            jobs: 1,
            allow_diverge: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true/false, got `{other}`")),
    }
}

/// `lr:iters[,lr:iters...]` e.g. `0.01:100,0.001:50`.
pub fn parse_sections(s: &str) -> Result<Vec<Section>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (lr, iters) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("section `{part}` must be lr:iters")))?;
        out.push(Section {
            lr: lr
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad lr `{lr}`")))?,
            iters: iters
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad iteration count `{iters}`")))?,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("empty section list".into()));
    }
    Ok(out)
}

/// Comma-separated seed list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed `{p}`")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(seeds)
}

/// Replaces every block fusion in a built spec (ablation rows on chain nets).
fn override_fusions(spec: &mut NetworkSpec, fusion: FusionSpec) {
    for layer in &mut spec.layers {
        match layer {
            crate::netbuild::LayerSpec::BranchBlock { fusion: f, .. } => *f = fusion,
            crate::netbuild::LayerSpec::ResidualBlock { fusion: f, .. } => *f = fusion,
            _ => {}
        }
    }
}

/// Outcome of one seed's run.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Multi-seed training summary.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net_name: String,
    pub param_count: usize,
    pub per_seed: Vec<SeedOutcome>,
}

impl TrainOutcome {
    pub fn any_diverged(&self) -> bool {
        self.per_seed
            .iter()
            .any(|s| s.metrics.diverged_at.is_some())
    }

    /// Mean ± std of final test error over non-diverged seeds.
    pub fn error_stats(&self) -> Option<(f64, f64)> {
        let errs: Vec<f64> = self
            .per_seed
            .iter()
            .filter_map(|s| s.metrics.final_test_error)
            .collect();
        if errs.is_empty() {
            return None;
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errs.len() as f64;
        Some((mean, var.sqrt()))
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "network {} ({} params)", self.net_name, self.param_count);
        for seed in &self.per_seed {
            match (seed.metrics.diverged_at, seed.metrics.final_test_error) {
                (Some(at), _) => {
                    let _ = writeln!(s, "seed {}: - (diverged at iter {at})", seed.seed);
                }
                (None, Some(err)) => {
                    let _ = writeln!(s, "seed {}: test error {err:.2}%", seed.seed);
                }
                (None, None) => {
                    let _ = writeln!(s, "seed {}: completed (no test split)", seed.seed);
                }
            }
        }
        match self.error_stats() {
            Some((mean, std)) if !self.any_diverged() => {
                let _ = writeln!(s, "mean test error {mean:.2} +/- {std:.2} %");
            }
            _ => {
                let _ = writeln!(s, "mean test error -");
            }
        }
        s
    }
}

/// Runs `tasks` with at most `jobs` worker threads, preserving result order.
pub fn run_parallel<T, F>(tasks: Vec<F>, jobs: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let jobs = jobs.max(1);
    if jobs == 1 || tasks.len() <= 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let queue: Mutex<Vec<(usize, F)>> = Mutex::new(tasks.into_iter().enumerate().rev().collect());
    let results: Mutex<Vec<Option<T>>> = Mutex::new(Vec::new());
    {
        let mut r = results.lock().unwrap();
        let n = queue.lock().unwrap().len();
        r.resize_with(n, || None);
    }
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().pop();
                match task {
                    Some((i, f)) => {
                        let out = f();
                        results.lock().unwrap()[i] = Some(out);
                    }
                    None => break,
                }
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every task ran"))
        .collect()
}

/// Trains one seed: fresh network, full schedule, metrics returned.
/// Divergence is reported in the metrics, not as an error.
pub fn run_one_seed(
    spec: &NetworkSpec,
    ds: &DatasetHandle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let mut net = Network::from_spec(spec, &ds.sample_shape(), seed)?;
    let metrics = train::train(&mut net, ds, cfg)?;
    Ok(SeedOutcome { seed, metrics })
}

/// Runs the config across all its seeds (bounded by `jobs`), writing
/// `run_seed{N}.csv` per seed, `summary.txt`, and `config.txt` under
/// `out_dir`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let ds = cfg.load_data()?;
    let spec = cfg.build_net_spec(&ds.sample_shape())?;
    spec.validate(&ds.sample_shape())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    std::fs::write(cfg.out_dir.join("network.txt"), spec.to_text())?;

    let tasks: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let spec = &spec;
            let ds = &ds;
            let tc = cfg.train_config(seed);
            move || run_one_seed(spec, ds, &tc, seed)
        })
        .collect();
    let results = run_parallel(tasks, cfg.jobs);

    let mut per_seed = Vec::with_capacity(results.len());
    for r in results {
        let outcome = r?;
        let path = cfg.out_dir.join(format!("run_seed{}.csv", outcome.seed));
        let mut file = std::fs::File::create(&path)?;
        outcome.metrics.write_csv(&mut file)?;
        per_seed.push(outcome);
    }
    let outcome = TrainOutcome {
        net_name: spec.name.clone(),
        param_count: spec.param_count(),
        per_seed,
    };
    std::fs::write(cfg.out_dir.join("summary.txt"), outcome.summary_text())?;
    Ok(outcome)
}

/// One row of the fusion ablation grid.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub fusion: FusionSpec,
    pub outcome: TrainOutcome,
}

impl AblationRow {
    /// Table cell: mean ± std, or `-` when any seed diverged.
    pub fn cell(&self) -> String {
        if self.outcome.any_diverged() {
            "-".to_string()
        } else {
            match self.outcome.error_stats() {
                Some((mean, std)) => format!("{mean:.2} +/- {std:.2}"),
                None => "-".to_string(),
            }
        }
    }
}

/// Full ablation report.
#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn table_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>18}", "fusion", "test error (%)");
        for row in &self.rows {
            let _ = writeln!(s, "{:<14} {:>18}", row.label, row.cell());
        }
        s
    }
}

/// Runs the 7-row fusion grid under identical seeds/data. Per-row failures
/// (divergence) land in the report; only infrastructure errors abort.
pub fn run_ablate(base: &ExperimentConfig) -> Result<AblationReport> {
    let (wrapper, gate) = if base.net.residual_style() {
        (ProdWrapper::SqrtEps(RESIDUAL_FUSE_EPS), ProdInputGate::ReluBoth)
    } else {
        (ProdWrapper::Identity, ProdInputGate::None)
    };
    let specs = FusionSpec::ablation_rows(wrapper, gate);
    std::fs::create_dir_all(&base.out_dir)?;

    let row_cfgs: Vec<(String, ExperimentConfig)> = specs
        .into_iter()
        .map(|fusion| {
            let label = fusion.label();
            let mut cfg = base.clone();
            cfg.fusion_override = Some(fusion);
            cfg.allow_diverge = true;
            cfg.out_dir = base.out_dir.join(label.replace('+', "_"));
            // Rows split the job budget; each row trains its seeds serially.
            cfg.jobs = 1;
            (label, cfg)
        })
        .collect();

    let tasks: Vec<_> = row_cfgs
        .iter()
        .map(|(_, cfg)| move || run_train(cfg))
        .collect();
    let results = run_parallel(tasks, base.jobs);

    let mut rows = Vec::with_capacity(results.len());
    for ((label, cfg), res) in row_cfgs.iter().zip(results) {
        rows.push(AblationRow {
            label: label.clone(),
            fusion: cfg.fusion_override.expect("set above"),
            outcome: res?,
        });
    }
    let report = AblationReport { rows };
    std::fs::write(base.out_dir.join("ablation.txt"), report.table_text())?;
    Ok(report)
}
