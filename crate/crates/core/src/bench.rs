//! Paired micro-benchmark: second-order fusion vs plain-sum twin.
//!
//! Builds two identically-seeded single-block networks that differ only in
//! the fusion spec, then times full forward+backward passes on the same
//! input, alternating A/B per repetition so clock drift hits both sides
//! equally. Medians absorb scheduling noise; the headline number is the
//! `fused/baseline` median ratio.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::FusionSpec;
use crate::netbuild::{LayerSpec, NetworkSpec};
use crate::network::{HasParams, Model, Network};
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;

/// Which block family to time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchBlock {
    /// Residual unit (conv-bn bodies, identity shortcut).
    Residual,
    /// Two-branch block of shrunken convs.
    Branch,
}

/// Sizes of the timed workload.
#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub block: BenchBlock,
    pub channels: usize,
    pub hw: usize,
    pub batch: usize,
    /// Timed repetitions per side (2 extra warmup reps are untimed).
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            block: BenchBlock::Residual,
            channels: 64,
            hw: 32,
            batch: 100,
            reps: 30,
            seed: 0,
        }
    }
}

/// Median timings of the two sides plus their ratio.
#[derive(Clone, Debug)]
pub struct BenchResult {
    pub base_median_s: f64,
    pub fused_median_s: f64,
    /// fused / baseline.
    pub ratio: f64,
    pub reps: usize,
}

impl std::fmt::Display for BenchResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "baseline {:.4}s fused {:.4}s sort/base = {:.3} ({} reps)",
            self.base_median_s, self.fused_median_s, self.ratio, self.reps
        )
    }
}

fn block_spec(block: BenchBlock, channels: usize, fusion: FusionSpec) -> NetworkSpec {
    let layer = match block {
        BenchBlock::Residual => LayerSpec::ResidualBlock {
            c_in: channels,
            c_out: channels,
            stride: 1,
            fusion,
        },
        BenchBlock::Branch => LayerSpec::BranchBlock {
            k: 5,
            c_in: channels,
            c_out: channels,
            stride: 1,
            pad: 2,
            with_bn: false,
            fusion,
        },
    };
    NetworkSpec {
        name: "bench_block".into(),
        layers: vec![layer],
        num_classes: 1,
    }
}

/// One timed forward+backward pass over the block.
fn pass(net: &mut Network, input: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let start = Instant::now();
    let y = net.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.sum(y);
    tape.backward(loss)?;
    tape.write_grads(net.params_mut());
    Ok(start.elapsed().as_secs_f64())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs the paired benchmark. The two networks share a seed, so their
/// parameters and input are identical; only the fusion differs.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.reps == 0 || cfg.channels == 0 || cfg.hw == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArgument(
            "bench needs reps, channels, hw, batch >= 1".into(),
        ));
    }
    let (base_fusion, fused_fusion) = match cfg.block {
        BenchBlock::Residual => (
            FusionSpec::sum_only(),
            FusionSpec::residual_sort(crate::fusion::RESIDUAL_FUSE_EPS),
        ),
        BenchBlock::Branch => (FusionSpec::sum_only(), FusionSpec::sort_branched()),
    };
    let in_shape = [cfg.channels, cfg.hw, cfg.hw];
    let mut base = Network::from_spec(&block_spec(cfg.block, cfg.channels, base_fusion), &in_shape, cfg.seed)?;
    let mut fused = Network::from_spec(&block_spec(cfg.block, cfg.channels, fused_fusion), &in_shape, cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBEAC);
    let n = cfg.batch * cfg.channels * cfg.hw * cfg.hw;
    let input = Tensor::new(
        vec![cfg.batch, cfg.channels, cfg.hw, cfg.hw],
        (0..n)
            .map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5)
            .collect(),
    )
    .unwrap();

    // Untimed warmup, then alternate sides every repetition.
    pass(&mut base, &input)?;
    pass(&mut fused, &input)?;
    let mut base_times = Vec::with_capacity(cfg.reps);
    let mut fused_times = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        base_times.push(pass(&mut base, &input)?);
        fused_times.push(pass(&mut fused, &input)?);
    }
    let base_median_s = median(base_times);
    let fused_median_s = median(fused_times);
    Ok(BenchResult {
        base_median_s,
        fused_median_s,
        ratio: fused_median_s / base_median_s,
        reps: cfg.reps,
    })
}
