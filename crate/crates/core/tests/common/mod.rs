//! Shared test-side oracles.
//!
//! Everything here is written independently of the library's own audit
//! module: a plain central-difference loop, hand-rolled reference formulas,
//! and deterministic value generators with explicit tie margins. Tests
//! compare library output against these, so a bug in the library's gradient
//! or audit code cannot silently vouch for itself.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sortnet::network::HasParams;
use sortnet::tape::{Tape, ValueId};
use sortnet::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error metric used throughout the gradient tests:
/// |a − b| / max(|a|, |b|, 1). The 1 in the denominator keeps tiny
/// gradients from blowing up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference gradient oracle.
///
/// `build` must record a scalar loss from the current store contents each
/// time it is called (a pure function of the parameter values). Returns the
/// flattened (analytic, finite-difference) gradient pair over every
/// parameter coordinate in store order.
pub fn fd_pair<T, F>(target: &mut T, mut build: F, h: f64) -> (Vec<f64>, Vec<f64>)
where
    T: HasParams,
    F: FnMut(&mut T, &mut Tape) -> Result<ValueId>,
{
    assert!(h > 0.0, "step size must be positive");

    // Analytic pass.
    let mut tape = Tape::new();
    let loss = build(target, &mut tape).expect("analytic forward failed");
    assert_eq!(tape.value(loss).len(), 1, "loss must be scalar");
    tape.backward(loss).expect("backward failed");
    tape.write_grads(target.params_mut());
    let analytic: Vec<f64> = target
        .params()
        .iter()
        .flat_map(|p| p.grad().data().iter().copied())
        .collect();

    // Finite differences: ±h on one coordinate at a time.
    let ids: Vec<_> = target.params().iter().map(|p| p.id()).collect();
    let mut fd = Vec::with_capacity(analytic.len());
    for id in ids {
        let n = target.params().get(id).value().len();
        for i in 0..n {
            let orig = target.params().get(id).value().data()[i];

            target.params_mut().get_mut(id).value_mut().data_mut()[i] = orig + h;
            let mut t_up = Tape::new();
            let up = build(target, &mut t_up).expect("fd forward (+h) failed");
            let up = t_up.value(up).item();

            target.params_mut().get_mut(id).value_mut().data_mut()[i] = orig - h;
            let mut t_dn = Tape::new();
            let dn = build(target, &mut t_dn).expect("fd forward (−h) failed");
            let dn = t_dn.value(dn).item();

            target.params_mut().get_mut(id).value_mut().data_mut()[i] = orig;
            fd.push((up - dn) / (2.0 * h));
        }
    }
    (analytic, fd)
}

/// Largest relative error between paired analytic and finite-difference
/// coordinates.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| rel_err(*a, *b))
        .fold(0.0, f64::max)
}

/// Runs the FD oracle and asserts every coordinate is within `tol`.
pub fn assert_grads_match<T, F>(target: &mut T, build: F, h: f64, tol: f64, what: &str)
where
    T: HasParams,
    F: FnMut(&mut T, &mut Tape) -> Result<ValueId>,
{
    let (analytic, fd) = fd_pair(target, build, h);
    assert!(!analytic.is_empty(), "{what}: no parameters checked");
    let err = max_rel_err(&analytic, &fd);
    assert!(
        err <= tol,
        "{what}: max relative gradient error {err:.3e} exceeds {tol:.1e}"
    );
}

// ---------------------------------------------------------------------------
// Value generators with explicit margins.
// ---------------------------------------------------------------------------

/// Values with |v| ∈ [0.1, 1.0] and random sign: smooth for every operation
/// whose only kink is at 0 (relu), with a margin far wider than any FD step
/// used in these tests.
pub fn smooth_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = 0.1 + 0.9 * rng.random::<f64>();
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Pairwise well-separated values: a shuffled lattice with spacing `gap`
/// plus jitter of at most gap/8, so no two entries ever come within gap/2 of
/// a tie. Safe under max/pool argmax selection.
pub fn separated_vec(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher–Yates shuffle.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx.into_iter()
        .map(|i| {
            let jitter = (rng.random::<f64>() - 0.5) * (gap / 4.0);
            (i as f64 - n as f64 / 2.0) * gap + jitter
        })
        .collect()
}

/// Strictly positive values in [lo, hi]; lo must leave room for the FD step.
pub fn positive_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(0.0 < lo && lo < hi);
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

// ---------------------------------------------------------------------------
// Hand-rolled reference formulas (independent of library code).
// ---------------------------------------------------------------------------

/// Reference second-order fusion over scalars: sum + gated/wrapped product,
/// written directly from the defining formula.
pub fn ref_fused_sum_prod(f1: f64, f2: f64) -> f64 {
    f1 + f2 + f1 * f2
}

/// Reference residual fusion: x + f + sqrt(relu(x)·relu(f) + eps).
pub fn ref_residual(x: f64, f: f64, eps: f64) -> f64 {
    x + f + (x.max(0.0) * f.max(0.0) + eps).sqrt()
}

/// Reference softmax cross-entropy (mean over the batch), max-subtracted.
pub fn ref_softmax_xent(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    assert_eq!(logits.len(), classes * labels.len());
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += z.ln() - (row[label] - m);
    }
    total / labels.len() as f64
}

/// Reference 2-D cross-correlation with zero padding, floor-divided output
/// extent, written as five nested loops.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    (k_out, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k_out * ho * wo];
    for s in 0..n {
        for ko in 0..k_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[ko];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((s * c + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((ko * c + ci) * kh + dy) * kw + dx;
                                acc += x[xi] * weight[wi];
                            }
                        }
                    }
                    out[((s * k_out + ko) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, (n, k_out, ho, wo))
}

/// Reference receptive-field recurrence over (kernel, stride) stages:
/// rf' = rf + (k − 1)·jump, jump' = jump·stride, starting at rf = 1, jump = 1.
pub fn ref_receptive_field(stages: &[(usize, usize)]) -> (usize, usize) {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for &(k, s) in stages {
        rf += (k - 1) * jump;
        jump *= s;
    }
    (rf, jump)
}

/// Reference SGD-with-momentum recurrence:
/// v ← m·v − lr·(g + wd·p); p ← p + v.
pub fn ref_sgd_step(p: &mut f64, v: &mut f64, g: f64, lr: f64, momentum: f64, wd: f64) {
    *v = momentum * *v - lr * (g + wd * *p);
    *p += *v;
}
