//! SGD training with section-wise learning-rate schedules.
//!
//! A schedule is a list of (lr, iterations) sections run back to back; the
//! canonical chain-network schedule is 1e-2/1e-3/1e-4 × 60K/5K/5K, the
//! residual-network one 1e-1/1e-2/1e-3 × 32K/16K/16K, both at batch 100.
//! [`scale_sections`] shrinks a schedule to desk scale while preserving the
//! section ratios. Everything is deterministic given the seed: identical
//! (model, data, config, seed) runs produce bitwise-identical metric
//! trajectories (wall-clock columns excluded).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::norm::predictions;
use crate::param::ParamStore;
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;

/// One schedule section: a constant learning rate for a number of iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub lr: f64,
    pub iters: u64,
}

/// Full training configuration.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub sections: Vec<Section>,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate test error every this many iterations (0 = only at the end).
    pub eval_every: u64,
    /// Record a train metric row every this many iterations.
    pub record_every: u64,
    /// Pad-4/random-crop/horizontal-flip augmentation for `[N,C,H,W]` data.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sections: vec![Section { lr: 1e-2, iters: 100 }],
            batch_size: 100,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            eval_every: 0,
            record_every: 1,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Rejects empty schedules, negative rates, zero-length sections, and a
    /// zero batch. lr = 0 is allowed (a frozen run is well-defined and useful
    /// as a control); negative lr is not.
    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::InvalidArgument("schedule has no sections".into()));
        }
        for s in &self.sections {
            if !(s.lr >= 0.0) || !s.lr.is_finite() {
                return Err(Error::InvalidArgument(format!("bad learning rate {}", s.lr)));
            }
            if s.iters == 0 {
                return Err(Error::InvalidArgument("section with 0 iterations".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) && self.momentum != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> u64 {
        self.sections.iter().map(|s| s.iters).sum()
    }
}

/// Chain-network schedule: 1e-2, 1e-3, 1e-4 × 60K, 5K, 5K.
pub fn lenet_schedule() -> Vec<Section> {
    vec![
        Section { lr: 1e-2, iters: 60_000 },
        Section { lr: 1e-3, iters: 5_000 },
        Section { lr: 1e-4, iters: 5_000 },
    ]
}

/// Deep chain-network schedule: 1e-1 … 1e-4 × 60K, 30K, 20K, 10K.
pub fn vggish_schedule() -> Vec<Section> {
    vec![
        Section { lr: 1e-1, iters: 60_000 },
        Section { lr: 1e-2, iters: 30_000 },
        Section { lr: 1e-3, iters: 20_000 },
        Section { lr: 1e-4, iters: 10_000 },
    ]
}

/// Residual-network schedule: 1e-1, 1e-2, 1e-3 × 32K, 16K, 16K.
pub fn resnet_schedule() -> Vec<Section> {
    vec![
        Section { lr: 1e-1, iters: 32_000 },
        Section { lr: 1e-2, iters: 16_000 },
        Section { lr: 1e-3, iters: 16_000 },
    ]
}

/// Scales every section's iteration count by `scale` (rounding, min 1 per
/// section), preserving the lr values and section ratios.
pub fn scale_sections(sections: &[Section], scale: f64) -> Result<Vec<Section>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("bad schedule scale {scale}")));
    }
    Ok(sections
        .iter()
        .map(|s| Section {
            lr: s.lr,
            iters: ((s.iters as f64 * scale).round() as u64).max(1),
        })
        .collect())
}

/// Momentum buffers, one per parameter tensor, zero-initialized.
pub struct SgdState {
    velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            velocity: store
                .iter()
                .map(|p| Tensor::zeros(p.value().shape()))
                .collect(),
        }
    }
}

/// One SGD-with-momentum update over every parameter:
/// v ← momentum·v − lr·(grad + weight_decay·param); param ← param + v.
pub fn sgd_step(
    store: &mut ParamStore,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("bad learning rate {lr}")));
    }
    for (p, v) in store.iter_mut().zip(state.velocity.iter_mut()) {
        if !p.grad().all_finite() {
            return Err(Error::NonFiniteGradient {
                name: p.name().to_string(),
            });
        }
        let value = p.value().data().to_vec();
        let grad = p.grad().data().to_vec();
        let vel = v.data_mut();
        let out = p.value_mut().data_mut();
        for i in 0..out.len() {
            vel[i] = momentum * vel[i] - lr * (grad[i] + weight_decay * value[i]);
            out[i] += vel[i];
        }
    }
    Ok(())
}

/// Which split a metric row describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One logged measurement.
#[derive(Clone, Copy, Debug)]
pub struct MetricRow {
    pub iter: u64,
    pub split: Split,
    pub loss: f64,
    pub error_pct: f64,
    pub elapsed_s: f64,
}

/// Full history of a training run.
#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    /// Wall seconds per 20-iteration window: (iteration, seconds).
    pub timing: Vec<(u64, f64)>,
    /// First iteration whose loss went non-finite, if the run diverged.
    pub diverged_at: Option<u64>,
    /// Final test error (%), when a test split was evaluated.
    pub final_test_error: Option<f64>,
}

impl RunMetrics {
    /// CSV stream `iter,split,loss,error_pct,elapsed_s`. Numeric columns use
    /// the shortest round-trippable representation, so parsed values match
    /// the in-memory trajectory bitwise.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,split,loss,error_pct,elapsed_s")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.3}",
                r.iter, r.split, r.loss, r.error_pct, r.elapsed_s
            )?;
        }
        Ok(())
    }

    /// Trajectory equality: same rows (iteration, split, loss bits, error
    /// bits), ignoring wall-clock columns.
    pub fn trajectory_eq(&self, other: &RunMetrics) -> bool {
        self.diverged_at == other.diverged_at
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(other.rows.iter())
                .all(|(a, b)| {
                    a.iter == b.iter
                        && a.split == b.split
                        && a.loss.to_bits() == b.loss.to_bits()
                        && a.error_pct.to_bits() == b.error_pct.to_bits()
                })
    }

    /// Last recorded train loss.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == Split::Train)
            .map(|r| r.loss)
    }
}

/// Gathers `idx` rows of a `[N, ...]` tensor into a batch tensor.
fn gather_batch(images: &Tensor, idx: &[usize]) -> Tensor {
    let stride: usize = images.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * stride);
    for &i in idx {
        data.extend_from_slice(&images.data()[i * stride..(i + 1) * stride]);
    }
    let mut shape = images.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gather preserves layout")
}

/// Pad-4 + random 32-crop + horizontal flip, per sample, in place on a batch.
fn augment_batch(batch: &mut Tensor, rng: &mut ChaCha8Rng) {
    let [n, c, h, w] = *batch.shape() else { return };
    const PAD: usize = 4;
    let src = batch.data().to_vec();
    let out = batch.data_mut();
    for s in 0..n {
        let dy = rng.random_range(0..=2 * PAD);
        let dx = rng.random_range(0..=2 * PAD);
        let flip = rng.random::<bool>();
        for ch in 0..c {
            let plane = (s * c + ch) * h * w;
            for y in 0..h {
                for x in 0..w {
                    // Position in the virtual padded image.
                    let py = y + dy;
                    let px = x + dx;
                    let v = if py >= PAD && py < PAD + h && px >= PAD && px < PAD + w {
                        let sy = py - PAD;
                        let sx = px - PAD;
                        let sx = if flip { w - 1 - sx } else { sx };
                        src[plane + sy * w + sx]
                    } else {
                        0.0
                    };
                    out[plane + y * w + x] = v;
                }
            }
        }
    }
}

/// Top-1 error (%) of a model over a split, batchnorm in eval mode.
/// Deterministic: no shuffling, fixed batch order.
pub fn evaluate<M: Model>(
    model: &mut M,
    images: &Tensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    let mut wrong = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather_batch(images, &idx);
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let logits = model.forward(&mut tape, x, Mode::Eval)?;
        let preds = predictions(tape.value(logits));
        for (p, &l) in preds.iter().zip(&labels[start..end]) {
            if *p != l {
                wrong += 1;
            }
        }
        start = end;
    }
    Ok(100.0 * wrong as f64 / n as f64)
}

/// Mean loss and error (%) of a model over a split in eval mode.
pub fn evaluate_loss<M: Model>(
    model: &mut M,
    images: &Tensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    let mut wrong = 0usize;
    let mut loss_sum = 0.0;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather_batch(images, &idx);
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let logits = model.forward(&mut tape, x, Mode::Eval)?;
        let loss = tape.softmax_xent(logits, &labels[start..end])?;
        loss_sum += tape.value(loss).item() * (end - start) as f64;
        let preds = predictions(tape.value(logits));
        for (p, &l) in preds.iter().zip(&labels[start..end]) {
            if *p != l {
                wrong += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, 100.0 * wrong as f64 / n as f64))
}

/// Runs the sectioned SGD loop. Deterministic given the seed; a non-finite
/// loss stops the run immediately with partial metrics and `diverged_at`
/// set (the caller decides whether divergence is an error or a data point).
pub fn train<M: Model>(
    model: &mut M,
    data: &DatasetHandle,
    cfg: &TrainConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    if data.train_len() == 0 {
        return Err(Error::EmptySplit);
    }
    if data.num_classes != model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the model emits {}",
            data.num_classes,
            model.num_classes()
        )));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut order: Vec<usize> = (0..data.train_len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut state = SgdState::new(model.params());
    let mut metrics = RunMetrics::default();
    let started = Instant::now();
    let mut window_start = Instant::now();

    let mut iter: u64 = 0;
    'sections: for section in &cfg.sections {
        for _ in 0..section.iters {
            // Next batch from the shuffled index stream, reshuffling each epoch.
            let mut idx = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let mut batch = gather_batch(&data.train_images, &idx);
            if cfg.augment && batch.rank() == 4 {
                augment_batch(&mut batch, &mut augment_rng);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| data.train_labels[i]).collect();

            let mut tape = Tape::new();
            let x = tape.input(batch);
            let logits = model.forward(&mut tape, x, Mode::Train)?;
            let loss_id = tape.softmax_xent(logits, &labels)?;
            let loss = tape.value(loss_id).item();
            let preds = predictions(tape.value(logits));
            let wrong = preds
                .iter()
                .zip(&labels)
                .filter(|(p, l)| *p != *l)
                .count();
            let err_pct = 100.0 * wrong as f64 / labels.len() as f64;

            if !loss.is_finite() {
                metrics.rows.push(MetricRow {
                    iter,
                    split: Split::Train,
                    loss,
                    error_pct: err_pct,
                    elapsed_s: started.elapsed().as_secs_f64(),
                });
                metrics.diverged_at = Some(iter);
                break 'sections;
            }

            tape.backward(loss_id)?;
            tape.write_grads(model.params_mut());
            match sgd_step(
                model.params_mut(),
                &mut state,
                section.lr,
                cfg.momentum,
                cfg.weight_decay,
            ) {
                Ok(()) => {}
                // Overflowing gradients under a still-finite loss are the
                // same event as a non-finite loss one step later: the run
                // diverged. Record it instead of aborting, so unstable
                // configurations show up as divergence in reports.
                Err(Error::NonFiniteGradient { .. }) => {
                    metrics.rows.push(MetricRow {
                        iter,
                        split: Split::Train,
                        loss,
                        error_pct: err_pct,
                        elapsed_s: started.elapsed().as_secs_f64(),
                    });
                    metrics.diverged_at = Some(iter);
                    break 'sections;
                }
                Err(e) => return Err(e),
            }

            if (iter + 1) % cfg.record_every == 0 || iter == 0 {
                metrics.rows.push(MetricRow {
                    iter,
                    split: Split::Train,
                    loss,
                    error_pct: err_pct,
                    elapsed_s: started.elapsed().as_secs_f64(),
                });
            }
            if (iter + 1) % 20 == 0 {
                metrics
                    .timing
                    .push((iter, window_start.elapsed().as_secs_f64()));
                window_start = Instant::now();
            }
            if cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 && data.test_len() > 0 {
                let (tl, te) = evaluate_loss(
                    model,
                    &data.test_images,
                    &data.test_labels,
                    cfg.batch_size,
                )?;
                metrics.rows.push(MetricRow {
                    iter,
                    split: Split::Test,
                    loss: tl,
                    error_pct: te,
                    elapsed_s: started.elapsed().as_secs_f64(),
                });
            }
            iter += 1;
        }
    }

    if metrics.diverged_at.is_none() && data.test_len() > 0 {
        let (tl, te) = evaluate_loss(model, &data.test_images, &data.test_labels, cfg.batch_size)?;
        metrics.rows.push(MetricRow {
            iter: iter.saturating_sub(1),
            split: Split::Test,
            loss: tl,
            error_pct: te,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
        metrics.final_test_error = Some(te);
    }
    Ok(metrics)
}
