//! Batch normalization and the softmax cross-entropy loss head.

use crate::error::{Error, Result};
use crate::tape::{Mode, Node, Tape, ValueId};
use crate::tensor::Tensor;

/// Epsilon inside the batchnorm normalizer.
pub const BN_EPS: f64 = 1e-5;
/// Momentum for the running mean/variance estimates.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-layer running statistics, owned by the network (not the tape).
#[derive(Clone, Debug)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Channel geometry of a batchnorm input: [N,C,H,W] or [N,C].
struct BnLayout {
    n: usize,
    c: usize,
    hw: usize,
}

fn bn_layout(shape: &[usize], channels: usize) -> Result<BnLayout> {
    let layout = match shape {
        [n, c] => BnLayout { n: *n, c: *c, hw: 1 },
        [n, c, h, w] => BnLayout {
            n: *n,
            c: *c,
            hw: h * w,
        },
        _ => {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                left: shape.to_vec(),
                right: vec![channels],
            })
        }
    };
    if layout.c != channels || layout.n == 0 {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            left: shape.to_vec(),
            right: vec![channels],
        });
    }
    Ok(layout)
}

/// Visits every element of channel `c`, in a fixed order.
#[inline]
fn for_channel(l: &BnLayout, c: usize, mut f: impl FnMut(usize)) {
    for n in 0..l.n {
        let base = (n * l.c + c) * l.hw;
        for s in 0..l.hw {
            f(base + s);
        }
    }
}

impl Tape {
    /// Batch normalization over the channel axis.
    ///
    /// Train mode normalizes with batch statistics and folds them into
    /// `state` with momentum [`BN_MOMENTUM`]; eval mode normalizes with the
    /// running statistics and leaves `state` untouched.
    pub fn batchnorm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mode: Mode,
        state: &mut BnState,
    ) -> Result<ValueId> {
        let channels = state.running_mean.len();
        let gs = self.value(gamma).shape();
        let bs = self.value(beta).shape();
        if gs != [channels] || bs != [channels] {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                left: gs.to_vec(),
                right: bs.to_vec(),
            });
        }
        let layout = bn_layout(self.value(x).shape(), channels)?;
        let m = (layout.n * layout.hw) as f64;
        let xv = self.value(x).data();

        let (mean, inv_std, batch_stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut sum = 0.0;
                    for_channel(&layout, c, |i| sum += xv[i]);
                    let mu = sum / m;
                    let mut sq = 0.0;
                    for_channel(&layout, c, |i| {
                        let d = xv[i] - mu;
                        sq += d * d;
                    });
                    mean[c] = mu;
                    var[c] = sq / m;
                }
                for c in 0..channels {
                    state.running_mean[c] =
                        BN_MOMENTUM * state.running_mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                    state.running_var[c] =
                        BN_MOMENTUM * state.running_var[c] + (1.0 - BN_MOMENTUM) * var[c];
                }
                let inv_std: Vec<f64> =
                    var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv_std, true)
            }
            Mode::Eval => {
                let inv_std = state
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .collect();
                (state.running_mean.clone(), inv_std, false)
            }
        };

        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        for c in 0..channels {
            let (mu, istd, g, b) = (mean[c], inv_std[c], gv[c], bv[c]);
            for_channel(&layout, c, |i| {
                out[i] = g * (xv[i] - mu) * istd + b;
            });
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Node::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Mean softmax cross-entropy over the batch: logits [N,C], labels in [0,C).
    pub fn softmax_xent(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax_xent",
                left: ls,
                right: vec![0, 0],
            });
        }
        let (n, c) = (ls[0], ls[1]);
        if labels.len() != n || n == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_xent",
                left: ls,
                right: vec![labels.len()],
            });
        }
        for (sample, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: c,
                    sample,
                });
            }
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row {
                denom += (v - maxv).exp();
            }
            let lse = maxv + denom.ln();
            loss += lse - row[labels[r]];
            for (j, v) in row.iter().enumerate() {
                probs[r * c + j] = (v - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            out,
            Node::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

/// Gradients for [`Tape::batchnorm`]; `batch_stats` selects the train-mode
/// formula that couples the gradient across the normalization set.
pub(crate) fn batchnorm_backward(
    x: &Tensor,
    gamma: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let layout = bn_layout(x.shape(), channels).expect("validated at record time");
    let m = (layout.n * layout.hw) as f64;
    let xv = x.data();

    let mut gx = vec![0.0; xv.len()];
    let mut ggamma = vec![0.0; channels];
    let mut gbeta = vec![0.0; channels];
    for c in 0..channels {
        let (mu, istd) = (mean[c], inv_std[c]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for_channel(&layout, c, |i| {
            let xhat = (xv[i] - mu) * istd;
            sum_g += g[i];
            sum_gx += g[i] * xhat;
        });
        ggamma[c] = sum_gx;
        gbeta[c] = sum_g;
        let scale = gamma[c] * istd;
        if batch_stats {
            for_channel(&layout, c, |i| {
                let xhat = (xv[i] - mu) * istd;
                gx[i] = scale * (g[i] - (sum_g + xhat * sum_gx) / m);
            });
        } else {
            for_channel(&layout, c, |i| {
                gx[i] = scale * g[i];
            });
        }
    }
    (gx, ggamma, gbeta)
}

/// Row-wise argmax of a [N,C] logits tensor; ties pick the first class.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let shape = logits.shape();
    debug_assert_eq!(shape.len(), 2);
    let c = shape[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_xent_uniform_logits_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::zeros(&[4, 10]));
        let l = tape.softmax_xent(logits, &[0, 3, 7, 9]).unwrap();
        assert!((tape.value(l).item() - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_rejects_bad_labels() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::zeros(&[2, 3]));
        match tape.softmax_xent(logits, &[1, 3]) {
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3,
                sample: 1,
            }) => {}
            other => panic!("expected LabelOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn softmax_xent_backward_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let l = tape.softmax_xent(logits, &[1]).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(logits).unwrap().data();
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalizes_and_updates_running_stats() {
        let mut tape = Tape::new();
        // One channel, two samples: mean 2, biased var 0.25.
        let x = tape.input(Tensor::new(vec![2, 1], vec![1.5, 2.5]).unwrap());
        let gamma = tape.input(Tensor::from_vec(vec![1.0]));
        let beta = tape.input(Tensor::from_vec(vec![0.0]));
        let mut state = BnState::new(1);
        let y = tape.batchnorm(x, gamma, beta, Mode::Train, &mut state).unwrap();

        // Normalized output: ±0.5/sqrt(0.25 + 1e-5).
        let expect = 0.5 / (0.25f64 + BN_EPS).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] + expect).abs() < 1e-12);
        assert!((out[1] - expect).abs() < 1e-12);

        // Running stats fold in with momentum 0.9.
        assert!((state.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((state.running_var[0] - 0.925).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats_and_keeps_state() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2, 1], vec![3.0, 5.0]).unwrap());
        let gamma = tape.input(Tensor::from_vec(vec![2.0]));
        let beta = tape.input(Tensor::from_vec(vec![1.0]));
        let mut state = BnState {
            running_mean: vec![4.0],
            running_var: vec![1.0],
        };
        let y = tape.batchnorm(x, gamma, beta, Mode::Eval, &mut state).unwrap();
        let istd = 1.0 / (1.0f64 + BN_EPS).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] - (2.0 * -1.0 * istd + 1.0)).abs() < 1e-12);
        assert!((out[1] - (2.0 * 1.0 * istd + 1.0)).abs() < 1e-12);
        assert_eq!(state.running_mean, vec![4.0]);
        assert_eq!(state.running_var, vec![1.0]);
    }

    #[test]
    fn batchnorm_gamma_beta_gradients_are_sums() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
        let gamma = tape.input(Tensor::from_vec(vec![1.5]));
        let beta = tape.input(Tensor::from_vec(vec![0.5]));
        let mut state = BnState::new(1);
        let y = tape.batchnorm(x, gamma, beta, Mode::Train, &mut state).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        // dL/dbeta = sum of upstream = 2; dL/dgamma = sum g·xhat = xhat1+xhat2 = 0.
        assert!((tape.grad(beta).unwrap().data()[0] - 2.0).abs() < 1e-12);
        assert!(tape.grad(gamma).unwrap().data()[0].abs() < 1e-12);
    }

    #[test]
    fn predictions_take_first_max() {
        let logits = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.9, 2.0, 1.0, -1.0]).unwrap();
        assert_eq!(predictions(&logits), vec![1, 0]);
    }
}
