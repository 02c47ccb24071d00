//! The Wengert tape: recorded operations and reverse-mode gradients.
//!
//! Every operation appends a node holding its input ids and whatever forward
//! state backward needs. Nodes are created in topological order by
//! construction, so `backward` is a single reverse sweep that accumulates
//! vector-Jacobian products into per-value gradient buffers.
//!
//! Elementwise primitives live here; convolution-family and normalization
//! ops are in sibling modules as further `impl Tape` blocks sharing the same
//! [`Node`] enum.

use crate::error::{Error, Result};
use crate::param::{Param, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to one value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

/// Whether stateful layers (batchnorm) use batch statistics or running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Recorded operation: inputs plus saved forward state for backward.
#[derive(Debug)]
pub(crate) enum Node {
    Leaf,
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    MaxEw {
        a: ValueId,
        b: ValueId,
    },
    Relu {
        a: ValueId,
    },
    /// out = sqrt(a + eps); backward reads the saved output.
    SqrtShift {
        a: ValueId,
    },
    Square {
        a: ValueId,
    },
    /// Scalar sum of all elements.
    SumAll {
        a: ValueId,
    },
    Reshape {
        a: ValueId,
    },
    Fc {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Conv2d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: ValueId,
        k: usize,
        stride: usize,
        /// Flat input index of the winning element per output element.
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: ValueId,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        /// Per-channel mean/inv_std actually used to normalize.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        /// True when the stats above are batch statistics (train mode), which
        /// couples the gradient across the batch.
        batch_stats: bool,
    },
    SoftmaxXent {
        logits: ValueId,
        labels: Vec<usize>,
        /// Row-major softmax probabilities, saved for backward.
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
pub(crate) struct Slot {
    pub(crate) value: Tensor,
    pub(crate) node: Node,
}

/// Recorded computation with reverse-mode gradient support.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) slots: Vec<Slot>,
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(ParamId, ValueId)>,
    /// Test hook: flips the sign of ew_mul's backward so the gradient checker
    /// can prove it catches a broken op.
    mul_backward_sign_flip: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded values.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor, node: Node) -> ValueId {
        let id = ValueId(self.slots.len());
        self.slots.push(Slot { value, node });
        id
    }

    /// Records a constant/input leaf.
    pub fn input(&mut self, value: Tensor) -> ValueId {
        self.push(value, Node::Leaf)
    }

    /// Records a parameter's current value as a leaf and remembers the
    /// binding so [`Tape::write_grads`] can route the gradient back.
    pub fn param(&mut self, p: &Param) -> ValueId {
        let id = self.push(p.value().clone(), Node::Leaf);
        self.bindings.push((p.id(), id));
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.slots[id.0].value
    }

    /// Gradient of the last `backward` root w.r.t. `id`, if the value was reached.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`Tape::grad`] but materializes zeros for unreached values.
    pub fn grad_or_zeros(&self, id: ValueId) -> Tensor {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(id).shape()),
        }
    }

    /// Smallest distance from any recorded non-smooth site to its switching
    /// point: |input| at relu kinks, |a - b| at elementwise-max ties, and
    /// winner minus runner-up inside each pooling window. A central
    /// difference at step h is only a valid derivative oracle when a +/-h
    /// parameter nudge cannot push an activation across such a site, so
    /// whole-network finite-difference audits use this to discard forward
    /// passes whose margin is smaller than the perturbation can reach.
    pub fn min_switch_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for slot in &self.slots {
            match &slot.node {
                Node::Relu { a } => {
                    for &v in self.slots[a.0].value.data() {
                        margin = margin.min(v.abs());
                    }
                }
                Node::MaxEw { a, b } => {
                    let av = self.slots[a.0].value.data();
                    let bv = self.slots[b.0].value.data();
                    for (x, y) in av.iter().zip(bv) {
                        margin = margin.min((x - y).abs());
                    }
                }
                Node::MaxPool2d { x, k, stride, .. } => {
                    let xs = self.slots[x.0].value.shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let xv = self.slots[x.0].value.data();
                    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * h * w;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let (y0, x0) = (oy * stride, ox * stride);
                                    let (mut best, mut second) =
                                        (f64::NEG_INFINITY, f64::NEG_INFINITY);
                                    for ky in 0..*k {
                                        for kx in 0..*k {
                                            let v = xv[base + (y0 + ky) * w + (x0 + kx)];
                                            if v > best {
                                                second = best;
                                                best = v;
                                            } else if v > second {
                                                second = v;
                                            }
                                        }
                                    }
                                    if second.is_finite() {
                                        margin = margin.min(best - second);
                                    }
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Test hook; see `mul_backward_sign_flip`.
    #[doc(hidden)]
    pub fn set_mul_backward_sign_flip(&mut self, on: bool) {
        self.mul_backward_sign_flip = on;
    }

    fn shapes_match(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn ew_add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.shapes_match("ew_add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Node::Add { a, b }))
    }

    /// Elementwise product.
    pub fn ew_mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.shapes_match("ew_mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Node::Mul { a, b }))
    }

    /// Elementwise maximum. Ties route the gradient to the first operand.
    pub fn ew_max(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.shapes_match("ew_max", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| if x >= y { *x } else { *y })
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Node::MaxEw { a, b }))
    }

    /// Elementwise max(x, 0). The derivative at exactly 0 is 0.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        self.push(out, Node::Relu { a })
    }

    /// Elementwise sqrt(a + eps). Requires `a >= 0` and `eps > 0`.
    pub fn ew_sqrt_shift(&mut self, a: ValueId, eps: f64) -> Result<ValueId> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ew_sqrt_shift: eps must be > 0, got {eps}"
            )));
        }
        if let Some((index, &value)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| **v < 0.0)
        {
            return Err(Error::NegativeInput {
                op: "ew_sqrt_shift",
                index,
                value,
            });
        }
        let data = self.value(a).data().iter().map(|x| (x + eps).sqrt()).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Node::SqrtShift { a }))
    }

    /// Elementwise square.
    pub fn square(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data().iter().map(|x| x * x).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        self.push(out, Node::Square { a })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Node::SumAll { a })
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Node::Reshape { a }))
    }

    /// Reverse sweep from a scalar root. Fills per-value gradients.
    pub fn backward(&mut self, root: ValueId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = self.slots.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);

        let Tape {
            slots,
            mul_backward_sign_flip,
            ..
        } = &*self;
        let flip = if *mul_backward_sign_flip { -1.0 } else { 1.0 };

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let gd = g.data();
            match &slots[i].node {
                Node::Leaf => {}
                Node::Add { a, b } => {
                    accumulate(&mut grads, slots, *a, gd);
                    accumulate(&mut grads, slots, *b, gd);
                }
                Node::Mul { a, b } => {
                    let av = slots[a.0].value.data();
                    let bv = slots[b.0].value.data();
                    let ga: Vec<f64> = gd.iter().zip(bv).map(|(g, b)| flip * g * b).collect();
                    let gb: Vec<f64> = gd.iter().zip(av).map(|(g, a)| flip * g * a).collect();
                    accumulate(&mut grads, slots, *a, &ga);
                    accumulate(&mut grads, slots, *b, &gb);
                }
                Node::MaxEw { a, b } => {
                    let av = slots[a.0].value.data();
                    let bv = slots[b.0].value.data();
                    let mut ga = vec![0.0; gd.len()];
                    let mut gb = vec![0.0; gd.len()];
                    for j in 0..gd.len() {
                        if av[j] >= bv[j] {
                            ga[j] = gd[j];
                        } else {
                            gb[j] = gd[j];
                        }
                    }
                    accumulate(&mut grads, slots, *a, &ga);
                    accumulate(&mut grads, slots, *b, &gb);
                }
                Node::Relu { a } => {
                    let av = slots[a.0].value.data();
                    let ga: Vec<f64> = gd
                        .iter()
                        .zip(av)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, slots, *a, &ga);
                }
                Node::SqrtShift { a } => {
                    let out = slots[i].value.data();
                    let ga: Vec<f64> = gd.iter().zip(out).map(|(g, o)| g / (2.0 * o)).collect();
                    accumulate(&mut grads, slots, *a, &ga);
                }
                Node::Square { a } => {
                    let av = slots[a.0].value.data();
                    let ga: Vec<f64> = gd.iter().zip(av).map(|(g, x)| 2.0 * x * g).collect();
                    accumulate(&mut grads, slots, *a, &ga);
                }
                Node::SumAll { a } => {
                    let ga = vec![gd[0]; slots[a.0].value.len()];
                    accumulate(&mut grads, slots, *a, &ga);
                }
                Node::Reshape { a } => {
                    accumulate(&mut grads, slots, *a, gd);
                }
                Node::Fc { x, w, b } => {
                    let (gx, gw, gb) = crate::linalg::fc_backward(
                        slots[x.0].value.data(),
                        slots[x.0].value.shape(),
                        slots[w.0].value.data(),
                        slots[w.0].value.shape(),
                        gd,
                    );
                    accumulate(&mut grads, slots, *x, &gx);
                    accumulate(&mut grads, slots, *w, &gw);
                    accumulate(&mut grads, slots, *b, &gb);
                }
                Node::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (gx, gw, gb) = crate::linalg::conv2d_backward(
                        &slots[x.0].value,
                        &slots[w.0].value,
                        gd,
                        slots[i].value.shape(),
                        *stride,
                        *pad,
                    );
                    accumulate(&mut grads, slots, *x, &gx);
                    accumulate(&mut grads, slots, *w, &gw);
                    accumulate(&mut grads, slots, *b, &gb);
                }
                Node::MaxPool2d { x, argmax, .. } => {
                    let mut gx = vec![0.0; slots[x.0].value.len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += gd[o];
                    }
                    accumulate(&mut grads, slots, *x, &gx);
                }
                Node::GlobalAvgPool { x } => {
                    let xs = slots[x.0].value.shape();
                    let (h, w) = (xs[2], xs[3]);
                    let inv = 1.0 / (h * w) as f64;
                    let mut gx = vec![0.0; slots[x.0].value.len()];
                    let hw = h * w;
                    for (nc, g) in gd.iter().enumerate() {
                        let base = nc * hw;
                        let v = g * inv;
                        for t in &mut gx[base..base + hw] {
                            *t = v;
                        }
                    }
                    accumulate(&mut grads, slots, *x, &gx);
                }
                Node::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let (gx, ggamma, gbeta) = crate::norm::batchnorm_backward(
                        &slots[x.0].value,
                        slots[gamma.0].value.data(),
                        mean,
                        inv_std,
                        *batch_stats,
                        gd,
                    );
                    accumulate(&mut grads, slots, *x, &gx);
                    accumulate(&mut grads, slots, *gamma, &ggamma);
                    accumulate(&mut grads, slots, *beta, &gbeta);
                }
                Node::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let c = slots[logits.0].value.shape()[1];
                    let scale = gd[0] / n as f64;
                    let mut gl = vec![0.0; probs.len()];
                    for r in 0..n {
                        for j in 0..c {
                            let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                            gl[r * c + j] = scale * (probs[r * c + j] - onehot);
                        }
                    }
                    accumulate(&mut grads, slots, *logits, &gl);
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Copies parameter gradients (accumulated over all bindings) into the store.
    ///
    /// Parameters never touched by the recorded graph get zero gradients.
    pub fn write_grads(&self, store: &mut ParamStore) {
        store.zero_grads();
        for (pid, vid) in &self.bindings {
            if let Some(g) = self.grad(*vid) {
                let dst = store.get_mut(*pid).grad_mut().data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }

    /// Parameter-to-value bindings recorded by [`Tape::param`].
    pub fn bindings(&self) -> &[(ParamId, ValueId)] {
        &self.bindings
    }
}

/// Adds `contrib` into the gradient buffer of `id`, allocating it on first use.
fn accumulate(grads: &mut [Option<Tensor>], slots: &[Slot], id: ValueId, contrib: &[f64]) {
    match &mut grads[id.0] {
        Some(g) => {
            for (gi, ci) in g.data_mut().iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        None => {
            let shape = slots[id.0].value.shape().to_vec();
            grads[id.0] =
                Some(Tensor::new(shape, contrib.to_vec()).expect("contrib matches value shape"));
        }
    }
}
