//! Runtime networks: a [`NetworkSpec`] instantiated with parameters.
//!
//! [`Network::from_spec`] allocates every learnable tensor in spec order from
//! a seeded generator (He-normal weights, zero biases, unit/zero batchnorm
//! affine), so the same (spec, seed) pair always yields bitwise-identical
//! initializations. `forward` records the whole computation on a [`Tape`];
//! branch and residual blocks expand into primitive ops plus a fusion node,
//! so their gradients need no special casing.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{sort_fuse, FusionSpec};
use crate::netbuild::{LayerSpec, NetworkSpec};
use crate::norm::BnState;
use crate::param::{he_normal, ParamId, ParamStore};
use crate::tape::{Mode, Tape, ValueId};
use crate::tensor::Tensor;

/// Anything that owns a parameter store (networks, raw stores in tests).
pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

/// A trainable model: parameters plus a tape-recorded forward pass from a
/// batched input to logits `[N, classes]`.
pub trait Model: HasParams {
    fn forward(&mut self, tape: &mut Tape, x: ValueId, mode: Mode) -> Result<ValueId>;
    fn num_classes(&self) -> usize;
}

/// Executable layer; block kinds carry their expanded sub-layers.
enum RtLayer {
    Conv {
        w: ParamId,
        b: ParamId,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    Fc {
        w: ParamId,
        b: ParamId,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        state: usize,
    },
    GlobalAvgPool,
    Flatten,
    Branch {
        left: Vec<RtLayer>,
        right: Vec<RtLayer>,
        fusion: FusionSpec,
    },
    Residual {
        body: Vec<RtLayer>,
        shortcut: Vec<RtLayer>,
        fusion: FusionSpec,
    },
}

/// A spec instantiated with parameters and batchnorm running state.
pub struct Network {
    name: String,
    num_classes: usize,
    store: ParamStore,
    bn_states: Vec<BnState>,
    layers: Vec<RtLayer>,
}

/// Allocation context threaded through layer construction.
struct Builder {
    store: ParamStore,
    bn_states: Vec<BnState>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(&mut self, prefix: &str, k: usize, c_in: usize, c_out: usize, stride: usize, pad: usize) -> RtLayer {
        let w = he_normal(&mut self.rng, &[c_out, c_in, k, k], c_in * k * k);
        let w = self.store.add(&format!("{prefix}.w"), w);
        let b = self.store.add(&format!("{prefix}.b"), Tensor::zeros(&[c_out]));
        RtLayer::Conv { w, b, stride, pad }
    }

    fn fc(&mut self, prefix: &str, d_in: usize, d_out: usize) -> RtLayer {
        let w = he_normal(&mut self.rng, &[d_in, d_out], d_in);
        let w = self.store.add(&format!("{prefix}.w"), w);
        let b = self.store.add(&format!("{prefix}.b"), Tensor::zeros(&[d_out]));
        RtLayer::Fc { w, b }
    }

    fn batchnorm(&mut self, prefix: &str, c: usize) -> RtLayer {
        let gamma = self
            .store
            .add(&format!("{prefix}.gamma"), Tensor::full(&[c], 1.0));
        let beta = self.store.add(&format!("{prefix}.beta"), Tensor::zeros(&[c]));
        let state = self.bn_states.len();
        self.bn_states.push(BnState::new(c));
        RtLayer::BatchNorm { gamma, beta, state }
    }

    /// One branch of a branched block: conv→[bn]→relu→conv→[bn]→relu.
    fn branch(
        &mut self,
        prefix: &str,
        ks: usize,
        c_in: usize,
        c_out: usize,
        p1: usize,
        p2: usize,
        with_bn: bool,
    ) -> Vec<RtLayer> {
        let mut seq = Vec::new();
        seq.push(self.conv(&format!("{prefix}.conv1"), ks, c_in, c_out, 1, p1));
        if with_bn {
            seq.push(self.batchnorm(&format!("{prefix}.bn1"), c_out));
        }
        seq.push(RtLayer::Relu);
        seq.push(self.conv(&format!("{prefix}.conv2"), ks, c_out, c_out, 1, p2));
        if with_bn {
            seq.push(self.batchnorm(&format!("{prefix}.bn2"), c_out));
        }
        seq.push(RtLayer::Relu);
        seq
    }

    fn layer(&mut self, prefix: &str, spec: &LayerSpec) -> Result<RtLayer> {
        Ok(match *spec {
            LayerSpec::Conv {
                k,
                c_in,
                c_out,
                stride,
                pad,
            } => self.conv(prefix, k, c_in, c_out, stride, pad),
            LayerSpec::Relu => RtLayer::Relu,
            LayerSpec::MaxPool { k, stride } => RtLayer::MaxPool { k, stride },
            LayerSpec::Fc { d_in, d_out } => self.fc(prefix, d_in, d_out),
            LayerSpec::BatchNorm { c } => self.batchnorm(prefix, c),
            LayerSpec::GlobalAvgPool => RtLayer::GlobalAvgPool,
            LayerSpec::Flatten => RtLayer::Flatten,
            LayerSpec::BranchBlock {
                k,
                c_in,
                c_out,
                stride: _,
                pad,
                with_bn,
                fusion,
            } => {
                fusion.validate()?;
                let (ks, p1, p2) = crate::netbuild::branch_geometry(k, pad)?;
                let left = self.branch(&format!("{prefix}.b1"), ks, c_in, c_out, p1, p2, with_bn);
                let right = self.branch(&format!("{prefix}.b2"), ks, c_in, c_out, p1, p2, with_bn);
                RtLayer::Branch {
                    left,
                    right,
                    fusion,
                }
            }
            LayerSpec::ResidualBlock {
                c_in,
                c_out,
                stride,
                fusion,
            } => {
                fusion.validate()?;
                let body = vec![
                    self.conv(&format!("{prefix}.conv1"), 3, c_in, c_out, stride, 1),
                    self.batchnorm(&format!("{prefix}.bn1"), c_out),
                    RtLayer::Relu,
                    self.conv(&format!("{prefix}.conv2"), 3, c_out, c_out, 1, 1),
                    self.batchnorm(&format!("{prefix}.bn2"), c_out),
                ];
                let shortcut = if c_in != c_out || stride != 1 {
                    vec![
                        self.conv(&format!("{prefix}.proj"), 1, c_in, c_out, stride, 0),
                        self.batchnorm(&format!("{prefix}.proj_bn"), c_out),
                    ]
                } else {
                    Vec::new()
                };
                RtLayer::Residual {
                    body,
                    shortcut,
                    fusion,
                }
            }
        })
    }
}

impl Network {
    /// Instantiates a validated spec for the given batchless input shape.
    /// Identical (spec, seed) pairs produce identical parameters.
    pub fn from_spec(spec: &NetworkSpec, input_shape: &[usize], seed: u64) -> Result<Network> {
        spec.validate(input_shape)?;
        let mut b = Builder {
            store: ParamStore::new(),
            bn_states: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            layers.push(b.layer(&format!("{}.{i}", spec.name), layer)?);
        }
        Ok(Network {
            name: spec.name.clone(),
            num_classes: spec.num_classes,
            store: b.store,
            bn_states: b.bn_states,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Total learnable scalars.
    pub fn param_count(&self) -> usize {
        self.store.total_elements()
    }
}

impl HasParams for Network {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl Model for Network {
    fn forward(&mut self, tape: &mut Tape, x: ValueId, mode: Mode) -> Result<ValueId> {
        forward_seq(&self.layers, &self.store, &mut self.bn_states, tape, x, mode)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Runs a layer sequence on the tape. Split borrows (layers immutable,
/// batchnorm state mutable) keep block recursion simple.
fn forward_seq(
    layers: &[RtLayer],
    store: &ParamStore,
    bn_states: &mut [BnState],
    tape: &mut Tape,
    mut x: ValueId,
    mode: Mode,
) -> Result<ValueId> {
    for layer in layers {
        x = match layer {
            RtLayer::Conv { w, b, stride, pad } => {
                let wv = tape.param(store.get(*w));
                let bv = tape.param(store.get(*b));
                tape.conv2d(x, wv, bv, *stride, *pad)?
            }
            RtLayer::Relu => tape.relu(x),
            RtLayer::MaxPool { k, stride } => tape.maxpool2d(x, *k, *stride)?,
            RtLayer::Fc { w, b } => {
                let wv = tape.param(store.get(*w));
                let bv = tape.param(store.get(*b));
                tape.fc(x, wv, bv)?
            }
            RtLayer::BatchNorm { gamma, beta, state } => {
                let gv = tape.param(store.get(*gamma));
                let bv = tape.param(store.get(*beta));
                tape.batchnorm(x, gv, bv, mode, &mut bn_states[*state])?
            }
            RtLayer::GlobalAvgPool => tape.global_avg_pool(x)?,
            RtLayer::Flatten => tape.flatten(x)?,
            RtLayer::Branch {
                left,
                right,
                fusion,
            } => {
                let f1 = forward_seq(left, store, bn_states, tape, x, mode)?;
                let f2 = forward_seq(right, store, bn_states, tape, x, mode)?;
                sort_fuse(tape, f1, f2, fusion)?
            }
            RtLayer::Residual {
                body,
                shortcut,
                fusion,
            } => {
                let fx = forward_seq(body, store, bn_states, tape, x, mode)?;
                let sc = if shortcut.is_empty() {
                    x
                } else {
                    forward_seq(shortcut, store, bn_states, tape, x, mode)?
                };
                sort_fuse(tape, sc, fx, fusion)?
            }
        };
    }
    Ok(x)
}

/// Convenience: forward a batch and return the mean cross-entropy loss node.
pub fn forward_loss<M: Model>(
    model: &mut M,
    tape: &mut Tape,
    images: Tensor,
    labels: &[usize],
    mode: Mode,
) -> Result<ValueId> {
    let x = tape.input(images);
    let logits = model.forward(tape, x, mode)?;
    let out_classes = *tape.value(logits).shape().last().unwrap_or(&0);
    if out_classes != model.num_classes() {
        return Err(Error::ShapeMismatch {
            op: "forward_loss",
            left: vec![out_classes],
            right: vec![model.num_classes()],
        });
    }
    tape.softmax_xent(logits, labels)
}
