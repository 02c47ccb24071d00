//! Declarative network construction.
//!
//! A [`NetworkSpec`] is an ordered list of [`LayerSpec`]s plus a class count.
//! The interesting transform is [`branch_transform`]: a k×k conv becomes a
//! two-branch block where each branch cascades two ⌊(k+1)/2⌋ convs
//! (conv→relu→conv→relu), and the branches are fused second-order. Kernel
//! shrinking keeps the receptive field unchanged — verified by the
//! [`receptive_field`] table — and padding is split across the cascade so the
//! output resolution matches the original conv exactly.
//!
//! Builders produce the desk-scale architectures used throughout: a small
//! LeNet-style chain network, its branched variants, residual networks of
//! depth 6n+2 with optional widening, a VGG-style 3×3 stack, and a plain MLP.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::FusionSpec;

/// One layer of a network description.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    Fc {
        d_in: usize,
        d_out: usize,
    },
    BatchNorm {
        c: usize,
    },
    GlobalAvgPool,
    Flatten,
    /// Two symmetric branches of two shrunken convs each, second-order fused.
    BranchBlock {
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        pad: usize,
        with_bn: bool,
        fusion: FusionSpec,
    },
    /// Residual unit: conv-bn-relu-conv-bn body, optional 1×1 projection
    /// shortcut, shortcut and body fused (no re-activation after the merge).
    ResidualBlock {
        c_in: usize,
        c_out: usize,
        stride: usize,
        fusion: FusionSpec,
    },
}

/// A named, ordered architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

/// Kernel shrink for branch cascades: k → ⌊(k+1)/2⌋; k must be odd.
pub fn shrink_kernel(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::EvenKernel(k));
    }
    Ok((k + 1) / 2)
}

/// Derived geometry of a branch cascade replacing a k×k pad-p conv:
/// shrunken kernel k' and the pads (p1, p2) of the two cascaded convs,
/// chosen so the output extent equals the original conv's.
pub(crate) fn branch_geometry(k: usize, pad: usize) -> Result<(usize, usize, usize)> {
    let ks = shrink_kernel(k)?;
    // Original output extent: h + 2p − (k−1). Cascade of two k' convs with
    // total pad P: h + 2P − 2(k'−1). Equal ⇔ P = p + (k'−1) − (k−1)/2.
    let need = pad as isize + (ks as isize - 1) - (k as isize - 1) / 2;
    if need < 0 {
        return Err(Error::InvalidGeometry {
            op: "branch_transform",
            msg: format!("k={k} pad={pad} leaves no valid padding split for the cascade"),
        });
    }
    let total = need as usize;
    Ok((ks, total.div_ceil(2), total / 2))
}

/// Rewrites a conv layer as a two-branch block with shrunken kernels.
///
/// The conv must have stride 1 (the cascade has no stride slot that keeps
/// both RF and shape) and odd k ≥ 3. `fusion` picks the block's merge;
/// `with_bn` inserts batchnorm after each branch conv.
pub fn branch_transform(
    conv: &LayerSpec,
    fusion: FusionSpec,
    with_bn: bool,
) -> Result<LayerSpec> {
    let (k, c_in, c_out, stride, pad) = match *conv {
        LayerSpec::Conv {
            k,
            c_in,
            c_out,
            stride,
            pad,
        } => (k, c_in, c_out, stride, pad),
        ref other => {
            return Err(Error::InvalidArgument(format!(
                "branch_transform expects a conv layer, got {other:?}"
            )))
        }
    };
    if k % 2 == 0 {
        return Err(Error::EvenKernel(k));
    }
    if k < 3 {
        return Err(Error::InvalidArgument(
            "branch_transform needs k >= 3 (a 1x1 conv has nothing to shrink)".into(),
        ));
    }
    if stride != 1 {
        return Err(Error::InvalidGeometry {
            op: "branch_transform",
            msg: format!("only stride-1 convs can be branched, got stride {stride}"),
        });
    }
    branch_geometry(k, pad)?;
    Ok(LayerSpec::BranchBlock {
        k,
        c_in,
        c_out,
        stride,
        pad,
        with_bn,
        fusion,
    })
}

/// Output extent of a k-window sliding over `h` with stride and pad
/// (floor division); `None` when the window does not fit at all.
fn out_extent(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    crate::linalg::conv_out_extent(h, k, stride, pad)
}

/// One row of the receptive-field table.
#[derive(Clone, Debug, PartialEq)]
pub struct RfEntry {
    pub label: String,
    /// Input extent influencing one output neuron after this layer.
    pub rf: usize,
    /// Stride product up to this layer.
    pub jump: usize,
}

/// Receptive-field table via the recurrence rf' = rf + (k−1)·jump,
/// jump' = jump·stride; fc and global pooling leave the entries unchanged
/// (their receptive field is the whole input).
pub fn receptive_field(net: &NetworkSpec) -> Vec<RfEntry> {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut table = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let label = match layer {
            LayerSpec::Conv { k, stride, .. } => {
                rf += (k - 1) * jump;
                jump *= stride;
                format!("conv{i} k{k}")
            }
            LayerSpec::MaxPool { k, stride } => {
                rf += (k - 1) * jump;
                jump *= stride;
                format!("pool{i} k{k}")
            }
            LayerSpec::BranchBlock { k, pad, .. } => {
                let (ks, _, _) = branch_geometry(*k, *pad).expect("validated spec");
                rf += 2 * (ks - 1) * jump;
                format!("branch{i} k{ks}x2")
            }
            LayerSpec::ResidualBlock { stride, .. } => {
                // Body path: 3×3 stride-s conv then 3×3 stride-1 conv; the
                // shortcut's RF is smaller, so the body dominates.
                rf += 2 * jump;
                jump *= stride;
                rf += 2 * jump;
                format!("resblock{i}")
            }
            LayerSpec::Relu => format!("relu{i}"),
            LayerSpec::BatchNorm { .. } => format!("batchnorm{i}"),
            LayerSpec::Fc { .. } => format!("fc{i}"),
            LayerSpec::GlobalAvgPool => format!("gap{i}"),
            LayerSpec::Flatten => format!("flatten{i}"),
        };
        table.push(RfEntry { label, rf, jump });
    }
    table
}

impl NetworkSpec {
    /// Chains shapes through every layer for a batchless input (`[C,H,W]` or
    /// `[D]`), returning each layer's output shape. Errors on any mismatch.
    pub fn validate(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shape = input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer_out_shape(layer, &shape)?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .validate(input)?
            .last()
            .cloned()
            .unwrap_or_else(|| input.to_vec()))
    }

    /// Analytic learnable-parameter count (weights + biases + bn affine).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(layer_param_count).sum()
    }

    /// Plain-text config serialization; [`NetworkSpec::from_text`] inverts it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "classes {}", self.num_classes);
        for layer in &self.layers {
            let _ = match layer {
                LayerSpec::Conv {
                    k,
                    c_in,
                    c_out,
                    stride,
                    pad,
                } => writeln!(s, "layer conv k={k} in={c_in} out={c_out} stride={stride} pad={pad}"),
                LayerSpec::Relu => writeln!(s, "layer relu"),
                LayerSpec::MaxPool { k, stride } => {
                    writeln!(s, "layer maxpool k={k} stride={stride}")
                }
                LayerSpec::Fc { d_in, d_out } => writeln!(s, "layer fc in={d_in} out={d_out}"),
                LayerSpec::BatchNorm { c } => writeln!(s, "layer batchnorm c={c}"),
                LayerSpec::GlobalAvgPool => writeln!(s, "layer gap"),
                LayerSpec::Flatten => writeln!(s, "layer flatten"),
                LayerSpec::BranchBlock {
                    k,
                    c_in,
                    c_out,
                    stride,
                    pad,
                    with_bn,
                    fusion,
                } => writeln!(
                    s,
                    "layer branch_block k={k} in={c_in} out={c_out} stride={stride} pad={pad} bn={with_bn} fusion={fusion}"
                ),
                LayerSpec::ResidualBlock {
                    c_in,
                    c_out,
                    stride,
                    fusion,
                } => writeln!(
                    s,
                    "layer residual_block in={c_in} out={c_out} stride={stride} fusion={fusion}"
                ),
            };
        }
        s
    }

    /// Parses the config format emitted by [`NetworkSpec::to_text`].
    /// Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<NetworkSpec> {
        let mut name = String::new();
        let mut num_classes = 0usize;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap();
            let bad = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            match head {
                "name" => {
                    name = tokens.collect::<Vec<_>>().join(" ");
                    if name.is_empty() {
                        return Err(bad("name needs a value".into()));
                    }
                }
                "classes" => {
                    let v = tokens
                        .next()
                        .ok_or_else(|| bad("classes needs a value".into()))?;
                    num_classes = v
                        .parse()
                        .map_err(|_| bad(format!("bad class count `{v}`")))?;
                }
                "layer" => {
                    let kind = tokens
                        .next()
                        .ok_or_else(|| bad("layer needs a kind".into()))?;
                    let mut kv = std::collections::HashMap::new();
                    for tok in tokens {
                        let (k, v) = tok
                            .split_once('=')
                            .ok_or_else(|| bad(format!("expected key=value, got `{tok}`")))?;
                        kv.insert(k.to_string(), v.to_string());
                    }
                    let get_usize = |key: &str| -> Result<usize> {
                        kv.get(key)
                            .ok_or_else(|| bad(format!("layer {kind} missing `{key}`")))?
                            .parse()
                            .map_err(|_| bad(format!("bad value for `{key}`")))
                    };
                    let layer = match kind {
                        "conv" => LayerSpec::Conv {
                            k: get_usize("k")?,
                            c_in: get_usize("in")?,
                            c_out: get_usize("out")?,
                            stride: get_usize("stride")?,
                            pad: get_usize("pad")?,
                        },
                        "relu" => LayerSpec::Relu,
                        "maxpool" => LayerSpec::MaxPool {
                            k: get_usize("k")?,
                            stride: get_usize("stride")?,
                        },
                        "fc" => LayerSpec::Fc {
                            d_in: get_usize("in")?,
                            d_out: get_usize("out")?,
                        },
                        "batchnorm" => LayerSpec::BatchNorm { c: get_usize("c")? },
                        "gap" => LayerSpec::GlobalAvgPool,
                        "flatten" => LayerSpec::Flatten,
                        "branch_block" => LayerSpec::BranchBlock {
                            k: get_usize("k")?,
                            c_in: get_usize("in")?,
                            c_out: get_usize("out")?,
                            stride: get_usize("stride")?,
                            pad: get_usize("pad")?,
                            with_bn: match kv.get("bn").map(String::as_str) {
                                Some("true") => true,
                                Some("false") | None => false,
                                Some(v) => return Err(bad(format!("bad bn flag `{v}`"))),
                            },
                            fusion: FusionSpec::parse(
                                kv.get("fusion")
                                    .ok_or_else(|| bad("branch_block missing `fusion`".into()))?,
                            )?,
                        },
                        "residual_block" => LayerSpec::ResidualBlock {
                            c_in: get_usize("in")?,
                            c_out: get_usize("out")?,
                            stride: get_usize("stride")?,
                            fusion: FusionSpec::parse(
                                kv.get("fusion")
                                    .ok_or_else(|| bad("residual_block missing `fusion`".into()))?,
                            )?,
                        },
                        other => return Err(bad(format!("unknown layer kind `{other}`"))),
                    };
                    layers.push(layer);
                }
                other => return Err(bad(format!("unknown directive `{other}`"))),
            }
        }
        if layers.is_empty() {
            return Err(Error::Config("config declares no layers".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("config must set `classes`".into()));
        }
        if name.is_empty() {
            name = "custom".into();
        }
        Ok(NetworkSpec {
            name,
            layers,
            num_classes,
        })
    }
}

/// Shape chaining for one layer; shapes are batchless (`[C,H,W]` or `[D]`).
fn layer_out_shape(layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>> {
    let want_chw = |op: &'static str| -> Result<(usize, usize, usize)> {
        match shape {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::ShapeMismatch {
                op,
                left: other.to_vec(),
                right: vec![0, 0, 0],
            }),
        }
    };
    match layer {
        LayerSpec::Conv {
            k,
            c_in,
            c_out,
            stride,
            pad,
        } => {
            let (c, h, w) = want_chw("conv")?;
            if c != *c_in {
                return Err(Error::ShapeMismatch {
                    op: "conv",
                    left: vec![c],
                    right: vec![*c_in],
                });
            }
            let oh = out_extent(h, *k, *stride, *pad);
            let ow = out_extent(w, *k, *stride, *pad);
            match (oh, ow) {
                (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(vec![*c_out, oh, ow]),
                _ => Err(Error::InvalidGeometry {
                    op: "conv",
                    msg: format!("k={k} stride={stride} pad={pad} on {h}x{w} yields no output"),
                }),
            }
        }
        LayerSpec::Relu => Ok(shape.to_vec()),
        LayerSpec::MaxPool { k, stride } => {
            let (c, h, w) = want_chw("maxpool")?;
            match (out_extent(h, *k, *stride, 0), out_extent(w, *k, *stride, 0)) {
                (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(vec![c, oh, ow]),
                _ => Err(Error::InvalidGeometry {
                    op: "maxpool",
                    msg: format!("k={k} stride={stride} on {h}x{w} yields no output"),
                }),
            }
        }
        LayerSpec::Fc { d_in, d_out } => match shape {
            [d] if d == d_in => Ok(vec![*d_out]),
            other => Err(Error::ShapeMismatch {
                op: "fc",
                left: other.to_vec(),
                right: vec![*d_in],
            }),
        },
        LayerSpec::BatchNorm { c } => {
            let first = shape.first().copied().unwrap_or(0);
            if first != *c {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    left: shape.to_vec(),
                    right: vec![*c],
                });
            }
            Ok(shape.to_vec())
        }
        LayerSpec::GlobalAvgPool => {
            let (c, _, _) = want_chw("global_avg_pool")?;
            Ok(vec![c])
        }
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
        LayerSpec::BranchBlock {
            k,
            c_in,
            c_out,
            pad,
            ..
        } => {
            let (c, h, w) = want_chw("branch_block")?;
            if c != *c_in {
                return Err(Error::ShapeMismatch {
                    op: "branch_block",
                    left: vec![c],
                    right: vec![*c_in],
                });
            }
            let (ks, p1, p2) = branch_geometry(*k, *pad)?;
            let step = |h: usize, p: usize| out_extent(h, ks, 1, p);
            match (
                step(h, p1).and_then(|h1| step(h1, p2)),
                step(w, p1).and_then(|w1| step(w1, p2)),
            ) {
                (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(vec![*c_out, oh, ow]),
                _ => Err(Error::InvalidGeometry {
                    op: "branch_block",
                    msg: format!("k={k} pad={pad} on {h}x{w} yields no output"),
                }),
            }
        }
        LayerSpec::ResidualBlock {
            c_in,
            c_out,
            stride,
            ..
        } => {
            let (c, h, w) = want_chw("residual_block")?;
            if c != *c_in {
                return Err(Error::ShapeMismatch {
                    op: "residual_block",
                    left: vec![c],
                    right: vec![*c_in],
                });
            }
            // Body: 3×3 pad-1 stride-s conv, then 3×3 pad-1 stride-1; the 1×1
            // stride-s projection lands on the same extent by construction.
            match (out_extent(h, 3, *stride, 1), out_extent(w, 3, *stride, 1)) {
                (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(vec![*c_out, oh, ow]),
                _ => Err(Error::InvalidGeometry {
                    op: "residual_block",
                    msg: format!("stride {stride} on {h}x{w} yields no output"),
                }),
            }
        }
    }
}

fn layer_param_count(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv {
            k, c_in, c_out, ..
        } => k * k * c_in * c_out + c_out,
        LayerSpec::Fc { d_in, d_out } => d_in * d_out + d_out,
        LayerSpec::BatchNorm { c } => 2 * c,
        LayerSpec::BranchBlock {
            k,
            c_in,
            c_out,
            with_bn,
            ..
        } => {
            let ks = shrink_kernel(*k).expect("validated spec");
            let convs = ks * ks * c_in * c_out + c_out + ks * ks * c_out * c_out + c_out;
            let bn = if *with_bn { 2 * 2 * c_out } else { 0 };
            2 * (convs + bn)
        }
        LayerSpec::ResidualBlock {
            c_in,
            c_out,
            stride,
            ..
        } => {
            let body = 9 * c_in * c_out + c_out + 2 * c_out // conv1 + bn1
                + 9 * c_out * c_out + c_out + 2 * c_out; // conv2 + bn2
            let proj = if c_in != c_out || *stride != 1 {
                c_in * c_out + c_out + 2 * c_out
            } else {
                0
            };
            body + proj
        }
        LayerSpec::Relu
        | LayerSpec::MaxPool { .. }
        | LayerSpec::GlobalAvgPool
        | LayerSpec::Flatten => 0,
    }
}

/// Fusion used by branched chain networks when the product term is on.
fn chain_fusion(sort: bool) -> FusionSpec {
    if sort {
        FusionSpec::sort_branched()
    } else {
        FusionSpec::sum_only()
    }
}

/// Small chain CNN for 3×32×32 inputs: three k=5 pad-2 conv stages (each
/// followed by a 3×3 stride-2 max pool), then two fully-connected layers.
/// `star` replaces every conv with a two-branch block; `sort` toggles the
/// product term in each block's fusion.
pub fn build_lenet(star: bool, sort: bool) -> NetworkSpec {
    let widths = [(3usize, 32usize), (32, 32), (32, 64)];
    let mut layers = Vec::new();
    for (c_in, c_out) in widths {
        let conv = LayerSpec::Conv {
            k: 5,
            c_in,
            c_out,
            stride: 1,
            pad: 2,
        };
        if star {
            layers.push(
                branch_transform(&conv, chain_fusion(sort), false).expect("k=5 stride-1 conv"),
            );
        } else {
            layers.push(conv);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::MaxPool { k: 3, stride: 2 });
    }
    // 32 → 15 → 7 → 3 under 3×3 stride-2 pooling, so the flat width is 64·3·3.
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Fc {
        d_in: 64 * 3 * 3,
        d_out: 64,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Fc {
        d_in: 64,
        d_out: 10,
    });
    let name = match (star, sort) {
        (false, _) => "lenet".to_string(),
        (true, false) => "lenet_star_sum".to_string(),
        (true, true) => "lenet_star_sort".to_string(),
    };
    NetworkSpec {
        name,
        layers,
        num_classes: 10,
    }
}

/// Residual network of depth 6n+2 for 3×32×32 inputs: a 3×3 stem into three
/// stages of n residual blocks at widths 16w/32w/64w (stride-2 entry into
/// stages 2 and 3), global average pooling, and a linear classifier.
/// `sort=true` merges each block with the gated-sqrt second-order fuse;
/// `sort=false` uses the plain sum.
pub fn build_resnet(n_blocks_per_stage: usize, width: usize, sort: bool) -> Result<NetworkSpec> {
    let fusion = if sort {
        FusionSpec::residual_sort(crate::fusion::RESIDUAL_FUSE_EPS)
    } else {
        FusionSpec::sum_only()
    };
    build_resnet_fused(n_blocks_per_stage, width, fusion, sort)
}

/// Residual network with an explicit per-block fusion (ablation rows).
pub fn build_resnet_fused(
    n_blocks_per_stage: usize,
    width: usize,
    fusion: FusionSpec,
    sort_name: bool,
) -> Result<NetworkSpec> {
    if n_blocks_per_stage < 1 {
        return Err(Error::InvalidArgument(
            "residual nets need at least one block per stage".into(),
        ));
    }
    if width < 1 {
        return Err(Error::InvalidArgument("width multiplier must be >= 1".into()));
    }
    fusion.validate()?;
    let mut layers = vec![
        LayerSpec::Conv {
            k: 3,
            c_in: 3,
            c_out: 16 * width,
            stride: 1,
            pad: 1,
        },
        LayerSpec::BatchNorm { c: 16 * width },
        LayerSpec::Relu,
    ];
    let mut c_prev = 16 * width;
    for (stage, base) in [16usize, 32, 64].into_iter().enumerate() {
        let c_out = base * width;
        for block in 0..n_blocks_per_stage {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            layers.push(LayerSpec::ResidualBlock {
                c_in: c_prev,
                c_out,
                stride,
                fusion,
            });
            c_prev = c_out;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Fc {
        d_in: 64 * width,
        d_out: 10,
    });
    let depth = 6 * n_blocks_per_stage + 2;
    let mut name = format!("resnet{depth}");
    if width > 1 {
        let _ = write!(name, "_w{width}");
    }
    if sort_name {
        name.push_str("_sort");
    }
    Ok(NetworkSpec {
        name,
        layers,
        num_classes: 10,
    })
}

/// VGG-style 3×3 stack for 3×32×32 inputs: `depth` convs split across three
/// pooled groups at widths 32/64/128, then three fully-connected layers. A
/// configurable stand-in for larger chain networks; `star`/`sort` branch the
/// convs exactly as in [`build_lenet`].
pub fn build_vggish(depth: usize, star: bool, sort: bool) -> Result<NetworkSpec> {
    if depth < 3 {
        return Err(Error::InvalidArgument(
            "vggish needs at least 3 convs (one per group)".into(),
        ));
    }
    let per = depth / 3;
    let groups = [per, per, depth - 2 * per];
    let widths = [32usize, 64, 128];
    let mut layers = Vec::new();
    let mut c_prev = 3usize;
    for (g, &count) in groups.iter().enumerate() {
        for _ in 0..count {
            let conv = LayerSpec::Conv {
                k: 3,
                c_in: c_prev,
                c_out: widths[g],
                stride: 1,
                pad: 1,
            };
            if star {
                layers.push(
                    branch_transform(&conv, chain_fusion(sort), false)
                        .expect("k=3 stride-1 conv"),
                );
            } else {
                layers.push(conv);
                layers.push(LayerSpec::Relu);
            }
            c_prev = widths[g];
        }
        layers.push(LayerSpec::MaxPool { k: 3, stride: 2 });
    }
    // 32 → 15 → 7 → 3 spatially, mirroring the pooled chain above.
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Fc {
        d_in: 128 * 3 * 3,
        d_out: 128,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Fc {
        d_in: 128,
        d_out: 128,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Fc {
        d_in: 128,
        d_out: 10,
    });
    let name = match (star, sort) {
        (false, _) => format!("vggish{depth}"),
        (true, false) => format!("vggish{depth}_star_sum"),
        (true, true) => format!("vggish{depth}_star_sort"),
    };
    Ok(NetworkSpec {
        name,
        layers,
        num_classes: 10,
    })
}

/// Plain MLP: fc/relu chain through `hidden`, linear head to `classes`.
pub fn build_mlp(d_in: usize, hidden: &[usize], classes: usize) -> Result<NetworkSpec> {
    if d_in == 0 || classes == 0 || hidden.contains(&0) {
        return Err(Error::InvalidArgument("mlp dims must be positive".into()));
    }
    // Leading flatten makes the net shape-agnostic: image input collapses to
    // d_in features, already-flat input passes through unchanged.
    let mut layers = vec![LayerSpec::Flatten];
    let mut prev = d_in;
    for &h in hidden {
        layers.push(LayerSpec::Fc {
            d_in: prev,
            d_out: h,
        });
        layers.push(LayerSpec::Relu);
        prev = h;
    }
    layers.push(LayerSpec::Fc {
        d_in: prev,
        d_out: classes,
    });
    Ok(NetworkSpec {
        name: "mlp".into(),
        layers,
        num_classes: classes,
    })
}
