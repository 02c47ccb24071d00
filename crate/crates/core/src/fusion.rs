//! Second-order response fusion of two branch outputs.
//!
//! The core operator family: given two same-shaped responses F₁ and F₂, the
//! fused output sums any non-empty subset of
//!
//! - a linear term `F₁ + F₂`,
//! - an elementwise max `max(F₁, F₂)`,
//! - a second-order product term `g[F₁ ⊙ F₂]`,
//!
//! where `g` is either the identity or `√(· + ε)`, optionally with a relu
//! gate on the product's inputs so signed data stays inside √'s domain. The
//! residual variant `x + F(x) + √(relu(x) ⊙ relu(F(x)) + ε)` is the same
//! operator with a fixed spec.
//!
//! All fused outputs are compositions of tape primitives, so gradients come
//! from the tape — including the cross-branch coupling where ∂out/∂F₁
//! carries a `1 + F₂` factor.

use std::fmt;

use crate::error::{Error, Result};
use crate::tape::{Tape, ValueId};

/// Default ε inside the residual fuse's sqrt wrapper.
pub const RESIDUAL_FUSE_EPS: f64 = 1e-4;

/// How the product term is wrapped: `g[p] = p` or `g[p] = √(p + ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProdWrapper {
    Identity,
    SqrtEps(f64),
}

/// Whether the product's inputs pass through relu first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProdInputGate {
    None,
    ReluBoth,
}

/// Which fusion terms are active and how the product term is formed.
///
/// The seven meaningful specs are the non-empty subsets of {sum, max, prod};
/// wrapper and gate refine the product term only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionSpec {
    pub use_sum: bool,
    pub use_max: bool,
    pub use_prod: bool,
    pub prod_wrapper: ProdWrapper,
    pub prod_input_gate: ProdInputGate,
    /// Hidden negative-control variant: the second-order term becomes F₁²
    /// instead of F₁⊙F₂, which kills cross-branch coupling. Never parsed,
    /// never emitted by builders; exists so tests can show the cross term is
    /// what carries the coupling.
    square_term: bool,
}

impl FusionSpec {
    pub fn new(
        use_sum: bool,
        use_max: bool,
        use_prod: bool,
        prod_wrapper: ProdWrapper,
        prod_input_gate: ProdInputGate,
    ) -> Self {
        Self {
            use_sum,
            use_max,
            use_prod,
            prod_wrapper,
            prod_input_gate,
            square_term: false,
        }
    }

    /// Plain linear fusion: `F₁ + F₂`.
    pub fn sum_only() -> Self {
        Self::new(true, false, false, ProdWrapper::Identity, ProdInputGate::None)
    }

    /// Elementwise max fusion (maxout-style).
    pub fn max_only() -> Self {
        Self::new(false, true, false, ProdWrapper::Identity, ProdInputGate::None)
    }

    /// The second-order fusion used in branched chain networks:
    /// `F₁ + F₂ + F₁⊙F₂` with identity wrapper (branch outputs are already
    /// relu-gated, so no gate is needed).
    pub fn sort_branched() -> Self {
        Self::new(true, false, true, ProdWrapper::Identity, ProdInputGate::None)
    }

    /// The residual-network merge: `x + F + √(relu(x)⊙relu(F) + ε)`.
    pub fn residual_sort(eps: f64) -> Self {
        Self::new(
            true,
            false,
            true,
            ProdWrapper::SqrtEps(eps),
            ProdInputGate::ReluBoth,
        )
    }

    /// Hidden ninth spec for the negative-control test; see `square_term`.
    #[doc(hidden)]
    pub fn square_negative_control() -> Self {
        Self {
            square_term: true,
            ..Self::new(true, false, true, ProdWrapper::Identity, ProdInputGate::None)
        }
    }

    /// The 7 ablation rows — every non-empty subset of {sum, max, prod} in
    /// table order — sharing one wrapper/gate configuration.
    pub fn ablation_rows(wrapper: ProdWrapper, gate: ProdInputGate) -> Vec<FusionSpec> {
        let rows = [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ];
        rows.iter()
            .map(|&(s, m, p)| FusionSpec::new(s, m, p, wrapper, gate))
            .collect()
    }

    /// Errors unless at least one term is active and the wrapper's ε is positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.use_sum || self.use_max || self.use_prod) {
            return Err(Error::EmptySpec);
        }
        if let ProdWrapper::SqrtEps(eps) = self.prod_wrapper {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "fusion sqrt wrapper needs eps > 0, got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// Short row label: just the active terms, e.g. `sum+prod`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_sum {
            parts.push("sum");
        }
        if self.use_max {
            parts.push("max");
        }
        if self.use_prod {
            parts.push(if self.square_term { "square" } else { "prod" });
        }
        parts.join("+")
    }

    /// Parses the canonical form `terms[,wrapper=identity|sqrt:EPS][,gate=none|relu]`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut use_sum = false;
        let mut use_max = false;
        let mut use_prod = false;
        let mut wrapper = ProdWrapper::Identity;
        let mut gate = ProdInputGate::None;
        let mut fields = s.split(',');
        let terms = fields
            .next()
            .ok_or_else(|| Error::Config(format!("empty fusion spec `{s}`")))?;
        for term in terms.split('+') {
            match term.trim() {
                "sum" => use_sum = true,
                "max" => use_max = true,
                "prod" => use_prod = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown fusion term `{other}` in `{s}` (expected sum/max/prod)"
                    )))
                }
            }
        }
        for field in fields {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad fusion field `{field}` in `{s}`")))?;
            match key.trim() {
                "wrapper" => {
                    wrapper = match val.trim() {
                        "identity" => ProdWrapper::Identity,
                        v => {
                            let eps = v
                                .strip_prefix("sqrt:")
                                .and_then(|e| e.parse::<f64>().ok())
                                .ok_or_else(|| {
                                    Error::Config(format!(
                                        "bad wrapper `{v}` (expected identity or sqrt:EPS)"
                                    ))
                                })?;
                            ProdWrapper::SqrtEps(eps)
                        }
                    }
                }
                "gate" => {
                    gate = match val.trim() {
                        "none" => ProdInputGate::None,
                        "relu" => ProdInputGate::ReluBoth,
                        v => {
                            return Err(Error::Config(format!(
                                "bad gate `{v}` (expected none or relu)"
                            )))
                        }
                    }
                }
                other => return Err(Error::Config(format!("unknown fusion field `{other}`"))),
            }
        }
        let spec = FusionSpec::new(use_sum, use_max, use_prod, wrapper, gate);
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for FusionSpec {
    /// Canonical round-trippable form, e.g. `sum+prod,wrapper=sqrt:0.0001,gate=relu`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())?;
        match self.prod_wrapper {
            ProdWrapper::Identity => write!(f, ",wrapper=identity")?,
            ProdWrapper::SqrtEps(eps) => write!(f, ",wrapper=sqrt:{eps}")?,
        }
        match self.prod_input_gate {
            ProdInputGate::None => write!(f, ",gate=none"),
            ProdInputGate::ReluBoth => write!(f, ",gate=relu"),
        }
    }
}

/// Parameters of the residual fuse; ε defaults to [`RESIDUAL_FUSE_EPS`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualFuseParams {
    pub eps: f64,
}

impl Default for ResidualFuseParams {
    fn default() -> Self {
        Self {
            eps: RESIDUAL_FUSE_EPS,
        }
    }
}

/// Fuses two branch responses on the tape according to `spec`.
///
/// The output is the sum of the active terms; gradients flow through every
/// term, so with spec {sum, prod, identity} the gradient into `f1` is
/// `upstream ⊙ (1 + f2)` — the cross-branch coupling.
pub fn sort_fuse(tape: &mut Tape, f1: ValueId, f2: ValueId, spec: &FusionSpec) -> Result<ValueId> {
    spec.validate()?;
    let (s1, s2) = (tape.value(f1).shape(), tape.value(f2).shape());
    if s1 != s2 {
        return Err(Error::ShapeMismatch {
            op: "sort_fuse",
            left: s1.to_vec(),
            right: s2.to_vec(),
        });
    }
    // The sqrt wrapper without a gate only makes sense on non-negative data;
    // reject signed inputs up front rather than surfacing a confusing error
    // from inside the product.
    if spec.use_prod
        && !spec.square_term
        && matches!(spec.prod_wrapper, ProdWrapper::SqrtEps(_))
        && spec.prod_input_gate == ProdInputGate::None
    {
        for side in [f1, f2] {
            if let Some((index, &value)) = tape
                .value(side)
                .data()
                .iter()
                .enumerate()
                .find(|(_, v)| **v < 0.0)
            {
                return Err(Error::NegativeInput {
                    op: "sort_fuse",
                    index,
                    value,
                });
            }
        }
    }

    let mut terms: Vec<ValueId> = Vec::with_capacity(3);
    if spec.use_sum {
        terms.push(tape.ew_add(f1, f2)?);
    }
    if spec.use_max {
        terms.push(tape.ew_max(f1, f2)?);
    }
    if spec.use_prod {
        let (a, b) = match spec.prod_input_gate {
            ProdInputGate::None => (f1, f2),
            ProdInputGate::ReluBoth => (tape.relu(f1), tape.relu(f2)),
        };
        let raw = if spec.square_term {
            tape.square(a)
        } else {
            tape.ew_mul(a, b)?
        };
        let wrapped = match spec.prod_wrapper {
            ProdWrapper::Identity => raw,
            ProdWrapper::SqrtEps(eps) => tape.ew_sqrt_shift(raw, eps)?,
        };
        terms.push(wrapped);
    }
    let mut out = terms[0];
    for t in &terms[1..] {
        out = tape.ew_add(out, *t)?;
    }
    Ok(out)
}

/// Residual merge `x + fx + √(relu(x) ⊙ relu(fx) + ε)`.
///
/// Inputs may be negative; the relu gate keeps the sqrt in-domain.
pub fn residual_sort_fuse(
    tape: &mut Tape,
    x: ValueId,
    fx: ValueId,
    p: &ResidualFuseParams,
) -> Result<ValueId> {
    sort_fuse(tape, x, fx, &FusionSpec::residual_sort(p.eps))
}

/// Scalar convenience wrapper around [`sort_fuse`] (used by grids and FFI).
pub fn fuse_scalars(f1: f64, f2: f64, spec: &FusionSpec) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.input(crate::Tensor::scalar(f1));
    let b = tape.input(crate::Tensor::scalar(f2));
    let out = sort_fuse(&mut tape, a, b, spec)?;
    Ok(tape.value(out).item())
}

/// Which response surface to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceKind {
    /// f₁(x,y) = x⁺ + y⁺ — first-order transform of gated inputs.
    FirstOrder,
    /// f₂(x,y) = x⁺ + y⁺ + x⁺·y⁺ — with the second-order product term.
    SecondOrder,
}

/// Scalar surface value; x⁺ = max(x,0).
pub fn surface_value(kind: SurfaceKind, x: f64, y: f64) -> f64 {
    let (xp, yp) = (x.max(0.0), y.max(0.0));
    match kind {
        SurfaceKind::FirstOrder => xp + yp,
        SurfaceKind::SecondOrder => xp + yp + xp * yp,
    }
}

/// Inclusive 2-D sampling grid.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::EmptyGrid {
                msg: format!("step must be positive and finite, got {step}"),
            });
        }
        if !(x1 >= x0) || !(y1 >= y0) || !x0.is_finite() || !y0.is_finite() {
            return Err(Error::EmptyGrid {
                msg: format!("degenerate bounds [{x0},{x1}]x[{y0},{y1}]"),
            });
        }
        Ok(Self { x0, x1, y0, y1, step })
    }

    /// Symmetric square grid around the origin, e.g. `[-2,2]²` at step 0.05.
    pub fn square(half_extent: f64, step: f64) -> Result<Self> {
        Self::new(-half_extent, half_extent, -half_extent, half_extent, step)
    }
}

/// Axis samples; when the origin lands on the lattice, coordinates are
/// computed as exact integer multiples of `step` so that 0 comes out as
/// exactly 0.0 (the closed-quadrant identities depend on it).
fn axis_points(a0: f64, a1: f64, step: f64) -> Vec<f64> {
    let n = ((a1 - a0) / step + 1e-9).floor() as usize + 1;
    let base = a0 / step;
    let snapped = base.round();
    if (base - snapped).abs() < 1e-9 {
        (0..n).map(|i| (snapped + i as f64) * step).collect()
    } else {
        (0..n).map(|i| a0 + i as f64 * step).collect()
    }
}

/// Samples a surface over the grid, row-major in x then y.
pub fn nonlinearity_surface(kind: SurfaceKind, grid: &GridSpec) -> Result<Vec<(f64, f64, f64)>> {
    GridSpec::new(grid.x0, grid.x1, grid.y0, grid.y1, grid.step)?;
    let xs = axis_points(grid.x0, grid.x1, grid.step);
    let ys = axis_points(grid.y0, grid.y1, grid.step);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyGrid {
            msg: "no grid points".into(),
        });
    }
    let mut rows = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            rows.push((x, y, surface_value(kind, x, y)));
        }
    }
    Ok(rows)
}

/// Formats to 6 significant digits (CSV convention for surface files).
pub fn fmt_sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Writes a sampled surface as CSV: header `x,y,value`, 6 significant digits.
pub fn write_surface_csv<W: std::io::Write>(rows: &[(f64, f64, f64)], w: &mut W) -> Result<()> {
    writeln!(w, "x,y,value")?;
    for (x, y, v) in rows {
        writeln!(w, "{},{},{}", fmt_sig6(*x), fmt_sig6(*y), fmt_sig6(*v))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::Tensor;

    fn fuse_vec(f1: &[f64], f2: &[f64], spec: &FusionSpec) -> Vec<f64> {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(f1.to_vec()));
        let b = tape.input(Tensor::from_vec(f2.to_vec()));
        let out = sort_fuse(&mut tape, a, b, spec).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn sum_prod_identity_matches_formula() {
        // F₁+F₂+F₁⊙F₂ on ([2,0],[3,5]) → [11,5].
        let out = fuse_vec(&[2.0, 0.0], &[3.0, 5.0], &FusionSpec::sort_branched());
        assert_eq!(out, vec![11.0, 5.0]);
    }

    #[test]
    fn balanced_split_maximizes_fused_response() {
        // (a,0) → a but (a/2,a/2) → a + a²/4; for a=4: 4 vs 8.
        let spec = FusionSpec::sort_branched();
        assert_eq!(fuse_scalars(4.0, 0.0, &spec).unwrap(), 4.0);
        assert_eq!(fuse_scalars(2.0, 2.0, &spec).unwrap(), 8.0);
    }

    #[test]
    fn degenerate_specs_reduce_to_primitives() {
        let f1 = [0.3, -1.25, 4.0, 0.0];
        let f2 = [2.5, -0.75, -4.0, 0.125];
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(f1.to_vec()));
        let b = tape.input(Tensor::from_vec(f2.to_vec()));
        let add = tape.ew_add(a, b).unwrap();
        let mx = tape.ew_max(a, b).unwrap();
        assert_eq!(
            fuse_vec(&f1, &f2, &FusionSpec::sum_only()),
            tape.value(add).data()
        );
        assert_eq!(
            fuse_vec(&f1, &f2, &FusionSpec::max_only()),
            tape.value(mx).data()
        );
    }

    #[test]
    fn cross_branch_gradient_carries_one_plus_f2() {
        // Upstream all-ones, f1=[2], f2=[3] → grad_f1 = [4], grad_f2 = [3].
        let mut tape = Tape::new();
        let f1 = tape.input(Tensor::from_vec(vec![2.0]));
        let f2 = tape.input(Tensor::from_vec(vec![3.0]));
        let out = sort_fuse(&mut tape, f1, f2, &FusionSpec::sort_branched()).unwrap();
        let l = tape.sum(out);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(f1).unwrap().data(), &[4.0]);
        assert_eq!(tape.grad(f2).unwrap().data(), &[3.0]);
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = FusionSpec::new(
            false,
            false,
            false,
            ProdWrapper::Identity,
            ProdInputGate::None,
        );
        let mut tape = Tape::new();
        let a = tape.input(Tensor::scalar(1.0));
        let b = tape.input(Tensor::scalar(2.0));
        assert!(matches!(
            sort_fuse(&mut tape, a, b, &spec),
            Err(Error::EmptySpec)
        ));
    }

    #[test]
    fn sqrt_without_gate_rejects_signed_data() {
        let spec = FusionSpec::new(
            false,
            false,
            true,
            ProdWrapper::SqrtEps(1e-4),
            ProdInputGate::None,
        );
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0, -2.0]));
        let b = tape.input(Tensor::from_vec(vec![1.0, -3.0]));
        // Both negative — the raw product would be positive, but the contract
        // rejects the inputs themselves.
        assert!(matches!(
            sort_fuse(&mut tape, a, b, &spec),
            Err(Error::NegativeInput { op: "sort_fuse", .. })
        ));
    }

    #[test]
    fn residual_fuse_matches_worked_examples() {
        let p = ResidualFuseParams::default();
        let case = |x: f64, fx: f64| {
            let mut tape = Tape::new();
            let a = tape.input(Tensor::scalar(x));
            let b = tape.input(Tensor::scalar(fx));
            let out = residual_sort_fuse(&mut tape, a, b, &p).unwrap();
            tape.value(out).item()
        };
        assert!((case(-1.0, 2.0) - 1.01).abs() < 1e-15); // −1+2+√(0+1e−4)
        assert!((case(0.0, 0.0) - 0.01).abs() < 1e-15);
        assert!((case(1.0, 4.0) - 7.000024999843752).abs() < 1e-12);
    }

    #[test]
    fn residual_fuse_gradient_at_worked_point() {
        // ∂out/∂x at (1,4): 1 + relu'(1)·relu(4)/(2√(4+ε)) = 1.9999875...
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(1.0));
        let fx = tape.input(Tensor::scalar(4.0));
        let out = residual_sort_fuse(&mut tape, x, fx, &ResidualFuseParams::default()).unwrap();
        tape.backward(out).unwrap();
        let gx = tape.grad(x).unwrap().item();
        let expect = 1.0 + 4.0 / (2.0 * 2.000024999843752);
        assert!((gx - expect).abs() < 1e-12);
    }

    #[test]
    fn square_control_has_no_cross_coupling() {
        let mut tape = Tape::new();
        let f1 = tape.input(Tensor::from_vec(vec![2.0]));
        let f2 = tape.input(Tensor::from_vec(vec![3.0]));
        let out = sort_fuse(&mut tape, f1, f2, &FusionSpec::square_negative_control()).unwrap();
        // sum term 5 + square term 4 → 9.
        assert_eq!(tape.value(out).data(), &[9.0]);
        let l = tape.sum(out);
        tape.backward(l).unwrap();
        // grad_f1 = 1 (sum) + 2·f1 (square) = 5; grad_f2 = 1 (sum only): the
        // second-order term no longer couples the branches.
        assert_eq!(tape.grad(f1).unwrap().data(), &[5.0]);
        assert_eq!(tape.grad(f2).unwrap().data(), &[1.0]);
    }

    #[test]
    fn surfaces_match_hand_values() {
        assert_eq!(surface_value(SurfaceKind::FirstOrder, 2.0, 3.0), 5.0);
        assert_eq!(surface_value(SurfaceKind::SecondOrder, 2.0, 3.0), 11.0);
        // Product term vanishes on the closed negative quadrants.
        for (x, y) in [(-1.0, 2.0), (0.0, 1.5), (2.0, -0.5), (1.0, 0.0), (-2.0, -2.0)] {
            assert_eq!(
                surface_value(SurfaceKind::FirstOrder, x, y),
                surface_value(SurfaceKind::SecondOrder, x, y)
            );
        }
    }

    #[test]
    fn surface_grid_hits_origin_exactly() {
        let grid = GridSpec::square(2.0, 0.05).unwrap();
        let rows = nonlinearity_surface(SurfaceKind::SecondOrder, &grid).unwrap();
        assert_eq!(rows.len(), 81 * 81);
        assert!(rows.iter().any(|(x, y, _)| *x == 0.0 && *y == 0.0));
        // Value at the top corner: f₂(2,2) = 8 (up to the grid's endpoint rounding).
        let (_, _, v) = rows
            .iter()
            .find(|(x, y, _)| (*x - 2.0).abs() < 1e-9 && (*y - 2.0).abs() < 1e-9)
            .unwrap();
        assert!((v - 8.0).abs() < 1e-9);
    }

    #[test]
    fn empty_grids_are_rejected() {
        assert!(matches!(
            GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.0),
            Err(Error::EmptyGrid { .. })
        ));
        assert!(matches!(
            GridSpec::new(1.0, 0.0, 0.0, 1.0, 0.1),
            Err(Error::EmptyGrid { .. })
        ));
    }

    #[test]
    fn spec_parse_display_round_trip() {
        for s in [
            "sum",
            "max",
            "prod",
            "sum+max",
            "sum+prod",
            "max+prod",
            "sum+max+prod",
            "sum+prod,wrapper=sqrt:0.0001,gate=relu",
            "prod,wrapper=sqrt:0.01",
            "sum+prod,gate=relu",
        ] {
            let spec = FusionSpec::parse(s).unwrap();
            let round = FusionSpec::parse(&spec.to_string()).unwrap();
            assert_eq!(spec, round, "round-trip failed for `{s}`");
        }
        assert!(FusionSpec::parse("").is_err());
        assert!(FusionSpec::parse("sum+banana").is_err());
        assert!(FusionSpec::parse("prod,wrapper=sqrt:-1").is_err());
    }

    #[test]
    fn ablation_rows_are_the_seven_subsets() {
        let rows = FusionSpec::ablation_rows(ProdWrapper::Identity, ProdInputGate::None);
        assert_eq!(rows.len(), 7);
        let labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
        assert_eq!(
            labels,
            vec![
                "sum",
                "max",
                "prod",
                "sum+max",
                "sum+prod",
                "max+prod",
                "sum+max+prod"
            ]
        );
    }
}
