//! Acceptance gate: ten numbered criteria, one verdict line each.
//!
//! Runs as a harness-free test binary (`cargo test --test acceptance`).
//! Every tolerance and budget is pinned as a named constant below. Criteria
//! whose substantive assertions need the real image dataset print `SKIP`
//! with instructions when it is absent (their always-runnable legs still
//! execute); any `FAIL` makes the process exit nonzero.

mod common;

use std::time::Instant;

use rand::Rng;

use sortnet::bench::{run_bench, BenchBlock, BenchConfig};
use sortnet::data;
use sortnet::experiment::{run_train, DataChoice, ExperimentConfig, NetChoice};
use sortnet::fusion::{
    fuse_scalars, nonlinearity_surface, sort_fuse, write_surface_csv, FusionSpec, GridSpec,
    ProdInputGate, ProdWrapper, SurfaceKind,
};
use sortnet::gradcheck::{run_scope, CheckScope};
use sortnet::netbuild::{
    branch_transform, build_lenet, build_resnet, build_vggish, receptive_field, LayerSpec,
    NetworkSpec,
};
use sortnet::network::Network;
use sortnet::tape::Tape;
use sortnet::train::{resnet_schedule, scale_sections, train, Section, TrainConfig};
use sortnet::Tensor;

// ---- pinned tolerances and budgets --------------------------------------

/// Central-difference step for the gradient audit.
const GRAD_H: f64 = 1e-5;
/// Max relative error accepted by the gradient audit.
const GRAD_TOL: f64 = 1e-5;
/// Random instances per audited op (and full-net draws).
const GRAD_INSTANCES: usize = 100;
/// Wall budget for the whole gradient audit.
const GRAD_BUDGET_S: f64 = 120.0;
/// Random tensors for the cross-branch gradient law.
const LAW_TENSORS: usize = 1000;
/// Relative tolerance for the law; a few hundred double ulps covers the
/// one-reassociation difference between `u + u*f2` and `u*(1 + f2)`.
const LAW_TOL: f64 = 1e-13;
/// Median fused/baseline wall-time ratio bound for the overhead benchmark.
const BENCH_RATIO_MAX: f64 = 1.10;
/// Timed repetitions per benchmark side (median of these).
const BENCH_REPS: usize = 3;
/// Kernel sizes whose branch rewrite must preserve RF and shape.
const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];
/// Per-class counts of the full real dataset: train split, test split.
const FULL_SET_PER_CLASS: (usize, usize) = (5000, 1000);

enum Verdict {
    Pass(String),
    Skip(String),
}

type Crit = std::result::Result<Verdict, String>;

fn lib_err(e: sortnet::Error) -> String {
    format!("library error: {e}")
}

// ---- criterion 1: gradient audit -----------------------------------------

fn c1_gradient_audit() -> Crit {
    let t0 = Instant::now();
    let mut reports =
        run_scope(CheckScope::AllOps, GRAD_INSTANCES, GRAD_H, GRAD_TOL, 7).map_err(lib_err)?;
    reports
        .extend(run_scope(CheckScope::FullNet, GRAD_INSTANCES, GRAD_H, GRAD_TOL, 7).map_err(lib_err)?);
    let elapsed = t0.elapsed().as_secs_f64();

    for r in &reports {
        if !r.passed() {
            return Err(format!(
                "{}: max rel err {:.3e} > tol {:.1e} (worst at {})",
                r.name, r.max_rel_err, r.tol, r.worst_param
            ));
        }
        if r.instances < GRAD_INSTANCES {
            return Err(format!(
                "{}: only {} instances ran (need >= {GRAD_INSTANCES})",
                r.name, r.instances
            ));
        }
    }
    if elapsed >= GRAD_BUDGET_S {
        return Err(format!(
            "audit took {elapsed:.1}s, budget is {GRAD_BUDGET_S}s"
        ));
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("at least one report");
    Ok(Verdict::Pass(format!(
        "{} scenarios x {} instances, worst rel err {:.3e} ({}), h={GRAD_H:.0e} tol={GRAD_TOL:.0e}, {elapsed:.1}s",
        reports.len(),
        GRAD_INSTANCES,
        worst.max_rel_err,
        worst.name,
    )))
}

// ---- criterion 2: cross-branch gradient law -------------------------------

fn c2_cross_branch_law() -> Crit {
    let spec = FusionSpec::sort_branched(); // {sum, prod}, identity wrapper
    let mut rng = common::rng(0xB1A5);
    let mut worst = 0.0f64;
    for i in 0..LAW_TENSORS {
        let n = 4 + (i % 61);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let (f1v, f2v, uv) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));

        let mut tape = Tape::new();
        let f1 = tape.input(Tensor::new(vec![n], f1v.clone()).expect("shape"));
        let f2 = tape.input(Tensor::new(vec![n], f2v.clone()).expect("shape"));
        let u = tape.input(Tensor::new(vec![n], uv.clone()).expect("shape"));
        let fused = sort_fuse(&mut tape, f1, f2, &spec).map_err(lib_err)?;
        let weighted = tape.ew_mul(u, fused).map_err(lib_err)?;
        let loss = tape.sum(weighted);
        tape.backward(loss).map_err(lib_err)?;

        let got = tape
            .grad(f1)
            .ok_or_else(|| "no gradient reached the first branch".to_string())?
            .data();
        for j in 0..n {
            let want = uv[j] * (1.0 + f2v[j]);
            let rel = (got[j] - want).abs() / want.abs().max(1.0);
            worst = worst.max(rel);
            if rel > LAW_TOL {
                return Err(format!(
                    "tensor {i} coord {j}: grad {:.17e} vs upstream*(1+f2) {:.17e} (rel {rel:.3e} > {LAW_TOL:.0e})",
                    got[j], want
                ));
            }
        }
    }
    Ok(Verdict::Pass(format!(
        "grad_f1 == upstream*(1+f2) on {LAW_TENSORS} random tensors, worst rel dev {worst:.3e} (tol {LAW_TOL:.0e})"
    )))
}

// ---- criterion 3: consistency reward -------------------------------------

fn c3_consistency_reward() -> Crit {
    let spec = FusionSpec::sort_branched();
    for s in [1.0f64, 2.0, 4.0] {
        let vals: Vec<f64> = (0..=100)
            .map(|i| {
                let t = i as f64 * s / 100.0;
                fuse_scalars(t, s - t, &spec).expect("scalar fuse")
            })
            .collect();
        for (i, &v) in vals.iter().enumerate() {
            if i != 50 && !(vals[50] > v) {
                return Err(format!(
                    "split sum {s}: grid point {i} (value {v}) is not below the midpoint value {}",
                    vals[50]
                ));
            }
        }
        for i in 0..50 {
            if !(vals[i] < vals[i + 1]) {
                return Err(format!("split sum {s}: not increasing at grid point {i}"));
            }
        }
        for i in 50..100 {
            if !(vals[i] > vals[i + 1]) {
                return Err(format!("split sum {s}: not decreasing at grid point {i}"));
            }
        }
    }
    let lopsided = fuse_scalars(4.0, 0.0, &spec).expect("scalar fuse");
    let balanced = fuse_scalars(2.0, 2.0, &spec).expect("scalar fuse");
    if lopsided != 4.0 || balanced != 8.0 {
        return Err(format!(
            "exact instances broke: (4,0) -> {lopsided} (want 4), (2,2) -> {balanced} (want 8)"
        ));
    }
    Ok(Verdict::Pass(
        "balanced splits win: 101-point grids for sums 1, 2, 4 peak exactly at the midpoint and fall away monotonically; (4,0) -> 4 vs (2,2) -> 8 exact"
            .into(),
    ))
}

// ---- criterion 4: paired fusion comparison at desk scale -------------------

/// Residual-style fusion rows compared by the protocol: plain shortcut sum,
/// the second-order merge, and the product term alone.
fn residual_rows() -> [(&'static str, FusionSpec); 3] {
    [
        ("sum", FusionSpec::sum_only()),
        ("sum+prod", FusionSpec::residual_sort(1e-4)),
        (
            "prod",
            FusionSpec::new(
                false,
                false,
                true,
                ProdWrapper::SqrtEps(1e-4),
                ProdInputGate::ReluBoth,
            ),
        ),
    ]
}

/// Small residual net for the always-run stand-in leg.
fn standin_spec(fusion: FusionSpec) -> NetworkSpec {
    NetworkSpec {
        name: "standin_resnet".into(),
        layers: vec![
            LayerSpec::Conv { k: 3, c_in: 3, c_out: 8, stride: 1, pad: 1 },
            LayerSpec::BatchNorm { c: 8 },
            LayerSpec::Relu,
            LayerSpec::ResidualBlock { c_in: 8, c_out: 8, stride: 1, fusion },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Fc { d_in: 8, d_out: 10 },
        ],
        num_classes: 10,
    }
}

/// One stand-in training run; returns (diverged, final test error).
fn standin_run(fusion: FusionSpec, seed: u64, data: &data::DatasetHandle) -> Result<(bool, Option<f64>), String> {
    let spec = standin_spec(fusion);
    let mut net = Network::from_spec(&spec, &[3, 16, 16], 1000 + seed).map_err(lib_err)?;
    let cfg = TrainConfig {
        sections: vec![Section { lr: 0.05, iters: 150 }],
        batch_size: 16,
        momentum: 0.9,
        weight_decay: 1e-4,
        seed,
        eval_every: 0,
        record_every: 50,
        augment: false,
    };
    let metrics = train(&mut net, data, &cfg).map_err(lib_err)?;
    Ok((metrics.diverged_at.is_some(), metrics.final_test_error))
}

/// Always-run leg: verifies the comparison protocol end to end on synthetic
/// images (paired seeds, divergence flagging, computable statistics) and
/// reports the measured ordering. The ordering itself is data-dependent —
/// on easy synthetic textures any row can win — so it is reported, never
/// asserted; the qualitative assertions run only on the real dataset.
fn standin_leg() -> Result<String, String> {
    let ds = data::make_synthetic_images(240, 60, 16, 0.15, 11).map_err(lib_err)?;
    let ds = data::standardize(&ds).map_err(lib_err)?;
    let seeds = [1u64, 2, 3];

    let mut summary = Vec::new();
    let mut per_row: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    for (label, fusion) in residual_rows() {
        let mut finals = Vec::new();
        for &seed in &seeds {
            let (diverged, err) = standin_run(fusion, seed, &ds)?;
            if !diverged && err.is_none() {
                return Err(format!(
                    "stand-in {label} seed {seed}: run neither finished with a test error nor was flagged diverged"
                ));
            }
            finals.push(if diverged { None } else { err });
        }
        let finished: Vec<f64> = finals.iter().flatten().copied().collect();
        let cell = if finished.is_empty() {
            "diverged".to_string()
        } else {
            format!(
                "{:.1}%{}",
                finished.iter().sum::<f64>() / finished.len() as f64,
                if finished.len() < seeds.len() { " (partial)" } else { "" }
            )
        };
        summary.push(format!("{label} {cell}"));
        per_row.push((label, finals));
    }

    // The paired statistic must be computable: the plain-sum baseline is a
    // stable configuration and must finish on every seed.
    let sum_finals = &per_row[0].1;
    if sum_finals.iter().any(Option::is_none) {
        return Err("stand-in baseline (sum) diverged; the pairing protocol has no anchor".into());
    }
    let pairs = per_row[1]
        .1
        .iter()
        .zip(sum_finals)
        .filter(|(a, b)| a.is_some() && b.is_some())
        .count();
    Ok(format!(
        "stand-in protocol verified on synthetic images (3 rows x 3 paired seeds, {pairs}/3 sum+prod pairs comparable; measured ordering — {} — is reported, not asserted: easy synthetic data need not rank rows like the real set)",
        summary.join(", ")
    ))
}

/// Real-dataset leg: subset 5000/1000, residual net (3 blocks per stage),
/// 3 paired seeds, ~6K-iteration scaled schedule.
fn real_data_leg(out_root: &std::path::Path) -> Result<String, String> {
    let sections = scale_sections(&resnet_schedule(), 6000.0 / 64000.0).map_err(lib_err)?;
    let run_row = |label: &str, fusion: FusionSpec| -> Result<Vec<Option<f64>>, String> {
        let cfg = ExperimentConfig {
            net: NetChoice::Resnet { blocks: 3, width: 1 },
            sort: true,
            fusion_override: Some(fusion),
            data: DataChoice::Cifar10,
            subset: Some((5000, 1000)),
            subset_seed: 0,
            standardize: true,
            augment: true,
            sections: sections.clone(),
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            eval_every: 0,
            record_every: 100,
            seeds: vec![1, 2, 3],
            jobs: 1,
            allow_diverge: true,
            out_dir: out_root.join(label.replace('+', "_")),
            ..ExperimentConfig::default()
        };
        let outcome = run_train(&cfg).map_err(lib_err)?;
        Ok(outcome
            .per_seed
            .iter()
            .map(|s| {
                if s.metrics.diverged_at.is_some() {
                    None
                } else {
                    s.metrics.final_test_error
                }
            })
            .collect())
    };

    let rows = residual_rows();
    let sum_errs = run_row(rows[0].0, rows[0].1)?;
    let fused_errs = run_row(rows[1].0, rows[1].1)?;
    let prod_errs = run_row(rows[2].0, rows[2].1)?;

    let mean = |errs: &[Option<f64>]| -> Option<f64> {
        let v: Vec<f64> = errs.iter().flatten().copied().collect();
        if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) }
    };

    // (a) the product-only row diverges or ranks worst.
    let prod_diverged = prod_errs.iter().any(Option::is_none);
    if !prod_diverged {
        let (p, s, f) = (mean(&prod_errs), mean(&sum_errs), mean(&fused_errs));
        match (p, s, f) {
            (Some(p), Some(s), Some(f)) if p >= s && p >= f => {}
            (Some(p), s, f) => {
                return Err(format!(
                    "product-only row neither diverged nor ranked worst (prod {p:.2}%, sum {s:?}, sum+prod {f:?})"
                ));
            }
            _ => return Err("product-only row produced no usable statistics".into()),
        }
    }

    // (b) sum+prod beats or matches sum in >= 2 of 3 seed-paired runs.
    let mut wins = 0;
    for (f, s) in fused_errs.iter().zip(&sum_errs) {
        match (f, s) {
            (Some(f), Some(s)) if f <= s => wins += 1,
            (Some(_), None) => wins += 1, // baseline diverged, fused finished
            _ => {}
        }
    }
    if wins < 2 {
        return Err(format!(
            "sum+prod <= sum in only {wins}/3 paired seeds (sum {sum_errs:?}, sum+prod {fused_errs:?})"
        ));
    }
    Ok(format!(
        "real-data leg: product-only {}; sum+prod <= sum in {wins}/3 paired seeds (sum mean {:?}, sum+prod mean {:?})",
        if prod_diverged { "diverged".to_string() } else { "ranked worst".to_string() },
        mean(&sum_errs),
        mean(&fused_errs),
    ))
}

fn c4_paired_comparison() -> Crit {
    let standin = standin_leg()?;
    let dir = data::default_data_dir();
    if !data::cifar10_present(&dir) {
        return Ok(Verdict::Skip(format!(
            "{standin}; real-dataset leg needs the image set: place data_batch_1.bin..data_batch_5.bin and test_batch.bin (binary version) under {} or point SORTNET_DATA_DIR at them",
            dir.display()
        )));
    }
    let tmp = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
    let real = real_data_leg(tmp.path())?;
    Ok(Verdict::Pass(format!("{standin}; {real}")))
}

// ---- criterion 5: parameter parity ----------------------------------------

fn c5_parameter_parity() -> Crit {
    let pairs: Vec<(&str, NetworkSpec, NetworkSpec)> = vec![
        ("lenet_star", build_lenet(true, true), build_lenet(true, false)),
        (
            "resnet20",
            build_resnet(3, 1, true).map_err(lib_err)?,
            build_resnet(3, 1, false).map_err(lib_err)?,
        ),
        (
            "resnet26_w4",
            build_resnet(4, 4, true).map_err(lib_err)?,
            build_resnet(4, 4, false).map_err(lib_err)?,
        ),
        (
            "vggish9_star",
            build_vggish(9, true, true).map_err(lib_err)?,
            build_vggish(9, true, false).map_err(lib_err)?,
        ),
    ];
    let mut parts = Vec::new();
    for (name, fused, twin) in &pairs {
        let (a, b) = (fused.param_count(), twin.param_count());
        if a == 0 {
            return Err(format!("{name}: zero parameters, nothing was built"));
        }
        if a != b {
            return Err(format!(
                "{name}: fused net has {a} params, linear-sum twin has {b}"
            ));
        }
        parts.push(format!("{name} {a}"));
    }
    Ok(Verdict::Pass(format!(
        "fused nets match their linear-sum twins exactly: {}",
        parts.join(", ")
    )))
}

// ---- criterion 6: overhead benchmark ---------------------------------------

fn c6_overhead() -> Crit {
    let cfg = BenchConfig {
        block: BenchBlock::Residual,
        channels: 64,
        hw: 32,
        batch: 100,
        reps: BENCH_REPS,
        seed: 0,
    };
    let res = run_bench(&cfg).map_err(lib_err)?;
    if !(res.ratio <= BENCH_RATIO_MAX) {
        return Err(format!(
            "measured fused/base ratio {:.3} exceeds {BENCH_RATIO_MAX} (base {:.3}s, fused {:.3}s, {} reps)",
            res.ratio, res.base_median_s, res.fused_median_s, res.reps
        ));
    }
    Ok(Verdict::Pass(format!(
        "measured fused/base wall-time ratio {:.3} <= {BENCH_RATIO_MAX} (residual block, 64 ch, 32x32, batch 100; medians base {:.3}s fused {:.3}s over {} reps)",
        res.ratio, res.base_median_s, res.fused_median_s, res.reps
    )))
}

// ---- criterion 7: receptive field and shape preservation -------------------

fn c7_receptive_field() -> Crit {
    // Direct check: rewriting a k-conv as a two-conv branch block preserves
    // the receptive field and the output shape.
    for k in BRANCH_KERNELS {
        let conv = LayerSpec::Conv { k, c_in: 4, c_out: 5, stride: 1, pad: (k - 1) / 2 };
        let block =
            branch_transform(&conv, FusionSpec::sort_branched(), true).map_err(lib_err)?;
        let plain = NetworkSpec { name: "plain".into(), layers: vec![conv], num_classes: 5 };
        let branched = NetworkSpec { name: "branched".into(), layers: vec![block], num_classes: 5 };

        let (rf_p, rf_b) = (receptive_field(&plain), receptive_field(&branched));
        if rf_p[0].rf != rf_b[0].rf || rf_p[0].jump != rf_b[0].jump {
            return Err(format!(
                "k={k}: rewrite changed the receptive field: conv rf {} jump {} vs branch rf {} jump {}",
                rf_p[0].rf, rf_p[0].jump, rf_b[0].rf, rf_b[0].jump
            ));
        }
        if rf_p[0].rf != k {
            return Err(format!("k={k}: conv rf came out {} (want {k})", rf_p[0].rf));
        }
        for (h, w) in [(32, 32), (31, 17)] {
            let sp = plain.output_shape(&[4, h, w]).map_err(lib_err)?;
            let sb = branched.output_shape(&[4, h, w]).map_err(lib_err)?;
            if sp != sb {
                return Err(format!(
                    "k={k} on {h}x{w}: conv gives {sp:?}, branch rewrite gives {sb:?}"
                ));
            }
        }
    }

    // Whole built networks: the fused variant of every builder keeps the
    // final receptive field and output shape of its plain twin.
    let built: Vec<(&str, NetworkSpec, NetworkSpec, Vec<usize>)> = vec![
        ("lenet_star vs lenet", build_lenet(true, true), build_lenet(false, false), vec![3, 32, 32]),
        (
            "resnet20 fused vs plain",
            build_resnet(3, 1, true).map_err(lib_err)?,
            build_resnet(3, 1, false).map_err(lib_err)?,
            vec![3, 32, 32],
        ),
        (
            "vggish9_star vs vggish9",
            build_vggish(9, true, true).map_err(lib_err)?,
            build_vggish(9, false, false).map_err(lib_err)?,
            vec![3, 32, 32],
        ),
    ];
    for (name, fused, twin, input) in &built {
        let rf_f = receptive_field(fused).last().map(|e| (e.rf, e.jump));
        let rf_t = receptive_field(twin).last().map(|e| (e.rf, e.jump));
        if rf_f != rf_t {
            return Err(format!("{name}: final (rf, jump) {rf_f:?} vs {rf_t:?}"));
        }
        let (sf, st) = (
            fused.output_shape(input).map_err(lib_err)?,
            twin.output_shape(input).map_err(lib_err)?,
        );
        if sf != st {
            return Err(format!("{name}: output shapes {sf:?} vs {st:?}"));
        }
    }
    Ok(Verdict::Pass(
        "branch rewrites of 3/5/7 kernels keep rf, jump, and output shape on even and odd extents; all fused builders match their plain twins' final rf and shape"
            .into(),
    ))
}

// ---- criterion 8: emitted response surfaces --------------------------------

fn c8_surfaces() -> Crit {
    let grid = GridSpec::square(2.0, 0.05).map_err(lib_err)?;
    let emit = |kind: SurfaceKind| -> Result<Vec<(f64, f64, f64)>, String> {
        let rows = nonlinearity_surface(kind, &grid).map_err(lib_err)?;
        let mut buf = Vec::new();
        write_surface_csv(&rows, &mut buf).map_err(lib_err)?;
        // Parse the emitted CSV back: the criterion is about the file
        // contents, not the in-memory values.
        let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "x,y,value" {
                    return Err(format!("surface header is {line:?}, want \"x,y,value\""));
                }
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> Result<f64, String> {
                cols.next()
                    .ok_or_else(|| format!("short row {i}: {line:?}"))?
                    .parse::<f64>()
                    .map_err(|e| format!("row {i}: {e}"))
            };
            out.push((next()?, next()?, next()?));
        }
        Ok(out)
    };

    let first = emit(SurfaceKind::FirstOrder)?;
    let second = emit(SurfaceKind::SecondOrder)?;
    if first.len() != 81 * 81 || second.len() != 81 * 81 {
        return Err(format!(
            "expected 81x81 grids, parsed {} and {} rows",
            first.len(),
            second.len()
        ));
    }
    for ((x, y, v1), (x2, y2, v2)) in first.iter().zip(&second) {
        if x != x2 || y != y2 {
            return Err(format!("grids misaligned at ({x},{y}) vs ({x2},{y2})"));
        }
        let diff = v2 - v1;
        let in_closed_quadrant = *x <= 0.0 || *y <= 0.0;
        if diff < 0.0 {
            return Err(format!("second-order surface dips below first-order at ({x},{y}): diff {diff:e}"));
        }
        if in_closed_quadrant && diff != 0.0 {
            return Err(format!(
                "difference must vanish exactly when x<=0 or y<=0, got {diff:e} at ({x},{y})"
            ));
        }
        if !in_closed_quadrant && diff == 0.0 {
            return Err(format!(
                "difference must be strictly positive in the open positive quadrant, got 0 at ({x},{y})"
            ));
        }
    }
    Ok(Verdict::Pass(
        "emitted 81x81 surface files: second-order minus first-order is >= 0 everywhere, exactly 0 precisely on the closed quadrants x<=0 or y<=0".into(),
    ))
}

// ---- criterion 9: bit-exact ingestion ---------------------------------------

fn fixture_bytes() -> Vec<u8> {
    let mut bytes = Vec::with_capacity(2 * 3073);
    // Record 0: label 3; red plane 255, green plane 0, blue plane 128.
    bytes.push(3u8);
    bytes.extend(std::iter::repeat(255u8).take(1024));
    bytes.extend(std::iter::repeat(0u8).take(1024));
    bytes.extend(std::iter::repeat(128u8).take(1024));
    // Record 1: label 7; bytes cycle 0..=255 across all three planes.
    bytes.push(7u8);
    bytes.extend((0..3072).map(|i| (i % 256) as u8));
    bytes
}

fn c9_ingestion() -> Crit {
    let dir = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
    let path = dir.path().join("fixture_batch.bin");
    std::fs::write(&path, fixture_bytes()).map_err(|e| format!("write fixture: {e}"))?;

    let (labels, images) = data::load_cifar10_batch(&path).map_err(lib_err)?;
    if labels != vec![3, 7] {
        return Err(format!("fixture labels decoded as {labels:?}, want [3, 7]"));
    }
    if images.shape() != [2, 3, 32, 32] {
        return Err(format!("fixture image shape {:?}, want [2,3,32,32]", images.shape()));
    }
    let d = images.data();
    for i in 0..1024 {
        if d[i] != 1.0 || d[1024 + i] != 0.0 || d[2048 + i] != 128.0 / 255.0 {
            return Err(format!("record 0 plane values wrong at pixel {i}"));
        }
    }
    for i in 0..3072 {
        let want = (i % 256) as f64 / 255.0;
        if d[3072 + i] != want {
            return Err(format!(
                "record 1 byte {i} decoded as {} want {want}",
                d[3072 + i]
            ));
        }
    }

    // A file that is not a whole number of records must be rejected.
    let bad = dir.path().join("truncated.bin");
    std::fs::write(&bad, &fixture_bytes()[..3500]).map_err(|e| format!("write: {e}"))?;
    match data::load_cifar10_batch(&bad) {
        Ok(_) => return Err("truncated file was accepted".into()),
        Err(e) => {
            let msg = e.to_string();
            if !msg.contains("truncated") {
                return Err(format!("truncated file rejected with unrelated error: {msg}"));
            }
        }
    }

    let data_dir = data::default_data_dir();
    if !data::cifar10_present(&data_dir) {
        return Ok(Verdict::Skip(format!(
            "2-record fixture decodes bit-exactly and truncation is rejected; full-set histogram leg needs the image set: place data_batch_1.bin..data_batch_5.bin and test_batch.bin (binary version) under {} or point SORTNET_DATA_DIR at them",
            data_dir.display()
        )));
    }
    let ds = data::load_cifar10_binary(&data_dir).map_err(lib_err)?;
    let train_hist = data::class_histogram(&ds.train_labels, ds.num_classes);
    let test_hist = data::class_histogram(&ds.test_labels, ds.num_classes);
    let (want_train, want_test) = FULL_SET_PER_CLASS;
    if train_hist != vec![want_train; 10] || test_hist != vec![want_test; 10] {
        return Err(format!(
            "full-set histograms not uniform: train {train_hist:?} (want {want_train} each), test {test_hist:?} (want {want_test} each)"
        ));
    }
    Ok(Verdict::Pass(format!(
        "fixture decodes bit-exactly, truncation rejected, full-set histograms uniform at {want_train}/{want_test} per class"
    )))
}

// ---- criterion 10: scope statement ------------------------------------------

fn c10_scope_statement() -> Crit {
    Ok(Verdict::Pass(
        "stated explicitly: absolute error rates from full-scale training runs are NOT reproduced by this repository; the desk-scale paired ordering of criterion 4 is the substitute evidence"
            .into(),
    ))
}

// ---- driver ------------------------------------------------------------------

fn main() {
    let criteria: Vec<(u32, fn() -> Crit)> = vec![
        (1, c1_gradient_audit),
        (2, c2_cross_branch_law),
        (3, c3_consistency_reward),
        (4, c4_paired_comparison),
        (5, c5_parameter_parity),
        (6, c6_overhead),
        (7, c7_receptive_field),
        (8, c8_surfaces),
        (9, c9_ingestion),
        (10, c10_scope_statement),
    ];
    let (mut passed, mut skipped, mut failed) = (0u32, 0u32, 0u32);
    for (n, run) in criteria {
        match run() {
            Ok(Verdict::Pass(detail)) => {
                passed += 1;
                println!("criterion {n}: PASS — {detail}");
            }
            Ok(Verdict::Skip(detail)) => {
                skipped += 1;
                println!("criterion {n}: SKIP — {detail}");
            }
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL — {detail}");
            }
        }
    }
    println!("acceptance: {passed} passed, {skipped} skipped, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
