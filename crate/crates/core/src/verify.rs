//! Executable invariant checks, grouped into suites for the `verify`
//! command.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{
    decode_motion_frame, encode_motion_frame, load_stream, random_unit_quaternion, save_stream,
    synth_beat_frames, synth_pair, StreamKind, StreamMeta, BEAT_CHANNEL, JOINTS, MOTION_DIMS,
};
use crate::metrics::{beat_align, diversity, fid, motion_beats, BeatTimeline, FeatureSet, FID_EPS};
use crate::model::{
    autoregressive_generate, cross_modal_decode, embed_stream, encode, predict, reference_forward,
    ModelConfig, ModelWeights, WeightVars,
};
use crate::numerics::{
    conv1d, grad_check, softmax_rows, sym_sqrt, ConvKernel, GradCheckOptions, Matrix, ParamGroup,
};
use crate::qra::{
    canonical_attention, qra_attention, qra_attention_detailed, qra_attention_tape, series_rotate,
    FreqPhase, PositionVector, QraParams, QraVars,
};
use crate::quaternion::{hamilton, quaternionize, Axis, Quaternion};
use crate::spe::{rope_logits, rope_rotate, rope_rotate_complex, RotarySchedule};
use crate::tape::{Tape, Var};
use crate::training::{l2_loss, lr_at, train, Dataset, Example, TrainConfig};

/// Number of checks in [`Suite::All`]; one per listed module invariant.
pub const INVARIANT_COUNT: usize = 37;

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Algebra,
    Spe,
    Qra,
    Grad,
    Metrics,
    Model,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] =
        ["algebra", "spe", "qra", "grad", "metrics", "model", "all"];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "algebra" => Suite::Algebra,
            "spe" => Suite::Spe,
            "qra" => Suite::Qra,
            "grad" => Suite::Grad,
            "metrics" => Suite::Metrics,
            "model" => Suite::Model,
            "all" => Suite::All,
            _ => return None,
        })
    }
}

/// Deliberate defects used to confirm that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the `h·h'` term in the real part of the product.
    HamiltonSign,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hamilton-sign" => Some(Fault::HamiltonSign),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}::{} measured={:.3e} tol={:.1e} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.measured,
            self.tolerance,
            self.seconds
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// A measurement compared as `measured <= tolerance`.
struct Outcome {
    measured: f64,
    tolerance: f64,
    detail: String,
}

fn within(measured: f64, tolerance: f64) -> Result<Outcome> {
    Ok(Outcome {
        measured,
        tolerance,
        detail: String::new(),
    })
}

fn flag(ok: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        measured: if ok { 0.0 } else { 1.0 },
        tolerance: 0.0,
        detail: if ok { String::new() } else { detail.into() },
    })
}

struct Ctx {
    fault: Option<Fault>,
}

impl Ctx {
    fn mul(&self, a: Quaternion, b: Quaternion) -> Quaternion {
        let p = hamilton(a, b);
        match self.fault {
            Some(Fault::HamiltonSign) => Quaternion::new(p.e + 2.0 * a.h * b.h, p.f, p.g, p.h),
            None => p,
        }
    }
}

type CheckFn = fn(&Ctx) -> Result<Outcome>;

struct Check {
    suite: Suite,
    module: &'static str,
    name: &'static str,
    run: CheckFn,
}

const fn check(suite: Suite, module: &'static str, name: &'static str, run: CheckFn) -> Check {
    Check {
        suite,
        module,
        name,
        run,
    }
}

const CHECKS: [Check; INVARIANT_COUNT] = [
    check(
        Suite::Algebra,
        "numerics",
        "matmul_associativity",
        matmul_associativity,
    ),
    check(
        Suite::Algebra,
        "numerics",
        "softmax_rows_normalised_and_shift_invariant",
        softmax_invariants,
    ),
    check(
        Suite::Algebra,
        "numerics",
        "conv1d_linearity",
        conv_linearity,
    ),
    check(
        Suite::Algebra,
        "numerics",
        "sym_sqrt_reconstruction",
        sym_sqrt_reconstruction,
    ),
    check(
        Suite::Grad,
        "numerics",
        "grad_check_every_trainable_op",
        grad_every_op,
    ),
    check(
        Suite::Algebra,
        "quaternion",
        "non_commutativity",
        non_commutativity,
    ),
    check(Suite::Algebra, "quaternion", "associativity", associativity),
    check(
        Suite::Algebra,
        "quaternion",
        "norm_multiplicativity",
        norm_multiplicativity,
    ),
    check(
        Suite::Algebra,
        "quaternion",
        "conjugate_anti_homomorphism",
        conj_anti_homomorphism,
    ),
    check(
        Suite::Algebra,
        "quaternion",
        "real_part_is_dot_product",
        real_part_dot,
    ),
    check(
        Suite::Algebra,
        "quaternion",
        "quaternionize_prefix",
        quaternionize_prefix,
    ),
    check(
        Suite::Spe,
        "spe",
        "relative_shift_invariance",
        rope_shift_invariance,
    ),
    check(Suite::Spe, "spe", "rotation_isometry", rope_isometry),
    check(
        Suite::Spe,
        "spe",
        "complex_and_matrix_forms_agree",
        rope_forms_agree,
    ),
    check(Suite::Spe, "spe", "zero_angle_degeneracy", rope_zero_angles),
    check(
        Suite::Qra,
        "qra",
        "degenerates_to_canonical_attention",
        qra_degeneracy,
    ),
    check(Suite::Qra, "qra", "attention_rows_sum_to_one", qra_rows_sum),
    check(
        Suite::Qra,
        "qra",
        "series_rotation_isometry",
        qra_rotation_isometry,
    ),
    check(
        Suite::Qra,
        "qra",
        "brute_force_equivalence",
        qra_brute_force,
    ),
    check(Suite::Grad, "qra", "gradient_correctness", qra_gradients),
    check(Suite::Qra, "qra", "output_norm_bound", qra_norm_bound),
    check(Suite::Model, "model", "determinism", model_determinism),
    check(Suite::Model, "model", "shape_contract", model_shapes),
    check(Suite::Model, "model", "ablation_coherence", model_ablation),
    check(
        Suite::Grad,
        "model",
        "end_to_end_gradient_flow",
        model_gradients,
    ),
    check(Suite::Model, "training", "lr_non_increasing", lr_monotone),
    check(
        Suite::Model,
        "training",
        "training_determinism",
        training_determinism,
    ),
    check(
        Suite::Model,
        "training",
        "single_example_overfit",
        single_example_overfit,
    ),
    check(
        Suite::Model,
        "features",
        "motion_frame_round_trip",
        frame_round_trip,
    ),
    check(
        Suite::Model,
        "features",
        "synth_beat_contract",
        synth_contract,
    ),
    check(
        Suite::Model,
        "features",
        "stream_file_round_trip",
        stream_round_trip,
    ),
    check(Suite::Metrics, "metrics", "fid_symmetry", fid_symmetry),
    check(
        Suite::Metrics,
        "metrics",
        "fid_translation_covariance",
        fid_translation,
    ),
    check(
        Suite::Metrics,
        "metrics",
        "diversity_rigid_invariance",
        diversity_invariance,
    ),
    check(
        Suite::Metrics,
        "metrics",
        "beat_align_monotone",
        beat_align_monotone,
    ),
    check(
        Suite::Metrics,
        "metrics",
        "beat_align_self_is_one",
        beat_align_self,
    ),
    check(
        Suite::Metrics,
        "metrics",
        "synth_motion_beats_match_music",
        synth_beats_match,
    ),
];

/// Runs every check of `suite`, in registry order.
pub fn run_suite(suite: Suite, fault: Option<Fault>) -> Vec<CheckResult> {
    run_suite_with(suite, fault, |_| {})
}

/// Like [`run_suite`], reporting each result as soon as it is available.
pub fn run_suite_with(
    suite: Suite,
    fault: Option<Fault>,
    mut report: impl FnMut(&CheckResult),
) -> Vec<CheckResult> {
    let ctx = Ctx { fault };
    let mut out = Vec::new();
    for c in CHECKS
        .iter()
        .filter(|c| suite == Suite::All || c.suite == suite)
    {
        let start = Instant::now();
        let res = match (c.run)(&ctx) {
            Ok(o) => CheckResult {
                module: c.module,
                name: c.name,
                passed: o.measured.is_finite() && o.measured <= o.tolerance,
                measured: o.measured,
                tolerance: o.tolerance,
                detail: o.detail,
                seconds: 0.0,
            },
            Err(e) => CheckResult {
                module: c.module,
                name: c.name,
                measured: f64::NAN,
                tolerance: f64::NAN,
                passed: false,
                detail: format!("error: {e}"),
                seconds: 0.0,
            },
        };
        let res = CheckResult {
            seconds: start.elapsed().as_secs_f64(),
            ..res
        };
        report(&res);
        out.push(res);
    }
    out
}

/// Number of checks `suite` contains.
pub fn suite_len(suite: Suite) -> usize {
    CHECKS
        .iter()
        .filter(|c| suite == Suite::All || c.suite == suite)
        .count()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_quat(rng: &mut ChaCha8Rng) -> Quaternion {
    Quaternion::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
    )
}

fn matmul_associativity(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dims: Vec<usize> = (0..4).map(|_| r.gen_range(1..=8)).collect();
        let a = rand_matrix(&mut r, dims[0], dims[1]);
        let b = rand_matrix(&mut r, dims[1], dims[2]);
        let c = rand_matrix(&mut r, dims[2], dims[3]);
        worst = worst.max(
            a.matmul(&b)?
                .matmul(&c)?
                .max_abs_diff(&a.matmul(&b.matmul(&c)?)?),
        );
    }
    within(worst, 1e-10)
}

fn softmax_invariants(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, m) = (r.gen_range(1..=10), r.gen_range(1..=10));
        let x = rand_matrix(&mut r, n, m).scale(5.0);
        let s = softmax_rows(&x);
        for i in 0..n {
            worst = worst.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let shifts: Vec<f64> = (0..n).map(|_| r.gen_range(-50.0..50.0)).collect();
        let shifted = Matrix::from_fn(n, m, |i, j| x[(i, j)] + shifts[i]);
        worst = worst.max(softmax_rows(&shifted).max_abs_diff(&s));
    }
    within(worst, 1e-12)
}

fn conv_linearity(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (t, cin, cout) = (r.gen_range(1..=12), r.gen_range(1..=5), r.gen_range(1..=4));
        let width = [1, 3, 5][r.gen_range(0..3)];
        let k = ConvKernel::new(
            width,
            rand_matrix(&mut r, width * cin, cout),
            vec![0.0; cout],
        )?;
        let x = rand_matrix(&mut r, t, cin);
        let y = rand_matrix(&mut r, t, cin);
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let lhs = conv1d(&x.scale(a).add(&y.scale(b))?, &k)?;
        let rhs = conv1d(&x, &k)?.scale(a).add(&conv1d(&y, &k)?.scale(b))?;
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    within(worst, 1e-12)
}

/// Random orthogonal matrix from Gram-Schmidt on a random square matrix.
fn random_orthogonal(r: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= d * ci;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

fn sym_sqrt_reconstruction(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(14);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.gen_range(2..=8);
        let q = random_orthogonal(&mut r, n);
        let logs: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..2.5)).collect();
        let lam = Matrix::diag(&logs.iter().map(|l| 10f64.powf(*l)).collect::<Vec<_>>());
        let s = q.matmul(&lam)?.matmul_bt(&q)?;
        let s = Matrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
        let root = sym_sqrt(&s, eps)?;
        let target = s.add(&Matrix::identity(n).scale(eps))?;
        worst = worst.max(root.matmul(&root)?.max_abs_diff(&target));
    }
    within(worst, 1e-8)
}

/// Projects the output of `graph` onto a fixed random matrix and compares
/// tape gradients against central differences for every leaf.
fn tape_grad_error(
    params: Vec<Matrix>,
    seed: u64,
    graph: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |values: &[Matrix], want: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = graph(&mut tape, &vars)?;
        let (r, c) = tape.value(out).shape();
        let proj = tape.input(rand_matrix(&mut rng(seed), r * c, 1));
        let flat = tape.reshape(out, 1, r * c)?;
        let loss = tape.matmul(flat, proj)?;
        let value = tape.value(loss)[(0, 0)];
        if !want {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(values)
            .map(|(v, m)| {
                g.get(*v)
                    .map_or_else(|| vec![0.0; m.data().len()], |g| g.data().to_vec())
            })
            .collect();
        Ok((value, grads))
    };
    let (_, analytic) = eval(&params, true)?;
    let groups: Vec<ParamGroup> = params
        .iter()
        .zip(analytic)
        .enumerate()
        .map(|(i, (m, g))| ParamGroup::new(format!("p{i}"), m.data().to_vec(), g))
        .collect();
    let shapes: Vec<(usize, usize)> = params.iter().map(Matrix::shape).collect();
    let mut failure = None;
    let report = grad_check(
        |p| {
            let mats: Vec<Matrix> = p
                .iter()
                .zip(&shapes)
                .map(|(v, &(r, c))| Matrix::new(r, c, v.clone()).expect("shape"))
                .collect();
            eval(&mats, false)
                .unwrap_or_else(|e| {
                    failure = Some(e);
                    (f64::NAN, Vec::new())
                })
                .0
        },
        &groups,
        GradCheckOptions::new(GRAD_H, GRAD_TOL),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(report?.max_rel_error())
}

fn grad_every_op(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(15);
    let mut m = |rows: usize, cols: usize| rand_matrix(&mut r, rows, cols);
    let sched = RotarySchedule::new(6, 10.0)?;
    let target = Matrix::filled(3, 4, 0.2);
    let cases: Vec<(
        &str,
        Vec<Matrix>,
        Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
    )> = vec![
        (
            "matmul",
            vec![m(3, 4), m(4, 2)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "matmul_bt",
            vec![m(3, 4), m(5, 4)],
            Box::new(|t, v| t.matmul_bt(v[0], v[1])),
        ),
        (
            "add_row",
            vec![m(3, 4), m(1, 4)],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        ),
        ("relu", vec![m(3, 4)], Box::new(|t, v| Ok(t.relu(v[0])))),
        (
            "pi_tanh",
            vec![m(3, 4)],
            Box::new(|t, v| Ok(t.pi_tanh(v[0]))),
        ),
        (
            "softmax",
            vec![m(3, 5)],
            Box::new(|t, v| Ok(t.softmax_rows(v[0]))),
        ),
        (
            "layer_norm",
            vec![m(4, 6), m(1, 6), m(1, 6)],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        ),
        (
            "conv1d",
            vec![m(6, 3), m(9, 2), m(1, 2)],
            Box::new(|t, v| t.conv1d(v[0], v[1], v[2], 3)),
        ),
        (
            "rope",
            vec![m(5, 6)],
            Box::new(move |t, v| t.rope(v[0], &sched, 2)),
        ),
        (
            "slice_concat",
            vec![m(4, 6), m(2, 6)],
            Box::new(|t, v| {
                let a = t.slice_cols(v[0], 1, 3)?;
                let b = t.slice_rows(v[0], 1, 2)?;
                let c = t.concat_rows(&[b, v[1]])?;
                let d = t.slice_cols(c, 0, 3)?;
                t.concat_cols(&[a, d])
            }),
        ),
        (
            "mse",
            vec![m(3, 4)],
            Box::new(move |t, v| t.mse(v[0], &target)),
        ),
        (
            "rotary_similarity",
            vec![m(3, 8), m(4, 8), m(3, 2), m(3, 2), m(4, 2), m(4, 2)],
            Box::new(|t, v| {
                let oq = t.relu(v[2]);
                let ok = t.relu(v[4]);
                t.rotary_similarity(v[0], v[1], oq, v[3], ok, v[5], (Axis::I, Axis::J))
            }),
        ),
    ];
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for (i, (name, params, graph)) in cases.into_iter().enumerate() {
        let e = tape_grad_error(params, 100 + i as u64, graph.as_ref())?;
        if e > worst {
            worst = e;
            worst_name = name;
        }
    }
    Ok(Outcome {
        measured: worst,
        tolerance: GRAD_TOL,
        detail: format!("worst op: {worst_name}"),
    })
}

fn non_commutativity(c: &Ctx) -> Result<Outcome> {
    let units = [Axis::I, Axis::J, Axis::K].map(Quaternion::unit);
    let mut worst = 0.0f64;
    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
        let (x, y) = (units[a], units[b]);
        worst = worst.max(c.mul(x, y).max_abs_diff(-c.mul(y, x)));
        worst = worst.max(c.mul(x, y).max_abs_diff(units[3 - a - b]));
    }
    flag(
        worst == 0.0,
        "i⊗j, j⊗k, k⊗i do not anticommute into the basis",
    )
}

fn associativity(c: &Ctx) -> Result<Outcome> {
    let mut r = rng(16);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, p, s) = (rand_quat(&mut r), rand_quat(&mut r), rand_quat(&mut r));
        worst = worst.max(c.mul(c.mul(q, p), s).max_abs_diff(c.mul(q, c.mul(p, s))));
    }
    within(worst, 1e-12)
}

fn norm_multiplicativity(c: &Ctx) -> Result<Outcome> {
    let mut r = rng(17);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, p) = (rand_quat(&mut r), rand_quat(&mut r));
        worst = worst.max((c.mul(q, p).norm() - q.norm() * p.norm()).abs());
    }
    within(worst, 1e-10)
}

fn conj_anti_homomorphism(c: &Ctx) -> Result<Outcome> {
    let mut r = rng(18);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, p) = (rand_quat(&mut r), rand_quat(&mut r));
        worst = worst.max(c.mul(q, p).conj().max_abs_diff(c.mul(p.conj(), q.conj())));
    }
    within(worst, 1e-12)
}

fn real_part_dot(c: &Ctx) -> Result<Outcome> {
    let mut r = rng(19);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, p) = (rand_quat(&mut r), rand_quat(&mut r));
        let dot = q.e * p.e + q.f * p.f + q.g * p.g + q.h * p.h;
        worst = worst.max((c.mul(q, p.conj()).e - dot).abs());
    }
    within(worst, 1e-12)
}

fn quaternionize_prefix(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(20);
    for len in [4usize, 7, 254, 255, 256] {
        let v: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let q = quaternionize(&v)?;
        let flat: Vec<f64> = q.iter().flat_map(|x| x.to_array()).collect();
        if q.len() != len / 4 || flat[..] != v[..4 * (len / 4)] {
            return flag(false, format!("length {len} not reproduced"));
        }
    }
    flag(true, "")
}

fn rope_shift_invariance(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = 2 * r.gen_range(1..=16);
        let (n, m) = (r.gen_range(1..=16), r.gen_range(1..=16));
        let sched = RotarySchedule::new(d, 10000.0)?;
        let q = rand_matrix(&mut r, n, d);
        let k = rand_matrix(&mut r, m, d);
        let base = rope_logits(&q, &k, &sched, 0, 0)?;
        for delta in [7, 1000] {
            worst = worst.max(rope_logits(&q, &k, &sched, delta, delta)?.max_abs_diff(&base));
        }
    }
    within(worst, 1e-10)
}

fn rope_isometry(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(22);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = 2 * r.gen_range(1..=16);
        let sched = RotarySchedule::new(d, 10000.0)?;
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = rope_rotate(&x, r.gen_range(0..5000), &sched)?;
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max((norm(&x) - norm(&y)).abs());
    }
    within(worst, 1e-12)
}

fn rope_forms_agree(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(23);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = 2 * r.gen_range(1..=16);
        let sched = RotarySchedule::new(d, 10000.0)?;
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let pos = r.gen_range(0..500);
        let a = rope_rotate(&x, pos, &sched)?;
        let b = rope_rotate_complex(&x, pos, &sched)?;
        worst = worst.max(
            a.iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max),
        );
    }
    within(worst, 1e-14)
}

fn rope_zero_angles(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(24);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let half = r.gen_range(1..=8);
        let sched = RotarySchedule::with_angles(vec![0.0; half])?;
        let q = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, 2 * half)
        };
        let k = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, 2 * half)
        };
        worst = worst.max(rope_logits(&q, &k, &sched, 3, 11)?.max_abs_diff(&q.matmul_bt(&k)?));
    }
    flag(worst == 0.0, format!("max deviation {worst:e}"))
}

fn random_head(
    r: &mut ChaCha8Rng,
    d_model: usize,
    d_attn: usize,
    periods: usize,
) -> Result<QraParams> {
    QraParams::random(d_model, d_attn, periods, 0.7, r)
}

fn qra_degeneracy(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(25);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d_model = r.gen_range(1..=8);
        let d_attn = 4 * r.gen_range(1..=3);
        let p = random_head(&mut r, d_model, d_attn, 1)?.without_rotation();
        let x = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, d_model)
        };
        let y = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, d_model)
        };
        let got = qra_attention(&x, &y, &p)?;
        let want = canonical_attention(&x.matmul(&p.w_q)?, &y.matmul(&p.w_k)?, &y.matmul(&p.w_v)?)?;
        worst = worst.max(got.max_abs_diff(&want));
    }
    within(worst, 1e-10)
}

fn qra_rows_sum(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(26);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = {
            let periods = r.gen_range(1..=3);
            random_head(&mut r, 6, 8, periods)?
        };
        let x = {
            let n = r.gen_range(1..=8);
            rand_matrix(&mut r, n, 6)
        };
        let y = {
            let n = r.gen_range(1..=8);
            rand_matrix(&mut r, n, 6)
        };
        let w = qra_attention_detailed(&x, &y, &p)?.weights;
        for i in 0..w.rows() {
            worst = worst.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    within(worst, 1e-12)
}

fn qra_rotation_isometry(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(27);
    let mut worst = 0.0f64;
    for axis in [Axis::I, Axis::J, Axis::K] {
        for _ in 0..20 {
            let (n, periods) = (r.gen_range(1..=6), r.gen_range(1..=3));
            let z = rand_matrix(&mut r, n, 12);
            let fp = FreqPhase {
                omega: Matrix::from_fn(n, periods, |_, _| r.gen_range(0.0..3.0)),
                theta: Matrix::from_fn(n, periods, |_, _| r.gen_range(-3.0..3.0)),
            };
            for series in series_rotate(&z, &fp, &PositionVector::new(n), axis)? {
                for t in 0..n {
                    for s in 0..3 {
                        let orig = Quaternion::from_slice(&z.row(t)[4 * s..4 * s + 4]).norm();
                        worst = worst.max((series.get(t, s).norm() - orig).abs());
                    }
                }
            }
        }
    }
    within(worst, 1e-12)
}

/// Straight-line evaluation of one attention head, written component by
/// component without the library's matrix, conv or quaternion helpers.
pub fn qra_oracle(x: &Matrix, y: &Matrix, p: &QraParams) -> Matrix {
    let (n, m, dm, d) = (x.rows(), y.rows(), x.cols(), p.d_attn());
    let periods = p.periods();
    let project = |src: &Matrix, w: &Matrix, rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|t| {
                (0..d)
                    .map(|c| (0..dm).map(|k| src[(t, k)] * w[(k, c)]).sum())
                    .collect()
            })
            .collect()
    };
    let q = project(x, &p.w_q, n);
    let k = project(y, &p.w_k, m);
    let v = project(y, &p.w_v, m);
    let conv = |z: &Vec<Vec<f64>>, ker: &ConvKernel, t: usize, out: usize| -> f64 {
        let mut s = ker.bias()[out];
        let half = (ker.width() / 2) as i64;
        for tap in 0..ker.width() {
            let src = t as i64 + tap as i64 - half;
            if src < 0 || src >= z.len() as i64 {
                continue;
            }
            for c in 0..d {
                s += z[src as usize][c] * ker.weights()[(tap * d + c, out)];
            }
        }
        s
    };
    let angle = |z: &Vec<Vec<f64>>, f: &ConvKernel, ph: &ConvKernel, t: usize, per: usize| -> f64 {
        let omega = conv(z, f, t, per).max(0.0);
        let theta = std::f64::consts::PI * conv(z, ph, t, per).tanh();
        2.0 * std::f64::consts::PI * omega * (t as f64 / z.len() as f64) + theta
    };
    // (e + f i + g j + h k)(cos a + sin a · axis)
    let rotate = |e: f64, f: f64, g: f64, h: f64, a: f64, axis: Axis| -> [f64; 4] {
        let (s, c) = a.sin_cos();
        match axis {
            Axis::I => [e * c - f * s, e * s + f * c, g * c + h * s, h * c - g * s],
            Axis::J => [e * c - g * s, f * c - h * s, e * s + g * c, h * c + f * s],
            Axis::K => [e * c - h * s, f * c + g * s, g * c - f * s, e * s + h * c],
        }
    };
    let mut scores = vec![vec![0.0; m]; n];
    for per in 0..periods {
        for (i, row) in scores.iter_mut().enumerate() {
            let aq = angle(&q, &p.freq_q, &p.phase_q, i, per);
            for (j, cell) in row.iter_mut().enumerate() {
                let ak = angle(&k, &p.freq_k, &p.phase_k, j, per);
                for s in 0..d / 4 {
                    let a = rotate(
                        q[i][4 * s],
                        q[i][4 * s + 1],
                        q[i][4 * s + 2],
                        q[i][4 * s + 3],
                        aq,
                        p.axes.0,
                    );
                    let b = rotate(
                        k[j][4 * s],
                        k[j][4 * s + 1],
                        k[j][4 * s + 2],
                        k[j][4 * s + 3],
                        ak,
                        p.axes.1,
                    );
                    *cell += a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
                }
            }
        }
    }
    let scale = 1.0 / (periods as f64 * (d as f64).sqrt());
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let logits: Vec<f64> = scores[i].iter().map(|s| s * scale).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        for c in 0..d {
            out[(i, c)] = (0..m).map(|j| w[j] / z * v[j][c]).sum();
        }
    }
    out
}

fn qra_brute_force(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(28);
    let mut worst = 0.0f64;
    let axes = [
        (Axis::I, Axis::J),
        (Axis::J, Axis::K),
        (Axis::K, Axis::I),
        (Axis::I, Axis::I),
    ];
    for trial in 0..100 {
        let d_model = r.gen_range(1..=6);
        let d_attn = 4 * r.gen_range(1..=2);
        let mut p = {
            let periods = r.gen_range(1..=3);
            random_head(&mut r, d_model, d_attn, periods)?
        };
        p.axes = axes[trial % axes.len()];
        let x = {
            let n = r.gen_range(1..=4);
            rand_matrix(&mut r, n, d_model)
        };
        let y = {
            let n = r.gen_range(1..=4);
            rand_matrix(&mut r, n, d_model)
        };
        worst = worst.max(qra_attention(&x, &y, &p)?.max_abs_diff(&qra_oracle(&x, &y, &p)));
    }
    within(worst, 1e-10)
}

fn head_matrices(p: &QraParams) -> Vec<Matrix> {
    let mut v = vec![p.w_q.clone(), p.w_k.clone(), p.w_v.clone()];
    for k in [&p.freq_q, &p.phase_q, &p.freq_k, &p.phase_k] {
        v.push(k.weights().clone());
        v.push(Matrix::row_vector(k.bias()));
    }
    v
}

fn qra_gradients(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(29);
    let mut worst = 0.0f64;
    for (i, axes) in [(Axis::I, Axis::J), (Axis::K, Axis::K)]
        .into_iter()
        .enumerate()
    {
        let p = random_head(&mut r, 5, 8, 2)?;
        let x = rand_matrix(&mut r, 4, 5);
        let y = rand_matrix(&mut r, 3, 5);
        let mut params = vec![x, y];
        params.extend(head_matrices(&p));
        let graph = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let vars = QraVars {
                w_q: v[2],
                w_k: v[3],
                w_v: v[4],
                freq_q: (v[5], v[6]),
                phase_q: (v[7], v[8]),
                freq_k: (v[9], v[10]),
                phase_k: (v[11], v[12]),
            };
            qra_attention_tape(t, v[0], v[1], &vars, axes)
        };
        worst = worst.max(tape_grad_error(params, 200 + i as u64, &graph)?);
    }
    within(worst, GRAD_TOL)
}

fn qra_norm_bound(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(30);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let p = {
            let periods = r.gen_range(1..=3);
            random_head(&mut r, 5, 8, periods)?
        };
        let x = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, 5)
        };
        let y = {
            let n = r.gen_range(1..=6);
            rand_matrix(&mut r, n, 5)
        };
        let h = qra_attention(&x, &y, &p)?;
        let v = y.matmul(&p.w_v)?;
        let norm = |row: &[f64]| row.iter().map(|a| a * a).sum::<f64>().sqrt();
        let vmax = (0..v.rows()).map(|i| norm(v.row(i))).fold(0.0, f64::max);
        for i in 0..h.rows() {
            worst = worst.max(norm(h.row(i)) - vmax);
        }
    }
    within(worst.max(0.0), 1e-12)
}

/// Reduced configuration for checks that train or differentiate the model.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        d_ff: 16,
        periods: 2,
        seed_motion_frames: 6,
        audio_frames: 8,
        future_frames: 2,
        ..ModelConfig::desk()
    }
}

fn synth_windows(cfg: &ModelConfig, seed: u64, extra: usize) -> Result<(Matrix, Matrix)> {
    let frames = cfg
        .audio_frames
        .max(cfg.seed_motion_frames + cfg.future_frames)
        + extra;
    let (audio, motion) = synth_pair(seed, frames as f64 / cfg.fps as f64, cfg.fps, 12)?;
    Ok((audio, motion))
}

fn model_determinism(_: &Ctx) -> Result<Outcome> {
    let cfg = ModelConfig::desk();
    let w = ModelWeights::init(&cfg, 31)?;
    let (audio, motion) = synth_windows(&cfg, 31, 8)?;
    let seed = motion.slice_rows(0, cfg.seed_motion_frames)?;
    let a = predict(&w, &seed, &audio.slice_rows(0, cfg.audio_frames)?)?;
    let b = predict(&w, &seed, &audio.slice_rows(0, cfg.audio_frames)?)?;
    let g1 = autoregressive_generate(&w, &seed, &audio, 4)?;
    let g2 = autoregressive_generate(&w, &seed, &audio, 4)?;
    let same = a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && g1
            .data()
            .iter()
            .zip(g2.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    flag(same, "repeated evaluation differs")
}

fn model_shapes(_: &Ctx) -> Result<Outcome> {
    for cfg in [
        ModelConfig::desk(),
        ModelConfig {
            use_qra: false,
            ..ModelConfig::paper()
        },
    ] {
        let w = ModelWeights::init(&cfg, 32)?;
        let mut r = rng(32);
        let seed = rand_matrix(&mut r, cfg.seed_motion_frames, MOTION_DIMS);
        let audio = rand_matrix(&mut r, cfg.audio_frames, 35);
        let mut tape = Tape::new();
        let vars = WeightVars::constants(&mut tape, &w);
        let sv = tape.input(seed.clone());
        let av = tape.input(audio.clone());
        let hm = embed_stream(&mut tape, sv, StreamKind::Motion, &vars, &cfg)?;
        let ha = embed_stream(&mut tape, av, StreamKind::Audio, &vars, &cfg)?;
        let em = encode(&mut tape, hm, StreamKind::Motion, &vars, &cfg)?;
        let ea = encode(&mut tape, ha, StreamKind::Audio, &vars, &cfg)?;
        let out = cross_modal_decode(&mut tape, em, ea, &seed, &vars, &cfg)?;
        let shapes = [
            (
                tape.value(hm).shape(),
                (cfg.seed_motion_frames, cfg.d_model),
            ),
            (tape.value(ha).shape(), (cfg.audio_frames, cfg.d_model)),
            (
                tape.value(em).shape(),
                (cfg.seed_motion_frames, cfg.d_model),
            ),
            (tape.value(ea).shape(), (cfg.audio_frames, cfg.d_model)),
            (tape.value(out).shape(), (cfg.future_frames, MOTION_DIMS)),
        ];
        if let Some((got, want)) = shapes.iter().find(|(g, w)| g != w) {
            return flag(
                false,
                format!("d_model {}: got {got:?}, expected {want:?}", cfg.d_model),
            );
        }
    }
    flag(true, "")
}

fn model_ablation(_: &Ctx) -> Result<Outcome> {
    let cfg = ModelConfig {
        use_spe: false,
        use_qra: false,
        ..ModelConfig::desk()
    };
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let w = ModelWeights::init(&cfg, 33 + seed)?;
        let mut r = rng(33 + seed);
        let motion = rand_matrix(&mut r, cfg.seed_motion_frames, MOTION_DIMS);
        let audio = rand_matrix(&mut r, cfg.audio_frames, 35);
        worst = worst.max(
            predict(&w, &motion, &audio)?.max_abs_diff(&reference_forward(&w, &motion, &audio)?),
        );
    }
    within(worst, 1e-10)
}

fn model_gradients(_: &Ctx) -> Result<Outcome> {
    let cfg = ModelConfig::desk();
    let weights = ModelWeights::init(&cfg, 34)?;
    let (audio, motion) = synth_windows(&cfg, 34, 0)?;
    let ex = Example {
        seed_motion: motion.slice_rows(0, cfg.seed_motion_frames)?,
        audio: audio.slice_rows(0, cfg.audio_frames)?,
        target: motion.slice_rows(cfg.seed_motion_frames, cfg.future_frames)?,
    };
    let names: Vec<String> = weights.tensors().keys().cloned().collect();
    let loss_of = |w: &ModelWeights| -> Result<f64> {
        l2_loss(&predict(w, &ex.seed_motion, &ex.audio)?, &ex.target)
    };
    let (_, grads) = crate::training::batch_loss_and_grads(&weights, std::slice::from_ref(&ex))?;
    let groups: Vec<ParamGroup> = names
        .iter()
        .map(|n| {
            let m = weights.get(n).expect("tensor");
            let g = grads
                .get(n)
                .map_or_else(|| vec![0.0; m.data().len()], |g| g.data().to_vec());
            ParamGroup::new(n.clone(), m.data().to_vec(), g)
        })
        .collect();
    let mut probe = weights.clone();
    let mut failure = None;
    let report = grad_check(
        |p| {
            for (n, v) in names.iter().zip(p) {
                probe
                    .get_mut(n)
                    .expect("tensor")
                    .data_mut()
                    .copy_from_slice(v);
            }
            loss_of(&probe).unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        },
        &groups,
        GradCheckOptions::new(GRAD_H, GRAD_TOL).largest(3),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let report = report?;
    let worst = report.worst().map(|g| g.name.clone()).unwrap_or_default();
    Ok(Outcome {
        measured: report.max_rel_error(),
        tolerance: GRAD_TOL,
        detail: format!("worst tensor: {worst}"),
    })
}

fn lr_monotone(_: &Ctx) -> Result<Outcome> {
    for cfg in [TrainConfig::desk(), TrainConfig::paper()] {
        let mut prev = f64::INFINITY;
        let mut steps: Vec<usize> = (0..=cfg.total_steps).step_by(97).collect();
        for &(s, _) in &cfg.decay {
            steps.extend([s.saturating_sub(1), s, s + 1]);
        }
        steps.sort_unstable();
        for s in steps {
            let lr = lr_at(s, &cfg);
            if lr > prev {
                return flag(false, format!("lr rises at step {s}"));
            }
            prev = lr;
        }
    }
    flag(true, "")
}

fn tiny_dataset(cfg: &ModelConfig) -> Result<Dataset> {
    let mut data = Dataset::new();
    for (i, period) in [10, 14].into_iter().enumerate() {
        let (a, m) = synth_pair(40 + i as u64, 0.5, cfg.fps, period)?;
        data.push(a, m)?;
    }
    Ok(data)
}

fn training_determinism(_: &Ctx) -> Result<Outcome> {
    let cfg = tiny_config();
    let data = tiny_dataset(&cfg)?;
    let tcfg = TrainConfig {
        total_steps: 5,
        batch_size: 2,
        rng_seed: 7,
        ..TrainConfig::desk()
    };
    let run = || -> Result<(Vec<u64>, Vec<u8>)> {
        let out = train(ModelWeights::init(&cfg, 35)?, &data, &tcfg, |_| {})?;
        Ok((
            out.trace.iter().map(|r| r.loss.to_bits()).collect(),
            out.weights.to_checkpoint_bytes(),
        ))
    };
    let (a, b) = (run()?, run()?);
    flag(a == b, "loss trace or checkpoint differs between runs")
}

fn single_example_overfit(_: &Ctx) -> Result<Outcome> {
    let cfg = ModelConfig::desk();
    let (audio, motion) = synth_windows(&cfg, 36, 0)?;
    let mut data = Dataset::new();
    let n = cfg
        .audio_frames
        .max(cfg.seed_motion_frames + cfg.future_frames);
    data.push(
        audio.slice_rows(0, cfg.audio_frames)?,
        motion.slice_rows(0, n)?,
    )?;
    let tcfg = TrainConfig {
        total_steps: 2000,
        batch_size: 1,
        rng_seed: 36,
        ..TrainConfig::desk()
    };
    let out = train(ModelWeights::init(&cfg, 36)?, &data, &tcfg, |_| {})?;
    let best = out
        .trace
        .iter()
        .map(|r| r.loss)
        .fold(f64::INFINITY, f64::min);
    within(best, 1e-3)
}

fn frame_round_trip(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(37);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let rots: Vec<Quaternion> = (0..JOINTS)
            .map(|_| random_unit_quaternion(&mut r))
            .collect();
        let tr = [
            r.gen_range(-5.0..5.0),
            r.gen_range(-5.0..5.0),
            r.gen_range(-5.0..5.0),
        ];
        let (back, tr2) = decode_motion_frame(&encode_motion_frame(&rots, tr)?)?;
        if tr2 != tr {
            return flag(false, "translation not exact");
        }
        for (a, b) in rots.iter().zip(&back) {
            worst = worst.max(a.max_abs_diff(*b).min(a.max_abs_diff(-*b)));
        }
    }
    within(worst, 1e-9)
}

fn synth_contract(_: &Ctx) -> Result<Outcome> {
    for (seed, period) in [(1u64, 12usize), (2, 17), (3, 26)] {
        let (audio, motion) = synth_pair(seed, 3.0, 60, period)?;
        if (0..audio.rows())
            .any(|t| audio[(t, BEAT_CHANNEL)] != 0.0 && audio[(t, BEAT_CHANNEL)] != 1.0)
        {
            return flag(false, "beat channel not {0,1}");
        }
        let v = crate::metrics::frame_velocity(&motion);
        for b in synth_beat_frames(motion.rows(), period) {
            if b == 0 || b + 1 >= motion.rows() {
                continue;
            }
            if !(v[b] < v[b - 1] && v[b] < v[b + 1]) {
                return flag(
                    false,
                    format!("no strict velocity minimum at beat {b} (period {period})"),
                );
            }
        }
    }
    flag(true, "")
}

fn stream_round_trip(_: &Ctx) -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let mut r = rng(38);
    let special = [
        0.0,
        -0.0,
        1e-300,
        -1e300,
        f64::MAX,
        f64::MIN_POSITIVE,
        5e-324,
        0.1,
        1.0 / 3.0,
    ];
    let m = Matrix::from_fn(7, 35, |i, j| {
        let k = i * 35 + j;
        if k < special.len() {
            special[k]
        } else {
            r.gen_range(-1e6..1e6) * 10f64.powi(r.gen_range(-20..20))
        }
    });
    let path = dir.path().join("audio.csv");
    save_stream(&path, &m, &StreamMeta::for_matrix(StreamKind::Audio, &m))?;
    let (back, _) = load_stream(&path)?;
    let exact = back
        .data()
        .iter()
        .zip(m.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    flag(exact, "values changed across save/load")
}

fn feature_set(r: &mut ChaCha8Rng, n: usize, d: usize, shift: &[f64]) -> FeatureSet {
    FeatureSet::new(Matrix::from_fn(n, d, |_, c| {
        r.gen_range(-1.0..1.0) + shift[c]
    }))
}

fn fid_symmetry(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(39);
    let d = 5;
    let a = feature_set(&mut r, 30, d, &[0.0; 5]);
    let b = feature_set(&mut r, 25, d, &[0.5, -0.2, 0.0, 1.0, 0.3]);
    let asym = (fid(&a, &b, FID_EPS)? - fid(&b, &a, FID_EPS)?).abs();
    within(asym.max(fid(&a, &a, FID_EPS)?), 1e-8)
}

fn fid_translation(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(40);
    let d = 4;
    let a = feature_set(&mut r, 40, d, &[0.0; 4]);
    let b = feature_set(&mut r, 40, d, &[0.3, 0.0, -0.4, 0.1]);
    let shift = [1.5, -2.0, 0.25, 3.0];
    let move_by = |s: &FeatureSet, v: &[f64]| {
        FeatureSet::new(Matrix::from_fn(s.items(), d, |i, c| {
            s.vectors()[(i, c)] + v[c]
        }))
    };
    let base = fid(&a, &b, FID_EPS)?;
    let both = fid(&move_by(&a, &shift), &move_by(&b, &shift), FID_EPS)?;
    let v = [0.7, -0.1, 0.4, 2.0];
    let one = fid(&a, &move_by(&a, &v), FID_EPS)?;
    let v2: f64 = v.iter().map(|x| x * x).sum();
    within((both - base).abs().max((one - v2).abs()), 1e-8)
}

fn diversity_invariance(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(41);
    let d = 6;
    let s = feature_set(&mut r, 12, d, &[0.0; 6]);
    let q = random_orthogonal(&mut r, d);
    let t: Vec<f64> = (0..d).map(|_| r.gen_range(-10.0..10.0)).collect();
    let moved = s.vectors().matmul(&q)?.add_row(&t)?;
    within(
        (diversity(&s)? - diversity(&FeatureSet::new(moved))?).abs(),
        1e-10,
    )
}

fn beat_align_monotone(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(42);
    for _ in 0..200 {
        let music: Vec<usize> = {
            let mut v: Vec<usize> = (0..r.gen_range(1..6))
                .map(|_| r.gen_range(0..100))
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut motion: Vec<usize> = (0..r.gen_range(1..6))
            .map(|_| r.gen_range(0..100))
            .collect();
        motion.sort_unstable();
        motion.dedup();
        let score = |m: &[usize]| -> Result<f64> {
            let mut v = m.to_vec();
            v.sort_unstable();
            v.dedup();
            if v.len() != m.len() {
                return Ok(f64::NAN);
            }
            beat_align(
                &BeatTimeline::new(v, 60)?,
                &BeatTimeline::new(music.clone(), 60)?,
                3.0,
            )
        };
        let before = score(&motion)?;
        let i = r.gen_range(0..motion.len());
        let nearest = *music
            .iter()
            .min_by_key(|&&b| b.abs_diff(motion[i]))
            .expect("nonempty");
        if nearest == motion[i] {
            continue;
        }
        let mut moved = motion.clone();
        moved[i] = if nearest > motion[i] {
            motion[i] + 1
        } else {
            motion[i] - 1
        };
        let after = score(&moved)?;
        if after.is_finite() && after < before {
            return flag(
                false,
                format!(
                    "moving beat {} toward {nearest} lowered the score",
                    motion[i]
                ),
            );
        }
    }
    flag(true, "")
}

fn beat_align_self(_: &Ctx) -> Result<Outcome> {
    let mut r = rng(43);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut v: Vec<usize> = (0..r.gen_range(1..20))
            .map(|_| r.gen_range(0..1000))
            .collect();
        v.sort_unstable();
        v.dedup();
        let t = BeatTimeline::new(v, 60)?;
        worst = worst.max((beat_align(&t, &t, 3.0)? - 1.0).abs());
    }
    flag(worst == 0.0, format!("deviation {worst:e}"))
}

fn synth_beats_match(_: &Ctx) -> Result<Outcome> {
    for (seed, period) in [(5u64, 12usize), (6, 15), (7, 20), (8, 26)] {
        let (_, motion) = synth_pair(seed, 4.0, 60, period)?;
        let got = motion_beats(&motion, 60)?;
        let want: Vec<usize> = synth_beat_frames(motion.rows(), period)
            .into_iter()
            .filter(|&b| b >= 1 && b + 1 < motion.rows())
            .collect();
        if got.frames() != want.as_slice() {
            return flag(
                false,
                format!("period {period}: beats {:?} vs {:?}", got.frames(), want),
            );
        }
    }
    flag(true, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_every_invariant() {
        assert_eq!(CHECKS.len(), INVARIANT_COUNT);
        assert_eq!(suite_len(Suite::All), INVARIANT_COUNT);
        let split: usize = [
            Suite::Algebra,
            Suite::Spe,
            Suite::Qra,
            Suite::Grad,
            Suite::Metrics,
            Suite::Model,
        ]
        .into_iter()
        .map(suite_len)
        .sum();
        assert_eq!(split, INVARIANT_COUNT);
        assert!(suite_len(Suite::Algebra) >= 6);
    }

    #[test]
    fn algebra_suite_passes_and_fault_is_caught() {
        let clean = run_suite(Suite::Algebra, None);
        assert!(clean.iter().all(|c| c.passed), "{clean:?}");
        let faulty = run_suite(Suite::Algebra, Some(Fault::HamiltonSign));
        assert!(faulty.iter().any(|c| !c.passed && c.module == "quaternion"));
    }
}
