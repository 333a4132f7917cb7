//! Central-difference checks of every differentiable tape operation.

use qean::numerics::{grad_check, GradCheckOptions, Matrix, ParamGroup};
use qean::qra::{qra_attention, qra_attention_tape, QraParams, QraVars};
use qean::quaternion::Axis;
use qean::spe::RotarySchedule;
use qean::tape::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Builds `graph` on a fresh tape with `params` as leaves, reduces the output
/// with a fixed random projection, and checks the gradient of every leaf.
fn check_op(
    name: &str,
    params: Vec<Matrix>,
    seed: u64,
    graph: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let eval = |values: &[Matrix], want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = graph(&mut tape, &vars);
        let (r, c) = tape.value(out).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let proj = tape.input(rand_matrix(&mut rng, r, c));
        let flat = tape.reshape(out, 1, r * c).unwrap();
        let pflat = tape.reshape(proj, r * c, 1).unwrap();
        let loss = tape.matmul(flat, pflat).unwrap();
        let value = tape.value(loss)[(0, 0)];
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .zip(values)
            .map(|(v, m)| {
                grads
                    .get(*v)
                    .map(|g| g.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; m.data().len()])
            })
            .collect();
        (value, g)
    };
    let (_, analytic) = eval(&params, true);
    let groups: Vec<ParamGroup> = params
        .iter()
        .zip(analytic)
        .enumerate()
        .map(|(i, (m, g))| ParamGroup::new(format!("{name}[{i}]"), m.data().to_vec(), g))
        .collect();
    let shapes: Vec<(usize, usize)> = params.iter().map(|m| m.shape()).collect();
    let report = grad_check(
        |p| {
            let mats: Vec<Matrix> = p
                .iter()
                .zip(&shapes)
                .map(|(v, &(r, c))| Matrix::new(r, c, v.clone()).unwrap())
                .collect();
            eval(&mats, false).0
        },
        &groups,
        GradCheckOptions::new(H, TOL),
    )
    .unwrap();
    assert!(report.passed(), "{name}: {:?}", report.groups);
    report.max_rel_error()
}

#[test]
fn matmul_variants_and_add() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 4, 2);
    let c = rand_matrix(&mut rng, 5, 4);
    check_op("matmul", vec![a.clone(), b], 1, |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    check_op("matmul_bt", vec![a.clone(), c], 2, |t, v| {
        t.matmul_bt(v[0], v[1]).unwrap()
    });
    let row = rand_matrix(&mut rng, 1, 4);
    check_op("add_row", vec![a.clone(), row], 3, |t, v| {
        t.add_row(v[0], v[1]).unwrap()
    });
    check_op("add_scale", vec![a.clone(), a.scale(0.5)], 4, |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        t.scale(s, -1.7)
    });
}

#[test]
fn activations_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep relu inputs away from the kink
    let x = rand_matrix(&mut rng, 4, 5).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    check_op("relu", vec![x.clone()], 5, |t, v| t.relu(v[0]));
    check_op("pi_tanh", vec![x.clone()], 6, |t, v| t.pi_tanh(v[0]));
    check_op("softmax", vec![x.scale(3.0)], 7, |t, v| {
        t.softmax_rows(v[0])
    });
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_matrix(&mut rng, 3, 6);
    let g = rand_matrix(&mut rng, 1, 6);
    let b = rand_matrix(&mut rng, 1, 6);
    check_op("layer_norm", vec![x, g, b], 8, |t, v| {
        t.layer_norm(v[0], v[1], v[2]).unwrap()
    });
}

#[test]
fn conv1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_matrix(&mut rng, 6, 3);
    let w = rand_matrix(&mut rng, 9, 2);
    let b = rand_matrix(&mut rng, 1, 2);
    check_op("conv1d", vec![x, w, b], 9, |t, v| {
        t.conv1d(v[0], v[1], v[2], 3).unwrap()
    });
}

#[test]
fn rope_and_reshaping() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sched = RotarySchedule::new(6, 100.0).unwrap();
    let x = rand_matrix(&mut rng, 4, 6);
    check_op("rope", vec![x.clone()], 10, |t, v| {
        t.rope(v[0], &sched, 3).unwrap()
    });
    let y = rand_matrix(&mut rng, 2, 6);
    check_op("slice_concat", vec![x.clone(), y], 11, |t, v| {
        let a = t.slice_cols(v[0], 1, 3).unwrap();
        let b = t.slice_rows(v[0], 1, 2).unwrap();
        let b = t.slice_cols(b, 0, 3).unwrap();
        let c = t.slice_cols(v[1], 3, 3).unwrap();
        let rows = t.concat_rows(&[a, b, c]).unwrap();
        let d = t.slice_rows(rows, 0, 8).unwrap();
        let e = t.concat_cols(&[d, d]).unwrap();
        t.reshape(e, 4, 12).unwrap()
    });
}

#[test]
fn mse_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = rand_matrix(&mut rng, 3, 4);
    let target = rand_matrix(&mut rng, 3, 4);
    check_op("mse", vec![p], 12, |t, v| t.mse(v[0], &target).unwrap());
}

#[test]
fn rotary_similarity_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = rand_matrix(&mut rng, 3, 8);
    let k = rand_matrix(&mut rng, 4, 8);
    let oq = rand_matrix(&mut rng, 3, 2).map(f64::abs);
    let tq = rand_matrix(&mut rng, 3, 2);
    let ok = rand_matrix(&mut rng, 4, 2).map(f64::abs);
    let tk = rand_matrix(&mut rng, 4, 2);
    for axes in [(Axis::I, Axis::J), (Axis::I, Axis::I), (Axis::K, Axis::J)] {
        check_op(
            "rotary_similarity",
            vec![
                q.clone(),
                k.clone(),
                oq.clone(),
                tq.clone(),
                ok.clone(),
                tk.clone(),
            ],
            13,
            |t, v| {
                t.rotary_similarity(v[0], v[1], v[2], v[3], v[4], v[5], axes)
                    .unwrap()
            },
        );
    }
}

fn qra_param_matrices(p: &QraParams) -> Vec<Matrix> {
    let mut out = vec![p.w_q.clone(), p.w_k.clone(), p.w_v.clone()];
    for k in [&p.freq_q, &p.phase_q, &p.freq_k, &p.phase_k] {
        out.push(k.weights().clone());
        out.push(Matrix::row_vector(k.bias()));
    }
    out
}

#[test]
fn full_qra_layer_d8_p2() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = QraParams::random(8, 8, 2, 0.8, &mut rng).unwrap();
    let x = rand_matrix(&mut rng, 5, 8);
    let y = rand_matrix(&mut rng, 6, 8);
    let mut params = vec![x.clone(), y.clone()];
    params.extend(qra_param_matrices(&p));
    let err = check_op("qra", params, 14, |t, v| {
        let vars = QraVars {
            w_q: v[2],
            w_k: v[3],
            w_v: v[4],
            freq_q: (v[5], v[6]),
            phase_q: (v[7], v[8]),
            freq_k: (v[9], v[10]),
            phase_k: (v[11], v[12]),
        };
        qra_attention_tape(t, v[0], v[1], &vars, (Axis::I, Axis::J)).unwrap()
    });
    assert!(err < TOL);
    // the tape forward is the same function as the direct one
    let mut tape = Tape::new();
    let (xv, yv) = (tape.input(x.clone()), tape.input(y.clone()));
    let vars = QraVars::register(&mut tape, &p);
    let out = qra_attention_tape(&mut tape, xv, yv, &vars, p.axes).unwrap();
    assert!(
        tape.value(out)
            .max_abs_diff(&qra_attention(&x, &y, &p).unwrap())
            < 1e-13
    );
}
