//! Randomised invariants across the numeric core, metrics and training
//! helpers.

use proptest::prelude::*;
use qean::features::{decode_motion_frame, encode_motion_frame, JOINTS};
use qean::metrics::{beat_align, diversity, fid, BeatTimeline, FeatureSet, FID_EPS};
use qean::numerics::{conv1d, softmax_rows, sym_sqrt, ConvKernel, Matrix};
use qean::qra::{canonical_attention, qra_attention, qra_attention_detailed, QraParams};
use qean::quaternion::{hamilton, quat_to_rotmat, rotmat_to_quat, Quaternion};
use qean::spe::{rope_logits, rope_rotate, RotarySchedule};
use qean::training::{lr_at, TrainConfig};
use qean::verify::qra_oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quat() -> impl Strategy<Value = Quaternion> {
    prop::array::uniform4(-3.0..3.0f64).prop_map(|[e, f, g, h]| Quaternion::new(e, f, g, h))
}

fn unit_quat() -> impl Strategy<Value = Quaternion> {
    quat()
        .prop_filter("non-degenerate", |q| q.norm() > 1e-3)
        .prop_map(|q| q.scale(1.0 / q.norm()))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn sized_matrix(
    rows: std::ops::RangeInclusive<usize>,
    cols: usize,
) -> impl Strategy<Value = Matrix> {
    rows.prop_flat_map(move |r| matrix(r, cols))
}

fn head(d_model: usize, d_attn: usize, periods: usize) -> impl Strategy<Value = QraParams> {
    any::<u64>().prop_map(move |s| {
        QraParams::random(
            d_model,
            d_attn,
            periods,
            0.8,
            &mut ChaCha8Rng::seed_from_u64(s),
        )
        .unwrap()
    })
}

fn beats() -> impl Strategy<Value = BeatTimeline> {
    prop::collection::btree_set(0usize..500, 1..12)
        .prop_map(|s| BeatTimeline::new(s.into_iter().collect(), 60).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hamilton_is_associative(p in quat(), q in quat(), r in quat()) {
        let d = hamilton(hamilton(p, q), r).max_abs_diff(hamilton(p, hamilton(q, r)));
        prop_assert!(d <= 1e-12, "{d}");
    }

    #[test]
    fn norm_is_multiplicative(p in quat(), q in quat()) {
        prop_assert!((hamilton(p, q).norm() - p.norm() * q.norm()).abs() <= 1e-10);
    }

    #[test]
    fn conjugate_reverses_products(p in quat(), q in quat()) {
        prop_assert!(hamilton(p, q).conj().max_abs_diff(hamilton(q.conj(), p.conj())) <= 1e-12);
    }

    #[test]
    fn real_part_of_product_with_conjugate_is_dot(p in quat(), q in quat()) {
        prop_assert!((hamilton(p, q.conj()).e - p.dot(q)).abs() <= 1e-12);
    }

    #[test]
    fn rotation_matrix_round_trip(q in unit_quat()) {
        let back = rotmat_to_quat(&quat_to_rotmat(q).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(q).min(back.max_abs_diff(q.scale(-1.0))) <= 1e-10);
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 5), b in matrix(5, 4), c in matrix(4, 2)) {
        let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(l.max_abs_diff(&r) <= 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(m in sized_matrix(1..=6, 7), shift in -50.0..50.0f64) {
        let s = softmax_rows(&m);
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(softmax_rows(&m.map(|v| v + shift)).max_abs_diff(&s) <= 1e-12);
    }

    #[test]
    fn conv1d_is_linear(x in matrix(9, 3), y in matrix(9, 3), w in matrix(9, 2), a in -2.0..2.0f64) {
        let k = ConvKernel::new(3, w, vec![0.0, 0.0]).unwrap();
        let lhs = conv1d(&x.scale(a).add(&y).unwrap(), &k).unwrap();
        let rhs = conv1d(&x, &k).unwrap().scale(a).add(&conv1d(&y, &k).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn sym_sqrt_squares_back(a in matrix(5, 5)) {
        let s = a.matmul_at(&a).unwrap();
        let root = sym_sqrt(&s, 0.0).unwrap();
        prop_assert!(root.matmul(&root).unwrap().max_abs_diff(&s) <= 1e-8);
    }

    #[test]
    fn rope_logits_depend_on_offset_only(
        q in sized_matrix(1..=8, 12),
        k in sized_matrix(1..=8, 12),
        delta in 0i64..2000,
    ) {
        let sched = RotarySchedule::new(12, 10000.0).unwrap();
        let a = rope_logits(&q, &k, &sched, 0, 0).unwrap();
        let b = rope_logits(&q, &k, &sched, delta, delta).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-10);
    }

    #[test]
    fn rope_preserves_norm(x in prop::collection::vec(-1.0..1.0f64, 16), pos in 0usize..5000) {
        let sched = RotarySchedule::new(16, 10000.0).unwrap();
        let y = rope_rotate(&x, pos, &sched).unwrap();
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((n(&x) - n(&y)).abs() <= 1e-12);
    }

    #[test]
    fn qra_rows_are_distributions(p in head(5, 8, 2), x in sized_matrix(1..=6, 5), y in sized_matrix(1..=6, 5)) {
        let w = qra_attention_detailed(&x, &y, &p).unwrap().weights;
        for r in 0..w.rows() {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn qra_without_rotation_is_canonical(p in head(4, 8, 1), x in sized_matrix(1..=6, 4), y in sized_matrix(1..=6, 4)) {
        let p = p.without_rotation();
        let got = qra_attention(&x, &y, &p).unwrap();
        let want = canonical_attention(&x.matmul(&p.w_q).unwrap(), &y.matmul(&p.w_k).unwrap(), &y.matmul(&p.w_v).unwrap()).unwrap();
        prop_assert!(got.max_abs_diff(&want) <= 1e-10);
    }

    #[test]
    fn qra_matches_straight_line_oracle(p in head(3, 8, 3), x in sized_matrix(1..=4, 3), y in sized_matrix(1..=4, 3)) {
        prop_assert!(qra_attention(&x, &y, &p).unwrap().max_abs_diff(&qra_oracle(&x, &y, &p)) <= 1e-10);
    }

    #[test]
    fn fid_is_symmetric_and_non_negative(a in matrix(12, 3), b in matrix(10, 3)) {
        let (a, b) = (FeatureSet::new(a), FeatureSet::new(b));
        let ab = fid(&a, &b, FID_EPS).unwrap();
        let ba = fid(&b, &a, FID_EPS).unwrap();
        prop_assert!(ab >= 0.0 && (ab - ba).abs() <= 1e-8);
        prop_assert!(fid(&a, &a, FID_EPS).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn diversity_ignores_common_translation(a in matrix(6, 4), t in prop::collection::vec(-5.0..5.0f64, 4)) {
        let moved = Matrix::from_fn(6, 4, |r, c| a[(r, c)] + t[c]);
        let d0 = diversity(&FeatureSet::new(a)).unwrap();
        let d1 = diversity(&FeatureSet::new(moved)).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-10);
    }

    #[test]
    fn beat_align_is_a_score(m in beats(), music in beats()) {
        let s = beat_align(&m, &music, 3.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(beat_align(&m, &m, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn motion_frames_round_trip(qs in prop::collection::vec(unit_quat(), JOINTS), t in prop::array::uniform3(-2.0..2.0f64)) {
        let frame = encode_motion_frame(&qs, t).unwrap();
        let (back, tb) = decode_motion_frame(&frame).unwrap();
        prop_assert_eq!(tb, t);
        for (a, b) in qs.iter().zip(&back) {
            prop_assert!(a.max_abs_diff(*b).min(a.max_abs_diff(b.scale(-1.0))) <= 1e-10);
        }
    }

    #[test]
    fn lr_schedule_never_increases(a in 0usize..400_000, b in 0usize..400_000) {
        let cfg = TrainConfig::paper();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_at(hi, &cfg) <= lr_at(lo, &cfg));
    }
}
