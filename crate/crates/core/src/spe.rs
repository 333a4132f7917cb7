//! Spin position embedding: pairwise rotation of query/key coordinates by
//! position-proportional angles so that attention logits depend only on the
//! relative offset between positions.

use crate::error::{dim_err, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_ROTARY_BASE: f64 = 10000.0;

/// Per-pair rotation frequencies `θ_t = base^(-2t/dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotarySchedule<T = f64> {
    dim: usize,
    base: T,
    angles: Vec<T>,
}

impl<T: Scalar> RotarySchedule<T> {
    pub fn new(dim: usize, base: T) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return dim_err(format!(
                "rotary dimension must be even and positive, got {dim}"
            ));
        }
        if !(base > T::one()) {
            return dim_err(format!("rotary base must exceed 1, got {base}"));
        }
        let d = T::from_usize_lossy(dim);
        let angles = (0..dim / 2)
            .map(|t| base.powf(-T::lit(2.0) * T::from_usize_lossy(t) / d))
            .collect();
        Ok(Self { dim, base, angles })
    }

    /// Schedule with explicit per-pair angles (e.g. all zero for the
    /// degenerate identity embedding).
    pub fn with_angles(angles: Vec<T>) -> Result<Self> {
        if angles.is_empty() {
            return dim_err("empty rotary schedule");
        }
        Ok(Self {
            dim: angles.len() * 2,
            base: T::zero(),
            angles,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> T {
        self.base
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return dim_err(format!(
                "vector of length {len} for rotary dim {}",
                self.dim
            ));
        }
        Ok(())
    }
}

fn rotate_pairs<T: Scalar>(x: &[T], out: &mut [T], pos: T, angles: &[T]) {
    for (t, &theta) in angles.iter().enumerate() {
        let (s, c) = (pos * theta).sin_cos();
        let (a, b) = (x[2 * t], x[2 * t + 1]);
        out[2 * t] = c * a - s * b;
        out[2 * t + 1] = s * a + c * b;
    }
}

/// Rotates each coordinate pair `(x[2t], x[2t+1])` by `pos·θ_t`.
pub fn rope_rotate<T: Scalar>(x: &[T], pos: usize, sched: &RotarySchedule<T>) -> Result<Vec<T>> {
    sched.check(x.len())?;
    let mut out = vec![T::zero(); x.len()];
    rotate_pairs(x, &mut out, T::from_usize_lossy(pos), &sched.angles);
    Ok(out)
}

/// Same rotation written as multiplication of `x[2t] + i·x[2t+1]` by
/// `e^{i·pos·θ_t}`.
pub fn rope_rotate_complex<T: Scalar>(
    x: &[T],
    pos: usize,
    sched: &RotarySchedule<T>,
) -> Result<Vec<T>> {
    sched.check(x.len())?;
    let p = T::from_usize_lossy(pos);
    let mut out = Vec::with_capacity(x.len());
    for (t, &theta) in sched.angles.iter().enumerate() {
        let (re, im) = (x[2 * t], x[2 * t + 1]);
        let (wr, wi) = ((p * theta).cos(), (p * theta).sin());
        out.push(re * wr - im * wi);
        out.push(re * wi + im * wr);
    }
    Ok(out)
}

/// Rotates row `r` of `m` as position `r + offset`. Negative `offset`
/// rotates backwards, which makes `rope_rows(·, -p)` the adjoint of a
/// rotation at `+p` when applied per row.
pub fn rope_rows<T: Scalar>(
    m: &Matrix<T>,
    sched: &RotarySchedule<T>,
    offset: i64,
) -> Result<Matrix<T>> {
    sched.check(m.cols())?;
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let pos = T::lit((r as i64 + offset) as f64);
        rotate_pairs(m.row(r), out.row_mut(r), pos, &sched.angles);
    }
    Ok(out)
}

/// Transpose of [`rope_rows`]: rotates each row by the negated angle.
pub fn rope_rows_adjoint<T: Scalar>(
    g: &Matrix<T>,
    sched: &RotarySchedule<T>,
    offset: i64,
) -> Result<Matrix<T>> {
    sched.check(g.cols())?;
    let mut out = Matrix::zeros(g.rows(), g.cols());
    for r in 0..g.rows() {
        let pos = -T::lit((r as i64 + offset) as f64);
        rotate_pairs(g.row(r), out.row_mut(r), pos, &sched.angles);
    }
    Ok(out)
}

/// Unscaled rotary logits `⟨R(s+q_offset)Q[s], R(t+k_offset)K[t]⟩`.
pub fn rope_logits<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    sched: &RotarySchedule<T>,
    q_offset: i64,
    k_offset: i64,
) -> Result<Matrix<T>> {
    let rq = rope_rows(q, sched, q_offset)?;
    let rk = rope_rows(k, sched, k_offset)?;
    rq.matmul_bt(&rk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn schedule_shape() {
        let s = RotarySchedule::<f64>::new(8, 10000.0).unwrap();
        assert_eq!(s.angles().len(), 4);
        assert_eq!(s.angles()[0], 1.0);
        assert!(s.angles().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!((s.angles()[1] - 0.1).abs() < 1e-15);
        assert!(RotarySchedule::new(7, 10000.0).is_err());
    }

    #[test]
    fn zero_position_is_identity() {
        let s = RotarySchedule::new(6, 10000.0).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 4.0];
        assert_eq!(rope_rotate(&x, 0, &s).unwrap(), x.to_vec());
    }

    #[test]
    fn quarter_turn() {
        let s = RotarySchedule::with_angles(vec![FRAC_PI_2]).unwrap();
        let y = rope_rotate(&[1.0, 0.0], 1, &s).unwrap();
        assert!(y[0].abs() < 1e-16 && (y[1] - 1.0).abs() < 1e-16);
        let q = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let logits = rope_logits(&q, &k, &s, 0, 0).unwrap();
        assert!((logits[(1, 0)] - 0.0).abs() < 1e-16);
        assert!((logits[(0, 0)] - 1.0).abs() < 1e-16);
    }

    #[test]
    fn zero_angles_give_plain_product() {
        let s = RotarySchedule::with_angles(vec![0.0; 2]).unwrap();
        let q = Matrix::from_fn(3, 4, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
        let k = Matrix::from_fn(2, 4, |r, c| (r * c) as f64 - 0.25);
        assert_eq!(
            rope_logits(&q, &k, &s, 5, 9).unwrap(),
            q.matmul_bt(&k).unwrap()
        );
    }

    #[test]
    fn adjoint_inverts_rotation() {
        let s = RotarySchedule::new(4, 100.0).unwrap();
        let m = Matrix::from_fn(5, 4, |r, c| ((r + 2 * c) % 5) as f64 - 2.0);
        let back = rope_rows_adjoint(&rope_rows(&m, &s, 3).unwrap(), &s, 3).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-14);
        assert!(rope_rotate(&[1.0; 3], 1, &s).is_err());
    }
}
