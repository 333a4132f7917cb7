//! Quaternion algebra, the real-vector to quaternion grouping used by the
//! attention layers, and unit quaternion / rotation matrix conversion.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::numerics::{det3, Matrix};
use crate::scalar::Scalar;

/// `e + f·i + g·j + h·k`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quaternion<T = f64> {
    pub e: T,
    pub f: T,
    pub g: T,
    pub h: T,
}

/// Imaginary unit used as a rotation axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    I,
    J,
    K,
}

impl<T: Scalar> Quaternion<T> {
    pub const fn new(e: T, f: T, g: T, h: T) -> Self {
        Self { e, f, g, h }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn one() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// The basis element `i`, `j` or `k`.
    pub fn unit(axis: Axis) -> Self {
        let (o, z) = (T::one(), T::zero());
        match axis {
            Axis::I => Self::new(z, o, z, z),
            Axis::J => Self::new(z, z, o, z),
            Axis::K => Self::new(z, z, z, o),
        }
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.e, self.f, self.g, self.h]
    }

    pub fn scale(self, gamma: T) -> Self {
        Self::new(
            gamma * self.e,
            gamma * self.f,
            gamma * self.g,
            gamma * self.h,
        )
    }

    pub fn conj(self) -> Self {
        Self::new(self.e, -self.f, -self.g, -self.h)
    }

    pub fn dot(self, other: Self) -> T {
        self.e * other.e + self.f * other.f + self.g * other.g + self.h * other.h
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.e.is_finite() && self.f.is_finite() && self.g.is_finite() && self.h.is_finite()
    }

    pub fn max_abs_diff(self, other: Self) -> T {
        let d = self - other;
        d.e.abs().max(d.f.abs()).max(d.g.abs()).max(d.h.abs())
    }
}

/// Hamilton product `q ⊗ r`.
pub fn hamilton<T: Scalar>(q: Quaternion<T>, r: Quaternion<T>) -> Quaternion<T> {
    Quaternion::new(
        q.e * r.e - q.f * r.f - q.g * r.g - q.h * r.h,
        q.e * r.f + q.f * r.e + q.g * r.h - q.h * r.g,
        q.e * r.g - q.f * r.h + q.g * r.e + q.h * r.f,
        q.e * r.h + q.f * r.g - q.g * r.f + q.h * r.e,
    )
}

/// `cos(angle) + axis·sin(angle)`.
pub fn unit_exp<T: Scalar>(axis: Axis, angle: T) -> Quaternion<T> {
    let (s, c) = angle.sin_cos();
    let z = T::zero();
    match axis {
        Axis::I => Quaternion::new(c, s, z, z),
        Axis::J => Quaternion::new(c, z, s, z),
        Axis::K => Quaternion::new(c, z, z, s),
    }
}

impl<T: Scalar> Add for Quaternion<T> {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Self::new(self.e + r.e, self.f + r.f, self.g + r.g, self.h + r.h)
    }
}

impl<T: Scalar> Sub for Quaternion<T> {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Self::new(self.e - r.e, self.f - r.f, self.g - r.g, self.h - r.h)
    }
}

impl<T: Scalar> Neg for Quaternion<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.e, -self.f, -self.g, -self.h)
    }
}

impl<T: Scalar> Mul for Quaternion<T> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        hamilton(self, r)
    }
}

/// Groups consecutive 4-blocks of `v` into quaternions; a trailing remainder
/// of 1–3 entries is dropped.
pub fn quaternionize<T: Scalar>(v: &[T]) -> Result<Vec<Quaternion<T>>> {
    if v.len() < 4 {
        return Err(Error::InsufficientDims(v.len()));
    }
    Ok(v.chunks_exact(4).map(Quaternion::from_slice).collect())
}

/// Per-step quaternion slots, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QuaternionSeries<T = f64> {
    steps: usize,
    slots: usize,
    values: Vec<Quaternion<T>>,
}

impl<T: Scalar> QuaternionSeries<T> {
    pub fn new(steps: usize, slots: usize, values: Vec<Quaternion<T>>) -> Result<Self> {
        if values.len() != steps * slots {
            return Err(Error::DimensionMismatch(format!(
                "{} quaternions for {steps} steps of {slots} slots",
                values.len()
            )));
        }
        Ok(Self {
            steps,
            slots,
            values,
        })
    }

    /// Quaternionizes every row of `m`; `m.cols()` must be a multiple of 4.
    pub fn from_rows(m: &Matrix<T>) -> Result<Self> {
        if m.cols() % 4 != 0 || m.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} columns do not split into quaternions",
                m.cols()
            )));
        }
        let values = m
            .data()
            .chunks_exact(4)
            .map(Quaternion::from_slice)
            .collect();
        Ok(Self {
            steps: m.rows(),
            slots: m.cols() / 4,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn get(&self, step: usize, slot: usize) -> Quaternion<T> {
        self.values[step * self.slots + slot]
    }

    pub fn step(&self, step: usize) -> &[Quaternion<T>] {
        &self.values[step * self.slots..(step + 1) * self.slots]
    }

    pub fn values(&self) -> &[Quaternion<T>] {
        &self.values
    }

    /// Flattens back to a `steps x 4·slots` real matrix.
    pub fn to_matrix(&self) -> Matrix<T> {
        let data = self.values.iter().flat_map(|q| q.to_array()).collect();
        Matrix::new(self.steps, self.slots * 4, data).expect("series shape")
    }
}

const UNIT_TOL: f64 = 1e-6;

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat<T: Scalar>(q: Quaternion<T>) -> Result<Matrix<T>> {
    let n = q.norm();
    if !((n - T::one()).abs().to_f64_lossy() < UNIT_TOL) {
        return Err(Error::NotUnit(n.to_f64_lossy()));
    }
    let Quaternion {
        e: w,
        f: x,
        g: y,
        h: z,
    } = q;
    let one = T::one();
    let two = T::lit(2.0);
    let rows = [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ];
    Matrix::from_rows(&rows)
}

/// Unit quaternion of a rotation matrix, normalised to a nonnegative real
/// part (first nonzero imaginary component positive when the real part is 0).
pub fn rotmat_to_quat<T: Scalar>(r: &Matrix<T>) -> Result<Quaternion<T>> {
    if r.shape() != (3, 3) {
        return Err(Error::NotRotation(format!(
            "shape {}x{}",
            r.rows(),
            r.cols()
        )));
    }
    let orth = r
        .matmul_at(r)?
        .max_abs_diff(&Matrix::identity(3))
        .to_f64_lossy();
    let det = det3(r).to_f64_lossy();
    if !(orth < UNIT_TOL) || !((det - 1.0).abs() < UNIT_TOL) {
        return Err(Error::NotRotation(format!(
            "|RᵀR - I| = {orth:e}, det = {det}"
        )));
    }
    let quarter = T::lit(0.25);
    let one = T::one();
    let (m00, m11, m22) = (r[(0, 0)], r[(1, 1)], r[(2, 2)]);
    let trace = m00 + m11 + m22;
    // Shepperd: branch on the largest diagonal term for stability.
    let q = if trace > m00 && trace > m11 && trace > m22 {
        let s = (one + trace).sqrt() * T::lit(2.0);
        Quaternion::new(
            quarter * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if m00 > m11 && m00 > m22 {
        let s = (one + m00 - m11 - m22).sqrt() * T::lit(2.0);
        Quaternion::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            quarter * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if m11 > m22 {
        let s = (one + m11 - m00 - m22).sqrt() * T::lit(2.0);
        Quaternion::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            quarter * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (one + m22 - m00 - m11).sqrt() * T::lit(2.0);
        Quaternion::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            quarter * s,
        )
    };
    let q = q.scale(one / q.norm());
    let first = [q.e, q.f, q.g, q.h]
        .into_iter()
        .find(|v| *v != T::zero())
        .unwrap_or(one);
    Ok(if first < T::zero() { -q } else { q })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Q = Quaternion<f64>;

    #[test]
    fn componentwise_ops() {
        let a = Q::new(1., 2., 3., 4.);
        assert_eq!(a + Q::new(5., 6., 7., 8.), Q::new(6., 8., 10., 12.));
        assert_eq!(Q::new(1., -1., 0., 3.).scale(2.), Q::new(2., -2., 0., 6.));
        assert_eq!(a.conj(), Q::new(1., -2., -3., -4.));
    }

    #[test]
    fn basis_products() {
        let (i, j, k) = (
            Q::new(0., 1., 0., 0.),
            Q::new(0., 0., 1., 0.),
            Q::new(0., 0., 0., 1.),
        );
        assert_eq!(i * j, k);
        assert_eq!(j * i, -k);
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        assert_eq!(i * i, -Q::one());
        assert_eq!(i * j * k, -Q::one());
        let a = Q::new(1., 2., 3., 4.);
        assert_eq!(Q::one() * a, a);
    }

    #[test]
    fn hand_expanded_product() {
        let p = Q::new(1., 2., 3., 4.) * Q::new(5., 6., 7., 8.);
        assert_eq!(p, Q::new(-60., 12., 30., 24.));
        assert!((p.norm() - 5220f64.sqrt()).abs() < 1e-12);
        assert!((30f64.sqrt() * 174f64.sqrt() - 5220f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norms_and_exponentials() {
        assert_eq!(Q::zero().norm(), 0.0);
        assert_eq!(Q::new(1., 2., 3., 4.).norm(), 30f64.sqrt());
        assert_eq!(unit_exp(Axis::I, 0.0), Q::one());
        assert!(
            unit_exp(Axis::I, std::f64::consts::FRAC_PI_2).max_abs_diff(Q::new(0., 1., 0., 0.))
                < 1e-16
        );
        assert!(
            unit_exp(Axis::J, std::f64::consts::PI).max_abs_diff(Q::new(-1., 0., 0., 0.)) < 1e-15
        );
        for a in [-3.0f64, 0.1, 2.5, 100.0] {
            assert!((unit_exp(Axis::K, a).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quaternionize_grouping() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(
            quaternionize(&v).unwrap(),
            vec![Q::new(1., 2., 3., 4.), Q::new(5., 6., 7., 8.)]
        );
        let raw = vec![0.5; 254];
        assert_eq!(quaternionize(&raw).unwrap().len(), 63);
        assert_eq!(
            quaternionize(&[1.0, 2.0, 3.0]),
            Err(Error::InsufficientDims(3))
        );
    }

    #[test]
    fn rotation_examples() {
        assert!(
            quat_to_rotmat(Q::one())
                .unwrap()
                .max_abs_diff(&Matrix::identity(3))
                < 1e-16
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = quat_to_rotmat(Q::new(h, h, 0., 0.)).unwrap();
        let want = Matrix::from_rows(&[[1., 0., 0.], [0., 0., -1.], [0., 1., 0.]]).unwrap();
        assert!(r.max_abs_diff(&want) < 1e-15);
        // e_y maps to e_z under +90° about x
        let ey = Matrix::new(3, 1, vec![0., 1., 0.]).unwrap();
        assert!(
            r.matmul(&ey)
                .unwrap()
                .max_abs_diff(&Matrix::new(3, 1, vec![0., 0., 1.]).unwrap())
                < 1e-15
        );
        assert!(matches!(
            quat_to_rotmat(Q::new(1., 1., 0., 0.)),
            Err(Error::NotUnit(_))
        ));
        assert!(matches!(
            rotmat_to_quat(&Matrix::diag(&[1.0, 1.0, -1.0])),
            Err(Error::NotRotation(_))
        ));
        let back = rotmat_to_quat(&r).unwrap();
        assert!(back.max_abs_diff(Q::new(h, h, 0., 0.)) < 1e-15);
    }

    #[test]
    fn half_turn_sign_convention() {
        let r = Matrix::diag(&[1.0, -1.0, -1.0]);
        let q = rotmat_to_quat(&r).unwrap();
        assert!(q.max_abs_diff(Q::new(0., 1., 0., 0.)) < 1e-15);
    }
}
