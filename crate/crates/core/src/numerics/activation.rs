use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// `π·tanh(x)`, strictly inside `(-π, π)` for finite input.
///
/// `tanh` rounds to exactly ±1 for |x| ≳ 19 in `f64`, so the result is pulled
/// back just inside the open interval.
pub fn pi_tanh<T: Scalar>(x: T) -> T {
    let bound = T::PI() * (T::one() - T::epsilon());
    let y = T::PI() * x.tanh();
    y.max(-bound).min(bound)
}

pub fn relu_matrix<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(relu)
}

pub fn pi_tanh_matrix<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(pi_tanh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions() {
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(2.0), 2.0);
        assert_eq!(pi_tanh(0.0), 0.0);
        let sat = pi_tanh(20.0f64);
        assert!(sat < std::f64::consts::PI);
        assert!((sat - std::f64::consts::PI).abs() < 1e-15);
    }
}
