use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Eigenvalues and column eigenvectors of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen<T = f64> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition. Only the upper triangle is trusted to be
/// the mirror of the lower one; callers check symmetry.
pub fn sym_eigen<T: Scalar>(s: &Matrix<T>) -> Result<SymEigen<T>> {
    let n = s.rows();
    if n != s.cols() {
        return dim_err(format!("eigendecomposition of {}x{}", s.rows(), s.cols()));
    }
    let mut a = s.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius().max(T::min_positive_value());
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= T::epsilon() * scale * T::lit(1e-2) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let two = T::lit(2.0);
                let tau = (a[(q, q)] - a[(p, p)]) / (two * apq);
                let t = tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: (0..n).map(|i| a[(i, i)]).collect(),
        vectors: v,
    })
}

/// `V diag(f(λ)) Vᵀ`.
pub fn sym_apply<T: Scalar>(eig: &SymEigen<T>, f: impl Fn(T) -> T) -> Matrix<T> {
    let n = eig.values.len();
    let mut out = Matrix::zeros(n, n);
    for (k, &lambda) in eig.values.iter().enumerate() {
        let fl = f(lambda);
        for i in 0..n {
            let vi = eig.vectors[(i, k)] * fl;
            for j in 0..n {
                out[(i, j)] += vi * eig.vectors[(j, k)];
            }
        }
    }
    out
}

const SYMMETRY_TOL: f64 = 1e-9;

fn check_symmetric<T: Scalar>(s: &Matrix<T>) -> Result<()> {
    if s.rows() != s.cols() {
        return dim_err(format!("{}x{} is not square", s.rows(), s.cols()));
    }
    let asym = s.max_asymmetry().to_f64_lossy();
    if !(asym <= SYMMETRY_TOL) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Principal square root of `S + eps·I`; negative eigenvalues clamp to zero.
pub fn sym_sqrt<T: Scalar>(s: &Matrix<T>, eps: T) -> Result<Matrix<T>> {
    check_symmetric(s)?;
    let mut shifted = s.clone();
    for i in 0..s.rows() {
        shifted[(i, i)] += eps;
    }
    let eig = sym_eigen(&shifted)?;
    let root = sym_apply(&eig, |l| l.max(T::zero()).sqrt());
    // exact symmetry of the result
    Ok(Matrix::from_fn(root.rows(), root.cols(), |r, c| {
        (root[(r, c)] + root[(c, r)]) * T::lit(0.5)
    }))
}

/// Inverse principal square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt<T: Scalar>(s: &Matrix<T>) -> Result<Matrix<T>> {
    check_symmetric(s)?;
    let eig = sym_eigen(s)?;
    if eig.values.iter().any(|&l| !(l > T::zero())) {
        return Err(Error::NotRotation("matrix is singular".into()));
    }
    Ok(sym_apply(&eig, |l| T::one() / l.sqrt()))
}

pub fn det3<T: Scalar>(m: &Matrix<T>) -> T {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}
