use crate::error::{dim_err, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Same-padded 1D convolution kernel over the time axis.
///
/// `weights` is laid out as `(width * in_channels) x out_channels`; row
/// `tap * in_channels + c` holds the weights applied to input channel `c` at
/// time offset `tap - (width - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f64> {
    in_channels: usize,
    out_channels: usize,
    width: usize,
    weights: Matrix<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(width: usize, weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if width % 2 == 0 {
            return dim_err(format!("kernel width must be odd, got {width}"));
        }
        if weights.rows() % width != 0 {
            return dim_err(format!(
                "{} weight rows do not split into {width} taps",
                weights.rows()
            ));
        }
        if bias.len() != weights.cols() {
            return dim_err(format!(
                "bias of {} for {} outputs",
                bias.len(),
                weights.cols()
            ));
        }
        Ok(Self {
            in_channels: weights.rows() / width,
            out_channels: weights.cols(),
            width,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, width: usize) -> Result<Self> {
        Self::new(
            width,
            Matrix::zeros(width * in_channels, out_channels),
            vec![T::zero(); out_channels],
        )
    }

    /// Single input/output channel kernel from taps ordered `t-h ..= t+h`.
    pub fn scalar_taps(taps: &[T], bias: T) -> Result<Self> {
        Self::new(
            taps.len(),
            Matrix::new(taps.len(), 1, taps.to_vec())?,
            vec![bias],
        )
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
}

/// Stacks the zero-padded neighbourhood of every time step into one row.
pub(crate) fn im2col<T: Scalar>(x: &Matrix<T>, width: usize) -> Matrix<T> {
    let (steps, ch) = x.shape();
    let half = (width - 1) / 2;
    let mut cols = Matrix::zeros(steps, width * ch);
    for t in 0..steps {
        let dst = cols.row_mut(t);
        for tap in 0..width {
            let src = t as isize + tap as isize - half as isize;
            if src >= 0 && (src as usize) < steps {
                dst[tap * ch..(tap + 1) * ch].copy_from_slice(x.row(src as usize));
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Scalar>(cols: &Matrix<T>, width: usize, ch: usize) -> Matrix<T> {
    let steps = cols.rows();
    let half = (width - 1) / 2;
    let mut x = Matrix::zeros(steps, ch);
    for t in 0..steps {
        for tap in 0..width {
            let src = t as isize + tap as isize - half as isize;
            if src >= 0 && (src as usize) < steps {
                let g = &cols.row(t)[tap * ch..(tap + 1) * ch];
                for (d, &v) in x.row_mut(src as usize).iter_mut().zip(g) {
                    *d += v;
                }
            }
        }
    }
    x
}

/// Cross-correlation along time with symmetric zero padding; output length
/// equals input length. No activation is applied.
pub fn conv1d<T: Scalar>(x: &Matrix<T>, kernel: &ConvKernel<T>) -> Result<Matrix<T>> {
    if x.cols() != kernel.in_channels {
        return dim_err(format!(
            "conv1d input has {} channels, kernel expects {}",
            x.cols(),
            kernel.in_channels
        ));
    }
    im2col(x, kernel.width)
        .matmul(&kernel.weights)?
        .add_row(&kernel.bias)
}

/// Gradients of a scalar loss with respect to a conv1d call.
pub struct ConvGrads<T> {
    pub input: Matrix<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

pub fn conv1d_backward<T: Scalar>(
    x: &Matrix<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Matrix<T>,
) -> Result<ConvGrads<T>> {
    let cols = im2col(x, kernel.width);
    let weights = cols.matmul_at(grad_out)?;
    let dcols = grad_out.matmul_bt(&kernel.weights)?;
    Ok(ConvGrads {
        input: col2im(&dcols, kernel.width, kernel.in_channels),
        weights,
        bias: grad_out.sum_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Matrix {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn difference_kernel_hand_case() {
        let k = ConvKernel::scalar_taps(&[1.0, 0.0, -1.0], 0.0).unwrap();
        let y = conv1d(&column(&[1.0, 2.0, 3.0]), &k).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn identity_and_zero_kernels() {
        let x = Matrix::from_fn(6, 3, |r, c| (r as f64 - 2.0) * (c as f64 + 0.5));
        let mut w = Matrix::zeros(9, 3);
        for c in 0..3 {
            w[(3 + c, c)] = 1.0;
        }
        let ident = ConvKernel::new(3, w, vec![0.0; 3]).unwrap();
        assert_eq!(conv1d(&x, &ident).unwrap(), x);

        let zero = ConvKernel::new(3, Matrix::zeros(9, 2), vec![0.25, -1.5]).unwrap();
        let y = conv1d(&x, &zero).unwrap();
        for r in 0..6 {
            assert_eq!(y.row(r), &[0.25, -1.5]);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ConvKernel::<f64>::zeros(2, 2, 4).is_err());
        let k = ConvKernel::<f64>::zeros(2, 1, 3).unwrap();
        assert!(conv1d(&Matrix::zeros(4, 3), &k).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64 * 0.1 + 0.3);
        let g = Matrix::from_fn(5, 6, |r, c| ((r + c) % 4) as f64 - 1.5);
        let lhs = im2col(&x, 3).hadamard(&g).unwrap().sum();
        let rhs = x.hadamard(&col2im(&g, 3, 2)).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
