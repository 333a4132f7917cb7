//! Reverse-mode differentiation over whole-matrix operations.
//!
//! Every forward op records its inputs and whatever it needs for the
//! backward pass; [`Tape::backward`] walks the record in reverse and
//! accumulates gradients sequentially, so results are bit-reproducible.

use crate::error::{dim_err, Result};
use crate::numerics::{col2im, im2col, pi_tanh, relu, softmax_rows, Matrix};
use crate::qra::{rotary_similarity_backward, rotary_similarity_forward, RotaryCache};
use crate::quaternion::Axis;
use crate::scalar::Scalar;
use crate::spe::{rope_rows, rope_rows_adjoint, RotarySchedule};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    PiTanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        width: usize,
        cols: Matrix<T>,
    },
    Rope {
        x: Var,
        sched: RotarySchedule<T>,
        offset: i64,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    RotarySimilarity {
        inputs: [Var; 6],
        cache: RotaryCache<T>,
    },
    Mse {
        pred: Var,
        target: Matrix<T>,
    },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T = f64> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Input => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Input, &[])
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Param, &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    /// Adds the single-row matrix `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let r = self.value(row);
        if r.rows() != 1 {
            return dim_err(format!("broadcast operand has {} rows", r.rows()));
        }
        let v = self.value(a).add_row(r.data())?;
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(relu);
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn pi_tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(pi_tanh);
        self.push(v, Op::PiTanh(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (1 x cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if self.value(gamma).shape() != (1, cols) || self.value(beta).shape() != (1, cols) {
            return dim_err(format!("layer norm affine parameters must be 1x{cols}"));
        }
        let n = T::from_usize_lossy(cols);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(xv.rows(), cols);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / n;
            let var = row
                .iter()
                .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
                / n;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, &gi), &bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Same-padded cross-correlation; `w` is `(width·in) x out`, `b` is `1 x out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, width: usize) -> Result<Var> {
        let (wv, bv) = (self.value(w), self.value(b));
        if width % 2 == 0 || wv.rows() != width * self.value(x).cols() {
            return dim_err(format!(
                "conv weights {}x{} for width {width} over {} channels",
                wv.rows(),
                wv.cols(),
                self.value(x).cols()
            ));
        }
        if bv.shape() != (1, wv.cols()) {
            return dim_err("conv bias must be a single row");
        }
        let cols = im2col(self.value(x), width);
        let v = cols.matmul(wv)?.add_row(bv.data())?;
        Ok(self.push(
            v,
            Op::Conv1d {
                x,
                w,
                b,
                width,
                cols,
            },
            &[x, w, b],
        ))
    }

    pub fn rope(&mut self, x: Var, sched: &RotarySchedule<T>, offset: i64) -> Result<Var> {
        let v = rope_rows(self.value(x), sched, offset)?;
        Ok(self.push(
            v,
            Op::Rope {
                x,
                sched: sched.clone(),
                offset,
            },
            &[x],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_rows(start, len)?;
        Ok(self.push(v, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&mats)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x).clone().reshape(rows, cols)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Unnormalised rotary quaternion similarity between queries `q` (N x d)
    /// and keys `k` (M x d), with per-step frequencies/phases of shape
    /// N x P (queries) and M x P (keys).
    #[allow(clippy::too_many_arguments)]
    pub fn rotary_similarity(
        &mut self,
        q: Var,
        k: Var,
        omega_q: Var,
        theta_q: Var,
        omega_k: Var,
        theta_k: Var,
        axes: (Axis, Axis),
    ) -> Result<Var> {
        let (s, cache) = rotary_similarity_forward(
            self.value(q),
            self.value(k),
            self.value(omega_q),
            self.value(theta_q),
            self.value(omega_k),
            self.value(theta_k),
            axes,
        )?;
        let inputs = [q, k, omega_q, theta_q, omega_k, theta_k];
        Ok(self.push(s, Op::RotarySimilarity { inputs, cache }, &inputs))
    }

    /// Mean squared error against a constant target, as a 1x1 value.
    pub fn mse(&mut self, pred: Var, target: &Matrix<T>) -> Result<Var> {
        let d = self.value(pred).sub(target)?;
        let n = T::from_usize_lossy(d.data().len().max(1));
        let loss = d.data().iter().fold(T::zero(), |a, &v| a + v * v) / n;
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }

    /// Backpropagates from the 1x1 value `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return dim_err("backward requires a scalar (1x1) loss");
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
    ) -> Result<()> {
        let mut acc = |v: Var, d: Matrix<T>| -> Result<()> {
            if !self.wants(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.matmul_bt(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).matmul_at(g)?)?;
                }
            }
            Op::MatMulBt(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.matmul(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    acc(*b, g.matmul_at(self.value(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone())?;
                acc(*row, Matrix::row_vector(&g.sum_rows()))?;
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s))?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                    if x[(r, c)] > T::zero() {
                        g[(r, c)]
                    } else {
                        T::zero()
                    }
                });
                acc(*a, d)?;
            }
            Op::PiTanh(a) => {
                let x = self.value(*a);
                let d = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                    let t = x[(r, c)].tanh();
                    g[(r, c)] * T::PI() * (T::one() - t * t)
                });
                acc(*a, d)?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot = y
                        .row(r)
                        .iter()
                        .zip(g.row(r))
                        .fold(T::zero(), |s, (&yi, &gi)| s + yi * gi);
                    for ((o, &yi), &gi) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = yi * (gi - dot);
                    }
                }
                acc(*a, d)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma).data();
                if self.wants(*gamma) {
                    acc(*gamma, Matrix::row_vector(&g.hadamard(xhat)?.sum_rows()))?;
                }
                if self.wants(*beta) {
                    acc(*beta, Matrix::row_vector(&g.sum_rows()))?;
                }
                if self.wants(*x) {
                    let cols = g.cols();
                    let n = T::from_usize_lossy(cols);
                    let mut dx = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        let dxhat: Vec<T> = g.row(r).iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let sum = dxhat.iter().fold(T::zero(), |a, &b| a + b);
                        let sum_x = dxhat
                            .iter()
                            .zip(xhat.row(r))
                            .fold(T::zero(), |a, (&d, &h)| a + d * h);
                        let scale = inv_std[r] / n;
                        for ((o, &d), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o = scale * (n * d - sum - h * sum_x);
                        }
                    }
                    acc(*x, dx)?;
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                width,
                cols,
            } => {
                if self.wants(*w) {
                    acc(*w, cols.matmul_at(g)?)?;
                }
                if self.wants(*b) {
                    acc(*b, Matrix::row_vector(&g.sum_rows()))?;
                }
                if self.wants(*x) {
                    let dcols = g.matmul_bt(self.value(*w))?;
                    acc(*x, col2im(&dcols, *width, self.value(*x).cols()))?;
                }
            }
            Op::Rope { x, sched, offset } => acc(*x, rope_rows_adjoint(g, sched, *offset)?)?,
            Op::SliceCols { x, start } => {
                let src = self.value(*x);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, d)?;
            }
            Op::SliceRows { x, start } => {
                let src = self.value(*x);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, d)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        acc(p, g.slice_cols(start, w)?)?;
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.wants(p) {
                        acc(p, g.slice_rows(start, h)?)?;
                    }
                    start += h;
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, g.clone().reshape(r, c)?)?;
            }
            Op::RotarySimilarity { inputs, cache } => {
                let [q, k, oq, tq, ok, tk] = *inputs;
                let d = rotary_similarity_backward(cache, self.value(q), self.value(k), g)?;
                acc(q, d.q)?;
                acc(k, d.k)?;
                acc(oq, d.omega_q)?;
                acc(tq, d.theta_q)?;
                acc(ok, d.omega_k)?;
                acc(tk, d.theta_k)?;
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let n = T::from_usize_lossy(p.data().len().max(1));
                let s = g[(0, 0)] * T::lit(2.0) / n;
                acc(*pred, p.sub(target)?.scale(s))?;
            }
        }
        Ok(())
    }
}
