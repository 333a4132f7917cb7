//! Quaternion rotary attention.
//!
//! Queries and keys are projected, viewed as rows of quaternions, rotated per
//! time step by angles `2π·ω·pos + θ` whose frequencies and phases come from
//! 1D convolutions over the projected sequence, and compared through the real
//! part of Hamilton products with the conjugated keys. With one period and
//! zero frequency and phase this is exactly scaled dot-product attention.

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{
    conv1d, pi_tanh_matrix, relu_matrix, require, softmax_rows, ConvKernel, Matrix,
};
use crate::quaternion::{hamilton, Axis, Quaternion, QuaternionSeries};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Kernel width of the frequency/phase convolutions.
pub const FREQ_KERNEL_WIDTH: usize = 3;

/// Normalised positions `[0, 1, …, L-1] / L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionVector<T = f64>(Vec<T>);

impl<T: Scalar> PositionVector<T> {
    pub fn new(len: usize) -> Self {
        let l = T::from_usize_lossy(len.max(1));
        Self((0..len).map(|i| T::from_usize_lossy(i) / l).collect())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Latent frequencies (`≥ 0`) and phases (`∈ (-π, π)`), both `steps x P`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqPhase<T = f64> {
    pub omega: Matrix<T>,
    pub theta: Matrix<T>,
}

impl<T: Scalar> FreqPhase<T> {
    pub fn zeros(steps: usize, periods: usize) -> Self {
        Self {
            omega: Matrix::zeros(steps, periods),
            theta: Matrix::zeros(steps, periods),
        }
    }

    pub fn periods(&self) -> usize {
        self.omega.cols()
    }

    /// Rotation angles `2π·ω[n,p]·pos[n] + θ[n,p]`.
    pub fn angles(&self, pos: &PositionVector<T>) -> Result<Matrix<T>> {
        rotation_angles(&self.omega, &self.theta, pos.as_slice())
    }
}

fn rotation_angles<T: Scalar>(
    omega: &Matrix<T>,
    theta: &Matrix<T>,
    pos: &[T],
) -> Result<Matrix<T>> {
    require(
        omega.shape() == theta.shape() && omega.rows() == pos.len(),
        || {
            format!(
                "frequency {:?} / phase {:?} shapes for {} positions",
                omega.shape(),
                theta.shape(),
                pos.len()
            )
        },
    )?;
    let tau = T::TAU();
    Ok(Matrix::from_fn(omega.rows(), omega.cols(), |n, p| {
        tau * omega[(n, p)] * pos[n] + theta[(n, p)]
    }))
}

/// Weights of one quaternion rotary attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct QraParams<T = f64> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub freq_q: ConvKernel<T>,
    pub phase_q: ConvKernel<T>,
    pub freq_k: ConvKernel<T>,
    pub phase_k: ConvKernel<T>,
    /// Rotation axes for queries and keys.
    pub axes: (Axis, Axis),
}

impl<T: Scalar> QraParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_q: Matrix<T>,
        w_k: Matrix<T>,
        w_v: Matrix<T>,
        freq_q: ConvKernel<T>,
        phase_q: ConvKernel<T>,
        freq_k: ConvKernel<T>,
        phase_k: ConvKernel<T>,
    ) -> Result<Self> {
        let p = Self {
            w_q,
            w_k,
            w_v,
            freq_q,
            phase_q,
            freq_k,
            phase_k,
            axes: (Axis::I, Axis::J),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.cols();
        if d % 4 != 0 || d == 0 {
            return Err(Error::HeadDimNotQuaternion(d));
        }
        require(self.w_k.shape() == self.w_q.shape(), || {
            "W_K shape differs from W_Q".into()
        })?;
        require(self.w_v.rows() == self.w_q.rows(), || {
            "W_V input dim differs from W_Q".into()
        })?;
        let periods = self.freq_q.out_channels();
        if periods == 0 {
            return dim_err("at least one period is required");
        }
        for k in [&self.freq_q, &self.phase_q, &self.freq_k, &self.phase_k] {
            require(k.in_channels() == d && k.out_channels() == periods, || {
                format!(
                    "frequency kernel {}→{} for d_attn {d}, {periods} periods",
                    k.in_channels(),
                    k.out_channels()
                )
            })?;
        }
        Ok(())
    }

    /// Gaussian-free uniform initialisation in `[-scale, scale]`.
    pub fn random(
        d_model: usize,
        d_attn: usize,
        periods: usize,
        scale: T,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut mat = |r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| T::lit(rng.gen_range(-1.0..1.0)) * scale)
        };
        let w_q = mat(d_model, d_attn);
        let w_k = mat(d_model, d_attn);
        let w_v = mat(d_model, d_attn);
        let mut kernels = Vec::new();
        for _ in 0..4 {
            let w = mat(FREQ_KERNEL_WIDTH * d_attn, periods);
            let b = mat(1, periods).into_data();
            kernels.push(ConvKernel::new(FREQ_KERNEL_WIDTH, w, b)?);
        }
        let phase_k = kernels.pop().unwrap();
        let freq_k = kernels.pop().unwrap();
        let phase_q = kernels.pop().unwrap();
        let freq_q = kernels.pop().unwrap();
        Self::new(w_q, w_k, w_v, freq_q, phase_q, freq_k, phase_k)
    }

    pub fn d_attn(&self) -> usize {
        self.w_q.cols()
    }

    pub fn periods(&self) -> usize {
        self.freq_q.out_channels()
    }

    /// Zeroes every frequency/phase kernel, reducing the head to canonical
    /// attention when `periods == 1`.
    pub fn without_rotation(mut self) -> Self {
        for k in [
            &mut self.freq_q,
            &mut self.phase_q,
            &mut self.freq_k,
            &mut self.phase_k,
        ] {
            *k = ConvKernel::zeros(k.in_channels(), k.out_channels(), k.width())
                .expect("valid shape");
        }
        self
    }
}

/// `ω = ReLU(conv(Z; W_ω))`, `θ = π·tanh(conv(Z; W_θ))`.
pub fn gen_freq_phase<T: Scalar>(
    z: &Matrix<T>,
    freq: &ConvKernel<T>,
    phase: &ConvKernel<T>,
) -> Result<FreqPhase<T>> {
    Ok(FreqPhase {
        omega: relu_matrix(&conv1d(z, freq)?),
        theta: pi_tanh_matrix(&conv1d(z, phase)?),
    })
}

/// `(cos a + axis·sin a)` and its derivative with respect to `a`.
fn rotor<T: Scalar>(axis: Axis, angle: T) -> (Quaternion<T>, Quaternion<T>) {
    let (s, c) = angle.sin_cos();
    let z = T::zero();
    match axis {
        Axis::I => (Quaternion::new(c, s, z, z), Quaternion::new(-s, c, z, z)),
        Axis::J => (Quaternion::new(c, z, s, z), Quaternion::new(-s, z, c, z)),
        Axis::K => (Quaternion::new(c, z, z, s), Quaternion::new(-s, z, z, c)),
    }
}

/// Right-multiplies every quaternion slot of row `n` by `rotor(angles[n])`.
fn rotate_rows<T: Scalar>(z: &Matrix<T>, angles: impl Fn(usize) -> T, axis: Axis) -> Matrix<T> {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for n in 0..z.rows() {
        let (u, _) = rotor(axis, angles(n));
        for (dst, src) in out
            .row_mut(n)
            .chunks_exact_mut(4)
            .zip(z.row(n).chunks_exact(4))
        {
            let r = hamilton(Quaternion::from_slice(src), u);
            dst.copy_from_slice(&r.to_array());
        }
    }
    out
}

/// Rotates each quaternionized row of `z` once per period.
pub fn series_rotate<T: Scalar>(
    z: &Matrix<T>,
    fp: &FreqPhase<T>,
    pos: &PositionVector<T>,
    axis: Axis,
) -> Result<Vec<QuaternionSeries<T>>> {
    if z.cols() % 4 != 0 || z.cols() == 0 {
        return Err(Error::HeadDimNotQuaternion(z.cols()));
    }
    require(fp.omega.rows() == z.rows(), || {
        format!(
            "frequencies for {} steps, input has {}",
            fp.omega.rows(),
            z.rows()
        )
    })?;
    let angles = fp.angles(pos)?;
    (0..fp.periods())
        .map(|p| QuaternionSeries::from_rows(&rotate_rows(z, |n| angles[(n, p)], axis)))
        .collect()
}

/// `1/(P·√d) Σ_p Σ_slot Re[Φ_p[n,slot] ⊗ conj(Ψ_p[m,slot])]`.
pub fn rotary_similarity<T: Scalar>(
    phi: &[QuaternionSeries<T>],
    psi: &[QuaternionSeries<T>],
    d_attn: usize,
) -> Result<Matrix<T>> {
    if phi.is_empty() || phi.len() != psi.len() {
        return dim_err(format!("{} query vs {} key periods", phi.len(), psi.len()));
    }
    let (n, m, slots) = (phi[0].steps(), psi[0].steps(), phi[0].slots());
    for s in phi.iter().chain(psi) {
        require(s.slots() == slots, || {
            format!("slot counts {} vs {slots}", s.slots())
        })?;
    }
    require(
        phi.iter().all(|s| s.steps() == n) && psi.iter().all(|s| s.steps() == m),
        || "ragged period series".into(),
    )?;
    let scale = T::one() / (T::from_usize_lossy(phi.len()) * T::from_usize_lossy(d_attn).sqrt());
    let mut out = Matrix::zeros(n, m);
    for (ph, ps) in phi.iter().zip(psi) {
        for i in 0..n {
            for j in 0..m {
                let mut acc = T::zero();
                for (&a, &b) in ph.step(i).iter().zip(ps.step(j)) {
                    acc += hamilton(a, b.conj()).e;
                }
                out[(i, j)] += acc;
            }
        }
    }
    Ok(out.scale(scale))
}

/// `softmax(QKᵀ/√d)·V`.
pub fn canonical_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d = T::from_usize_lossy(q.cols());
    softmax_rows(&q.matmul_bt(k)?.scale(T::one() / d.sqrt())).matmul(v)
}

/// Intermediate values of one attention evaluation.
#[derive(Clone, Debug)]
pub struct QraOutput<T = f64> {
    pub output: Matrix<T>,
    pub weights: Matrix<T>,
    pub query_fp: FreqPhase<T>,
    pub key_fp: FreqPhase<T>,
}

pub fn qra_attention_detailed<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    params: &QraParams<T>,
) -> Result<QraOutput<T>> {
    params.validate()?;
    let q = x.matmul(&params.w_q)?;
    let k = y.matmul(&params.w_k)?;
    let v = y.matmul(&params.w_v)?;
    let query_fp = gen_freq_phase(&q, &params.freq_q, &params.phase_q)?;
    let key_fp = gen_freq_phase(&k, &params.freq_k, &params.phase_k)?;
    let phi = series_rotate(&q, &query_fp, &PositionVector::new(q.rows()), params.axes.0)?;
    let psi = series_rotate(&k, &key_fp, &PositionVector::new(k.rows()), params.axes.1)?;
    let weights = softmax_rows(&rotary_similarity(&phi, &psi, params.d_attn())?);
    let output = weights.matmul(&v)?;
    Ok(QraOutput {
        output,
        weights,
        query_fp,
        key_fp,
    })
}

/// Queries from `x` (N x d_model) attend over keys/values from `y`
/// (M x d_model); returns N x d_attn.
pub fn qra_attention<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    params: &QraParams<T>,
) -> Result<Matrix<T>> {
    Ok(qra_attention_detailed(x, y, params)?.output)
}

/// Per-head width for `heads` heads over `d_model`, required to hold whole
/// quaternions.
pub fn quaternion_head_dim(d_model: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d_model % heads != 0 {
        return dim_err(format!("{d_model} not divisible into {heads} heads"));
    }
    let d = d_model / heads;
    if d % 4 != 0 {
        return Err(Error::HeadDimNotQuaternion(d));
    }
    Ok(d)
}

/// Concatenated per-head outputs projected by `w_o`.
pub fn multi_head_qra<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    heads: &[QraParams<T>],
    w_o: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d_head = quaternion_head_dim(x.cols(), heads.len())?;
    let mut outs = Vec::with_capacity(heads.len());
    for h in heads {
        require(h.d_attn() == d_head, || {
            format!("head width {} != {d_head}", h.d_attn())
        })?;
        outs.push(qra_attention(x, y, h)?);
    }
    let refs: Vec<&Matrix<T>> = outs.iter().collect();
    Matrix::concat_cols(&refs)?.matmul(w_o)
}

/// Saved state of a rotary similarity evaluation on the tape.
pub(crate) struct RotaryCache<T> {
    phi: Vec<Matrix<T>>,
    psi: Vec<Matrix<T>>,
    angles_q: Matrix<T>,
    angles_k: Matrix<T>,
    pos_q: Vec<T>,
    pos_k: Vec<T>,
    axes: (Axis, Axis),
    scale: T,
}

pub(crate) struct RotaryGrads<T> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub omega_q: Matrix<T>,
    pub theta_q: Matrix<T>,
    pub omega_k: Matrix<T>,
    pub theta_k: Matrix<T>,
}

pub(crate) fn rotary_similarity_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    omega_q: &Matrix<T>,
    theta_q: &Matrix<T>,
    omega_k: &Matrix<T>,
    theta_k: &Matrix<T>,
    axes: (Axis, Axis),
) -> Result<(Matrix<T>, RotaryCache<T>)> {
    let d = q.cols();
    if d % 4 != 0 || d == 0 {
        return Err(Error::HeadDimNotQuaternion(d));
    }
    require(k.cols() == d, || {
        format!("query width {d} vs key width {}", k.cols())
    })?;
    let periods = omega_q.cols();
    require(periods > 0 && omega_k.cols() == periods, || {
        "period counts differ".into()
    })?;
    let pos_q = PositionVector::new(q.rows()).0;
    let pos_k = PositionVector::new(k.rows()).0;
    let angles_q = rotation_angles(omega_q, theta_q, &pos_q)?;
    let angles_k = rotation_angles(omega_k, theta_k, &pos_k)?;
    let scale = T::one() / (T::from_usize_lossy(periods) * T::from_usize_lossy(d).sqrt());
    let mut phi = Vec::with_capacity(periods);
    let mut psi = Vec::with_capacity(periods);
    let mut s = Matrix::zeros(q.rows(), k.rows());
    for p in 0..periods {
        let a = rotate_rows(q, |n| angles_q[(n, p)], axes.0);
        let b = rotate_rows(k, |m| angles_k[(m, p)], axes.1);
        s.add_assign(&a.matmul_bt(&b)?)?;
        phi.push(a);
        psi.push(b);
    }
    let s = s.scale(scale);
    Ok((
        s,
        RotaryCache {
            phi,
            psi,
            angles_q,
            angles_k,
            pos_q,
            pos_k,
            axes,
            scale,
        },
    ))
}

/// Pulls `d_rot` (gradient w.r.t. the rotated rows) back through the
/// right-multiplication by the rotor.
fn unrotate<T: Scalar>(
    src: &Matrix<T>,
    d_rot: &Matrix<T>,
    angle: impl Fn(usize) -> T,
    axis: Axis,
    d_src: &mut Matrix<T>,
    d_angle: &mut [T],
) {
    for n in 0..src.rows() {
        let (u, du) = rotor(axis, angle(n));
        let uc = u.conj();
        let mut da = T::zero();
        for ((ds, s), g) in d_src
            .row_mut(n)
            .chunks_exact_mut(4)
            .zip(src.row(n).chunks_exact(4))
            .zip(d_rot.row(n).chunks_exact(4))
        {
            let gq = Quaternion::from_slice(g);
            let back = hamilton(gq, uc);
            for (o, v) in ds.iter_mut().zip(back.to_array()) {
                *o += v;
            }
            da += gq.dot(hamilton(Quaternion::from_slice(s), du));
        }
        d_angle[n] = da;
    }
}

pub(crate) fn rotary_similarity_backward<T: Scalar>(
    cache: &RotaryCache<T>,
    q: &Matrix<T>,
    k: &Matrix<T>,
    g: &Matrix<T>,
) -> Result<RotaryGrads<T>> {
    let periods = cache.phi.len();
    let mut dq = Matrix::zeros(q.rows(), q.cols());
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    let mut omega_q = Matrix::zeros(q.rows(), periods);
    let mut theta_q = Matrix::zeros(q.rows(), periods);
    let mut omega_k = Matrix::zeros(k.rows(), periods);
    let mut theta_k = Matrix::zeros(k.rows(), periods);
    let gs = g.scale(cache.scale);
    let tau = T::TAU();
    let mut da_q = vec![T::zero(); q.rows()];
    let mut da_k = vec![T::zero(); k.rows()];
    for p in 0..periods {
        let d_phi = gs.matmul(&cache.psi[p])?;
        let d_psi = gs.matmul_at(&cache.phi[p])?;
        unrotate(
            q,
            &d_phi,
            |n| cache.angles_q[(n, p)],
            cache.axes.0,
            &mut dq,
            &mut da_q,
        );
        unrotate(
            k,
            &d_psi,
            |m| cache.angles_k[(m, p)],
            cache.axes.1,
            &mut dk,
            &mut da_k,
        );
        for (n, &da) in da_q.iter().enumerate() {
            theta_q[(n, p)] = da;
            omega_q[(n, p)] = da * tau * cache.pos_q[n];
        }
        for (m, &da) in da_k.iter().enumerate() {
            theta_k[(m, p)] = da;
            omega_k[(m, p)] = da * tau * cache.pos_k[m];
        }
    }
    Ok(RotaryGrads {
        q: dq,
        k: dk,
        omega_q,
        theta_q,
        omega_k,
        theta_k,
    })
}

/// Tape handles for the weights of one head.
#[derive(Clone, Copy, Debug)]
pub struct QraVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub freq_q: (Var, Var),
    pub phase_q: (Var, Var),
    pub freq_k: (Var, Var),
    pub phase_k: (Var, Var),
}

impl QraVars {
    /// Records `params` on the tape as trainable leaves.
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &QraParams<T>) -> Self {
        let mut kernel = |k: &ConvKernel<T>| {
            (
                tape.param(k.weights().clone()),
                tape.param(Matrix::row_vector(k.bias())),
            )
        };
        let freq_q = kernel(&params.freq_q);
        let phase_q = kernel(&params.phase_q);
        let freq_k = kernel(&params.freq_k);
        let phase_k = kernel(&params.phase_k);
        Self {
            w_q: tape.param(params.w_q.clone()),
            w_k: tape.param(params.w_k.clone()),
            w_v: tape.param(params.w_v.clone()),
            freq_q,
            phase_q,
            freq_k,
            phase_k,
        }
    }
}

/// Differentiable single-head attention recorded on `tape`.
pub fn qra_attention_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    y: Var,
    vars: &QraVars,
    axes: (Axis, Axis),
) -> Result<Var> {
    let q = tape.matmul(x, vars.w_q)?;
    let k = tape.matmul(y, vars.w_k)?;
    let v = tape.matmul(y, vars.w_v)?;
    let w = FREQ_KERNEL_WIDTH;
    let fq = tape.conv1d(q, vars.freq_q.0, vars.freq_q.1, w)?;
    let omega_q = tape.relu(fq);
    let pq = tape.conv1d(q, vars.phase_q.0, vars.phase_q.1, w)?;
    let theta_q = tape.pi_tanh(pq);
    let fk = tape.conv1d(k, vars.freq_k.0, vars.freq_k.1, w)?;
    let omega_k = tape.relu(fk);
    let pk = tape.conv1d(k, vars.phase_k.0, vars.phase_k.1, w)?;
    let theta_k = tape.pi_tanh(pk);
    let s = tape.rotary_similarity(q, k, omega_q, theta_q, omega_k, theta_k, axes)?;
    let a = tape.softmax_rows(s);
    tape.matmul(a, v)
}
