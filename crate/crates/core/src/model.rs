//! Cross-modal motion predictor: per-stream linear embeddings, rotary
//! self-attention encoders for motion and audio, a quaternion rotary
//! attention decoder over the concatenated encodings, and a readout head
//! emitting the next `future_frames` motion frames.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{write_atomic, StreamKind, MOTION_DIMS};
use crate::numerics::Matrix;
use crate::qra::{
    canonical_attention, qra_attention_tape, quaternion_head_dim, QraVars, FREQ_KERNEL_WIDTH,
};
use crate::quaternion::Axis;
use crate::spe::{RotarySchedule, DEFAULT_ROTARY_BASE};
use crate::tape::{Tape, Var};

pub const CHECKPOINT_FORMAT: &str = "qean-ckpt-v1";
const LAYER_NORM_EPS: f64 = 1e-5;
const POS_INIT_SCALE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Self-attention layers in each of the motion and audio encoders.
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    /// Rotation periods `P` of every decoder head.
    pub periods: usize,
    pub seed_motion_frames: usize,
    pub audio_frames: usize,
    pub future_frames: usize,
    pub fps: usize,
    pub use_learned_abs_pos: bool,
    pub use_spe: bool,
    pub use_qra: bool,
    pub rotary_base: f64,
    /// Predict offsets from the last seed frame instead of absolute frames.
    pub residual_readout: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 1,
            d_ff: 128,
            periods: 2,
            seed_motion_frames: 30,
            audio_frames: 60,
            future_frames: 5,
            fps: 60,
            use_learned_abs_pos: true,
            use_spe: true,
            use_qra: true,
            rotary_base: DEFAULT_ROTARY_BASE,
            residual_readout: true,
        }
    }

    /// Published dimensions. The 50-wide heads cannot hold whole
    /// quaternions, so this only validates with `use_qra` off.
    pub fn paper() -> Self {
        Self {
            d_model: 800,
            heads: 16,
            encoder_layers: 2,
            decoder_layers: 1,
            d_ff: 3072,
            seed_motion_frames: 120,
            audio_frames: 240,
            future_frames: 20,
            ..Self::desk()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.use_qra {
            quaternion_head_dim(self.d_model, self.heads)?;
            if self.periods == 0 {
                return bad("periods must be positive".into());
            }
        }
        if self.use_spe && self.d_head() % 2 != 0 {
            return bad(format!(
                "rotary embedding needs an even head width, got {}",
                self.d_head()
            ));
        }
        if self.seed_motion_frames == 0
            || self.future_frames == 0
            || self.d_ff == 0
            || self.fps == 0
        {
            return bad("frame counts, d_ff and fps must be positive".into());
        }
        if self.audio_frames < self.seed_motion_frames {
            return bad(format!(
                "audio_frames {} shorter than seed_motion_frames {}",
                self.audio_frames, self.seed_motion_frames
            ));
        }
        if !(self.rotary_base > 1.0) || !self.rotary_base.is_finite() {
            return bad(format!(
                "rotary base must exceed 1, got {}",
                self.rotary_base
            ));
        }
        Ok(())
    }

    /// Frames of audio needed to generate `steps` frames.
    pub fn audio_needed(&self, steps: usize) -> usize {
        if steps == 0 {
            0
        } else {
            self.audio_frames + steps - 1
        }
    }

    fn stream_frames(&self, which: StreamKind) -> usize {
        match which {
            StreamKind::Audio => self.audio_frames,
            StreamKind::Motion => self.seed_motion_frames,
        }
    }
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Small,
}

/// Names, shapes and initialisers of every tensor, in initialisation order.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let mut out = Vec::new();
    let mut push = |name: String, shape: (usize, usize), init: Init| out.push((name, shape, init));
    let ln = |push: &mut dyn FnMut(String, (usize, usize), Init), p: &str| {
        push(format!("{p}.g"), (1, d), Init::Ones);
        push(format!("{p}.b"), (1, d), Init::Zeros);
    };
    let ff = |push: &mut dyn FnMut(String, (usize, usize), Init), p: &str| {
        push(format!("{p}.w1"), (d, cfg.d_ff), Init::Xavier);
        push(format!("{p}.b1"), (1, cfg.d_ff), Init::Zeros);
        push(format!("{p}.w2"), (cfg.d_ff, d), Init::Xavier);
        push(format!("{p}.b2"), (1, d), Init::Zeros);
    };
    for which in [StreamKind::Motion, StreamKind::Audio] {
        let s = which.as_str();
        push(format!("{s}.embed.w"), (which.dims(), d), Init::Xavier);
        push(format!("{s}.embed.b"), (1, d), Init::Zeros);
        if cfg.use_learned_abs_pos {
            push(
                format!("{s}.pos"),
                (cfg.stream_frames(which), d),
                Init::Small,
            );
        }
        for l in 0..cfg.encoder_layers {
            let p = format!("{s}.enc{l}");
            ln(&mut push, &format!("{p}.ln1"));
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{p}.attn.{w}"), (d, d), Init::Xavier);
            }
            ln(&mut push, &format!("{p}.ln2"));
            ff(&mut push, &format!("{p}.ff"));
        }
    }
    for l in 0..cfg.decoder_layers {
        let p = format!("dec{l}");
        ln(&mut push, &format!("{p}.ln_q"));
        ln(&mut push, &format!("{p}.ln_m"));
        for h in 0..cfg.heads {
            for w in ["wq", "wk", "wv"] {
                push(format!("{p}.head{h}.{w}"), (d, dh), Init::Xavier);
            }
            if cfg.use_qra {
                for k in ["freq_q", "phase_q", "freq_k", "phase_k"] {
                    push(
                        format!("{p}.head{h}.{k}.w"),
                        (FREQ_KERNEL_WIDTH * dh, cfg.periods),
                        Init::Xavier,
                    );
                    push(format!("{p}.head{h}.{k}.b"), (1, cfg.periods), Init::Zeros);
                }
            }
        }
        push(format!("{p}.wo"), (d, d), Init::Xavier);
        ln(&mut push, &format!("{p}.ln2"));
        ff(&mut push, &format!("{p}.ff"));
    }
    ln(&mut push, "readout.ln");
    push(
        "readout.w".into(),
        (d, cfg.future_frames * MOTION_DIMS),
        Init::Xavier,
    );
    push(
        "readout.b".into(),
        (1, cfg.future_frames * MOTION_DIMS),
        Init::Zeros,
    );
    out
}

/// Named weight tensors of a model together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    tensors: BTreeMap<String, Matrix>,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorDoc>,
}

impl ModelWeights {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains and small
    /// uniform position tables, drawn from a ChaCha8 stream seeded by `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, (r, c), init) in layout(config) {
            let m = match init {
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::filled(r, c, 1.0),
                Init::Xavier => {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.gen_range(-limit..limit))
                }
                Init::Small => {
                    Matrix::from_fn(r, c, |_, _| rng.gen_range(-POS_INIT_SCALE..POS_INIT_SCALE))
                }
            };
            tensors.insert(name, m);
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Builds weights from explicit tensors, checking names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Matrix>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                None => return Err(Error::DimensionMismatch(format!("missing tensor {name}"))),
                Some(m) if m.shape() != *shape => {
                    return Err(Error::DimensionMismatch(format!(
                        "tensor {name} is {:?}, expected {shape:?}",
                        m.shape()
                    )))
                }
                Some(m) if !m.is_finite() => {
                    return Err(Error::NonFiniteGradient(format!(
                        "tensor {name} has non-finite entries"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Matrix> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub(crate) fn tensors_map_mut(&mut self) -> &mut BTreeMap<String, Matrix> {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }

    /// Deterministic JSON checkpoint bytes.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, m)| {
                    (
                        k.clone(),
                        TensorDoc {
                            shape: [m.rows(), m.cols()],
                            values: m.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec(&doc).expect("checkpoint serialises");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedFile {
            path: path.display().to_string(),
            reason,
        };
        let doc: CheckpointDoc =
            serde_json::from_slice(bytes).map_err(|e| malformed(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(malformed(format!(
                "unknown checkpoint format {:?}",
                doc.format
            )));
        }
        let mut tensors = BTreeMap::new();
        for (name, t) in doc.tensors {
            let m = Matrix::new(t.shape[0], t.shape[1], t.values)
                .map_err(|e| malformed(format!("{name}: {e}")))?;
            tensors.insert(name, m);
        }
        Self::from_tensors(doc.config, tensors).map_err(|e| malformed(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_checkpoint_bytes(&bytes, path)
    }
}

/// Tape handles for every tensor of a [`ModelWeights`].
pub struct WeightVars {
    vars: BTreeMap<String, Var>,
}

impl WeightVars {
    /// Records all weights as trainable leaves.
    pub fn register(tape: &mut Tape, weights: &ModelWeights) -> Self {
        Self::record(tape, weights, true)
    }

    /// Records all weights as constants, for inference.
    pub fn constants(tape: &mut Tape, weights: &ModelWeights) -> Self {
        Self::record(tape, weights, false)
    }

    fn record(tape: &mut Tape, weights: &ModelWeights, trainable: bool) -> Self {
        let vars = weights
            .tensors
            .iter()
            .map(|(k, m)| {
                let v = if trainable {
                    tape.param(m.clone())
                } else {
                    tape.input(m.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("no weight named {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn check_channels(frames: &Matrix, which: StreamKind) -> Result<()> {
    if frames.cols() != which.dims() {
        return Err(Error::ChannelMismatch {
            expected: which.dims(),
            got: frames.cols(),
        });
    }
    Ok(())
}

fn check_window(frames: &Matrix, which: StreamKind, cfg: &ModelConfig) -> Result<()> {
    check_channels(frames, which)?;
    let want = cfg.stream_frames(which);
    if frames.rows() != want {
        return Err(Error::DimensionMismatch(format!(
            "{} window has {} frames, model expects {want}",
            which.as_str(),
            frames.rows()
        )));
    }
    Ok(())
}

/// Linear embedding of one stream, plus its position table when enabled.
pub fn embed_stream(
    tape: &mut Tape,
    frames: Var,
    which: StreamKind,
    w: &WeightVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    check_channels(tape.value(frames), which)?;
    let s = which.as_str();
    let h = tape.matmul(frames, w.get(&format!("{s}.embed.w")))?;
    let mut h = tape.add_row(h, w.get(&format!("{s}.embed.b")))?;
    if cfg.use_learned_abs_pos {
        let pos = w.get(&format!("{s}.pos"));
        let rows = tape.value(h).rows();
        let table = if tape.value(pos).rows() == rows {
            pos
        } else {
            tape.slice_rows(pos, 0, rows)?
        };
        h = tape.add(h, table)?;
    }
    Ok(h)
}

fn feed_forward(tape: &mut Tape, x: Var, w: &WeightVars, p: &str) -> Result<Var> {
    let a = tape.matmul(x, w.get(&format!("{p}.w1")))?;
    let a = tape.add_row(a, w.get(&format!("{p}.b1")))?;
    let a = tape.relu(a);
    let b = tape.matmul(a, w.get(&format!("{p}.w2")))?;
    tape.add_row(b, w.get(&format!("{p}.b2")))
}

fn layer_norm(tape: &mut Tape, x: Var, w: &WeightVars, p: &str) -> Result<Var> {
    tape.layer_norm(x, w.get(&format!("{p}.g")), w.get(&format!("{p}.b")))
}

/// Pre-norm self-attention encoder stack; rotary position embedding is
/// applied per head to queries and keys when `use_spe` is set.
pub fn encode(
    tape: &mut Tape,
    h: Var,
    which: StreamKind,
    w: &WeightVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    let s = which.as_str();
    let dh = cfg.d_head();
    let sched = if cfg.use_spe {
        Some(RotarySchedule::new(dh, cfg.rotary_base)?)
    } else {
        None
    };
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = h;
    for l in 0..cfg.encoder_layers {
        let p = format!("{s}.enc{l}");
        let n = layer_norm(tape, x, w, &format!("{p}.ln1"))?;
        let q = tape.matmul(n, w.get(&format!("{p}.attn.wq")))?;
        let k = tape.matmul(n, w.get(&format!("{p}.attn.wk")))?;
        let v = tape.matmul(n, w.get(&format!("{p}.attn.wv")))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let mut qh = tape.slice_cols(q, hd * dh, dh)?;
            let mut kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            if let Some(sched) = &sched {
                qh = tape.rope(qh, sched, 0)?;
                kh = tape.rope(kh, sched, 0)?;
            }
            let logits = tape.matmul_bt(qh, kh)?;
            let logits = tape.scale(logits, scale);
            let a = tape.softmax_rows(logits);
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let o = tape.matmul(cat, w.get(&format!("{p}.attn.wo")))?;
        x = tape.add(x, o)?;
        let n = layer_norm(tape, x, w, &format!("{p}.ln2"))?;
        let f = feed_forward(tape, n, w, &format!("{p}.ff"))?;
        x = tape.add(x, f)?;
    }
    Ok(x)
}

fn head_vars(w: &WeightVars, p: &str) -> QraVars {
    let k = |name: &str| {
        (
            w.get(&format!("{p}.{name}.w")),
            w.get(&format!("{p}.{name}.b")),
        )
    };
    QraVars {
        w_q: w.get(&format!("{p}.wq")),
        w_k: w.get(&format!("{p}.wk")),
        w_v: w.get(&format!("{p}.wv")),
        freq_q: k("freq_q"),
        phase_q: k("phase_q"),
        freq_k: k("freq_k"),
        phase_k: k("phase_k"),
    }
}

/// Decoder over encoded motion (queries) and the time-concatenated motion
/// and audio encodings (memory), followed by the readout head. Returns the
/// `future_frames x 219` prediction.
pub fn cross_modal_decode(
    tape: &mut Tape,
    h_motion: Var,
    h_audio: Var,
    seed_motion: &Matrix,
    w: &WeightVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let memory = tape.concat_rows(&[h_motion, h_audio])?;
    let mut x = h_motion;
    for l in 0..cfg.decoder_layers {
        let p = format!("dec{l}");
        let xn = layer_norm(tape, x, w, &format!("{p}.ln_q"))?;
        let mn = layer_norm(tape, memory, w, &format!("{p}.ln_m"))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let hp = format!("{p}.head{hd}");
            let out = if cfg.use_qra {
                qra_attention_tape(tape, xn, mn, &head_vars(w, &hp), (Axis::I, Axis::J))?
            } else {
                let q = tape.matmul(xn, w.get(&format!("{hp}.wq")))?;
                let k = tape.matmul(mn, w.get(&format!("{hp}.wk")))?;
                let v = tape.matmul(mn, w.get(&format!("{hp}.wv")))?;
                let logits = tape.matmul_bt(q, k)?;
                let logits = tape.scale(logits, scale);
                let a = tape.softmax_rows(logits);
                tape.matmul(a, v)?
            };
            heads.push(out);
        }
        let cat = tape.concat_cols(&heads)?;
        let o = tape.matmul(cat, w.get(&format!("{p}.wo")))?;
        x = tape.add(x, o)?;
        let n = layer_norm(tape, x, w, &format!("{p}.ln2"))?;
        let f = feed_forward(tape, n, w, &format!("{p}.ff"))?;
        x = tape.add(x, f)?;
    }
    let rows = tape.value(x).rows();
    let last = tape.slice_rows(x, rows - 1, 1)?;
    let last = layer_norm(tape, last, w, "readout.ln")?;
    let out = tape.matmul(last, w.get("readout.w"))?;
    let out = tape.add_row(out, w.get("readout.b"))?;
    let out = tape.reshape(out, cfg.future_frames, MOTION_DIMS)?;
    if cfg.residual_readout {
        let base = tape.input(readout_base(seed_motion, cfg)?);
        tape.add(out, base)
    } else {
        Ok(out)
    }
}

/// The last seed frame repeated `future_frames` times, the base the residual
/// readout predicts offsets from.
pub fn readout_base(seed_motion: &Matrix, cfg: &ModelConfig) -> Result<Matrix> {
    if seed_motion.cols() != MOTION_DIMS || seed_motion.rows() == 0 {
        return Err(Error::ChannelMismatch {
            expected: MOTION_DIMS,
            got: seed_motion.cols(),
        });
    }
    let last = seed_motion.row(seed_motion.rows() - 1);
    Ok(Matrix::from_fn(cfg.future_frames, MOTION_DIMS, |_, c| {
        last[c]
    }))
}

/// Full forward pass on one (seed motion, audio) window pair.
pub fn forward(
    tape: &mut Tape,
    seed_motion: &Matrix,
    audio: &Matrix,
    w: &WeightVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    check_window(seed_motion, StreamKind::Motion, cfg)?;
    check_window(audio, StreamKind::Audio, cfg)?;
    let m = tape.input(seed_motion.clone());
    let a = tape.input(audio.clone());
    let hm = embed_stream(tape, m, StreamKind::Motion, w, cfg)?;
    let hm = encode(tape, hm, StreamKind::Motion, w, cfg)?;
    let ha = embed_stream(tape, a, StreamKind::Audio, w, cfg)?;
    let ha = encode(tape, ha, StreamKind::Audio, w, cfg)?;
    cross_modal_decode(tape, hm, ha, seed_motion, w, cfg)
}

/// Forward pass without gradient bookkeeping.
pub fn predict(weights: &ModelWeights, seed_motion: &Matrix, audio: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let w = WeightVars::constants(&mut tape, weights);
    let out = forward(&mut tape, seed_motion, audio, &w, weights.config())?;
    Ok(tape.value(out).clone())
}

/// Rolls the model forward `steps` frames, keeping only the first
/// predicted frame at each step and sliding both windows by one frame.
pub fn autoregressive_generate(
    weights: &ModelWeights,
    seed_motion: &Matrix,
    audio: &Matrix,
    steps: usize,
) -> Result<Matrix> {
    let cfg = weights.config();
    check_window(seed_motion, StreamKind::Motion, cfg)?;
    check_channels(audio, StreamKind::Audio)?;
    let need = cfg.audio_needed(steps);
    if audio.rows() < need {
        return Err(Error::AudioTooShort {
            have: audio.rows(),
            need,
        });
    }
    let s = cfg.seed_motion_frames;
    let mut history = seed_motion.clone();
    let mut out = Matrix::zeros(steps, MOTION_DIMS);
    for step in 0..steps {
        let window = history.slice_rows(history.rows() - s, s)?;
        let audio_window = audio.slice_rows(step, cfg.audio_frames)?;
        let pred = predict(weights, &window, &audio_window)?;
        out.row_mut(step).copy_from_slice(pred.row(0));
        history = Matrix::concat_rows(&[&window.slice_rows(1, s - 1)?, &pred.slice_rows(0, 1)?])?;
    }
    Ok(out)
}

fn layer_norm_plain(x: &Matrix, g: &Matrix, b: &Matrix) -> Matrix {
    let n = x.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for c in 0..x.cols() {
            out[(r, c)] = (row[c] - mean) * inv * g[(0, c)] + b[(0, c)];
        }
    }
    out
}

/// Canonical-attention forward pass in plain matrix arithmetic, for
/// configurations with both `use_spe` and `use_qra` off.
pub fn reference_forward(
    weights: &ModelWeights,
    seed_motion: &Matrix,
    audio: &Matrix,
) -> Result<Matrix> {
    let cfg = weights.config();
    if cfg.use_spe || cfg.use_qra {
        return Err(Error::InvalidConfig(
            "reference path requires use_spe and use_qra off".into(),
        ));
    }
    check_window(seed_motion, StreamKind::Motion, cfg)?;
    check_window(audio, StreamKind::Audio, cfg)?;
    let t = |name: String| weights.get(&name).expect("tensor present");
    let dh = cfg.d_head();
    let ffn = |x: &Matrix, p: &str| -> Result<Matrix> {
        let a = x
            .matmul(t(format!("{p}.w1")))?
            .add_row(t(format!("{p}.b1")).data())?
            .map(|v| v.max(0.0));
        a.matmul(t(format!("{p}.w2")))?
            .add_row(t(format!("{p}.b2")).data())
    };
    let ln = |x: &Matrix, p: &str| layer_norm_plain(x, t(format!("{p}.g")), t(format!("{p}.b")));

    let mut encoded = Vec::new();
    for (which, frames) in [
        (StreamKind::Motion, seed_motion),
        (StreamKind::Audio, audio),
    ] {
        let s = which.as_str();
        let mut x = frames
            .matmul(t(format!("{s}.embed.w")))?
            .add_row(t(format!("{s}.embed.b")).data())?;
        if cfg.use_learned_abs_pos {
            x = x.add(t(format!("{s}.pos")))?;
        }
        for l in 0..cfg.encoder_layers {
            let p = format!("{s}.enc{l}");
            let n = ln(&x, &format!("{p}.ln1"));
            let q = n.matmul(t(format!("{p}.attn.wq")))?;
            let k = n.matmul(t(format!("{p}.attn.wk")))?;
            let v = n.matmul(t(format!("{p}.attn.wv")))?;
            let mut heads = Vec::new();
            for h in 0..cfg.heads {
                let (qh, kh, vh) = (
                    q.slice_cols(h * dh, dh)?,
                    k.slice_cols(h * dh, dh)?,
                    v.slice_cols(h * dh, dh)?,
                );
                heads.push(canonical_attention(&qh, &kh, &vh)?);
            }
            let refs: Vec<&Matrix> = heads.iter().collect();
            x = x.add(&Matrix::concat_cols(&refs)?.matmul(t(format!("{p}.attn.wo")))?)?;
            let n = ln(&x, &format!("{p}.ln2"));
            x = x.add(&ffn(&n, &format!("{p}.ff"))?)?;
        }
        encoded.push(x);
    }
    let memory = Matrix::concat_rows(&[&encoded[0], &encoded[1]])?;
    let mut x = encoded[0].clone();
    for l in 0..cfg.decoder_layers {
        let p = format!("dec{l}");
        let xn = ln(&x, &format!("{p}.ln_q"));
        let mn = ln(&memory, &format!("{p}.ln_m"));
        let mut heads = Vec::new();
        for h in 0..cfg.heads {
            let hp = format!("{p}.head{h}");
            let q = xn.matmul(t(format!("{hp}.wq")))?;
            let k = mn.matmul(t(format!("{hp}.wk")))?;
            let v = mn.matmul(t(format!("{hp}.wv")))?;
            heads.push(canonical_attention(&q, &k, &v)?);
        }
        let refs: Vec<&Matrix> = heads.iter().collect();
        x = x.add(&Matrix::concat_cols(&refs)?.matmul(t(format!("{p}.wo")))?)?;
        let n = ln(&x, &format!("{p}.ln2"));
        x = x.add(&ffn(&n, &format!("{p}.ff"))?)?;
    }
    let last = ln(&x.slice_rows(x.rows() - 1, 1)?, "readout.ln");
    let out = last
        .matmul(t("readout.w".into()))?
        .add_row(t("readout.b".into()).data())?;
    let mut out = out.reshape(cfg.future_frames, MOTION_DIMS)?;
    if cfg.residual_readout {
        out = out.add(&readout_base(seed_motion, cfg)?)?;
    }
    Ok(out)
}
