//! L2-supervised training with Adam and a piecewise-constant learning rate.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AUDIO_DIMS, MOTION_DIMS};
use crate::model::{forward, ModelConfig, ModelWeights, WeightVars};
use crate::numerics::Matrix;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    /// `(step, lr)` boundaries; each lr applies from its step onward.
    pub decay: Vec<(usize, f64)>,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Two 10x drops at 40% and 80% of training, starting from 1e-3:
    /// 5000 steps at 1e-4 leave the model too coarse to time its motion
    /// to the music.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            lr_init: 1e-3,
            decay: vec![(2000, 1e-4), (4000, 1e-5)],
            total_steps: 5000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(1.0),
            rng_seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            batch_size: 16,
            lr_init: 1e-4,
            decay: vec![(90_000, 1e-5), (150_000, 1e-6)],
            total_steps: 500_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_init >= 0.0) || !self.lr_init.is_finite() {
            return bad("lr_init must be finite and non-negative");
        }
        let mut prev = (None::<usize>, self.lr_init);
        for &(step, lr) in &self.decay {
            if prev.0.is_some_and(|p| step <= p) {
                return bad("decay steps must be strictly increasing");
            }
            if !(lr > 0.0) || lr >= prev.1 {
                return bad("decayed learning rates must be positive and decreasing");
            }
            prev = (Some(step), lr);
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Mean squared difference over all entries.
pub fn l2_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.decay
        .iter()
        .rev()
        .find(|(s, _)| step >= *s)
        .map_or(cfg.lr_init, |&(_, lr)| lr)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
}

/// One bias-corrected Adam update. Parameters without a gradient entry
/// are treated as having zero gradient.
pub fn adam_step(
    params: &mut BTreeMap<String, Matrix>,
    grads: &BTreeMap<String, Matrix>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            _ => {
                return Err(Error::DimensionMismatch(format!(
                    "gradient {name} does not match a parameter"
                )))
            }
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
        let g = grads.get(name);
        for i in 0..p.data().len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// One supervised window: seed motion, audio, and the frames that follow
/// the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub seed_motion: Matrix,
    pub audio: Matrix,
    pub target: Matrix,
}

/// Paired (audio, motion) streams cut into training windows on demand.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pairs: Vec<(Matrix, Matrix)>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, audio: Matrix, motion: Matrix) -> Result<()> {
        if audio.cols() != AUDIO_DIMS {
            return Err(Error::ChannelMismatch {
                expected: AUDIO_DIMS,
                got: audio.cols(),
            });
        }
        if motion.cols() != MOTION_DIMS {
            return Err(Error::ChannelMismatch {
                expected: MOTION_DIMS,
                got: motion.cols(),
            });
        }
        self.pairs.push((audio, motion));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Matrix, Matrix)] {
        &self.pairs
    }

    /// Window start frames available in pair `i`.
    pub fn starts(&self, i: usize, cfg: &ModelConfig) -> usize {
        let (audio, motion) = &self.pairs[i];
        let by_motion = motion
            .rows()
            .checked_sub(cfg.seed_motion_frames + cfg.future_frames);
        let by_audio = audio.rows().checked_sub(cfg.audio_frames);
        match (by_motion, by_audio) {
            (Some(a), Some(b)) => a.min(b) + 1,
            _ => 0,
        }
    }

    pub fn example(&self, i: usize, start: usize, cfg: &ModelConfig) -> Result<Example> {
        let (audio, motion) = &self.pairs[i];
        Ok(Example {
            seed_motion: motion.slice_rows(start, cfg.seed_motion_frames)?,
            audio: audio.slice_rows(start, cfg.audio_frames)?,
            target: motion.slice_rows(start + cfg.seed_motion_frames, cfg.future_frames)?,
        })
    }

    fn windows(&self, cfg: &ModelConfig) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| (0..self.starts(i, cfg)).map(move |s| (i, s)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{:e}\n", r.step, r.lr, r.loss));
    }
    out
}

/// Mean L2 loss of a minibatch and its gradient for every weight.
pub fn batch_loss_and_grads(
    weights: &ModelWeights,
    batch: &[Example],
) -> Result<(f64, BTreeMap<String, Matrix>)> {
    if batch.is_empty() {
        return Err(Error::TooFewItems(0));
    }
    let mut tape = Tape::new();
    let vars = WeightVars::register(&mut tape, weights);
    let mut total = None;
    for ex in batch {
        let pred = forward(
            &mut tape,
            &ex.seed_motion,
            &ex.audio,
            &vars,
            weights.config(),
        )?;
        let loss = tape.mse(pred, &ex.target)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let loss = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64);
    let value = tape.value(loss)[(0, 0)];
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .filter_map(|(k, v)| g.take(*v).map(|m| (k.clone(), m)))
        .collect();
    Ok((value, grads))
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub trace: Vec<LossRecord>,
}

/// Runs `cfg.total_steps` Adam steps over minibatches drawn from a seeded
/// shuffle of every window in `data`, reshuffling at each epoch. `observe`
/// sees every loss record as it is produced.
pub fn train(
    mut weights: ModelWeights,
    data: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = weights.config().clone();
    let windows = data.windows(&mcfg);
    if windows.is_empty() {
        return Err(Error::TooFewItems(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order = windows.clone();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut state = OptimizerState::default();
    let mut trace = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (i, s) = order[cursor];
            cursor += 1;
            batch.push(data.example(i, s, &mcfg)?);
        }
        let (loss, mut grads) = batch_loss_and_grads(&weights, &batch)?;
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        let lr = lr_at(step, cfg);
        adam_step(weights.tensors_map_mut(), &grads, &mut state, lr, cfg)?;
        let rec = LossRecord { step, lr, loss };
        observe(&rec);
        trace.push(rec);
    }
    Ok(TrainOutcome { weights, trace })
}
