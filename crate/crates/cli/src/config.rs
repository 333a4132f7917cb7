//! Flat `key = value` run configuration merging model and training
//! settings.

use std::collections::BTreeMap;
use std::path::Path;

use qean::features::{parse_kv, render_kv};
use qean::model::ModelConfig;
use qean::training::TrainConfig;

/// Environment variable overriding `rng_seed`.
pub const SEED_ENV: &str = "QEAN_SEED";

/// Every accepted key, in the order the effective config is written.
pub const KEYS: [&str; 24] = [
    "d_model",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "d_ff",
    "periods",
    "seed_motion_frames",
    "audio_frames",
    "future_frames",
    "fps",
    "use_learned_abs_pos",
    "use_spe",
    "use_qra",
    "rotary_base",
    "residual_readout",
    "batch_size",
    "lr_init",
    "decay",
    "total_steps",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "rng_seed",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got {v:?}")),
    }
}

/// `step:lr` pairs separated by commas; empty for no decay.
fn decay(v: &str) -> Result<Vec<(usize, f64)>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (s, lr) = pair
                .split_once(':')
                .ok_or_else(|| format!("decay: expected step:lr, got {pair:?}"))?;
            Ok((num("decay", s.trim())?, num("decay", lr.trim())?))
        })
        .collect()
}

impl RunConfig {
    pub fn desk() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "d_model" => m.d_model = num(key, v)?,
            "heads" => m.heads = num(key, v)?,
            "encoder_layers" => m.encoder_layers = num(key, v)?,
            "decoder_layers" => m.decoder_layers = num(key, v)?,
            "d_ff" => m.d_ff = num(key, v)?,
            "periods" => m.periods = num(key, v)?,
            "seed_motion_frames" => m.seed_motion_frames = num(key, v)?,
            "audio_frames" => m.audio_frames = num(key, v)?,
            "future_frames" => m.future_frames = num(key, v)?,
            "fps" => m.fps = num(key, v)?,
            "use_learned_abs_pos" => m.use_learned_abs_pos = boolean(key, v)?,
            "use_spe" => m.use_spe = boolean(key, v)?,
            "use_qra" => m.use_qra = boolean(key, v)?,
            "rotary_base" => m.rotary_base = num(key, v)?,
            "residual_readout" => m.residual_readout = boolean(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr_init" => t.lr_init = num(key, v)?,
            "decay" => t.decay = decay(v)?,
            "total_steps" => t.total_steps = num(key, v)?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "clip_norm" => {
                t.clip_norm = if v == "none" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "rng_seed" => t.rng_seed = num(key, v)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), String> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::desk();
        cfg.apply(&parse_kv(&text).map_err(|e| format!("{}: {e}", path.display()))?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }

    pub fn get(&self, key: &str) -> String {
        let (m, t) = (&self.model, &self.train);
        match key {
            "d_model" => m.d_model.to_string(),
            "heads" => m.heads.to_string(),
            "encoder_layers" => m.encoder_layers.to_string(),
            "decoder_layers" => m.decoder_layers.to_string(),
            "d_ff" => m.d_ff.to_string(),
            "periods" => m.periods.to_string(),
            "seed_motion_frames" => m.seed_motion_frames.to_string(),
            "audio_frames" => m.audio_frames.to_string(),
            "future_frames" => m.future_frames.to_string(),
            "fps" => m.fps.to_string(),
            "use_learned_abs_pos" => m.use_learned_abs_pos.to_string(),
            "use_spe" => m.use_spe.to_string(),
            "use_qra" => m.use_qra.to_string(),
            "rotary_base" => m.rotary_base.to_string(),
            "residual_readout" => m.residual_readout.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr_init" => format!("{:e}", t.lr_init),
            "decay" => t
                .decay
                .iter()
                .map(|(s, lr)| format!("{s}:{lr:e}"))
                .collect::<Vec<_>>()
                .join(","),
            "total_steps" => t.total_steps.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => format!("{:e}", t.adam_eps),
            "clip_norm" => t.clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
            "rng_seed" => t.rng_seed.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// The effective configuration as a config document.
    pub fn render(&self) -> String {
        let pairs: Vec<(&str, String)> = KEYS.iter().map(|&k| (k, self.get(k))).collect();
        render_kv(&pairs)
    }
}
