//! Audio/motion feature streams: channel layout, motion frame encoding,
//! the synthetic beat-locked generator and the `.csv` + `.meta` file pair.
//!
//! Audio frames carry 35 channels: envelope (0), MFCC (1..21), chroma
//! (21..33), onset peak (33) and beat (34). Motion frames carry 24 joint
//! rotations as row-major 3x3 blocks (joint `j` at `9j..9j+9`) followed by
//! the root translation (216..219).

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{det3, sym_eigen, Matrix};
use crate::quaternion::{quat_to_rotmat, rotmat_to_quat, Quaternion};

pub const AUDIO_DIMS: usize = 35;
pub const MOTION_DIMS: usize = 219;
pub const JOINTS: usize = 24;
pub const DEFAULT_FPS: usize = 60;

pub const ENVELOPE_CHANNEL: usize = 0;
pub const MFCC_CHANNELS: std::ops::Range<usize> = 1..21;
pub const CHROMA_CHANNELS: std::ops::Range<usize> = 21..33;
pub const PEAK_CHANNEL: usize = 33;
pub const BEAT_CHANNEL: usize = 34;
pub const TRANSLATION_CHANNELS: std::ops::Range<usize> = 216..219;

pub const STREAM_FORMAT: &str = "qean-stream-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Audio,
    Motion,
}

impl StreamKind {
    pub fn dims(self) -> usize {
        match self {
            StreamKind::Audio => AUDIO_DIMS,
            StreamKind::Motion => MOTION_DIMS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Audio => "audio",
            StreamKind::Motion => "motion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "audio" => Some(StreamKind::Audio),
            "motion" => Some(StreamKind::Motion),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamMeta {
    pub kind: StreamKind,
    pub fps: usize,
    pub frames: usize,
    pub dims: usize,
}

impl StreamMeta {
    pub fn new(kind: StreamKind, frames: usize) -> Self {
        Self {
            kind,
            fps: DEFAULT_FPS,
            frames,
            dims: kind.dims(),
        }
    }

    pub fn for_matrix(kind: StreamKind, m: &Matrix) -> Self {
        Self::new(kind, m.rows())
    }
}

const UNIT_TOL: f64 = 1e-6;

/// Flattens 24 unit quaternions into rotation matrices followed by the root
/// translation.
pub fn encode_motion_frame(rotations: &[Quaternion], translation: [f64; 3]) -> Result<Vec<f64>> {
    if rotations.len() != JOINTS {
        return Err(Error::DimensionMismatch(format!(
            "{} joint rotations, expected {JOINTS}",
            rotations.len()
        )));
    }
    let mut out = Vec::with_capacity(MOTION_DIMS);
    for q in rotations {
        if (q.norm() - 1.0).abs() >= UNIT_TOL {
            return Err(Error::NotUnit(q.norm()));
        }
        out.extend_from_slice(quat_to_rotmat(*q)?.data());
    }
    out.extend_from_slice(&translation);
    Ok(out)
}

/// Nearest proper rotation to `m` (polar factor through `(MᵀM)^{-1/2}`).
/// Degenerate blocks project to the identity.
pub fn nearest_rotation(m: &Matrix) -> Result<Matrix> {
    let gram = m.matmul_at(m)?;
    let gram = Matrix::from_fn(3, 3, |r, c| 0.5 * (gram[(r, c)] + gram[(c, r)]));
    let eig = sym_eigen(&gram)?;
    let largest = eig.values.iter().cloned().fold(0.0, f64::max);
    if !(largest > 0.0) || eig.values.iter().any(|&l| !(l > largest * 1e-12)) || !m.is_finite() {
        return Ok(Matrix::identity(3));
    }
    let flip = if det3(m) < 0.0 { -1.0 } else { 1.0 };
    let smallest = (0..3)
        .min_by(|&a, &b| eig.values[a].total_cmp(&eig.values[b]))
        .unwrap_or(0);
    // with a reflection, negate the weakest singular direction to land in SO(3)
    let mut inv = Matrix::zeros(3, 3);
    for k in 0..3 {
        let w = if k == smallest { flip } else { 1.0 } / eig.values[k].sqrt();
        for i in 0..3 {
            for j in 0..3 {
                inv[(i, j)] += eig.vectors[(i, k)] * w * eig.vectors[(j, k)];
            }
        }
    }
    m.matmul(&inv)
}

/// Inverse of [`encode_motion_frame`] after re-orthonormalising each block.
pub fn decode_motion_frame(v: &[f64]) -> Result<(Vec<Quaternion>, [f64; 3])> {
    if v.len() != MOTION_DIMS {
        return Err(Error::DimensionMismatch(format!(
            "motion frame of length {}",
            v.len()
        )));
    }
    let mut rotations = Vec::with_capacity(JOINTS);
    for j in 0..JOINTS {
        let block = Matrix::new(3, 3, v[9 * j..9 * j + 9].to_vec())?;
        rotations.push(rotmat_to_quat(&nearest_rotation(&block)?)?);
    }
    Ok((rotations, [v[216], v[217], v[218]]))
}

/// Fixed per-joint oscillation layout shared by every synthetic pair.
struct JointLayout {
    base: Quaternion,
    axis: [f64; 3],
    amplitude: f64,
}

const LAYOUT_SEED: u64 = 0x51ea_d0_2024;

fn joint_layout() -> Vec<JointLayout> {
    let mut rng = ChaCha8Rng::seed_from_u64(LAYOUT_SEED);
    (0..JOINTS)
        .map(|_| {
            let base = random_unit_quaternion(&mut rng);
            let mut axis: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2])
                .sqrt()
                .max(1e-9);
            axis.iter_mut().for_each(|a| *a /= n);
            JointLayout {
                base,
                axis,
                amplitude: rng.gen_range(0.3..0.9),
            }
        })
        .collect()
}

pub fn random_unit_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return q.scale(1.0 / n);
        }
    }
}

/// Eased back-and-forth phase: 0 → 1 over even beats, 1 → 0 over odd ones,
/// with zero velocity exactly on every beat.
fn beat_phase(x: f64) -> f64 {
    let k = x.floor();
    let s = x - k;
    let ease = s - (TAU * s).sin() / TAU;
    if (k as i64).rem_euclid(2) == 0 {
        ease
    } else {
        1.0 - ease
    }
}

/// Smooth seeded noise: a short random sum of sinusoids.
struct SmoothNoise {
    terms: Vec<(f64, f64, f64)>,
}

impl SmoothNoise {
    fn new(rng: &mut impl Rng) -> Self {
        let terms = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(0.05..0.6),
                    rng.gen_range(0.0..TAU),
                )
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, f, p)| a * (f * t + p).sin())
            .sum::<f64>()
            / 1.8
    }
}

/// Synthetic beat-locked (audio, motion) pair.
///
/// Beats fall on every multiple of `beat_period` frames. Every joint swings
/// about a fixed axis following an eased phase whose velocity vanishes
/// exactly on beats, so motion-velocity minima coincide with music beats.
pub fn synth_pair(
    seed: u64,
    seconds: f64,
    fps: usize,
    beat_period: usize,
) -> Result<(Matrix, Matrix)> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "seconds must be positive, got {seconds}"
        )));
    }
    if beat_period < 2 {
        return Err(Error::InvalidConfig(format!(
            "beat period must be at least 2 frames, got {beat_period}"
        )));
    }
    if fps == 0 {
        return Err(Error::InvalidConfig("fps must be positive".into()));
    }
    let frames = (seconds * fps as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = beat_period as f64;

    let mfcc: Vec<SmoothNoise> = MFCC_CHANNELS.map(|_| SmoothNoise::new(&mut rng)).collect();
    let chroma: Vec<SmoothNoise> = CHROMA_CHANNELS
        .map(|_| SmoothNoise::new(&mut rng))
        .collect();
    let mut audio = Matrix::zeros(frames, AUDIO_DIMS);
    for t in 0..frames {
        let tf = t as f64;
        let since_beat = (t % beat_period) as f64;
        let row = audio.row_mut(t);
        row[ENVELOPE_CHANNEL] = (-since_beat / (period / 4.0)).exp();
        for (c, n) in MFCC_CHANNELS.zip(&mfcc) {
            row[c] = n.at(tf);
        }
        for (c, n) in CHROMA_CHANNELS.zip(&chroma) {
            row[c] = 0.5 + 0.5 * n.at(tf);
        }
        let on_beat = t % beat_period == 0;
        row[PEAK_CHANNEL] = if on_beat { 1.0 } else { 0.0 };
        row[BEAT_CHANNEL] = if on_beat { 1.0 } else { 0.0 };
    }

    let layout = joint_layout();
    let radius = rng.gen_range(0.5..1.0);
    let circle_phase = rng.gen_range(0.0..TAU);
    let circle_rate = TAU / (8.0 * fps as f64);
    let mut motion = Matrix::zeros(frames, MOTION_DIMS);
    for t in 0..frames {
        let phase = beat_phase(t as f64 / period);
        let rotations: Vec<Quaternion> = layout
            .iter()
            .map(|j| {
                let half = 0.5 * j.amplitude * phase;
                let s = half.sin();
                let swing =
                    Quaternion::new(half.cos(), j.axis[0] * s, j.axis[1] * s, j.axis[2] * s);
                let q = j.base * swing;
                q.scale(1.0 / q.norm())
            })
            .collect();
        let a = circle_phase + circle_rate * t as f64;
        let frame = encode_motion_frame(&rotations, [radius * a.cos(), 0.0, radius * a.sin()])?;
        motion.row_mut(t).copy_from_slice(&frame);
    }
    Ok((audio, motion))
}

/// Frames at which the synthetic generator places beats.
pub fn synth_beat_frames(frames: usize, beat_period: usize) -> Vec<usize> {
    (0..frames).step_by(beat_period.max(1)).collect()
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Renders a flat `key = value` document with keys in the given order.
pub fn render_kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses a flat `key = value` document; `#` starts a comment.
pub fn parse_kv(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(['=', ':'])
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        let v = v.trim().trim_matches('"');
        out.insert(k.trim().to_string(), v.to_string());
    }
    Ok(out)
}

/// Full-precision decimal: 17 significant digits round-trip every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_stream(path: &Path, m: &Matrix, meta: &StreamMeta) -> Result<()> {
    if meta.frames != m.rows() || meta.dims != m.cols() || meta.dims != meta.kind.dims() {
        return Err(Error::MetaMismatch {
            path: path.display().to_string(),
            reason: format!("{}x{} matrix with meta {:?}", m.rows(), m.cols(), meta),
        });
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|&v| format_f64(v)))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, &body)?;
    let meta_doc = render_kv(&[
        ("format", STREAM_FORMAT.to_string()),
        ("kind", meta.kind.as_str().to_string()),
        ("fps", meta.fps.to_string()),
        ("frames", meta.frames.to_string()),
        ("dims", meta.dims.to_string()),
    ]);
    write_atomic(&meta_path(path), meta_doc.as_bytes())
}

pub fn load_meta(path: &Path) -> Result<StreamMeta> {
    let mpath = meta_path(path);
    let malformed = |reason: String| Error::MalformedFile {
        path: mpath.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(&mpath)?;
    let kv = parse_kv(&text).map_err(malformed)?;
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| malformed(format!("missing `{k}`")))
    };
    if let Some(f) = kv.get("format") {
        if f != STREAM_FORMAT {
            return Err(malformed(format!("unsupported format `{f}`")));
        }
    }
    let kind = StreamKind::parse(&get("kind")?).ok_or_else(|| malformed("unknown kind".into()))?;
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| malformed(format!("`{k}` is not a count")))
    };
    Ok(StreamMeta {
        kind,
        fps: num("fps")?,
        frames: num("frames")?,
        dims: num("dims")?,
    })
}

/// Loads a stream and validates it against its sidecar.
pub fn load_stream(path: &Path) -> Result<(Matrix, StreamMeta)> {
    let meta = load_meta(path)?;
    let shown = path.display().to_string();
    if meta.dims != meta.kind.dims() {
        return Err(Error::MetaMismatch {
            path: shown,
            reason: format!(
                "{} dims declared for a {} stream",
                meta.dims,
                meta.kind.as_str()
            ),
        });
    }
    let bytes = fs::read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes.as_slice());
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::MalformedFile {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::MalformedFile {
                path: shown,
                reason: format!("ragged row {}", rows + 1),
            });
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedFile {
                path: shown.clone(),
                reason: format!("bad number `{field}` on row {}", rows + 1),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(meta.dims);
    if rows != meta.frames || cols != meta.dims {
        return Err(Error::MetaMismatch {
            path: shown,
            reason: format!(
                "file is {rows}x{cols}, meta says {}x{} ({})",
                meta.frames,
                meta.dims,
                meta.kind.as_str()
            ),
        });
    }
    Ok((Matrix::new(rows, cols, data)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose_encoding() {
        let v = encode_motion_frame(&[Quaternion::one(); JOINTS], [0.0; 3]).unwrap();
        assert_eq!(v.len(), MOTION_DIMS);
        for j in 0..JOINTS {
            assert_eq!(&v[9 * j..9 * j + 9], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        }
        assert_eq!(&v[216..], &[0.0; 3]);
    }

    #[test]
    fn first_joint_quarter_turn() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut rot = vec![Quaternion::one(); JOINTS];
        rot[0] = Quaternion::new(h, h, 0.0, 0.0);
        let v = encode_motion_frame(&rot, [0.0; 3]).unwrap();
        let want = [1., 0., 0., 0., 0., -1., 0., 1., 0.];
        for (a, b) in v[..9].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        rot[3] = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(
            encode_motion_frame(&rot, [0.0; 3]),
            Err(Error::NotUnit(_))
        ));
    }

    #[test]
    fn decode_guards_and_reflection() {
        assert!(matches!(
            decode_motion_frame(&[0.0; 218]),
            Err(Error::DimensionMismatch(_))
        ));
        let mut v = vec![0.0; MOTION_DIMS];
        v[..9].copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., -1.]);
        let (rot, _) = decode_motion_frame(&v).unwrap();
        let r = quat_to_rotmat(rot[0]).unwrap();
        assert!((det3(&r) - 1.0).abs() < 1e-12);
        // all-zero blocks fall back to identity
        assert_eq!(rot[5], Quaternion::one());
    }

    #[test]
    fn beat_phase_shape() {
        assert_eq!(beat_phase(0.0), 0.0);
        assert!((beat_phase(0.5) - 0.5).abs() < 1e-15);
        assert!((beat_phase(1.0) - 1.0).abs() < 1e-15);
        assert!((beat_phase(2.0)).abs() < 1e-15);
    }

    #[test]
    fn synth_guards() {
        assert!(synth_pair(1, 0.0, 60, 30).is_err());
        assert!(synth_pair(1, 1.0, 60, 1).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let doc = render_kv(&[("kind", "audio".into()), ("fps", "60".into())]);
        let kv = parse_kv(&format!("# header\n{doc}format: \"x\"\n")).unwrap();
        assert_eq!(kv["kind"], "audio");
        assert_eq!(kv["fps"], "60");
        assert_eq!(kv["format"], "x");
        assert!(parse_kv("no separator").is_err());
    }
}
