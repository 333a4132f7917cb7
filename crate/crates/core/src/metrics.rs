//! Motion quality metrics: Fréchet distance over dynamic and geometric
//! features, diversity, beat extraction and the beat alignment score.

use crate::error::{Error, Result};
use crate::features::{AUDIO_DIMS, BEAT_CHANNEL, JOINTS, MOTION_DIMS, TRANSLATION_CHANNELS};
use crate::numerics::{sym_sqrt, Matrix};

/// Alpha of the beat alignment kernel, in frames at 60 fps.
pub const BEAT_ALIGN_ALPHA: f64 = 3.0;
pub const FID_EPS: f64 = 1e-6;

/// Channels summarised by [`dynamic_features`]: thirteen rotation entries
/// spread across joints plus the three translation axes.
pub const DYNAMIC_CHANNELS: [usize; 16] = [
    0, 17, 34, 51, 68, 85, 102, 119, 136, 153, 170, 187, 204, 216, 217, 218,
];
pub const DYNAMIC_DIMS: usize = 4 * DYNAMIC_CHANNELS.len();

/// Channels whose velocity regularity is tested by [`geometric_features`].
pub const GEOMETRIC_VELOCITY_CHANNELS: [usize; 5] = [0, 40, 100, 160, 216];
pub const GEOMETRIC_DIMS: usize = 3 + JOINTS + GEOMETRIC_VELOCITY_CHANNELS.len();

/// `items x dim` feature vectors, one per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    vectors: Matrix,
}

impl FeatureSet {
    pub fn new(vectors: Matrix) -> Self {
        Self { vectors }
    }

    pub fn from_vectors(items: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            vectors: Matrix::from_rows(items)?,
        })
    }

    pub fn items(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }
}

fn check_motion(m: &Matrix, min_frames: usize) -> Result<()> {
    if m.cols() != MOTION_DIMS {
        return Err(Error::ChannelMismatch {
            expected: MOTION_DIMS,
            got: m.cols(),
        });
    }
    if m.rows() < min_frames {
        return Err(Error::TooFewFrames {
            need: min_frames,
            got: m.rows(),
        });
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and (population) standard deviation of first and second frame
/// differences over [`DYNAMIC_CHANNELS`], laid out as
/// `[vel_mean; vel_std; acc_mean; acc_std]`.
pub fn dynamic_features(motion: &Matrix) -> Result<Vec<f64>> {
    check_motion(motion, 3)?;
    let t = motion.rows();
    let k = DYNAMIC_CHANNELS.len();
    let mut out = vec![0.0; DYNAMIC_DIMS];
    for (i, &c) in DYNAMIC_CHANNELS.iter().enumerate() {
        let vel: Vec<f64> = (1..t)
            .map(|r| motion[(r, c)] - motion[(r - 1, c)])
            .collect();
        let acc: Vec<f64> = (1..vel.len()).map(|r| vel[r] - vel[r - 1]).collect();
        let (vm, vs) = mean_std(&vel);
        let (am, as_) = mean_std(&acc);
        out[i] = vm;
        out[k + i] = vs;
        out[2 * k + i] = am;
        out[3 * k + i] = as_;
    }
    Ok(out)
}

/// Fixed boolean predicates over whole-sequence statistics:
///
/// * 0..3: mean root translation along x, y, z is positive;
/// * 3..27: mean trace of joint `j`'s rotation block exceeds 2.5 (the joint
///   stays within roughly 41° of rest on average);
/// * 27..32: channel `c` of [`GEOMETRIC_VELOCITY_CHANNELS`] moves faster than
///   its own mean absolute speed on more than half the frame steps.
pub fn geometric_features(motion: &Matrix) -> Result<Vec<f64>> {
    check_motion(motion, 1)?;
    let t = motion.rows() as f64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut out = Vec::with_capacity(GEOMETRIC_DIMS);
    for c in TRANSLATION_CHANNELS {
        let mean = (0..motion.rows()).map(|r| motion[(r, c)]).sum::<f64>() / t;
        out.push(flag(mean > 0.0));
    }
    for j in 0..JOINTS {
        let trace = (0..motion.rows())
            .map(|r| motion[(r, 9 * j)] + motion[(r, 9 * j + 4)] + motion[(r, 9 * j + 8)])
            .sum::<f64>()
            / t;
        out.push(flag(trace > 2.5));
    }
    for &c in &GEOMETRIC_VELOCITY_CHANNELS {
        let speed: Vec<f64> = (1..motion.rows())
            .map(|r| (motion[(r, c)] - motion[(r - 1, c)]).abs())
            .collect();
        let hit = if speed.is_empty() {
            false
        } else {
            let mean = speed.iter().sum::<f64>() / speed.len() as f64;
            let above = speed.iter().filter(|&&s| s > mean).count();
            2 * above > speed.len()
        };
        out.push(flag(hit));
    }
    Ok(out)
}

fn mean_and_covariance(s: &FeatureSet) -> (Vec<f64>, Matrix) {
    let (n, d) = (s.items(), s.dim());
    let mean: Vec<f64> = s
        .vectors
        .sum_rows()
        .into_iter()
        .map(|v| v / n as f64)
        .collect();
    let centered = Matrix::from_fn(n, d, |r, c| s.vectors[(r, c)] - mean[c]);
    let cov = centered
        .matmul_at(&centered)
        .expect("square")
        .scale(1.0 / (n as f64 - 1.0));
    // exact symmetry for the eigensolver
    let cov = Matrix::from_fn(d, d, |r, c| 0.5 * (cov[(r, c)] + cov[(c, r)]));
    (mean, cov)
}

/// Fréchet distance between Gaussians fitted to `a` and `b`, with `eps`
/// added to both covariance diagonals.
pub fn fid(a: &FeatureSet, b: &FeatureSet, eps: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    for s in [a, b] {
        if s.items() < 2 {
            return Err(Error::TooFewItems(s.items()));
        }
    }
    let (mu_a, cov_a) = mean_and_covariance(a);
    let (mu_b, cov_b) = mean_and_covariance(b);
    let d = a.dim();
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let root_a = sym_sqrt(&cov_a, eps)?;
    let mut cov_b_eps = cov_b.clone();
    for i in 0..d {
        cov_b_eps[(i, i)] += eps;
    }
    let inner = root_a.matmul(&cov_b_eps)?.matmul(&root_a)?;
    let inner = Matrix::from_fn(d, d, |r, c| 0.5 * (inner[(r, c)] + inner[(c, r)]));
    let cross = sym_sqrt(&inner, 0.0)?;
    let trace = cov_a.trace() + cov_b.trace() + 2.0 * eps * d as f64 - 2.0 * cross.trace();
    Ok((mean_term + trace).max(0.0))
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity(s: &FeatureSet) -> Result<f64> {
    let n = s.items();
    if n < 2 {
        return Err(Error::TooFewItems(n));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = s
                .vectors
                .row(i)
                .iter()
                .zip(s.vectors.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d.sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Strictly increasing beat frame indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeatTimeline {
    frames: Vec<usize>,
    fps: usize,
}

impl BeatTimeline {
    pub fn new(frames: Vec<usize>, fps: usize) -> Result<Self> {
        if frames.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "beat frames must be strictly increasing".into(),
            ));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn fps(&self) -> usize {
        self.fps
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }
}

/// Per-frame speed: half the central difference norm at interior frames,
/// one-sided differences at the ends.
pub fn frame_velocity(motion: &Matrix) -> Vec<f64> {
    let t = motion.rows();
    let dist = |a: usize, b: usize| -> f64 {
        motion
            .row(a)
            .iter()
            .zip(motion.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    (0..t)
        .map(|i| match i {
            _ if t < 2 => 0.0,
            0 => dist(1, 0),
            _ if i == t - 1 => dist(t - 1, t - 2),
            _ => 0.5 * dist(i + 1, i - 1),
        })
        .collect()
}

/// Interior indices where `v` has a strict local minimum.
pub fn strict_minima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1))
        .filter(|&t| v[t] < v[t - 1] && v[t] < v[t + 1])
        .collect()
}

/// Motion beats: strict local minima of the frame velocity.
pub fn motion_beats(motion: &Matrix, fps: usize) -> Result<BeatTimeline> {
    if motion.rows() < 3 {
        return Err(Error::TooFewFrames {
            need: 3,
            got: motion.rows(),
        });
    }
    BeatTimeline::new(strict_minima(&frame_velocity(motion)), fps)
}

/// Music beats: frames whose beat channel exceeds 0.5.
pub fn music_beats(audio: &Matrix, fps: usize) -> Result<BeatTimeline> {
    if audio.cols() != AUDIO_DIMS {
        return Err(Error::ChannelMismatch {
            expected: AUDIO_DIMS,
            got: audio.cols(),
        });
    }
    BeatTimeline::new(
        (0..audio.rows())
            .filter(|&t| audio[(t, BEAT_CHANNEL)] > 0.5)
            .collect(),
        fps,
    )
}

/// Mean over motion beats of `exp(-d² / 2α²)`, with `d` the frame distance
/// to the nearest music beat.
pub fn beat_align(motion_b: &BeatTimeline, music_b: &BeatTimeline, alpha: f64) -> Result<f64> {
    if motion_b.is_empty() {
        return Err(Error::EmptyMotionBeats);
    }
    if music_b.is_empty() {
        return Err(Error::EmptyMusicBeats);
    }
    let denom = 2.0 * alpha * alpha;
    let total: f64 = motion_b
        .frames
        .iter()
        .map(|&t| {
            let nearest = music_b
                .frames
                .iter()
                .map(|&m| {
                    let d = t as f64 - m as f64;
                    d * d
                })
                .fold(f64::INFINITY, f64::min);
            (-nearest / denom).exp()
        })
        .sum();
    Ok(total / motion_b.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(f: &[usize]) -> BeatTimeline {
        BeatTimeline::new(f.to_vec(), 60).unwrap()
    }

    #[test]
    fn beat_align_hand_case() {
        let s = beat_align(&tl(&[10, 50]), &tl(&[12, 47]), 3.0).unwrap();
        let want = ((-4.0f64 / 18.0).exp() + (-9.0f64 / 18.0).exp()) / 2.0;
        assert!((s - want).abs() < 1e-15);
        assert_eq!(
            beat_align(&tl(&[30, 60]), &tl(&[0, 30, 60, 90]), 3.0).unwrap(),
            1.0
        );
        assert_eq!(
            beat_align(&tl(&[]), &tl(&[1]), 3.0),
            Err(Error::EmptyMotionBeats)
        );
        assert_eq!(
            beat_align(&tl(&[1]), &tl(&[]), 3.0),
            Err(Error::EmptyMusicBeats)
        );
    }

    #[test]
    fn minima_scan() {
        assert_eq!(strict_minima(&[3.0, 1.0, 2.0]), vec![1]);
        assert!(strict_minima(&[3.0, 1.0, 1.0, 2.0]).is_empty());
        assert!(strict_minima(&[1.0, 1.0, 1.0, 1.0]).is_empty());
    }

    #[test]
    fn constant_velocity_has_no_beats() {
        let m = Matrix::from_fn(10, MOTION_DIMS, |r, c| (r * (c % 3)) as f64 * 0.1);
        assert!(motion_beats(&m, 60).unwrap().is_empty());
        assert!(matches!(
            motion_beats(&Matrix::zeros(2, MOTION_DIMS), 60),
            Err(Error::TooFewFrames { .. })
        ));
    }

    #[test]
    fn music_beat_threshold() {
        let mut a = Matrix::zeros(5, AUDIO_DIMS);
        assert!(music_beats(&a, 60).unwrap().is_empty());
        a[(1, BEAT_CHANNEL)] = 1.0;
        a[(3, BEAT_CHANNEL)] = 0.5;
        assert_eq!(music_beats(&a, 60).unwrap().frames(), &[1]);
        assert!(matches!(
            music_beats(&Matrix::zeros(3, 34), 60),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn dynamic_feature_closed_forms() {
        let constant = Matrix::filled(6, MOTION_DIMS, 0.3);
        assert!(dynamic_features(&constant)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let slope = 0.25;
        let ramp = Matrix::from_fn(6, MOTION_DIMS, |r, _| slope * r as f64);
        let f = dynamic_features(&ramp).unwrap();
        let k = DYNAMIC_CHANNELS.len();
        assert!(f[..k].iter().all(|&v| (v - slope).abs() < 1e-15));
        assert!(f[k..].iter().all(|&v| v.abs() < 1e-15));
        assert!(matches!(
            dynamic_features(&Matrix::zeros(2, MOTION_DIMS)),
            Err(Error::TooFewFrames { .. })
        ));
    }

    #[test]
    fn geometric_features_zero_motion() {
        let f = geometric_features(&Matrix::zeros(4, MOTION_DIMS)).unwrap();
        assert_eq!(f.len(), GEOMETRIC_DIMS);
        assert!(f.iter().all(|&v| v == 0.0));
        let g = geometric_features(&Matrix::zeros(1, MOTION_DIMS)).unwrap();
        assert_eq!(g.len(), 32);
    }

    #[test]
    fn fid_and_diversity_basics() {
        let a = FeatureSet::new(Matrix::from_fn(6, 3, |r, c| ((r * 5 + c * 3) % 7) as f64));
        assert!(fid(&a, &a, FID_EPS).unwrap() < 1e-8);
        let small = FeatureSet::new(Matrix::zeros(1, 3));
        assert_eq!(fid(&a, &small, FID_EPS), Err(Error::TooFewItems(1)));
        let b = FeatureSet::new(Matrix::zeros(4, 2));
        assert!(matches!(
            fid(&a, &b, FID_EPS),
            Err(Error::DimensionMismatch(_))
        ));

        let same = FeatureSet::new(Matrix::filled(4, 3, 2.0));
        assert_eq!(diversity(&same).unwrap(), 0.0);
        let pair = FeatureSet::from_vectors(&[vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(diversity(&pair).unwrap(), 2.0);
        assert_eq!(diversity(&small), Err(Error::TooFewItems(1)));
    }

    #[test]
    fn fid_one_dimensional_mean_shift() {
        let xs = [0.3, -1.2, 0.9, 0.0, 2.1, -0.6];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let a: Vec<Vec<f64>> = xs.iter().map(|x| vec![x - mean]).collect();
        let m = 1.7;
        let b: Vec<Vec<f64>> = xs.iter().map(|x| vec![x - mean + m]).collect();
        let d = fid(
            &FeatureSet::from_vectors(&a).unwrap(),
            &FeatureSet::from_vectors(&b).unwrap(),
            FID_EPS,
        )
        .unwrap();
        assert!((d - m * m).abs() < 1e-8);
    }
}
