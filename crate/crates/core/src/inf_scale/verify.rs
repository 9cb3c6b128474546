//! Six built-in verifier proxies scored on decoded pixel video.

use serde::{Deserialize, Serialize};

use crate::datapipe::{laplacian_variance, Clip, EntropyAesthetic, FrameScorer};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const VERIFIER_NAMES: [&str; 6] = [
    "subject_consistency",
    "background_consistency",
    "motion_smoothness",
    "dynamic_degree",
    "aesthetic_quality",
    "imaging_quality",
];

/// Laplacian variance (0..255 luma) that maps to an imaging score of 0.5.
pub const IMAGING_HALF: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierScore {
    pub subject_consistency: f64,
    pub background_consistency: f64,
    pub motion_smoothness: f64,
    pub dynamic_degree: f64,
    pub aesthetic_quality: f64,
    pub imaging_quality: f64,
    /// Weighted mean of the six components.
    pub total: f64,
}

impl VerifierScore {
    pub fn components(&self) -> [f64; 6] {
        [
            self.subject_consistency,
            self.background_consistency,
            self.motion_smoothness,
            self.dynamic_degree,
            self.aesthetic_quality,
            self.imaging_quality,
        ]
    }
}

pub fn validate_weights(w: &[f64; 6]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!(
            "verifier weights must be non-negative with a positive sum, got {w:?}"
        )));
    }
    Ok(())
}

/// Luma frames in `[0, 1]` from a `[c, t, h, w]` video in `[-1, 1]`.
/// Three channels use ITU-R 601 weights, any other count the channel mean.
pub fn luma_frames(video: &Tensor) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let &[c, t, h, w] = video.shape() else {
        return Err(shape_err(
            "verify",
            format!("expected [c, t, h, w], got {:?}", video.shape()),
        ));
    };
    if c == 0 || t == 0 || h == 0 || w == 0 {
        return Err(shape_err(
            "verify",
            format!("empty video {:?}", video.shape()),
        ));
    }
    let d = video.data();
    let plane = h * w;
    let weights: Vec<f64> = if c == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / c as f64; c]
    };
    let frames = (0..t)
        .map(|ti| {
            (0..plane)
                .map(|i| {
                    let v: f64 = (0..c)
                        .map(|ci| weights[ci] * d[(ci * t + ti) * plane + i])
                        .sum();
                    ((v + 1.0) / 2.0).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok((frames, h, w))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb)).clamp(0.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Average-pools `mask`ed pixels of one frame into a 4x4 grid of cells.
fn region_feature(frame: &[f64], h: usize, w: usize, centre: bool) -> Vec<f64> {
    let inside = |r: usize, c: usize| r >= h / 4 && r < h - h / 4 && c >= w / 4 && c < w - w / 4;
    let mut sum = [0.0; 16];
    let mut n = [0usize; 16];
    for r in 0..h {
        for c in 0..w {
            if inside(r, c) == centre {
                let cell = (r * 4 / h) * 4 + c * 4 / w;
                sum[cell] += frame[r * w + c];
                n[cell] += 1;
            }
        }
    }
    sum.iter()
        .zip(n)
        .filter(|(_, k)| *k > 0)
        .map(|(s, k)| s / k as f64)
        .collect()
}

fn consistency(frames: &[Vec<f64>], h: usize, w: usize, centre: bool) -> f64 {
    if frames.len() < 2 {
        return 1.0;
    }
    let feats: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| region_feature(f, h, w, centre))
        .collect();
    feats.windows(2).map(|p| cosine(&p[0], &p[1])).sum::<f64>() / (feats.len() - 1) as f64
}

/// Scores one decoded video. `weights` follow [`VERIFIER_NAMES`].
pub fn verify_video(video: &Tensor, weights: &[f64; 6]) -> Result<VerifierScore> {
    validate_weights(weights)?;
    let (frames, h, w) = luma_frames(video)?;
    let t = frames.len();
    let n = (h * w) as f64;

    let motion_smoothness = if t < 3 {
        1.0
    } else {
        // Second differences of values in [0, 1] lie in [-2, 2].
        let msd: f64 = frames
            .windows(3)
            .map(|f| {
                (0..h * w)
                    .map(|i| (f[2][i] - 2.0 * f[1][i] + f[0][i]).powi(2))
                    .sum::<f64>()
                    / n
            })
            .sum::<f64>()
            / (t - 2) as f64;
        1.0 - msd / 4.0
    };
    let dynamic_degree = if t < 2 {
        0.0
    } else {
        frames
            .windows(2)
            .map(|f| (0..h * w).map(|i| (f[1][i] - f[0][i]).abs()).sum::<f64>() / n)
            .sum::<f64>()
            / (t - 1) as f64
    };

    let bytes: Vec<u8> = frames
        .iter()
        .flatten()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let clip = Clip::new(t, h, w, 1, 16.0, bytes)?;
    let scorer = EntropyAesthetic::default();
    let keys = crate::datapipe::key_frames(t);
    let aesthetic_quality = keys.iter().map(|&k| scorer.score(&clip, k)).sum::<f64>() / 30.0;
    let lap = (0..t)
        .map(|k| laplacian_variance(&clip.luma(k), h, w))
        .sum::<f64>()
        / t as f64;
    let imaging_quality = lap / (lap + IMAGING_HALF);

    let mut s = VerifierScore {
        subject_consistency: consistency(&frames, h, w, true),
        background_consistency: consistency(&frames, h, w, false),
        motion_smoothness,
        dynamic_degree,
        aesthetic_quality,
        imaging_quality,
        total: 0.0,
    };
    let c = s.components();
    s.total = c.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() / weights.iter().sum::<f64>();
    Ok(s)
}

/// Scores every candidate; the winner is the highest total, lowest index on
/// ties.
pub fn verify_candidates(
    videos: &[Tensor],
    weights: &[f64; 6],
) -> Result<(Vec<VerifierScore>, usize)> {
    if videos.is_empty() {
        return Err(Error::OutOfRange("no candidates to verify".into()));
    }
    let scores = videos
        .iter()
        .map(|v| verify_video(v, weights))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.total > scores[best].total {
            best = i;
        }
    }
    Ok((scores, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn video(t: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let (h, w) = (8, 8);
        let mut d = vec![];
        for ti in 0..t {
            for i in 0..h * w {
                d.push(f(ti, i));
            }
        }
        Tensor::new(&[1, t, h, w], d).unwrap()
    }

    const SMOOTH: [f64; 6] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

    #[test]
    fn static_video() {
        let v = video(5, |_, i| (i % 7) as f64 / 7.0 - 0.5);
        let s = verify_video(&v, &[1.0; 6]).unwrap();
        assert_eq!(s.motion_smoothness, 1.0);
        assert_eq!(s.dynamic_degree, 0.0);
        assert!((s.subject_consistency - 1.0).abs() < 1e-12);
        let mean = s.components().iter().sum::<f64>() / 6.0;
        assert!((s.total - mean).abs() < 1e-12);
    }

    #[test]
    fn duplicates_pick_first() {
        let v = video(4, |t, i| ((t + i) % 5) as f64 / 5.0);
        let (_, best) = verify_candidates(&[v.clone(), v.clone(), v], &[1.0; 6]).unwrap();
        assert_eq!(best, 0);
        assert!(verify_candidates(&[], &[1.0; 6]).is_err());
    }

    #[test]
    fn ramp_beats_noise_on_smoothness() {
        let mut r = rng::from_seed(3);
        let noise = Tensor::rand_uniform(&[1, 6, 8, 8], -1.0, 1.0, &mut r);
        let ramp = video(6, |t, _| -1.0 + 0.3 * t as f64);
        // Oracle: a linear ramp has zero second difference.
        let ramp_score = verify_video(&ramp, &SMOOTH).unwrap();
        assert!((ramp_score.motion_smoothness - 1.0).abs() < 1e-12);
        let (scores, best) = verify_candidates(&[noise, ramp], &SMOOTH).unwrap();
        assert_eq!(best, 1);
        assert!(scores[0].motion_smoothness < 0.99);
    }

    #[test]
    fn bad_weights() {
        let v = video(2, |_, _| 0.0);
        assert!(verify_video(&v, &[0.0; 6]).is_err());
        assert!(verify_video(&v, &[-1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
    }
}
