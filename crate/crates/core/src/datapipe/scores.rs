//! The five clip scores: aesthetic, motion, blur, text area and jitter.

use serde::{Deserialize, Serialize};

use super::container::Clip;
use super::preprocess::frame_differences;

/// Per-frame quality predictor.
pub trait FrameScorer {
    fn score(&self, clip: &Clip, t: usize) -> f64;
}

/// Luma histogram entropy mapped onto `[0, 10]`. A stand-in for a learned
/// aesthetic predictor: flat or two-tone frames score low, rich texture high.
#[derive(Debug, Clone, Copy)]
pub struct EntropyAesthetic {
    pub bins: usize,
}

impl Default for EntropyAesthetic {
    fn default() -> Self {
        Self { bins: 32 }
    }
}

impl FrameScorer for EntropyAesthetic {
    fn score(&self, clip: &Clip, t: usize) -> f64 {
        let luma = clip.luma(t);
        let mut hist = vec![0usize; self.bins];
        for v in &luma {
            hist[((v / 256.0 * self.bins as f64) as usize).min(self.bins - 1)] += 1;
        }
        let n = luma.len() as f64;
        let h: f64 = hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| -(c as f64 / n) * (c as f64 / n).log2())
            .sum();
        10.0 * h / (self.bins as f64).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

/// Text detector run on single frames.
pub trait TextDetector {
    fn detect(&self, clip: &Clip, t: usize) -> Vec<TextBox>;
}

/// Returns the same boxes for every frame; boxes usually come from the
/// clip's metadata.
#[derive(Debug, Clone, Default)]
pub struct FixedTextDetector {
    pub boxes: Vec<TextBox>,
}

impl TextDetector for FixedTextDetector {
    fn detect(&self, _: &Clip, _: usize) -> Vec<TextBox> {
        self.boxes.clone()
    }
}

/// Boxes below or at this confidence are ignored.
pub const OCR_CONFIDENCE: f64 = 0.7;

/// Fraction of the frame covered by confident boxes, capped at 1.
pub fn text_area(boxes: &[TextBox], width: usize, height: usize) -> f64 {
    let area: f64 = boxes
        .iter()
        .filter(|b| b.confidence > OCR_CONFIDENCE)
        .map(|b| b.w.max(0.0) * b.h.max(0.0))
        .fold(0.0, |a, v| a + v);
    (area / (width * height) as f64).min(1.0)
}

/// First, middle and last frame.
pub fn key_frames(frames: usize) -> [usize; 3] {
    [0, (frames - 1) / 2, frames - 1]
}

/// Five uniformly spaced frames; short clips repeat frames.
pub fn blur_frames(frames: usize) -> [usize; 5] {
    let last = (frames - 1) as f64;
    std::array::from_fn(|i| (i as f64 * last / 4.0).round() as usize)
}

/// Variance of the 3x3 Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]` over interior
/// pixels of a row-major luma plane. Planes smaller than 3x3 give 0.
pub fn laplacian_variance(luma: &[f64], height: usize, width: usize) -> f64 {
    if height < 3 || width < 3 {
        return 0.0;
    }
    let at = |r: usize, c: usize| luma[r * width + c];
    let mut vals = Vec::with_capacity((height - 2) * (width - 2));
    for r in 1..height - 1 {
        for c in 1..width - 1 {
            vals.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// A clip is blurry when at least three of its five sampled frames have a
/// Laplacian variance below `threshold`.
pub fn is_blurry(variances: &[f64], threshold: f64) -> bool {
    variances.iter().filter(|&&v| v < threshold).count() * 2 > variances.len()
}

/// 100 x mean absolute luma change between consecutive frames.
pub fn motion_score(clip: &Clip) -> f64 {
    let d = frame_differences(clip);
    if d.is_empty() {
        return 0.0;
    }
    100.0 * d.iter().sum::<f64>() / d.len() as f64
}

/// Integer translation `(dy, dx)` within `max_shift` that best aligns `b`
/// onto `a` (least mean absolute difference over the overlap). Ties go to
/// the smaller shift.
pub fn global_shift(
    a: &[f64],
    b: &[f64],
    height: usize,
    width: usize,
    max_shift: usize,
) -> (i64, i64) {
    let s = max_shift as i64;
    let mut cands: Vec<(i64, i64)> = (-s..=s)
        .flat_map(|dy| (-s..=s).map(move |dx| (dy, dx)))
        .collect();
    cands.sort_by_key(|&(dy, dx)| (dy.abs() + dx.abs(), dy, dx));
    let (h, w) = (height as i64, width as i64);
    let mut best = ((0, 0), f64::INFINITY);
    for (dy, dx) in cands {
        let (r0, r1) = (0.max(-dy), h.min(h - dy));
        let (c0, c1) = (0.max(-dx), w.min(w - dx));
        if r1 - r0 < 1 || c1 - c0 < 1 {
            continue;
        }
        let mut sum = 0.0;
        for r in r0..r1 {
            for c in c0..c1 {
                sum += (a[(r * w + c) as usize] - b[((r + dy) * w + c + dx) as usize]).abs();
            }
        }
        let cost = sum / ((r1 - r0) * (c1 - c0)) as f64;
        if cost < best.1 {
            best = ((dy, dx), cost);
        }
    }
    best.0
}

/// Mean L1 change of the global camera shift from one frame pair to the
/// next. Steady pans and static shots score 0; shaky footage scores high.
pub fn jitter_score(clip: &Clip, max_shift: usize) -> f64 {
    if clip.frames < 3 {
        return 0.0;
    }
    let lumas: Vec<Vec<f64>> = (0..clip.frames).map(|t| clip.luma(t)).collect();
    let shifts: Vec<(i64, i64)> = lumas
        .windows(2)
        .map(|p| global_shift(&p[0], &p[1], clip.height, clip.width, max_shift))
        .collect();
    let total: i64 = shifts
        .windows(2)
        .map(|s| (s[1].0 - s[0].0).abs() + (s[1].1 - s[0].1).abs())
        .sum();
    total as f64 / (shifts.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub aesthetic: f64,
    pub motion: f64,
    /// Median of `blur_variances`; below a threshold exactly when the
    /// majority vote calls the clip blurry.
    pub blur_variance: f64,
    pub blur_variances: Vec<f64>,
    pub ocr_area: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub jitter_max_shift: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            jitter_max_shift: 4,
        }
    }
}

pub fn score_clip(
    clip: &Clip,
    aesthetic: &dyn FrameScorer,
    text: &dyn TextDetector,
    cfg: &ScoreConfig,
) -> Scores {
    let keys = key_frames(clip.frames);
    let aesthetic = keys.iter().map(|&t| aesthetic.score(clip, t)).sum::<f64>() / 3.0;
    let ocr_area = keys
        .iter()
        .map(|&t| text_area(&text.detect(clip, t), clip.width, clip.height))
        .fold(0.0, f64::max);
    let blur_variances: Vec<f64> = blur_frames(clip.frames)
        .iter()
        .map(|&t| laplacian_variance(&clip.luma(t), clip.height, clip.width))
        .collect();
    let mut sorted = blur_variances.clone();
    sorted.sort_by(f64::total_cmp);
    Scores {
        aesthetic,
        motion: motion_score(clip),
        blur_variance: sorted[2],
        blur_variances,
        ocr_area,
        jitter: jitter_score(clip, cfg.jitter_max_shift),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(frames: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u8) -> Clip {
        let mut d = Vec::with_capacity(frames * h * w);
        for t in 0..frames {
            for r in 0..h {
                for c in 0..w {
                    d.push(f(t, r, c));
                }
            }
        }
        Clip::new(frames, h, w, 1, 16.0, d).unwrap()
    }

    #[test]
    fn constant_video_is_blurry_and_still() {
        let c = gray(6, 8, 8, |_, _, _| 90);
        let s = score_clip(
            &c,
            &EntropyAesthetic::default(),
            &FixedTextDetector::default(),
            &ScoreConfig::default(),
        );
        assert!(s.blur_variances.iter().all(|v| *v == 0.0));
        assert!(is_blurry(&s.blur_variances, 1.0));
        assert_eq!(s.motion, 0.0);
        assert_eq!(s.jitter, 0.0);
        assert_eq!(s.aesthetic, 0.0);
    }

    #[test]
    fn checkerboard_laplacian_by_direct_convolution() {
        let c = gray(1, 6, 7, |_, r, cc| if (r + cc) % 2 == 0 { 200 } else { 10 });
        let l = c.luma(0);
        // Direct oracle: every interior pixel sees four opposite neighbours.
        let mut vals = vec![];
        for r in 1..5 {
            for cc in 1..6 {
                let centre = l[r * 7 + cc];
                let other = if centre == 200.0 { 10.0 } else { 200.0 };
                vals.push(4.0 * other - 4.0 * centre);
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((laplacian_variance(&l, 6, 7) - var).abs() < 1e-9);
    }

    #[test]
    fn majority_flips_at_three() {
        assert!(!is_blurry(&[0.0, 0.0, 9.0, 9.0, 9.0], 1.0));
        assert!(is_blurry(&[0.0, 0.0, 0.0, 9.0, 9.0], 1.0));
    }

    #[test]
    fn frame_sampling() {
        assert_eq!(blur_frames(9), [0, 2, 4, 6, 8]);
        assert_eq!(blur_frames(1), [0; 5]);
        assert_eq!(blur_frames(2), [0, 0, 1, 1, 1]);
        assert_eq!(key_frames(10), [0, 4, 9]);
    }

    #[test]
    fn text_area_ignores_low_confidence() {
        let b = [
            TextBox {
                x: 0.0,
                y: 0.0,
                w: 10.0,
                h: 10.0,
                confidence: 0.9,
            },
            TextBox {
                x: 0.0,
                y: 0.0,
                w: 50.0,
                h: 50.0,
                confidence: 0.7,
            },
        ];
        assert_eq!(text_area(&b, 20, 20), 0.25);
    }

    #[test]
    fn steady_pan_has_no_jitter() {
        let tex = |r: i64, c: i64| ((r * 37 + c * 11 + (r * c) % 7) % 23 * 10) as u8;
        let pan = gray(6, 12, 12, |t, r, c| tex(r as i64, c as i64 + t as i64));
        assert_eq!(jitter_score(&pan, 3), 0.0);
        let shake = gray(6, 12, 12, |t, r, c| {
            tex(r as i64 + if t % 2 == 0 { 0 } else { 2 }, c as i64)
        });
        assert!(jitter_score(&shake, 3) >= 3.9);
    }

    #[test]
    fn shift_recovery() {
        let tex = |r: i64, c: i64| ((r * 37 + c * 11 + (r * c) % 7) % 23 * 10) as f64;
        let a: Vec<f64> = (0..100).map(|i| tex(i / 10, i % 10)).collect();
        let b: Vec<f64> = (0..100).map(|i| tex(i / 10 - 1, i % 10 + 2)).collect();
        assert_eq!(global_shift(&a, &b, 10, 10, 3), (1, -2));
    }
}
