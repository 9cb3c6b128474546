use serde::{Deserialize, Serialize};

use super::container::Clip;
use crate::error::{Error, Result};

/// Admission and output-format constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_duration: f64,
    pub min_bpp: f64,
    pub min_fps: f64,
    /// Allowed `height / width` range, inclusive.
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub banned_profiles: Vec<String>,
    pub max_clip_len: f64,
    pub min_clip_len: f64,
    /// Output frame rate must stay below this.
    pub fps_cap: f64,
    pub max_long_side: usize,
    /// Scene cut when the mean absolute luma change between consecutive
    /// frames exceeds this fraction of the dynamic range.
    pub scene_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_duration: 2.0,
            min_bpp: 0.02,
            min_fps: 16.0,
            aspect_min: 1.0 / 3.0,
            aspect_max: 3.0,
            banned_profiles: vec!["Constrained Baseline".into()],
            max_clip_len: 8.0,
            min_clip_len: 2.0,
            fps_cap: 30.0,
            max_long_side: 1080,
            scene_threshold: 0.3,
        }
    }
}

/// What admission looks at for one raw video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAttrs {
    pub duration: Option<f64>,
    pub fps: Option<f64>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub bpp: Option<f64>,
    pub codec_profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum Admission {
    Admit,
    /// Names the first violated rule: `duration`, `bpp`, `fps`, `aspect` or
    /// `profile`.
    Reject(String),
}

fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::MissingField(name.to_string()))
}

/// Checks duration, bpp, fps, aspect ratio and codec profile in that order.
// Negated comparisons so NaN attributes are rejected.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn preprocess_admit(attrs: &VideoAttrs, cfg: &PreprocessConfig) -> Result<Admission> {
    let duration = need(&attrs.duration, "duration")?;
    let bpp = need(&attrs.bpp, "bpp")?;
    let fps = need(&attrs.fps, "fps")?;
    let width = need(&attrs.width, "width")?;
    let height = need(&attrs.height, "height")?;
    let profile = need(&attrs.codec_profile, "codec_profile")?;
    let reject = |r: &str| Ok(Admission::Reject(r.to_string()));
    if !(duration >= cfg.min_duration) {
        return reject("duration");
    }
    if !(bpp >= cfg.min_bpp) {
        return reject("bpp");
    }
    if !(fps >= cfg.min_fps) {
        return reject("fps");
    }
    let aspect = height as f64 / width as f64;
    if !(aspect.is_finite() && aspect >= cfg.aspect_min - 1e-12 && aspect <= cfg.aspect_max + 1e-12)
    {
        return reject("aspect");
    }
    if cfg
        .banned_profiles
        .iter()
        .any(|p| p.eq_ignore_ascii_case(profile.trim()))
    {
        return reject("profile");
    }
    Ok(Admission::Admit)
}

/// Frame rate and size an admitted video is re-encoded to: frames are
/// dropped by the smallest integer stride that brings the rate below the
/// cap, and the long side is scaled down to the limit (even dimensions).
pub fn conform_output(
    fps: f64,
    width: usize,
    height: usize,
    cfg: &PreprocessConfig,
) -> (f64, usize, usize) {
    let mut stride = 1.0;
    while fps / stride >= cfg.fps_cap {
        stride += 1.0;
    }
    let long = width.max(height);
    if long <= cfg.max_long_side {
        return (fps / stride, width, height);
    }
    let s = cfg.max_long_side as f64 / long as f64;
    let even = |v: usize| ((v as f64 * s / 2.0).round() as usize * 2).max(2);
    (fps / stride, even(width), even(height))
}

/// Half-open frame range of one output clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Mean absolute luma change between consecutive frames, in `[0, 1]`.
pub fn frame_differences(clip: &Clip) -> Vec<f64> {
    let mut prev = clip.luma(0);
    let mut out = Vec::with_capacity(clip.frames.saturating_sub(1));
    for t in 1..clip.frames {
        let cur = clip.luma(t);
        out.push(
            prev.iter()
                .zip(&cur)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / (cur.len() as f64 * 255.0),
        );
        prev = cur;
    }
    out
}

/// Cuts at scene changes, chops shots longer than the maximum into
/// maximum-length pieces and drops pieces shorter than the minimum.
pub fn segment_spans(diffs: &[f64], frames: usize, fps: f64, cfg: &PreprocessConfig) -> Vec<Span> {
    let mut cuts = vec![0];
    cuts.extend(
        diffs
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > cfg.scene_threshold)
            .map(|(i, _)| i + 1),
    );
    cuts.push(frames);
    let max_frames = ((cfg.max_clip_len * fps) + 1e-9).floor().max(1.0) as usize;
    let mut spans = Vec::new();
    for w in cuts.windows(2) {
        let mut start = w[0];
        while start < w[1] {
            let end = (start + max_frames).min(w[1]);
            if (end - start) as f64 / fps >= cfg.min_clip_len - 1e-9 {
                spans.push(Span { start, end });
            }
            start = end;
        }
    }
    spans
}

pub fn segment_clips(clip: &Clip, cfg: &PreprocessConfig) -> Vec<Span> {
    segment_spans(&frame_differences(clip), clip.frames, clip.fps as f64, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(duration: f64, bpp: f64, fps: f64, w: usize, h: usize, profile: &str) -> VideoAttrs {
        VideoAttrs {
            duration: Some(duration),
            fps: Some(fps),
            width: Some(w),
            height: Some(h),
            bpp: Some(bpp),
            codec_profile: Some(profile.into()),
        }
    }

    #[test]
    fn admission_rules() {
        let c = PreprocessConfig::default();
        let r = |a: VideoAttrs| preprocess_admit(&a, &c).unwrap();
        assert_eq!(r(attrs(5.0, 0.1, 24.0, 100, 100, "High")), Admission::Admit);
        assert_eq!(
            r(attrs(1.5, 0.1, 24.0, 100, 100, "High")),
            Admission::Reject("duration".into())
        );
        assert_eq!(
            r(attrs(5.0, 0.01, 24.0, 100, 100, "High")),
            Admission::Reject("bpp".into())
        );
        assert_eq!(
            r(attrs(5.0, 0.1, 15.0, 100, 100, "High")),
            Admission::Reject("fps".into())
        );
        assert_eq!(
            r(attrs(5.0, 0.1, 24.0, 100, 400, "High")),
            Admission::Reject("aspect".into())
        );
        assert_eq!(r(attrs(5.0, 0.1, 24.0, 300, 100, "High")), Admission::Admit);
        assert_eq!(
            r(attrs(5.0, 0.1, 24.0, 100, 100, "Constrained Baseline")),
            Admission::Reject("profile".into())
        );
        // First violated rule wins.
        assert_eq!(
            r(attrs(1.0, 0.0, 1.0, 1, 9, "Constrained Baseline")),
            Admission::Reject("duration".into())
        );
    }

    #[test]
    fn missing_field() {
        let mut a = attrs(5.0, 0.1, 24.0, 100, 100, "High");
        a.bpp = None;
        assert!(
            matches!(preprocess_admit(&a, &PreprocessConfig::default()), Err(Error::MissingField(f)) if f == "bpp")
        );
    }

    #[test]
    fn conform() {
        let c = PreprocessConfig::default();
        assert_eq!(conform_output(24.0, 1920, 1080, &c), (24.0, 1080, 608));
        assert_eq!(conform_output(60.0, 640, 480, &c), (20.0, 640, 480));
        assert_eq!(conform_output(30.0, 640, 480, &c), (15.0, 640, 480));
    }

    #[test]
    fn static_twenty_seconds() {
        let c = PreprocessConfig::default();
        let s = segment_spans(&vec![0.0; 319], 320, 16.0, &c);
        let secs: Vec<f64> = s.iter().map(|s| s.len() as f64 / 16.0).collect();
        assert_eq!(secs, vec![8.0, 8.0, 4.0]);
    }

    #[test]
    fn too_short() {
        let c = PreprocessConfig::default();
        assert!(segment_spans(&[0.0; 18], 19, 10.0, &c).is_empty());
    }

    #[test]
    fn cut_then_chop() {
        let c = PreprocessConfig::default();
        let mut d = vec![0.0; 119];
        d[99] = 0.9;
        let s = segment_spans(&d, 120, 10.0, &c);
        let secs: Vec<f64> = s.iter().map(|s| s.len() as f64 / 10.0).collect();
        assert_eq!(secs, vec![8.0, 2.0, 2.0]);
        assert_eq!(s[2].start, 100);
    }
}
