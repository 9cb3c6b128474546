use serde::{Deserialize, Serialize};

use super::preprocess::PreprocessConfig;
use super::scores::{is_blurry, ScoreConfig, Scores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub source_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub duration: f64,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub bpp: f64,
    pub codec_profile: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
    #[serde(default)]
    pub tiers: Vec<String>,
}

impl ClipRecord {
    pub fn aspect(&self) -> f64 {
        self.height as f64 / self.width as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub name: String,
    pub min_aesthetic: f64,
    pub min_motion: f64,
    pub max_motion: f64,
    /// Laplacian variance below which a sampled frame counts as blurry.
    pub min_blur_variance: f64,
    pub max_ocr_area: f64,
    pub max_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub scoring: ScoreConfig,
    /// Ordered loose to strict.
    pub tiers: Vec<TierThresholds>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let tier = |name: &str, aes: f64, lo: f64, hi: f64, blur: f64, ocr: f64, jit: f64| {
            TierThresholds {
                name: name.into(),
                min_aesthetic: aes,
                min_motion: lo,
                max_motion: hi,
                min_blur_variance: blur,
                max_ocr_area: ocr,
                max_jitter: jit,
            }
        };
        Self {
            preprocess: PreprocessConfig::default(),
            scoring: ScoreConfig::default(),
            tiers: vec![
                tier("loose", 3.0, 0.3, 12.0, 30.0, 0.20, 3.0),
                tier("medium", 4.5, 0.3, 12.0, 150.0, 0.10, 1.5),
                tier("strict", 6.0, 0.3, 12.0, 600.0, 0.05, 0.5),
            ],
        }
    }
}

impl FilterConfig {
    /// Every tier must be at least as restrictive as the one before it.
    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::Config("at least one tier is required".into()));
        }
        for t in &self.tiers {
            if t.min_motion > t.max_motion {
                return Err(Error::Config(format!(
                    "tier `{}` has an empty motion band",
                    t.name
                )));
            }
        }
        for w in self.tiers.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let nested = b.min_aesthetic >= a.min_aesthetic
                && b.min_motion >= a.min_motion
                && b.max_motion <= a.max_motion
                && b.min_blur_variance >= a.min_blur_variance
                && b.max_ocr_area <= a.max_ocr_area
                && b.max_jitter <= a.max_jitter;
            if !nested {
                return Err(Error::Config(format!(
                    "tier `{}` is looser than `{}`",
                    b.name, a.name
                )));
            }
        }
        Ok(())
    }

    pub fn tier_index(&self, name: &str) -> Result<usize> {
        self.tiers
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("unknown tier `{name}`")))
    }
}

/// First failed check, in the order aesthetic, motion, blur, ocr, jitter.
pub fn tier_violation(scores: &Scores, t: &TierThresholds) -> Option<&'static str> {
    if scores.aesthetic < t.min_aesthetic {
        Some("aesthetic")
    } else if scores.motion < t.min_motion || scores.motion > t.max_motion {
        Some("motion")
    } else if is_blurry(&scores.blur_variances, t.min_blur_variance) {
        Some("blur")
    } else if scores.ocr_area > t.max_ocr_area {
        Some("ocr")
    } else if scores.jitter > t.max_jitter {
        Some("jitter")
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierResult<'a> {
    pub kept: Vec<&'a ClipRecord>,
    pub removed: Vec<Removal>,
}

pub fn filter_tier<'a>(
    records: &'a [ClipRecord],
    config: &FilterConfig,
    tier: usize,
) -> Result<TierResult<'a>> {
    config.validate()?;
    let t = config
        .tiers
        .get(tier)
        .ok_or_else(|| Error::OutOfRange(format!("tier {tier} of {}", config.tiers.len())))?;
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for r in records {
        let scores = r
            .scores
            .as_ref()
            .ok_or_else(|| Error::MissingField(format!("scores of `{}`", r.id)))?;
        match tier_violation(scores, t) {
            None => kept.push(r),
            Some(reason) => removed.push(Removal {
                id: r.id.clone(),
                reason: reason.into(),
            }),
        }
    }
    Ok(TierResult { kept, removed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn good() -> Scores {
        Scores {
            aesthetic: 8.0,
            motion: 3.0,
            blur_variance: 1000.0,
            blur_variances: vec![1000.0; 5],
            ocr_area: 0.0,
            jitter: 0.0,
        }
    }

    fn record(id: &str, scores: Option<Scores>) -> ClipRecord {
        ClipRecord {
            id: id.into(),
            source_id: id.into(),
            start_frame: 0,
            end_frame: 32,
            duration: 2.0,
            fps: 16.0,
            width: 32,
            height: 32,
            bpp: 0.1,
            codec_profile: "High".into(),
            caption: String::new(),
            scores,
            tiers: vec![],
        }
    }

    #[test]
    fn default_tiers_nest() {
        FilterConfig::default().validate().unwrap();
        let mut c = FilterConfig::default();
        c.tiers[2].max_ocr_area = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_violation_reason() {
        let mut s = good();
        s.ocr_area = 0.5;
        let recs = vec![record("a", Some(good())), record("b", Some(s))];
        let r = filter_tier(&recs, &FilterConfig::default(), 0).unwrap();
        assert_eq!(r.kept.len(), 1);
        assert_eq!(
            r.removed,
            vec![Removal {
                id: "b".into(),
                reason: "ocr".into()
            }]
        );
    }

    #[test]
    fn motion_band_is_two_sided() {
        let t = &FilterConfig::default().tiers[0];
        let mut s = good();
        s.motion = 0.0;
        assert_eq!(tier_violation(&s, t), Some("motion"));
        s.motion = 50.0;
        assert_eq!(tier_violation(&s, t), Some("motion"));
    }

    #[test]
    fn unscored_is_an_error() {
        let recs = vec![record("a", None)];
        assert!(filter_tier(&recs, &FilterConfig::default(), 0).is_err());
        assert!(filter_tier(&[], &FilterConfig::default(), 7).is_err());
    }
}
