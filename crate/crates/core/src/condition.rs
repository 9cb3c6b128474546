//! Image/video conditioning by channel concatenation.
//!
//! The model input is `[noisy (k) | condition (k) | mask (1)]` along the
//! channel axis. Conditioned frames keep their noise in the first block, so
//! the velocity target is the same with or without a condition.

use std::collections::BTreeSet;

use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Condition dropout rate used in image-to-video training.
pub const I2V_DROPOUT: f64 = 0.125;

#[derive(Debug, Clone)]
pub struct ConditionSpec {
    /// Conditioned latent-frame indices.
    pub frames: BTreeSet<usize>,
    /// `[k, t, h, w]` over the whole clip, or `[k, frames.len(), h, w]` with
    /// the conditioned frames packed in ascending order.
    pub latent: Option<Tensor>,
    pub dropout: f64,
}

impl ConditionSpec {
    /// Text-to-video: nothing conditioned.
    pub fn none(dropout: f64) -> Self {
        Self {
            frames: BTreeSet::new(),
            latent: None,
            dropout,
        }
    }

    /// First latent frame taken from `latent`.
    pub fn first_frame(latent: Tensor, dropout: f64) -> Self {
        Self {
            frames: BTreeSet::from([0]),
            latent: Some(latent),
            dropout,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty() || self.latent.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::OutOfRange(format!(
                "dropout {} not in [0, 1]",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Returns `[2k + 1, t, h, w]` for a noisy latent `[k, t, h, w]`.
pub fn build_condition_input(noisy: &Tensor, spec: &ConditionSpec) -> Result<Tensor> {
    spec.validate()?;
    let &[k, t, h, w] = noisy.shape() else {
        return Err(shape_err(
            "build_condition_input",
            format!("expected [k, t, h, w], got {:?}", noisy.shape()),
        ));
    };
    if let Some(&f) = spec.frames.iter().find(|&&f| f >= t) {
        return Err(Error::OutOfRange(format!(
            "conditioned frame {f} outside {t} latent frames"
        )));
    }
    let mut mask = vec![0.0; t];
    let mut cond = vec![0.0; k * t * h * w];
    if let Some(latent) = spec.latent.as_ref().filter(|_| !spec.frames.is_empty()) {
        let s = latent.shape();
        let packed = spec.frames.len();
        if s.len() != 4 || s[0] != k || s[2] != h || s[3] != w || (s[1] != t && s[1] != packed) {
            return Err(shape_err(
                "build_condition_input",
                format!(
                    "condition {s:?} does not match noisy {:?} with {packed} conditioned frames",
                    noisy.shape()
                ),
            ));
        }
        let plane = h * w;
        for (j, &f) in spec.frames.iter().enumerate() {
            mask[f] = 1.0;
            let src_f = if s[1] == t { f } else { j };
            for c in 0..k {
                let dst = (c * t + f) * plane;
                let src = (c * s[1] + src_f) * plane;
                cond[dst..dst + plane].copy_from_slice(&latent.data()[src..src + plane]);
            }
        }
    }
    let mask: Vec<f64> = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(m, h * w))
        .collect();
    Tensor::concat(
        &[
            noisy.clone(),
            Tensor::new(&[k, t, h, w], cond)?,
            Tensor::new(&[1, t, h, w], mask)?,
        ],
        0,
    )
}

/// With probability `spec.dropout` the condition is dropped (text-to-video).
/// Exactly one uniform draw is consumed either way.
pub fn apply_condition_dropout(spec: &ConditionSpec, rng: &mut Rng) -> ConditionSpec {
    let u: f64 = rng.random();
    if u < spec.dropout {
        ConditionSpec::none(spec.dropout)
    } else {
        spec.clone()
    }
}

/// Appends `" motion score: N."` with `N` the score rounded to the nearest
/// integer (halves away from zero).
pub fn append_motion_score(caption: &str, score: f64) -> Result<String> {
    if !score.is_finite() || score < 0.0 {
        return Err(Error::OutOfRange(format!(
            "motion score {score} must be finite and >= 0"
        )));
    }
    Ok(format!("{caption} motion score: {}.", score.round() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn channel_count_is_2k_plus_1() {
        let x = Tensor::zeros(&[16, 2, 2, 2]);
        assert_eq!(
            build_condition_input(&x, &ConditionSpec::none(0.0))
                .unwrap()
                .shape(),
            &[33, 2, 2, 2]
        );
    }

    #[test]
    fn text_to_video_pads_with_zeros() {
        let mut r = rng::from_seed(1);
        let x = Tensor::randn(&[3, 2, 2, 2], 1.0, &mut r);
        let y = build_condition_input(&x, &ConditionSpec::none(0.0)).unwrap();
        assert_eq!(&y.data()[..24], x.data());
        assert!(y.data()[24..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_frame_mask() {
        let mut r = rng::from_seed(2);
        let x = Tensor::randn(&[4, 2, 1, 1], 1.0, &mut r);
        let c = Tensor::randn(&[4, 1, 1, 1], 1.0, &mut r);
        let y = build_condition_input(&x, &ConditionSpec::first_frame(c.clone(), 0.0)).unwrap();
        assert_eq!(&y.data()[16..18], &[1.0, 0.0]);
        for ch in 0..4 {
            assert_eq!(y.data()[8 + ch * 2], c.data()[ch]);
            assert_eq!(y.data()[8 + ch * 2 + 1], 0.0);
        }
    }

    #[test]
    fn full_length_condition_is_masked() {
        let x = Tensor::zeros(&[1, 3, 1, 1]);
        let c = Tensor::new(&[1, 3, 1, 1], vec![5.0, 6.0, 7.0]).unwrap();
        let spec = ConditionSpec {
            frames: BTreeSet::from([0, 2]),
            latent: Some(c),
            dropout: 0.0,
        };
        let y = build_condition_input(&x, &spec).unwrap();
        assert_eq!(&y.data()[3..], &[5.0, 0.0, 7.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let x = Tensor::zeros(&[2, 2, 1, 1]);
        let spec = ConditionSpec {
            frames: BTreeSet::from([2]),
            latent: Some(Tensor::zeros(&[2, 1, 1, 1])),
            dropout: 0.0,
        };
        assert!(matches!(
            build_condition_input(&x, &spec),
            Err(Error::OutOfRange(_))
        ));
        let spec = ConditionSpec::first_frame(Tensor::zeros(&[3, 1, 1, 1]), 0.0);
        assert!(build_condition_input(&x, &spec).is_err());
        let spec = ConditionSpec::none(1.5);
        assert!(build_condition_input(&x, &spec).is_err());
    }

    #[test]
    fn dropout_extremes() {
        let mut r = rng::from_seed(3);
        let keep = ConditionSpec::first_frame(Tensor::zeros(&[1, 1, 1, 1]), 0.0);
        let drop = ConditionSpec::first_frame(Tensor::zeros(&[1, 1, 1, 1]), 1.0);
        for _ in 0..100 {
            assert!(!apply_condition_dropout(&keep, &mut r).is_empty());
            assert!(apply_condition_dropout(&drop, &mut r).is_empty());
        }
    }

    #[test]
    fn dropout_rate() {
        let mut r = rng::from_seed(4);
        let spec = ConditionSpec::first_frame(Tensor::zeros(&[1, 1, 1, 1]), I2V_DROPOUT);
        let n = 100_000;
        let dropped = (0..n)
            .filter(|_| apply_condition_dropout(&spec, &mut r).is_empty())
            .count();
        assert!((dropped as f64 / n as f64 - 0.125).abs() < 0.005);
    }

    #[test]
    fn motion_score_text() {
        assert_eq!(
            append_motion_score("a dog runs", 4.4).unwrap(),
            "a dog runs motion score: 4."
        );
        assert_eq!(append_motion_score("", 0.0).unwrap(), " motion score: 0.");
        assert_eq!(append_motion_score("x", 2.5).unwrap(), "x motion score: 3.");
        assert!(append_motion_score("x", -1.0).is_err());
        assert!(append_motion_score("x", f64::NAN).is_err());
    }

    #[test]
    fn motion_score_changes_only_appended_tokens() {
        use crate::mmdit::toy_text_embed;
        let a = toy_text_embed(&append_motion_score("a dog runs", 2.0).unwrap(), 8).unwrap();
        let b = toy_text_embed(&append_motion_score("a dog runs", 7.0).unwrap(), 8).unwrap();
        let rows = |t: &Tensor| t.data().chunks(8).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let diff: Vec<usize> = rows(&a.tokens)
            .iter()
            .zip(rows(&b.tokens))
            .enumerate()
            .filter(|(_, (x, y))| *x != y)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diff, vec![5]);
    }
}
