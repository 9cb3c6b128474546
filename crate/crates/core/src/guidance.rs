//! Classifier-free guidance: single-scale, decoupled image/text scales,
//! step oscillation and a frame/step dependent image scale.

use serde::{Deserialize, Serialize};

use crate::condition::{build_condition_input, ConditionSpec};
use crate::error::{shape_err, Error, Result};
use crate::mmdit::{Mmdit, TextEmbedding};
use crate::tensor::Tensor;

/// Anything that maps a conditioned latent, text and time to a velocity.
pub trait VelocityModel {
    fn velocity(&self, input: &Tensor, text: &TextEmbedding, t: f64) -> Result<Tensor>;
}

impl VelocityModel for Mmdit {
    fn velocity(&self, input: &Tensor, text: &TextEmbedding, t: f64) -> Result<Tensor> {
        self.forward(input, text, t)
    }
}

impl<F: Fn(&Tensor, &TextEmbedding, f64) -> Result<Tensor>> VelocityModel for F {
    fn velocity(&self, input: &Tensor, text: &TextEmbedding, t: f64) -> Result<Tensor> {
        self(input, text, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// One scale `g_txt` between the unconditional and full branches.
    Single,
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicScale {
    Off,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub g_img: f64,
    pub g_txt: f64,
    pub mode: GuidanceMode,
    /// Steps before oscillation starts; `None` disables it.
    pub oscillation_warmup: Option<usize>,
    pub dynamic: DynamicScale,
    pub steps: usize,
    /// Latent frames of the generated clip.
    pub frames: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            g_img: 3.0,
            g_txt: 7.5,
            mode: GuidanceMode::Decoupled,
            oscillation_warmup: Some(10),
            dynamic: DynamicScale::Linear,
            steps: 50,
            frames: 1,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.g_img.is_finite()
            || !self.g_txt.is_finite()
            || self.g_img < 0.0
            || self.g_txt < 0.0
        {
            return Err(Error::Config(format!(
                "guidance scales must be finite and >= 0: {} {}",
                self.g_img, self.g_txt
            )));
        }
        if self.steps == 0 || self.frames == 0 {
            return Err(Error::Config("steps and frames must be positive".into()));
        }
        if let Some(w) = self.oscillation_warmup {
            if w > self.steps {
                return Err(Error::Config(format!(
                    "oscillation warmup {w} exceeds {} steps",
                    self.steps
                )));
            }
        }
        Ok(())
    }
}

/// `v_u + g_img (v_i - v_u) + g_txt (v_f - v_i)`. `g_img` broadcasts against
/// the velocities, so a `[1, t, 1, 1]` tensor gives per-frame scales.
pub fn cfg_decoupled(
    v_uncond: &Tensor,
    v_img: &Tensor,
    v_full: &Tensor,
    g_img: &Tensor,
    g_txt: f64,
) -> Result<Tensor> {
    same_shape(v_uncond, v_img)?;
    same_shape(v_uncond, v_full)?;
    v_uncond
        .add(&v_img.sub(v_uncond)?.mul(g_img)?)?
        .add(&v_full.sub(v_img)?.scale(g_txt)?)
}

/// `v_u + g (v_f - v_u)`.
pub fn cfg_single(v_uncond: &Tensor, v_full: &Tensor, g: f64) -> Result<Tensor> {
    same_shape(v_uncond, v_full)?;
    v_uncond.add(&v_full.sub(v_uncond)?.scale(g)?)
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "cfg",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Effective image scale at 1-based `step` for latent frame `frame`.
///
/// The linear law is `1 + (g_img - 1) * f * s` with `f` rising from 0 at the
/// first frame to 1 at the last and `s` falling from 1 at the first step to
/// 0 at the last. A single frame or a single step counts as `f = 1` or
/// `s = 1`. After the warmup window even steps return 1.
pub fn image_guidance_schedule(config: &GuidanceConfig, step: usize, frame: usize) -> Result<f64> {
    config.validate()?;
    if step == 0 || step > config.steps {
        return Err(Error::OutOfRange(format!(
            "step {step} not in 1..={}",
            config.steps
        )));
    }
    if frame >= config.frames {
        return Err(Error::OutOfRange(format!(
            "frame {frame} not in 0..{}",
            config.frames
        )));
    }
    let base = match config.dynamic {
        DynamicScale::Off => config.g_img,
        DynamicScale::Linear => {
            let f = if config.frames > 1 {
                frame as f64 / (config.frames - 1) as f64
            } else {
                1.0
            };
            let s = if config.steps > 1 {
                1.0 - (step - 1) as f64 / (config.steps - 1) as f64
            } else {
                1.0
            };
            1.0 + (config.g_img - 1.0) * f * s
        }
    };
    match config.oscillation_warmup {
        Some(w) if step > w && step.is_multiple_of(2) => Ok(1.0),
        _ => Ok(base),
    }
}

/// Per-frame image scales as a `[1, frames, 1, 1]` tensor.
pub fn frame_scales(config: &GuidanceConfig, step: usize) -> Result<Tensor> {
    let g = (0..config.frames)
        .map(|f| image_guidance_schedule(config, step, f))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(&[1, config.frames, 1, 1], g)
}

/// Conditioning inputs shared by all guidance branches.
pub struct GuidanceInputs<'a> {
    pub text: &'a TextEmbedding,
    pub null_text: &'a TextEmbedding,
    pub condition: &'a ConditionSpec,
}

/// Guided velocity for the noisy latent `x: [k, t, h, w]`.
///
/// Decoupled mode evaluates `v(null, null)`, `v(null, img)` and
/// `v(txt, img)`; single mode evaluates only the first and last.
pub fn guided_velocity(
    model: &dyn VelocityModel,
    x: &Tensor,
    t: f64,
    step: usize,
    config: &GuidanceConfig,
    inputs: &GuidanceInputs,
) -> Result<Tensor> {
    config.validate()?;
    let frames = x.shape().get(1).copied().unwrap_or(0);
    if frames != config.frames {
        return Err(shape_err(
            "guided_velocity",
            format!("latent has {frames} frames, config {}", config.frames),
        ));
    }
    let bare = build_condition_input(x, &ConditionSpec::none(inputs.condition.dropout))?;
    let cond = build_condition_input(x, inputs.condition)?;
    let v_uncond = model.velocity(&bare, inputs.null_text, t)?;
    let v_full = model.velocity(&cond, inputs.text, t)?;
    match config.mode {
        GuidanceMode::Single => cfg_single(&v_uncond, &v_full, config.g_txt),
        GuidanceMode::Decoupled => {
            let v_img = model.velocity(&cond, inputs.null_text, t)?;
            cfg_decoupled(
                &v_uncond,
                &v_img,
                &v_full,
                &frame_scales(config, step)?,
                config.g_txt,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdit::toy_text_embed;
    use crate::rng;
    use std::cell::Cell;

    fn s(v: f64) -> Tensor {
        Tensor::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let v = cfg_decoupled(&s(0.0), &s(1.0), &s(3.0), &s(2.0), 2.0).unwrap();
        assert_eq!(v.item(), 6.0);
        assert_eq!(cfg_single(&s(0.0), &s(3.0), 2.0).unwrap().item(), 6.0);
        let v = cfg_decoupled(&s(0.5), &s(1.0), &s(3.0), &s(1.0), 1.0).unwrap();
        assert_eq!(v.item(), 3.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(&[2]);
        assert!(cfg_decoupled(&a, &Tensor::zeros(&[3]), &a, &s(1.0), 1.0).is_err());
        assert!(cfg_single(&a, &Tensor::zeros(&[3]), 1.0).is_err());
    }

    #[test]
    fn oscillation_example() {
        let cfg = GuidanceConfig {
            dynamic: DynamicScale::Off,
            ..GuidanceConfig::default()
        };
        assert_eq!(image_guidance_schedule(&cfg, 5, 0).unwrap(), 3.0);
        assert_eq!(image_guidance_schedule(&cfg, 10, 0).unwrap(), 3.0);
        assert_eq!(image_guidance_schedule(&cfg, 12, 0).unwrap(), 1.0);
        assert_eq!(image_guidance_schedule(&cfg, 13, 0).unwrap(), 3.0);
    }

    #[test]
    fn linear_law_endpoints() {
        let cfg = GuidanceConfig {
            oscillation_warmup: None,
            frames: 5,
            ..GuidanceConfig::default()
        };
        for step in 1..=50 {
            assert_eq!(image_guidance_schedule(&cfg, step, 0).unwrap(), 1.0);
        }
        assert_eq!(image_guidance_schedule(&cfg, 1, 4).unwrap(), 3.0);
        assert_eq!(image_guidance_schedule(&cfg, 50, 4).unwrap(), 1.0);
        assert!((image_guidance_schedule(&cfg, 1, 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_errors() {
        let cfg = GuidanceConfig {
            frames: 3,
            ..GuidanceConfig::default()
        };
        assert!(image_guidance_schedule(&cfg, 0, 0).is_err());
        assert!(image_guidance_schedule(&cfg, 51, 0).is_err());
        assert!(image_guidance_schedule(&cfg, 1, 3).is_err());
        let bad = GuidanceConfig {
            oscillation_warmup: Some(60),
            ..cfg
        };
        assert!(image_guidance_schedule(&bad, 1, 0).is_err());
        let bad = GuidanceConfig {
            g_img: f64::INFINITY,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    /// Velocity that depends on which branch is asked for.
    fn branchy(input: &Tensor, text: &TextEmbedding, _t: f64) -> Result<Tensor> {
        let k = input.shape()[0] / 2;
        let mask_on = input.data()[input.numel() - 1] > 0.0;
        let bias = text.tokens.shape()[0] as f64 + if mask_on { 10.0 } else { 0.0 };
        input.narrow(0, 0, k)?.add_scalar(bias)
    }

    fn inputs_for(x: &Tensor) -> (TextEmbedding, TextEmbedding, ConditionSpec) {
        let text = toy_text_embed("two words", 4).unwrap();
        let null = TextEmbedding::null(4).unwrap();
        let t = x.shape()[1];
        let cond = ConditionSpec {
            frames: (0..t).collect(),
            latent: Some(x.clone()),
            dropout: 0.0,
        };
        (text, null, cond)
    }

    #[test]
    fn zero_scales_return_unconditional() {
        let mut r = rng::from_seed(1);
        let x = Tensor::randn(&[2, 3, 2, 2], 1.0, &mut r);
        let (text, null, cond) = inputs_for(&x);
        let inputs = GuidanceInputs {
            text: &text,
            null_text: &null,
            condition: &cond,
        };
        for mode in [GuidanceMode::Single, GuidanceMode::Decoupled] {
            let cfg = GuidanceConfig {
                g_img: 0.0,
                g_txt: 0.0,
                mode,
                frames: 3,
                dynamic: DynamicScale::Off,
                ..GuidanceConfig::default()
            };
            let v = guided_velocity(&branchy, &x, 0.5, 1, &cfg, &inputs).unwrap();
            let u = branchy(
                &build_condition_input(&x, &ConditionSpec::none(0.0)).unwrap(),
                &null,
                0.5,
            )
            .unwrap();
            assert_eq!(v.data(), u.data());
        }
    }

    #[test]
    fn evaluation_counts() {
        let calls = Cell::new(0);
        let counting = |i: &Tensor, t: &TextEmbedding, tt: f64| {
            calls.set(calls.get() + 1);
            branchy(i, t, tt)
        };
        let x = Tensor::zeros(&[1, 2, 1, 1]);
        let (text, null, cond) = inputs_for(&x);
        let inputs = GuidanceInputs {
            text: &text,
            null_text: &null,
            condition: &cond,
        };
        let cfg = GuidanceConfig {
            frames: 2,
            ..GuidanceConfig::default()
        };
        guided_velocity(&counting, &x, 0.5, 1, &cfg, &inputs).unwrap();
        assert_eq!(calls.get(), 3);
        guided_velocity(
            &counting,
            &x,
            0.5,
            1,
            &GuidanceConfig {
                mode: GuidanceMode::Single,
                ..cfg
            },
            &inputs,
        )
        .unwrap();
        assert_eq!(calls.get(), 5);
    }

    #[test]
    fn per_frame_scales_rise_along_frames() {
        let x = Tensor::zeros(&[1, 5, 1, 1]);
        let (text, null, cond) = inputs_for(&x);
        let inputs = GuidanceInputs {
            text: &text,
            null_text: &null,
            condition: &cond,
        };
        let cfg = GuidanceConfig {
            g_txt: 1.0,
            frames: 5,
            ..GuidanceConfig::default()
        };
        // v_u = 0, v_i = 10, v_f = 12, so v = 10 g_img(frame) + 2.
        let v = guided_velocity(&branchy, &x, 0.5, 1, &cfg, &inputs).unwrap();
        let expected = frame_scales(&cfg, 1).unwrap();
        for (got, g) in v.data().iter().zip(expected.data()) {
            assert!((got - (10.0 * g + 2.0)).abs() < 1e-4);
        }
        assert!(v.data().windows(2).all(|w| w[1] >= w[0]));
    }
}
