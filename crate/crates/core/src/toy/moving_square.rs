//! Tiny videos of a bright square sliding over a dark background.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::condition::{
    apply_condition_dropout, build_condition_input, ConditionSpec, I2V_DROPOUT,
};
use crate::error::{Error, Result};
use crate::flow_match::{euler_sample, fm_loss, pair_from_noise, sample_timestep, ShiftConfig};
use crate::guidance::{cfg_single, guided_velocity, GuidanceConfig, GuidanceInputs};
use crate::mmdit::{toy_text_embed, Mmdit, MmditInit, ModelConfig, TextEmbedding};
use crate::rng::{self, Rng};
use crate::tensor::{adamw_step, AdamWConfig, OptimizerState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingSquareConfig {
    pub frames: usize,
    pub size: usize,
    pub square: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub double_layers: usize,
    pub single_layers: usize,
    pub patch: (usize, usize, usize),
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Condition on the first frame (image-to-video) with condition dropout.
    #[serde(default)]
    pub i2v: bool,
}

impl Default for MovingSquareConfig {
    fn default() -> Self {
        Self {
            frames: 2,
            size: 8,
            square: 3,
            dim: 32,
            heads: 4,
            ffn_dim: 64,
            double_layers: 1,
            single_layers: 1,
            patch: (1, 2, 2),
            batch: 4,
            steps: 300,
            lr: 1e-3,
            seed: 0,
            i2v: false,
        }
    }
}

impl MovingSquareConfig {
    pub fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::tiny(
            self.double_layers,
            self.single_layers,
            self.dim,
            self.ffn_dim,
            self.heads,
            self.patch,
            1,
        );
        if self.i2v {
            c.in_channels = 3;
        }
        c
    }

    pub fn tokens(&self) -> usize {
        self.frames / self.patch.0 * (self.size / self.patch.1) * (self.size / self.patch.2)
    }
}

const DIRECTIONS: [(&str, i64, i64); 4] = [
    ("right", 0, 1),
    ("left", 0, -1),
    ("down", 1, 0),
    ("up", -1, 0),
];

/// One clip `[1, frames, size, size]` in `{-1, 1}` and its caption.
pub fn moving_square_clip(cfg: &MovingSquareConfig, rng: &mut Rng) -> Result<(Tensor, String)> {
    if cfg.square == 0 || cfg.square > cfg.size {
        return Err(Error::Config(format!(
            "square {} does not fit in {}",
            cfg.square, cfg.size
        )));
    }
    let (name, dy, dx) = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];
    let span = (cfg.size - cfg.square) as i64;
    let mut y = rng.random_range(0..=span);
    let mut x = rng.random_range(0..=span);
    let n = cfg.size;
    let mut data = vec![-1.0; cfg.frames * n * n];
    for f in 0..cfg.frames {
        for r in 0..cfg.square {
            for c in 0..cfg.square {
                data[f * n * n + (y as usize + r) * n + x as usize + c] = 1.0;
            }
        }
        y = (y + dy).clamp(0, span);
        x = (x + dx).clamp(0, span);
    }
    Ok((
        Tensor::new(&[1, cfg.frames, n, n], data)?,
        format!("a square moving {name}"),
    ))
}

/// Trains a tiny transformer on moving-square clips; returns the model and
/// the per-step batch losses.
pub fn train_moving_square(cfg: &MovingSquareConfig) -> Result<(Mmdit, Vec<f64>)> {
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let mut init_rng = rng::stream(cfg.seed, "square.init");
    let mut data_rng = rng::stream(cfg.seed, "square.data");
    let mut model = Mmdit::new(cfg.model_config(), MmditInit::Standard, &mut init_rng)?;
    let mut opt = OptimizerState::new(
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
        model.params.tensors(),
    )?;
    let shift = ShiftConfig::default();
    let tokens = cfg.tokens();
    let first = ConditionSpec::first_frame(Tensor::zeros(&[1]), I2V_DROPOUT);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        model.params.zero_grad();
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let (x0, caption) = moving_square_clip(cfg, &mut data_rng)?;
            let text: TextEmbedding = toy_text_embed(&caption, cfg.dim)?;
            let t = sample_timestep(&mut data_rng, &shift, tokens)?;
            let x1 = Tensor::randn(x0.shape(), 1.0, &mut data_rng);
            let pair = pair_from_noise(&x0, &x1, t)?;
            let input = if cfg.i2v {
                let spec = ConditionSpec {
                    latent: Some(x0.clone()),
                    ..first.clone()
                };
                build_condition_input(&pair.xt, &apply_condition_dropout(&spec, &mut data_rng))?
            } else {
                pair.xt.clone()
            };
            let loss = fm_loss(&model.forward(&input, &text, t)?, &pair.target)?
                .scale(1.0 / cfg.batch as f64)?;
            total += loss.item();
            loss.backward()?;
        }
        losses.push(total);
        let grads = model.params.grads();
        adamw_step(model.params.tensors_mut(), &grads, &mut opt)?;
    }
    Ok((model, losses))
}

/// Generates one clip from the noise `x1: [1, frames, size, size]`.
///
/// Text-to-video models use single-scale guidance with `guidance.g_txt`;
/// image-to-video models use [`guided_velocity`] with `first_frame`
/// (`[1, 1, size, size]`) as the condition, or none.
pub fn sample_moving_square(
    model: &Mmdit,
    cfg: &MovingSquareConfig,
    caption: &str,
    first_frame: Option<&Tensor>,
    guidance: &GuidanceConfig,
    x1: &Tensor,
) -> Result<Tensor> {
    let text = toy_text_embed(caption, cfg.dim)?;
    let null = TextEmbedding::null(cfg.dim)?;
    let alpha = ShiftConfig::default().alpha(cfg.tokens());
    if !cfg.i2v {
        if first_frame.is_some() {
            return Err(Error::Config(
                "model was not trained for image conditioning".into(),
            ));
        }
        let v = |x: &Tensor, t: f64, _: usize| {
            cfg_single(
                &model.forward(x, &null, t)?,
                &model.forward(x, &text, t)?,
                guidance.g_txt,
            )
        };
        return euler_sample(v, x1, guidance.steps, alpha);
    }
    let condition = match first_frame {
        Some(f) => ConditionSpec::first_frame(f.clone(), I2V_DROPOUT),
        None => ConditionSpec::none(I2V_DROPOUT),
    };
    let inputs = GuidanceInputs {
        text: &text,
        null_text: &null,
        condition: &condition,
    };
    let v = |x: &Tensor, t: f64, step: usize| guided_velocity(model, x, t, step, guidance, &inputs);
    euler_sample(v, x1, guidance.steps, alpha)
}

/// Relative drop between the mean of the first and last `window` losses.
pub fn loss_drop(losses: &[f64], window: usize) -> f64 {
    let w = window.min(losses.len()).max(1);
    let head: f64 = losses[..w].iter().sum::<f64>() / w as f64;
    let tail: f64 = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
    1.0 - tail / head
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_has_one_square_per_frame() {
        let cfg = MovingSquareConfig::default();
        let mut r = rng::from_seed(5);
        for _ in 0..20 {
            let (clip, caption) = moving_square_clip(&cfg, &mut r).unwrap();
            assert!(caption.starts_with("a square moving "));
            for f in clip.data().chunks(64) {
                assert_eq!(f.iter().filter(|v| **v > 0.0).count(), 9);
            }
        }
    }

    #[test]
    fn i2v_trains_and_samples() {
        let cfg = MovingSquareConfig {
            i2v: true,
            steps: 3,
            batch: 2,
            ..MovingSquareConfig::default()
        };
        let (model, losses) = train_moving_square(&cfg).unwrap();
        assert_eq!(model.config.in_channels, 3);
        assert!(losses.iter().all(|l| l.is_finite()));
        let g = GuidanceConfig {
            steps: 4,
            frames: 2,
            oscillation_warmup: Some(2),
            ..GuidanceConfig::default()
        };
        let x1 = Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng::from_seed(1));
        let (frame, _) = moving_square_clip(&cfg, &mut rng::from_seed(2)).unwrap();
        let first = frame.narrow(1, 0, 1).unwrap();
        let out = sample_moving_square(&model, &cfg, "a square moving up", Some(&first), &g, &x1)
            .unwrap();
        assert_eq!(out.shape(), &[1, 2, 8, 8]);
        let t2v = MovingSquareConfig { steps: 1, ..cfg };
        let (m, _) = train_moving_square(&MovingSquareConfig { i2v: false, ..t2v }).unwrap();
        let plain = MovingSquareConfig { i2v: false, ..t2v };
        assert!(sample_moving_square(&m, &plain, "x", Some(&first), &g, &x1).is_err());
        assert!(sample_moving_square(&m, &plain, "x", None, &g, &x1).is_ok());
    }

    #[test]
    fn loss_drop_windows() {
        assert!((loss_drop(&[2.0, 2.0, 1.0, 0.5], 2) - 0.625).abs() < 1e-12);
    }
}
