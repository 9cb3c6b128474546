//! One-dimensional Gaussian data with a small MLP velocity field.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_match::{euler_sample, fm_loss, pair_from_noise, sample_timestep, ShiftConfig};
use crate::nn::{init_linear, linear, xavier};
use crate::rng::{self, Rng};
use crate::tensor::{adamw_step, AdamWConfig, OptimizerState, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianToyConfig {
    pub data_mean: f64,
    pub data_std: f64,
    pub hidden: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GaussianToyConfig {
    fn default() -> Self {
        Self {
            data_mean: 3.0,
            data_std: 0.5,
            hidden: 64,
            batch: 256,
            steps: 1500,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// `v(x, t)` from two SiLU hidden layers over the features `(x, t)`.
pub struct GaussianVelocity {
    pub params: ParamStore,
}

impl GaussianVelocity {
    pub fn new(hidden: usize, rng: &mut Rng) -> Self {
        let mut params = ParamStore::new();
        init_linear(&mut params, "fc1", 2, hidden, xavier(2), rng);
        init_linear(&mut params, "fc2", hidden, hidden, xavier(hidden), rng);
        init_linear(&mut params, "out", hidden, 1, xavier(hidden), rng);
        Self { params }
    }

    /// `x: [b]`, one timestep per row.
    pub fn forward(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let b = x.numel();
        let tt = Tensor::new(&[b, 1], t.to_vec())?;
        let feats = Tensor::concat(&[x.reshape(&[b, 1])?, tt], 1)?;
        let h = linear(&self.params, "fc1", &feats)?.silu()?;
        let h = linear(&self.params, "fc2", &h)?.silu()?;
        linear(&self.params, "out", &h)?.reshape(&[b])
    }
}

/// Trains the MLP with the flow-matching loss; returns the model and the
/// per-step losses.
pub fn train_gaussian_toy(cfg: &GaussianToyConfig) -> Result<(GaussianVelocity, Vec<f64>)> {
    if cfg.batch == 0 || cfg.hidden == 0 || cfg.data_std <= 0.0 {
        return Err(Error::Config(format!("invalid toy config {cfg:?}")));
    }
    let mut init_rng = rng::stream(cfg.seed, "toy1d.init");
    let mut data_rng = rng::stream(cfg.seed, "toy1d.data");
    let mut model = GaussianVelocity::new(cfg.hidden, &mut init_rng);
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        ..AdamWConfig::default()
    };
    let mut opt = OptimizerState::new(opt_cfg, model.params.tensors())?;
    let data =
        Normal::new(cfg.data_mean, cfg.data_std).map_err(|e| Error::Config(e.to_string()))?;
    let shift = ShiftConfig::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let x0: Vec<f64> = (0..cfg.batch).map(|_| data.sample(&mut data_rng)).collect();
        let x1 = Tensor::randn(&[cfg.batch], 1.0, &mut data_rng);
        let ts: Vec<f64> = (0..cfg.batch)
            .map(|_| sample_timestep(&mut data_rng, &shift, 1))
            .collect::<Result<_>>()?;
        let x0 = Tensor::from_vec(x0)?;
        let xt: Vec<f64> = (0..cfg.batch)
            .map(|i| (1.0 - ts[i]) * x0.data()[i] + ts[i] * x1.data()[i])
            .collect();
        let target = pair_from_noise(&x0, &x1, 0.0)?.target;
        let pred = model.forward(&Tensor::from_vec(xt)?, &ts)?;
        let loss = fm_loss(&pred, &target)?;
        losses.push(loss.item());
        model.params.zero_grad();
        loss.backward()?;
        let grads = model.params.grads();
        adamw_step(model.params.tensors_mut(), &grads, &mut opt)?;
    }
    Ok((model, losses))
}

/// Draws `n` samples by Euler integration of the trained field.
pub fn sample_gaussian_toy(
    model: &GaussianVelocity,
    n: usize,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let x1 = Tensor::randn(&[n], 1.0, rng);
    let out = euler_sample(
        |x, t, _| model.forward(&x.detach(), &vec![t; n]).map(|v| v.detach()),
        &x1,
        steps,
        1.0,
    )?;
    Ok(out.to_vec())
}
