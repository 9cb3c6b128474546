use super::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    /// Betas (0.9, 0.999), eps 1e-15, clip at norm 1, no weight decay.
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            clip_norm: Some(1.0),
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1)
            || !(0.0..1.0).contains(&config.beta2)
            || config.beta1 == 0.0 && config.beta2 == 0.0
        {
            return Err(Error::Config(format!(
                "betas must lie in (0,1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        Ok(Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }
}

/// One AdamW update in place. Gradients are first scaled so that their
/// global L2 norm does not exceed the clip threshold. Returns the pre-clip
/// norm.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adamw",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.m[i].len() != g.len() {
            return Err(shape_err(
                "adamw",
                format!("param {i}: {} values, grad {}", p.numel(), g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adamw"));
        }
    }
    let c = state.config;
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    let clip = match c.clip_norm {
        Some(th) if norm > th => th / norm,
        _ => 1.0,
    };
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut data = p.to_vec();
        for j in 0..data.len() {
            let gj = g[j] * clip;
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * data[j]);
        }
        let fresh = Tensor::new(p.shape(), data)?;
        *p = if p.is_tracked() {
            fresh.requires_grad()
        } else {
            fresh
        };
    }
    Ok(norm)
}
