//! Flow-matching objective, resolution-aware timestep shift and the Euler
//! sampler.
//!
//! Convention: `x_t = (1 - t) x0 + t x1` with `x0` data and `x1` noise; the
//! network predicts the velocity `x0 - x1`. Sampling integrates from `t = 1`
//! down to `t = 0`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Maps token count to the shift strength
/// `alpha = max(floor, alpha_base * tokens / reference_tokens)`, and holds the
/// logit-normal parameters of the base timestep draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub alpha_base: f64,
    pub reference_tokens: usize,
    pub floor: f64,
    pub logit_mean: f64,
    pub logit_std: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            alpha_base: 1.0,
            reference_tokens: 256,
            floor: 1.0,
            logit_mean: 0.0,
            logit_std: 1.0,
        }
    }
}

impl ShiftConfig {
    pub fn alpha(&self, tokens: usize) -> f64 {
        (self.alpha_base * tokens as f64 / self.reference_tokens as f64).max(self.floor)
    }

    fn validate(&self) -> Result<()> {
        if self.reference_tokens == 0
            || self.floor < 1.0
            || self.alpha_base < 0.0
            || self.logit_std <= 0.0
        {
            return Err(Error::Config(format!("invalid shift config {self:?}")));
        }
        Ok(())
    }
}

/// `t -> alpha t / (1 + (alpha - 1) t)`.
///
/// A monotone bijection of `[0, 1]` fixing both ends; `alpha = 1` is the
/// identity and `1 / alpha` is the inverse map.
pub fn shift_timestep(t: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("timestep {t} outside [0, 1]")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::OutOfRange(format!(
            "shift alpha must be positive, got {alpha}"
        )));
    }
    Ok(alpha * t / (1.0 + (alpha - 1.0) * t))
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Logit-normal draw shifted for a sample with `tokens` tokens.
pub fn sample_timestep(rng: &mut Rng, shift: &ShiftConfig, tokens: usize) -> Result<f64> {
    shift.validate()?;
    if tokens == 0 {
        return Err(Error::OutOfRange("token count must be positive".into()));
    }
    let normal =
        Normal::new(shift.logit_mean, shift.logit_std).map_err(|e| Error::Config(e.to_string()))?;
    let t0 = sigmoid(normal.sample(rng));
    shift_timestep(t0, shift.alpha(tokens))
}

#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f64,
    pub xt: Tensor,
    pub target: Tensor,
}

/// Draws noise `x1 ~ N(0, I)` and builds the interpolant and velocity target.
pub fn make_training_pair(x0: &Tensor, rng: &mut Rng, t: f64) -> Result<FlowSample> {
    let x1 = Tensor::randn(x0.shape(), 1.0, rng);
    pair_from_noise(x0, &x1, t)
}

/// As [`make_training_pair`] with caller-supplied noise.
pub fn pair_from_noise(x0: &Tensor, x1: &Tensor, t: f64) -> Result<FlowSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("timestep {t} outside [0, 1]")));
    }
    if x0.shape() != x1.shape() {
        return Err(shape_err(
            "make_training_pair",
            format!("{:?} vs {:?}", x0.shape(), x1.shape()),
        ));
    }
    let (a, b) = (x0.detach(), x1.detach());
    let xt_data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (1.0 - t) * p + t * q)
        .collect();
    let target_data = a.data().iter().zip(b.data()).map(|(p, q)| p - q).collect();
    Ok(FlowSample {
        xt: Tensor::new(a.shape(), xt_data)?,
        target: Tensor::new(a.shape(), target_data)?,
        x0: a,
        x1: b,
        t,
    })
}

/// Mean squared error between predicted and target velocity.
pub fn fm_loss(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    prediction.mse(target)
}

/// Shifted time grid `shift(k / steps, alpha)` for `k = steps, ..., 0`.
pub fn timestep_grid(steps: usize, alpha: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::OutOfRange("sampler needs at least one step".into()));
    }
    (0..=steps)
        .rev()
        .map(|k| shift_timestep(k as f64 / steps as f64, alpha))
        .collect()
}

/// One Euler update from `t_from` down to `t_to`.
pub fn euler_update(x: &Tensor, v: &Tensor, t_from: f64, t_to: f64) -> Result<Tensor> {
    if v.shape() != x.shape() {
        return Err(shape_err(
            "euler_sample",
            format!("velocity {:?} for state {:?}", v.shape(), x.shape()),
        ));
    }
    let dt = t_from - t_to;
    let data = x
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| a + dt * b)
        .collect();
    Tensor::new(x.shape(), data)
}

/// Integrates `velocity(x, t, step)` from noise at `t = 1` to data at
/// `t = 0`. `step` is 1-based. Guidance composes inside `velocity`.
pub fn euler_sample<F>(mut velocity: F, x1: &Tensor, steps: usize, alpha: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64, usize) -> Result<Tensor>,
{
    let grid = timestep_grid(steps, alpha)?;
    let mut x = x1.detach();
    for (i, w) in grid.windows(2).enumerate() {
        let v = velocity(&x, w[0], i + 1)?;
        x = euler_update(&x, &v, w[0], w[1])?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{with_precision, Precision};

    #[test]
    fn shift_identity_and_fixed_points() {
        assert_eq!(shift_timestep(0.37, 1.0).unwrap(), 0.37);
        for a in [1.0, 1.5, 3.0, 16.0] {
            assert_eq!(shift_timestep(0.0, a).unwrap(), 0.0);
            assert_eq!(shift_timestep(1.0, a).unwrap(), 1.0);
        }
        assert!((shift_timestep(0.5, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(shift_timestep(1.2, 2.0).is_err());
        assert!(shift_timestep(0.5, 0.0).is_err());
    }

    #[test]
    fn inverse_shift() {
        for a in [0.3, 1.0, 2.0, 7.5] {
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                let back = shift_timestep(shift_timestep(t, a).unwrap(), 1.0 / a).unwrap();
                assert!((back - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_law() {
        let s = ShiftConfig::default();
        assert_eq!(s.alpha(256), 1.0);
        assert_eq!(s.alpha(64), 1.0);
        assert_eq!(s.alpha(4096), 16.0);
        let plain = ShiftConfig {
            alpha_base: 0.0,
            ..s
        };
        assert_eq!(plain.alpha(1 << 20), 1.0);
    }

    #[test]
    fn timestep_draws_in_open_interval() {
        let mut r = rng::from_seed(4);
        for _ in 0..1000 {
            let t = sample_timestep(&mut r, &ShiftConfig::default(), 2304).unwrap();
            assert!(t > 0.0 && t < 1.0);
        }
        assert!(sample_timestep(&mut r, &ShiftConfig::default(), 0).is_err());
    }

    #[test]
    fn training_pair_endpoints() {
        let mut r = rng::from_seed(1);
        let x0 = Tensor::randn(&[2, 3], 1.0, &mut r);
        let p0 = make_training_pair(&x0, &mut r, 0.0).unwrap();
        assert_eq!(p0.xt.data(), x0.data());
        let p1 = make_training_pair(&x0, &mut r, 1.0).unwrap();
        assert_eq!(p1.xt.data(), p1.x1.data());
        let p = pair_from_noise(
            &Tensor::from_vec(vec![2.0]).unwrap(),
            &Tensor::from_vec(vec![0.0]).unwrap(),
            0.5,
        )
        .unwrap();
        assert_eq!(p.xt.data(), &[1.0]);
        assert_eq!(p.target.data(), &[2.0]);
    }

    #[test]
    fn loss_values() {
        let t = Tensor::from_vec(vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(fm_loss(&t, &t).unwrap().item(), 0.0);
        assert_eq!(
            fm_loss(&t.add_scalar(1.0).unwrap(), &t).unwrap().item(),
            1.0
        );
        assert!(fm_loss(&t, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn exact_linear_field_in_one_or_many_steps() {
        with_precision(Precision::F64, || {
            let mut r = rng::from_seed(6);
            let x0 = Tensor::randn(&[4], 1.0, &mut r);
            let x1 = Tensor::randn(&[4], 1.0, &mut r);
            let v = x0.sub(&x1).unwrap();
            let one = euler_sample(|_, _, _| Ok(v.clone()), &x1, 1, 1.0).unwrap();
            for (a, b) in one.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-14);
            }
            let many = euler_sample(|_, _, _| Ok(v.clone()), &x1, 50, 3.0).unwrap();
            for (a, b) in many.data().iter().zip(one.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn sampler_rejects_bad_shapes_and_zero_steps() {
        let x = Tensor::zeros(&[3]);
        assert!(euler_sample(|_, _, _| Ok(Tensor::zeros(&[2])), &x, 2, 1.0).is_err());
        assert!(euler_sample(|x, _, _| Ok(x.clone()), &x, 0, 1.0).is_err());
    }

    #[test]
    fn step_numbers_are_one_based() {
        let mut seen = vec![];
        euler_sample(
            |x, t, s| {
                seen.push((s, t));
                Ok(x.clone())
            },
            &Tensor::zeros(&[1]),
            4,
            1.0,
        )
        .unwrap();
        assert_eq!(seen, vec![(1, 1.0), (2, 0.75), (3, 0.5), (4, 0.25)]);
    }
}
