//! Inference-time scaling: branch the sampler state with small noise at
//! chosen steps, look ahead, score with verifiers and keep the best branch.

mod verify;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_match::{euler_update, timestep_grid};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub use verify::{
    luma_frames, validate_weights, verify_candidates, verify_video, VerifierScore, IMAGING_HALF,
    VERIFIER_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// Resume from the winner's branched state; injection steps inside a
    /// lookahead window still branch.
    BranchPoint,
    /// Jump to the end of the winner's lookahead; injection steps inside the
    /// window are skipped.
    LookaheadEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// 1-based sampler steps.
    pub injection_steps: BTreeSet<usize>,
    pub seeds: usize,
    pub variations: usize,
    pub lookahead: usize,
    /// Ordered as [`VERIFIER_NAMES`].
    pub weights: [f64; 6],
    /// Injected noise std as a fraction of the state's std.
    pub noise_scale: f64,
    pub continuation: Continuation,
    /// Model evaluations per guided step (3 for decoupled guidance).
    pub evals_per_step: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            injection_steps: BTreeSet::from([1, 3]),
            seeds: 1,
            variations: 4,
            lookahead: 2,
            weights: [1.0; 6],
            noise_scale: 0.1,
            continuation: Continuation::BranchPoint,
            evals_per_step: 3,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if let Some(s) = self
            .injection_steps
            .iter()
            .find(|&&s| s == 0 || s > total_steps)
        {
            return Err(Error::OutOfRange(format!(
                "injection step {s} outside 1..={total_steps}"
            )));
        }
        if self.seeds == 0
            || self.variations == 0
            || self.lookahead == 0
            || self.evals_per_step == 0
        {
            return Err(Error::Config(
                "seeds, variations, lookahead and evals_per_step must be >= 1".into(),
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!("noise scale {}", self.noise_scale)));
        }
        validate_weights(&self.weights)
    }
}

/// Candidate 0 is `state` itself; the rest add `N(0, scale^2)` noise.
pub fn branch_candidates(
    state: &Tensor,
    rng: &mut Rng,
    variations: usize,
    scale: f64,
) -> Result<Vec<Tensor>> {
    let mut out = vec![state.detach()];
    for _ in 1..variations {
        let noise = Tensor::randn(state.shape(), 1.0, rng);
        let data = state
            .data()
            .iter()
            .zip(noise.data())
            .map(|(s, n)| s + scale * n)
            .collect();
        out.push(Tensor::new(state.shape(), data)?);
    }
    Ok(out)
}

fn std_of(x: &Tensor) -> f64 {
    let d = x.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seed: usize,
    pub step: usize,
    pub scores: Vec<VerifierScore>,
    pub chosen: usize,
}

#[derive(Debug, Clone)]
pub struct ScaledSample {
    pub output: Tensor,
    pub trace: Vec<TraceEntry>,
    /// Velocity calls made, times `evals_per_step`. Equals
    /// [`scaling_cost`] when lookahead windows neither overlap nor run past
    /// the last step.
    pub evaluations: usize,
}

/// Euler sampling with branching at the configured injection steps.
///
/// Each candidate is advanced `lookahead` steps along the main grid (fewer
/// near the end); the clean-sample estimate from its last velocity is
/// decoded and scored. The winner's lookahead states are
/// reused on the main path, so no step is evaluated twice.
#[allow(clippy::too_many_arguments)]
pub fn scaled_sample<V, D>(
    mut velocity: V,
    decode: D,
    x1: &Tensor,
    steps: usize,
    alpha: f64,
    config: &ScalingConfig,
    rng: &mut Rng,
    seed_index: usize,
) -> Result<ScaledSample>
where
    V: FnMut(&Tensor, f64, usize) -> Result<Tensor>,
    D: Fn(&Tensor) -> Result<Tensor>,
{
    config.validate(steps)?;
    let grid = timestep_grid(steps, alpha)?;
    let mut calls = 0usize;
    // Returns the next state and the clean-sample estimate `x - t v`.
    let mut step_once = |x: &Tensor, i: usize, calls: &mut usize| -> Result<(Tensor, Tensor)> {
        *calls += 1;
        let v = velocity(x, grid[i - 1], i)?;
        Ok((
            euler_update(x, &v, grid[i - 1], grid[i])?,
            euler_update(x, &v, grid[i - 1], 0.0)?,
        ))
    };
    let mut x = x1.detach();
    let mut cached: VecDeque<Tensor> = VecDeque::new();
    let mut trace = Vec::new();
    let mut i = 1;
    while i <= steps {
        let branch_here = config.injection_steps.contains(&i)
            && (cached.is_empty() || config.continuation == Continuation::BranchPoint);
        if branch_here {
            cached.clear();
            let cands =
                branch_candidates(&x, rng, config.variations, config.noise_scale * std_of(&x))?;
            let depth = config.lookahead.min(steps - i + 1);
            let mut paths = Vec::with_capacity(cands.len());
            let mut previews = Vec::with_capacity(cands.len());
            for c in &cands {
                let mut path = Vec::with_capacity(depth);
                let mut y = c.clone();
                let mut estimate = c.clone();
                for j in i..i + depth {
                    (y, estimate) = step_once(&y, j, &mut calls)?;
                    path.push(y.clone());
                }
                previews.push(decode(&estimate)?);
                paths.push(path);
            }
            let (scores, chosen) = verify_candidates(&previews, &config.weights)?;
            trace.push(TraceEntry {
                seed: seed_index,
                step: i,
                scores,
                chosen,
            });
            cached = paths.swap_remove(chosen).into();
        }
        x = match cached.pop_front() {
            Some(next) => next,
            None => step_once(&x, i, &mut calls)?.0,
        };
        i += 1;
    }
    Ok(ScaledSample {
        output: x,
        trace,
        evaluations: calls * config.evals_per_step,
    })
}

#[derive(Debug, Clone)]
pub struct ScaledSearch {
    pub output: Tensor,
    pub best_seed: usize,
    pub final_scores: Vec<VerifierScore>,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
}

/// Runs [`scaled_sample`] from `config.seeds` initial noises and keeps the
/// output whose decoded video scores highest (lowest seed index on ties).
pub fn scaled_search<V, D>(
    mut velocity: V,
    decode: D,
    shape: &[usize],
    steps: usize,
    alpha: f64,
    config: &ScalingConfig,
    seed: u64,
) -> Result<ScaledSearch>
where
    V: FnMut(&Tensor, f64, usize) -> Result<Tensor>,
    D: Fn(&Tensor) -> Result<Tensor>,
{
    config.validate(steps)?;
    let mut outputs = Vec::new();
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for s in 0..config.seeds {
        let x1 = Tensor::randn(
            shape,
            1.0,
            &mut rng::stream(seed, &format!("scale/noise/{s}")),
        );
        let mut branch_rng = rng::stream(seed, &format!("scale/branch/{s}"));
        let r = scaled_sample(
            &mut velocity,
            &decode,
            &x1,
            steps,
            alpha,
            config,
            &mut branch_rng,
            s,
        )?;
        trace.extend(r.trace);
        evaluations += r.evaluations;
        outputs.push(r.output);
    }
    let videos = outputs.iter().map(&decode).collect::<Result<Vec<_>>>()?;
    let (final_scores, best_seed) = verify_candidates(&videos, &config.weights)?;
    Ok(ScaledSearch {
        output: outputs.swap_remove(best_seed),
        best_seed,
        final_scores,
        trace,
        evaluations,
    })
}

/// Model evaluations for a scaled run:
/// `seeds * (steps + |injections| * (variations - 1) * lookahead) * evals`.
pub fn scaling_cost(config: &ScalingConfig, total_steps: usize) -> Result<usize> {
    config.validate(total_steps)?;
    let extra = config.injection_steps.len() * (config.variations - 1) * config.lookahead;
    Ok(config.seeds * (total_steps + extra) * config.evals_per_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_match::euler_sample;

    fn vel(x: &Tensor, t: f64, _: usize) -> Result<Tensor> {
        let d = x.data().iter().map(|v| v * (1.0 - t) - 0.5).collect();
        Tensor::new(x.shape(), d)
    }

    fn ident(x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn base(n: usize) -> ScalingConfig {
        ScalingConfig {
            injection_steps: BTreeSet::new(),
            variations: n,
            ..ScalingConfig::default()
        }
    }

    #[test]
    fn cost_examples() {
        let c = base(4);
        assert_eq!(scaling_cost(&c, 50).unwrap(), 150);
        let c1 = ScalingConfig {
            variations: 1,
            ..ScalingConfig::default()
        };
        assert_eq!(scaling_cost(&c1, 50).unwrap(), 150);
        let c2 = ScalingConfig {
            seeds: 2,
            ..ScalingConfig::default()
        };
        let one = scaling_cost(&ScalingConfig::default(), 50).unwrap();
        assert_eq!(one, 3 * (50 + 2 * 3 * 2));
        assert_eq!(scaling_cost(&c2, 50).unwrap(), 2 * one);
    }

    #[test]
    fn branching_edge_cases() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]).unwrap();
        let mut r = rng::from_seed(1);
        assert_eq!(
            branch_candidates(&x, &mut r, 1, 0.5).unwrap()[0].data(),
            x.data()
        );
        let c = branch_candidates(&x, &mut r, 3, 0.0).unwrap();
        assert!(c.iter().all(|v| v.data() == x.data()));
        let a = branch_candidates(&x, &mut rng::from_seed(9), 3, 0.1).unwrap();
        let b = branch_candidates(&x, &mut rng::from_seed(9), 3, 0.1).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.data(), q.data());
        }
        assert_ne!(a[1].data(), x.data());
    }

    #[test]
    fn no_injection_matches_plain_sampler() {
        let x1 = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng::from_seed(2));
        let plain = euler_sample(vel, &x1, 10, 1.5).unwrap();
        let r = scaled_sample(
            vel,
            ident,
            &x1,
            10,
            1.5,
            &base(4),
            &mut rng::from_seed(0),
            0,
        )
        .unwrap();
        assert_eq!(r.output.data(), plain.data());
        assert!(r.trace.is_empty());
        assert_eq!(r.evaluations, 30);
    }

    #[test]
    fn single_variation_is_the_baseline() {
        let x1 = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng::from_seed(2));
        let plain = euler_sample(vel, &x1, 10, 1.0).unwrap();
        let cfg = ScalingConfig {
            variations: 1,
            ..ScalingConfig::default()
        };
        let r = scaled_sample(vel, ident, &x1, 10, 1.0, &cfg, &mut rng::from_seed(0), 0).unwrap();
        assert_eq!(r.output.data(), plain.data());
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.evaluations, scaling_cost(&cfg, 10).unwrap());
    }

    #[test]
    fn evaluations_match_cost_model() {
        let x1 = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng::from_seed(4));
        let cfg = ScalingConfig {
            injection_steps: BTreeSet::from([1, 4, 7]),
            ..ScalingConfig::default()
        };
        let r = scaled_sample(vel, ident, &x1, 12, 1.0, &cfg, &mut rng::from_seed(5), 0).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.evaluations, scaling_cost(&cfg, 12).unwrap());
    }

    #[test]
    fn lookahead_end_skips_injections_inside_the_window() {
        let x1 = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng::from_seed(4));
        let mut cfg = ScalingConfig {
            injection_steps: BTreeSet::from([1, 2]),
            ..ScalingConfig::default()
        };
        let r = scaled_sample(vel, ident, &x1, 6, 1.0, &cfg, &mut rng::from_seed(5), 0).unwrap();
        assert_eq!(r.trace.len(), 2);
        cfg.continuation = Continuation::LookaheadEnd;
        let r = scaled_sample(vel, ident, &x1, 6, 1.0, &cfg, &mut rng::from_seed(5), 0).unwrap();
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn config_errors() {
        let c = ScalingConfig {
            injection_steps: BTreeSet::from([0]),
            ..ScalingConfig::default()
        };
        assert!(c.validate(10).is_err());
        let c = ScalingConfig {
            injection_steps: BTreeSet::from([11]),
            ..ScalingConfig::default()
        };
        assert!(c.validate(10).is_err());
        let c = ScalingConfig {
            weights: [0.0; 6],
            ..ScalingConfig::default()
        };
        assert!(c.validate(10).is_err());
    }
}
