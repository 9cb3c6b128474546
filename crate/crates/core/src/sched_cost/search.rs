use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest batch size considered by the search.
pub const MAX_BATCH: usize = 512;

/// Memory and time of one training step. Every function must be
/// non-decreasing in both `tokens` and `batch`.
pub trait CostModel {
    fn memory(&self, tokens: usize, batch: usize) -> f64;
    fn memory_cap(&self) -> f64;
    fn step_time(&self, tokens: usize, batch: usize) -> f64;
    /// Autoencoder encoding plus forward pass.
    fn encode_forward_time(&self, tokens: usize, batch: usize) -> f64;
    fn backward_time(&self, tokens: usize, batch: usize) -> f64;
}

/// Per-sample costs linear plus quadratic in tokens, times the batch size,
/// plus a fixed part. Quadratic terms stand in for attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCostModel {
    pub memory_fixed: f64,
    pub memory_per_token: f64,
    pub memory_cap: f64,
    pub encode_per_token: f64,
    pub forward_per_token: f64,
    pub forward_per_token_sq: f64,
    pub backward_per_token: f64,
    pub backward_per_token_sq: f64,
    pub step_overhead: f64,
}

impl Default for LinearCostModel {
    /// Loosely H200-shaped: 141 GB per device, about 1 MB of activations per
    /// token, attention dominating the time past a few thousand tokens.
    fn default() -> Self {
        Self {
            memory_fixed: 60e9,
            memory_per_token: 0.9e6,
            memory_cap: 141e9,
            encode_per_token: 2e-6,
            forward_per_token: 2e-5,
            forward_per_token_sq: 2e-9,
            backward_per_token: 4e-5,
            backward_per_token_sq: 4e-9,
            step_overhead: 0.05,
        }
    }
}

impl CostModel for LinearCostModel {
    fn memory(&self, tokens: usize, batch: usize) -> f64 {
        self.memory_fixed + self.memory_per_token * (tokens * batch) as f64
    }

    fn memory_cap(&self) -> f64 {
        self.memory_cap
    }

    fn step_time(&self, tokens: usize, batch: usize) -> f64 {
        self.encode_forward_time(tokens, batch)
            + self.backward_time(tokens, batch)
            + self.step_overhead
    }

    fn encode_forward_time(&self, tokens: usize, batch: usize) -> f64 {
        let n = tokens as f64;
        batch as f64
            * (self.encode_per_token * n
                + self.forward_per_token * n
                + self.forward_per_token_sq * n * n)
    }

    fn backward_time(&self, tokens: usize, batch: usize) -> f64 {
        let n = tokens as f64;
        batch as f64 * (self.backward_per_token * n + self.backward_per_token_sq * n * n)
    }
}

fn reference(configs: &[usize]) -> Result<usize> {
    if configs.is_empty() {
        return Err(Error::Config("no configurations to search".into()));
    }
    // First maximum on ties.
    Ok(configs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > configs[best] { i } else { best }))
}

fn fits(model: &dyn CostModel, tokens: usize, b: usize) -> bool {
    model.memory(tokens, b) <= model.memory_cap()
}

struct Budget {
    step: f64,
    encode_forward: f64,
    backward: f64,
}

fn feasible(model: &dyn CostModel, tokens: usize, b: usize, budget: &Budget) -> bool {
    fits(model, tokens, b)
        && model.step_time(tokens, b) <= budget.step
        && model.encode_forward_time(tokens, b) <= budget.encode_forward
        && model.backward_time(tokens, b) <= budget.backward
}

/// Largest `b` in `1..=max` with `ok(b)`, for a predicate that holds on a
/// prefix; 0 when none.
fn largest_prefix(max: usize, ok: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, max);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

fn budget(model: &dyn CostModel, tokens: usize, b: usize) -> Budget {
    Budget {
        step: model.step_time(tokens, b),
        encode_forward: model.encode_forward_time(tokens, b),
        backward: model.backward_time(tokens, b),
    }
}

/// Batch size per configuration (given as tokens per sample).
///
/// The configuration with the most tokens gets the largest batch that fits
/// in memory. Every other configuration gets the largest batch that fits in
/// memory and whose step, encode+forward and backward times each stay within
/// the reference configuration's.
pub fn search_batch_sizes(
    configs: &[usize],
    model: &dyn CostModel,
    max_batch: usize,
) -> Result<Vec<usize>> {
    let r = reference(configs)?;
    let t_ref = configs[r];
    let bs_ref = largest_prefix(max_batch, |b| fits(model, t_ref, b));
    if bs_ref == 0 {
        return Err(Error::Config(format!(
            "reference configuration with {t_ref} tokens does not fit at batch size 1"
        )));
    }
    let budget = budget(model, t_ref, bs_ref);
    Ok(configs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i == r {
                bs_ref
            } else {
                largest_prefix(max_batch, |b| feasible(model, c, b, &budget))
            }
        })
        .collect())
}

/// Same contract as [`search_batch_sizes`], checking every batch size.
pub fn exhaustive_batch_sizes(
    configs: &[usize],
    model: &dyn CostModel,
    max_batch: usize,
) -> Result<Vec<usize>> {
    let r = reference(configs)?;
    let t_ref = configs[r];
    let bs_ref = (1..=max_batch)
        .filter(|&b| fits(model, t_ref, b))
        .max()
        .unwrap_or(0);
    if bs_ref == 0 {
        return Err(Error::Config(format!(
            "reference configuration with {t_ref} tokens does not fit at batch size 1"
        )));
    }
    let budget = budget(model, t_ref, bs_ref);
    Ok(configs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i == r {
                bs_ref
            } else {
                (1..=max_batch)
                    .filter(|&b| feasible(model, c, b, &budget))
                    .max()
                    .unwrap_or(0)
            }
        })
        .collect())
}
