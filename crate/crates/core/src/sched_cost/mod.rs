//! Multi-bucket planning, batch-size search and the training cost model.
//!
//! The tables' "Max # of Frames" column holds the maximum token count of a
//! sample in the bucket, not a frame count; [`bucket_token_cap`] derives
//! every cell from the frame range and the compression spec.

mod cost;
mod search;

pub use cost::{format_kusd, paper_stages, stage_cost, total_cost, StageSpec};
pub use search::{
    exhaustive_batch_sizes, search_batch_sizes, CostModel, LinearCostModel, MAX_BATCH,
};

use serde::{Deserialize, Serialize};

use crate::dcae::{token_count, CompressionSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Resolution label, e.g. `256px` (a square of that side).
    pub resolution: String,
    pub frames_lo: usize,
    pub frames_hi: usize,
    /// Maximum tokens per sample.
    pub token_cap: usize,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub cp: usize,
    /// Reported throughput, kept as reference text only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<String>,
}

fn one() -> usize {
    1
}

/// Parses `"768px"` into 768.
pub fn resolution_side(label: &str) -> Result<usize> {
    label
        .strip_suffix("px")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&s| s > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "bad resolution label `{label}`, expected e.g. `256px`"
            ))
        })
}

/// Largest frame count `<= frame_hi` that the autoencoder accepts.
pub fn grid_frames(frame_hi: usize, spec: &CompressionSpec) -> Result<usize> {
    spec.validate()?;
    let t = if spec.causal {
        if frame_hi == 0 {
            0
        } else {
            frame_hi - (frame_hi - 1) % spec.d_t
        }
    } else {
        frame_hi - frame_hi % spec.d_t
    };
    if t == 0 {
        return Err(Error::OutOfRange(format!(
            "no valid frame count <= {frame_hi} for d_t = {}",
            spec.d_t
        )));
    }
    Ok(t)
}

/// Token count of the longest valid clip in a bucket of square `side` px.
pub fn bucket_token_cap(frame_hi: usize, side: usize, spec: &CompressionSpec) -> Result<usize> {
    token_count(grid_frames(frame_hi, spec)?, side, side, spec)
}

fn bucket(res: &str, lo: usize, hi: usize, cap: usize, bs: usize, cp: usize, tp: &str) -> Bucket {
    Bucket {
        resolution: res.to_string(),
        frames_lo: lo,
        frames_hi: hi,
        token_cap: cap,
        batch_size: bs,
        cp,
        throughput: Some(tp.to_string()),
    }
}

/// Buckets of the 256px stages (context parallelism 1).
pub fn paper_buckets_low_res() -> Vec<Bucket> {
    vec![
        bucket("256px", 5, 33, 2304, 12, 1, "12.7 videos/s"),
        bucket("256px", 37, 65, 4352, 6, 1, "6.3 videos/s"),
        bucket("256px", 69, 97, 6400, 4, 1, "4.2 videos/s"),
        bucket("256px", 101, 129, 8448, 3, 1, "3.2 videos/s"),
        bucket("256px", 1, 1, 256, 45, 1, "47.6 images/s"),
        bucket("768px", 1, 1, 2304, 13, 1, "13.8 images/s"),
        bucket("1024px", 1, 1, 4096, 7, 1, "7.4 images/s"),
    ]
}

/// Buckets of the 768px stage (context parallelism 4).
pub fn paper_buckets_high_res() -> Vec<Bucket> {
    vec![
        bucket("768px", 5, 33, 20736, 6, 4, "0.25 videos/s"),
        bucket("768px", 37, 65, 39168, 4, 4, "0.17 videos/s"),
        bucket("768px", 69, 97, 57600, 3, 4, "0.13 videos/s"),
        bucket("768px", 101, 129, 76032, 2, 4, "0.08 videos/s"),
        bucket("768px", 1, 1, 2304, 38, 4, "1.60 images/s"),
    ]
}

/// Checks labels, ranges and that no two buckets of one resolution overlap.
pub fn validate_buckets(buckets: &[Bucket]) -> Result<()> {
    for (i, a) in buckets.iter().enumerate() {
        resolution_side(&a.resolution)?;
        if a.frames_lo == 0 || a.frames_lo > a.frames_hi {
            return Err(Error::Config(format!(
                "bucket {} has frame range {}..={}",
                a.resolution, a.frames_lo, a.frames_hi
            )));
        }
        for b in &buckets[i + 1..] {
            if a.resolution == b.resolution
                && a.frames_lo <= b.frames_hi
                && b.frames_lo <= a.frames_hi
            {
                return Err(Error::Config(format!(
                    "{} buckets {}..={} and {}..={} overlap",
                    a.resolution, a.frames_lo, a.frames_hi, b.frames_lo, b.frames_hi
                )));
            }
        }
    }
    Ok(())
}

/// The bucket for a `frames x height x width` sample, or `None` when no
/// bucket takes it.
///
/// A sample belongs to the resolution whose square area is nearest to
/// `height * width` on a log scale, provided the areas differ by less than a
/// factor of two; otherwise it is rejected.
pub fn assign_bucket(
    frames: usize,
    height: usize,
    width: usize,
    buckets: &[Bucket],
) -> Result<Option<&Bucket>> {
    validate_buckets(buckets)?;
    let area = (height * width) as f64;
    if area == 0.0 {
        return Ok(None);
    }
    let mut best: Option<(&str, f64)> = None;
    for b in buckets {
        let side = resolution_side(&b.resolution)? as f64;
        let dist = (area / (side * side)).ln().abs();
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((&b.resolution, dist));
        }
    }
    let Some((res, dist)) = best else {
        return Ok(None);
    };
    if dist >= 2f64.ln() {
        return Ok(None);
    }
    Ok(buckets
        .iter()
        .find(|b| b.resolution == res && (b.frames_lo..=b.frames_hi).contains(&frames)))
}

/// One line of an emitted bucket plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub resolution: String,
    pub frames_lo: usize,
    pub frames_hi: usize,
    pub token_cap: usize,
    pub derived_token_cap: usize,
    pub batch_size: usize,
    pub cp: usize,
    pub tokens_per_device: usize,
}

/// Recomputes every bucket's token cap under `spec` next to the stored one.
pub fn bucket_plan(buckets: &[Bucket], spec: &CompressionSpec) -> Result<Vec<PlanRow>> {
    validate_buckets(buckets)?;
    buckets
        .iter()
        .map(|b| {
            let derived = bucket_token_cap(b.frames_hi, resolution_side(&b.resolution)?, spec)?;
            Ok(PlanRow {
                resolution: b.resolution.clone(),
                frames_lo: b.frames_lo,
                frames_hi: b.frames_hi,
                token_cap: b.token_cap,
                derived_token_cap: derived,
                batch_size: b.batch_size,
                cp: b.cp,
                tokens_per_device: derived.div_ceil(b.cp.max(1)),
            })
        })
        .collect()
}
