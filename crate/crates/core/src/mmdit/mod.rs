//! Miniature dual-stream / single-stream diffusion transformer.

mod model;
mod patch;
mod rope;
mod text;

pub use model::{timestep_embedding, Mmdit, MmditInit};
pub use patch::{grid_positions, patchify, unpatchify, PatchGrid};
pub use rope::{default_rope_split, rope3d, RopeSplit};
pub use text::{toy_text_embed, TextEmbedding, NULL_TOKEN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub double_layers: usize,
    pub single_layers: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// `(p_t, p_h, p_w)`.
    pub patch: (usize, usize, usize),
    /// Per-head rotary dimensions for the `(t, h, w)` axes.
    pub rope_split: RopeSplit,
    /// Latent channels fed in (after conditioning concatenation).
    pub in_channels: usize,
    /// Latent channels of the predicted velocity.
    pub out_channels: usize,
    pub text_dim: usize,
    pub pooled_dim: usize,
    /// Width of the sinusoidal timestep features.
    pub time_freq_dim: usize,
}

impl ModelConfig {
    /// Tiny configuration for tests and toy training. Text width equals `dim`.
    pub fn tiny(
        double_layers: usize,
        single_layers: usize,
        dim: usize,
        ffn_dim: usize,
        heads: usize,
        patch: (usize, usize, usize),
        channels: usize,
    ) -> Self {
        Self {
            double_layers,
            single_layers,
            dim,
            ffn_dim,
            heads,
            patch,
            rope_split: default_rope_split(dim / heads),
            in_channels: channels,
            out_channels: channels,
            text_dim: dim,
            pooled_dim: dim,
            time_freq_dim: 32,
        }
    }

    /// The 11B layout: 19 double and 38 single blocks, width 3072, FFN 12288,
    /// 24 heads, spatial patch 2, 16-channel latents conditioned to 33 input
    /// channels, 4096-wide text tokens and a 768-wide pooled vector.
    pub fn paper_scale() -> Self {
        Self {
            double_layers: 19,
            single_layers: 38,
            dim: 3072,
            ffn_dim: 12288,
            heads: 24,
            patch: (1, 2, 2),
            rope_split: default_rope_split(128),
            in_channels: 33,
            out_channels: 16,
            text_dim: 4096,
            pooled_dim: 768,
            time_freq_dim: 256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_volume(&self) -> usize {
        self.patch.0 * self.patch.1 * self.patch.2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return bad(format!("dim must be positive and even, got {}", self.dim));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        let (a, b, c) = self.rope_split;
        if a + b + c != self.head_dim() || a % 2 != 0 || b % 2 != 0 || c % 2 != 0 {
            return bad(format!(
                "rope split {:?} must be even parts summing to head dim {}",
                self.rope_split,
                self.head_dim()
            ));
        }
        if self.patch.0 == 0 || self.patch.1 == 0 || self.patch.2 == 0 {
            return bad("patch extents must be >= 1".into());
        }
        if [
            self.ffn_dim,
            self.in_channels,
            self.out_channels,
            self.text_dim,
            self.pooled_dim,
            self.time_freq_dim,
        ]
        .contains(&0)
            || !self.time_freq_dim.is_multiple_of(2)
        {
            return bad(format!("invalid widths in {self:?}"));
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let f = self.ffn_dim;
        let lin = |i: usize, o: usize| i * o + o;
        let p_in = self.in_channels * self.patch_volume();
        let p_out = self.out_channels * self.patch_volume();
        let embed = lin(p_in, d)
            + lin(self.text_dim, d)
            + lin(self.time_freq_dim, d)
            + lin(d, d)
            + lin(self.pooled_dim, d);
        let stream = lin(d, 6 * d) + lin(d, 3 * d) + lin(d, d) + lin(d, f) + lin(f, d);
        let double = 2 * stream;
        let single = lin(d, 3 * d) + lin(d, 3 * d + f) + lin(d + f, d);
        let head = lin(d, 2 * d) + lin(d, p_out);
        embed + self.double_layers * double + self.single_layers * single + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_is_valid_and_about_eleven_billion() {
        let c = ModelConfig::paper_scale();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 128);
        let n = c.param_count();
        assert!((10_000_000_000..12_000_000_000).contains(&n), "{n}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::tiny(1, 1, 32, 64, 4, (1, 1, 1), 4);
        c.validate().unwrap();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(1, 1, 32, 64, 4, (1, 1, 1), 4);
        c.rope_split = (2, 2, 2);
        assert!(c.validate().is_err());
    }
}
