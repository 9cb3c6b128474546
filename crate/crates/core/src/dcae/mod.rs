//! Deep-compression video autoencoder pieces: space-time pixel shuffling,
//! shortcut residual resampling, a compact encoder/decoder, token counting
//! and the reconstruction loss.

mod loss;
mod model;
mod shuffle;

pub use loss::{ae_loss, l1_loss, psnr, ssim, AeLossWeights, LossTerm};
pub use model::{stage_factors, AeConfig, AeInit, VideoAutoencoder};
pub use shuffle::{
    channel_to_space_time, downsample_residual, space_time_to_channel, upsample_residual, Factors,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Autoencoder compression ratios plus the generator's patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub d_t: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub p_t: usize,
    pub p_h: usize,
    pub p_w: usize,
    pub latent_channels: usize,
    pub causal: bool,
}

impl CompressionSpec {
    /// 4x8x8 causal VAE with 16 latent channels, generator patch 1x2x2.
    pub fn hunyuan() -> Self {
        Self {
            d_t: 4,
            d_h: 8,
            d_w: 8,
            p_t: 1,
            p_h: 2,
            p_w: 2,
            latent_channels: 16,
            causal: true,
        }
    }

    /// 4x32x32 non-causal deep-compression AE, 128 channels, patch 1x1x1.
    pub fn video_dc_ae() -> Self {
        Self {
            d_t: 4,
            d_h: 32,
            d_w: 32,
            p_t: 1,
            p_h: 1,
            p_w: 1,
            latent_channels: 128,
            causal: false,
        }
    }

    /// Looks up a named preset (`hunyuan`, `dcae`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "hunyuan" => Ok(Self::hunyuan()),
            "dcae" | "video-dc-ae" | "video_dc_ae" => Ok(Self::video_dc_ae()),
            other => Err(Error::Config(format!(
                "unknown compression preset `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.d_t,
            self.d_h,
            self.d_w,
            self.p_t,
            self.p_h,
            self.p_w,
            self.latent_channels,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!(
                "compression ratios, patches and channels must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Token downsample ratio: product of compression ratios and patch sizes.
    pub fn d_token(&self) -> usize {
        self.d_t * self.d_h * self.d_w * self.p_t * self.p_h * self.p_w
    }

    /// Latent frame count for `frames` input frames.
    pub fn latent_frames(&self, frames: usize) -> Result<usize> {
        self.validate()?;
        if frames == 0 {
            return Err(Error::OutOfRange("frame count must be >= 1".into()));
        }
        if self.causal {
            if !(frames - 1).is_multiple_of(self.d_t) {
                return Err(Error::Divisibility {
                    what: "causal frame count",
                    detail: format!("({frames} - 1) by {}", self.d_t),
                });
            }
            Ok((frames - 1) / self.d_t + 1)
        } else {
            if !frames.is_multiple_of(self.d_t) {
                return Err(Error::Divisibility {
                    what: "frame count",
                    detail: format!("{frames} by {}", self.d_t),
                });
            }
            Ok(frames / self.d_t)
        }
    }

    /// Latent `(t, h, w)` for a `(frames, height, width)` video.
    pub fn latent_shape(
        &self,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<(usize, usize, usize)> {
        let t = self.latent_frames(frames)?;
        if !height.is_multiple_of(self.d_h) || !width.is_multiple_of(self.d_w) {
            return Err(Error::Divisibility {
                what: "spatial extent",
                detail: format!("{height}x{width} by {}x{}", self.d_h, self.d_w),
            });
        }
        Ok((t, height / self.d_h, width / self.d_w))
    }
}

/// Number of generator tokens for a video under `spec`.
pub fn token_count(
    frames: usize,
    height: usize,
    width: usize,
    spec: &CompressionSpec,
) -> Result<usize> {
    let (t, h, w) = spec.latent_shape(frames, height, width)?;
    if t % spec.p_t != 0 || h % spec.p_h != 0 || w % spec.p_w != 0 {
        return Err(Error::Divisibility {
            what: "latent extent",
            detail: format!(
                "({t}, {h}, {w}) by patch ({}, {}, {})",
                spec.p_t, spec.p_h, spec.p_w
            ),
        });
    }
    Ok((t / spec.p_t) * (h / spec.p_h) * (w / spec.p_w))
}

/// A latent tensor `[channels, t, h, w]` with the spec that produced it.
#[derive(Debug, Clone)]
pub struct VideoLatent {
    pub tensor: Tensor,
    pub spec: CompressionSpec,
}

impl VideoLatent {
    pub fn new(tensor: Tensor, spec: CompressionSpec) -> Result<Self> {
        match tensor.shape() {
            &[c, ..] if tensor.ndim() == 4 && c == spec.latent_channels => {
                Ok(Self { tensor, spec })
            }
            other => Err(crate::error::shape_err(
                "latent",
                format!(
                    "expected [{}, t, h, w], got {other:?}",
                    spec.latent_channels
                ),
            )),
        }
    }

    /// `(t, h, w)` extents.
    pub fn grid(&self) -> (usize, usize, usize) {
        let s = self.tensor.shape();
        (s[1], s[2], s[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_token_products() {
        assert_eq!(CompressionSpec::hunyuan().d_token(), 1024);
        assert_eq!(CompressionSpec::video_dc_ae().d_token(), 4096);
    }

    #[test]
    fn token_counts_for_five_second_768px() {
        assert_eq!(
            token_count(129, 768, 768, &CompressionSpec::hunyuan()).unwrap(),
            76_032
        );
        let causal_dcae = CompressionSpec {
            causal: true,
            ..CompressionSpec::video_dc_ae()
        };
        assert_eq!(token_count(129, 768, 768, &causal_dcae).unwrap(), 19_008);
    }

    #[test]
    fn single_image_256px() {
        assert_eq!(
            token_count(1, 256, 256, &CompressionSpec::hunyuan()).unwrap(),
            256
        );
    }

    #[test]
    fn latent_frame_rules() {
        let causal = CompressionSpec::hunyuan();
        assert_eq!(causal.latent_frames(33).unwrap(), 9);
        assert!(causal.latent_frames(32).is_err());
        let nc = CompressionSpec::video_dc_ae();
        assert_eq!(nc.latent_shape(32, 256, 256).unwrap(), (8, 8, 8));
        assert!(nc.latent_frames(33).is_err());
        assert!(token_count(129, 760, 768, &causal).is_err());
    }
}
