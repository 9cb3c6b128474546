use super::shuffle::{
    channel_to_space_time, downsample_residual, space_time_to_channel, upsample_residual, Factors,
};
use super::{CompressionSpec, VideoLatent};
use crate::error::{Error, Result};
use crate::nn::PlainBlock;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

const STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeConfig {
    pub in_channels: usize,
    /// Width after the stem; doubles at every stage that downsamples.
    pub base_channels: usize,
    /// Attention blocks at latent resolution, in both encoder and decoder.
    pub attn_blocks: usize,
    pub heads: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 8,
            attn_blocks: 1,
            heads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeInit {
    Random,
    /// Square stem/head set to the identity, residual branches zeroed.
    Identity,
}

#[derive(Debug, Clone, Copy)]
struct Stage {
    factors: Factors,
    c_in: usize,
    c_out: usize,
}

fn log2_exact(v: usize, what: &str) -> Result<usize> {
    if v == 0 || !v.is_power_of_two() || v.trailing_zeros() as usize > STAGES {
        return Err(Error::Config(format!(
            "{what} ratio {v} must be a power of two <= {}",
            1 << STAGES
        )));
    }
    Ok(v.trailing_zeros() as usize)
}

/// Per-stage resampling factors. A ratio `2^k` places factor 2 on the last
/// `k` of the five stages, so a temporal ratio of 4 resamples at stages 4
/// and 5.
pub fn stage_factors(spec: &CompressionSpec) -> Result<[Factors; STAGES]> {
    let kt = log2_exact(spec.d_t, "temporal")?;
    let kh = log2_exact(spec.d_h, "height")?;
    let kw = log2_exact(spec.d_w, "width")?;
    let pick = |k: usize, i: usize| if i >= STAGES - k { 2 } else { 1 };
    Ok(std::array::from_fn(|i| {
        (pick(kt, i), pick(kh, i), pick(kw, i))
    }))
}

/// Per-voxel linear map on `[c, t, h, w]` with weight `[c_out, c_in]`.
fn pointwise(store: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{name}.weight"))?;
    let b = store.get(&format!("{name}.bias"))?;
    let s = x.shape();
    let (c, t, h, wd) = (s[0], s[1], s[2], s[3]);
    let y = w.matmul(&x.reshape(&[c, t * h * wd])?)?.add(b)?;
    y.reshape(&[w.shape()[0], t, h, wd])
}

fn init_pointwise(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    init: PwInit,
    rng: &mut Rng,
) -> Result<()> {
    let w = match init {
        PwInit::Random(scale) => Tensor::randn(&[c_out, c_in], scale / (c_in as f64).sqrt(), rng),
        PwInit::Zero => Tensor::zeros(&[c_out, c_in]),
        PwInit::Identity => {
            if c_in != c_out {
                return Err(Error::Config(format!(
                    "identity init of `{name}` needs a square map, got {c_in} -> {c_out}"
                )));
            }
            let mut d = vec![0.0; c_in * c_in];
            (0..c_in).for_each(|i| d[i * c_in + i] = 1.0);
            Tensor::new(&[c_out, c_in], d)?
        }
    };
    store.insert(format!("{name}.weight"), w);
    store.insert(format!("{name}.bias"), Tensor::zeros(&[c_out, 1]));
    Ok(())
}

#[derive(Clone, Copy)]
enum PwInit {
    Random(f64),
    Zero,
    Identity,
}

fn attention_over_voxels(
    store: &ParamStore,
    name: &str,
    x: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let s = x.shape().to_vec();
    let tokens = x.reshape(&[s[0], s[1] * s[2] * s[3]])?.transpose_last()?;
    let y = PlainBlock::forward(store, name, &tokens, heads)?;
    y.transpose_last()?.reshape(&s)
}

/// Five-stage encoder/decoder with shortcut residual resampling.
///
/// Encoder stage: `x <- downsample_residual(x) + fc2(silu(fc1(shuffle(x))))`.
/// Decoder stage mirrors it with `upsample_residual` and an unshuffle of the
/// learned branch. Decoder block 1 is the attention stack at latent
/// resolution; blocks 2..6 upsample.
pub struct VideoAutoencoder {
    pub config: AeConfig,
    pub spec: CompressionSpec,
    pub params: ParamStore,
    stages: [Stage; STAGES],
}

impl VideoAutoencoder {
    pub fn new(
        config: AeConfig,
        spec: CompressionSpec,
        init: AeInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate()?;
        if config.in_channels == 0 || config.base_channels == 0 || config.heads == 0 {
            return Err(Error::Config(format!(
                "invalid autoencoder config {config:?}"
            )));
        }
        let factors = stage_factors(&spec)?;
        let mut c = config.base_channels;
        let stages: [Stage; STAGES] = std::array::from_fn(|i| {
            let f = factors[i];
            let c_in = c;
            if f != (1, 1, 1) {
                c *= 2;
            }
            Stage {
                factors: f,
                c_in,
                c_out: c,
            }
        });
        let width = c;
        if !width.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "latent width {width} not divisible by {} heads",
                config.heads
            )));
        }

        let (edge, residual_out) = match init {
            AeInit::Random => (PwInit::Random(1.0), PwInit::Random(0.1)),
            AeInit::Identity => (PwInit::Identity, PwInit::Zero),
        };
        let mut p = ParamStore::new();
        init_pointwise(
            &mut p,
            "enc.stem",
            config.in_channels,
            config.base_channels,
            edge,
            rng,
        )?;
        for (i, s) in stages.iter().enumerate() {
            let shuffled = s.c_in * s.factors.0 * s.factors.1 * s.factors.2;
            init_pointwise(
                &mut p,
                &format!("enc.{i}.fc1"),
                shuffled,
                s.c_out,
                PwInit::Random(1.0),
                rng,
            )?;
            init_pointwise(
                &mut p,
                &format!("enc.{i}.fc2"),
                s.c_out,
                s.c_out,
                residual_out,
                rng,
            )?;
        }
        for b in 0..config.attn_blocks {
            PlainBlock::init(&mut p, &format!("enc.attn.{b}"), width, 2 * width, rng);
        }
        init_pointwise(&mut p, "enc.head", width, spec.latent_channels, edge, rng)?;

        init_pointwise(&mut p, "dec.stem", spec.latent_channels, width, edge, rng)?;
        for b in 0..config.attn_blocks {
            PlainBlock::init(&mut p, &format!("dec.attn.{b}"), width, 2 * width, rng);
        }
        for (i, s) in stages.iter().enumerate().rev() {
            let expanded = s.c_in * s.factors.0 * s.factors.1 * s.factors.2;
            init_pointwise(
                &mut p,
                &format!("dec.{i}.fc1"),
                s.c_out,
                s.c_out,
                PwInit::Random(1.0),
                rng,
            )?;
            init_pointwise(
                &mut p,
                &format!("dec.{i}.fc2"),
                s.c_out,
                expanded,
                residual_out,
                rng,
            )?;
        }
        init_pointwise(
            &mut p,
            "dec.head",
            config.base_channels,
            config.in_channels,
            edge,
            rng,
        )?;

        Ok(Self {
            config,
            spec,
            params: p,
            stages,
        })
    }

    pub fn latent_width(&self) -> usize {
        self.stages[STAGES - 1].c_out
    }

    fn check_input(&self, video: &Tensor) -> Result<()> {
        if self.spec.causal {
            return Err(Error::Config(
                "the space-time shuffle autoencoder is non-causal; got a causal spec".into(),
            ));
        }
        match video.shape() {
            &[c, t, h, w] if c == self.config.in_channels => {
                self.spec.latent_shape(t, h, w)?;
                Ok(())
            }
            other => Err(crate::error::shape_err(
                "autoencode",
                format!(
                    "expected [{}, t, h, w], got {other:?}",
                    self.config.in_channels
                ),
            )),
        }
    }

    pub fn encode(&self, video: &Tensor) -> Result<VideoLatent> {
        self.check_input(video)?;
        let p = &self.params;
        let mut x = pointwise(p, "enc.stem", video)?;
        for (i, s) in self.stages.iter().enumerate() {
            let shortcut = downsample_residual(&x, s.factors, s.c_out)?;
            let h = pointwise(
                p,
                &format!("enc.{i}.fc1"),
                &space_time_to_channel(&x, s.factors)?,
            )?
            .silu()?;
            x = shortcut.add(&pointwise(p, &format!("enc.{i}.fc2"), &h)?)?;
        }
        for b in 0..self.config.attn_blocks {
            x = attention_over_voxels(p, &format!("enc.attn.{b}"), &x, self.config.heads)?;
        }
        VideoLatent::new(pointwise(p, "enc.head", &x)?, self.spec)
    }

    pub fn decode(&self, latent: &VideoLatent) -> Result<Tensor> {
        let p = &self.params;
        let mut x = pointwise(p, "dec.stem", &latent.tensor)?;
        for b in 0..self.config.attn_blocks {
            x = attention_over_voxels(p, &format!("dec.attn.{b}"), &x, self.config.heads)?;
        }
        for (i, s) in self.stages.iter().enumerate().rev() {
            let shortcut = upsample_residual(&x, s.factors, s.c_in)?;
            let h = pointwise(p, &format!("dec.{i}.fc1"), &x)?.silu()?;
            let learned =
                channel_to_space_time(&pointwise(p, &format!("dec.{i}.fc2"), &h)?, s.factors)?;
            x = shortcut.add(&learned)?;
        }
        pointwise(p, "dec.head", &x)
    }

    /// Encode then decode; the reconstruction has the input's shape.
    pub fn autoencode(&self, video: &Tensor) -> Result<(VideoLatent, Tensor)> {
        let latent = self.encode(video)?;
        let recon = self.decode(&latent)?;
        Ok((latent, recon))
    }
}
