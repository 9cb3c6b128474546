use super::patch::{grid_positions, patchify, unpatchify};
use super::rope::{rope3d, ROPE_THETA};
use super::text::TextEmbedding;
use super::ModelConfig;
use crate::error::Result;
use crate::nn::{init_linear, linear, merge_heads, scaled_dot_attention, split_heads, xavier};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmditInit {
    /// Random weights with a zero output projection, so a fresh model
    /// predicts zero velocity.
    Standard,
    /// Every layer random, output projection included.
    Random,
}

/// Sinusoidal features of `t * 1000`, `[1, dim]` as `[cos | sin]`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Tensor> {
    let half = dim / 2;
    let mut out = vec![0.0; 2 * half];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t * 1000.0 * freq).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    Tensor::new(&[1, 2 * half], out)
}

pub struct Mmdit {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    x.rms_norm()?.mul(&scale.add_scalar(1.0)?)?.add(shift)
}

impl Mmdit {
    pub fn new(config: ModelConfig, init: MmditInit, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let f = config.ffn_dim;
        let mut p = ParamStore::new();
        let s = &mut p;
        init_linear(
            s,
            "img_in",
            config.in_channels * config.patch_volume(),
            d,
            xavier(config.in_channels * config.patch_volume()),
            rng,
        );
        init_linear(
            s,
            "txt_in",
            config.text_dim,
            d,
            xavier(config.text_dim),
            rng,
        );
        init_linear(
            s,
            "time_in.fc1",
            config.time_freq_dim,
            d,
            xavier(config.time_freq_dim),
            rng,
        );
        init_linear(s, "time_in.fc2", d, d, xavier(d), rng);
        init_linear(
            s,
            "vector_in",
            config.pooled_dim,
            d,
            xavier(config.pooled_dim),
            rng,
        );
        // Modulation starts small so the blocks begin close to plain pre-norm.
        let small = Some(0.1 / (d as f64).sqrt());
        for i in 0..config.double_layers {
            for stream in ["img", "txt"] {
                let n = format!("double.{i}.{stream}");
                init_linear(s, &format!("{n}.mod"), d, 6 * d, small, rng);
                init_linear(s, &format!("{n}.qkv"), d, 3 * d, xavier(d), rng);
                init_linear(s, &format!("{n}.proj"), d, d, xavier(d), rng);
                init_linear(s, &format!("{n}.fc1"), d, f, xavier(d), rng);
                init_linear(s, &format!("{n}.fc2"), f, d, xavier(f), rng);
            }
        }
        for i in 0..config.single_layers {
            let n = format!("single.{i}");
            init_linear(s, &format!("{n}.mod"), d, 3 * d, small, rng);
            init_linear(s, &format!("{n}.linear1"), d, 3 * d + f, xavier(d), rng);
            init_linear(s, &format!("{n}.linear2"), d + f, d, xavier(d + f), rng);
        }
        init_linear(s, "final.mod", d, 2 * d, small, rng);
        let out_std = match init {
            MmditInit::Standard => None,
            MmditInit::Random => xavier(d),
        };
        init_linear(
            s,
            "final.proj",
            d,
            config.out_channels * config.patch_volume(),
            out_std,
            rng,
        );
        Ok(Self { config, params: p })
    }

    /// Same architecture over a different parameter set.
    pub fn with_params(&self, params: ParamStore) -> Self {
        Self {
            config: self.config,
            params,
        }
    }

    fn mods(&self, name: &str, vec: &Tensor, k: usize) -> Result<Vec<Tensor>> {
        let d = self.config.dim;
        linear(&self.params, &format!("{name}.mod"), &vec.silu()?)?.split(1, &vec![d; k])
    }

    fn attend(&self, q: &Tensor, k: &Tensor, v: &Tensor, positions: &[[f64; 3]]) -> Result<Tensor> {
        let h = self.config.heads;
        let split = self.config.rope_split;
        let q = rope3d(&split_heads(q, h)?, positions, split, ROPE_THETA)?;
        let k = rope3d(&split_heads(k, h)?, positions, split, ROPE_THETA)?;
        merge_heads(&scaled_dot_attention(&q, &k, &split_heads(v, h)?)?)
    }

    fn double_block(
        &self,
        i: usize,
        img: &Tensor,
        txt: &Tensor,
        vec: &Tensor,
        positions: &[[f64; 3]],
    ) -> Result<(Tensor, Tensor)> {
        let d = self.config.dim;
        let (ni, nt) = (img.shape()[0], txt.shape()[0]);
        let mi = self.mods(&format!("double.{i}.img"), vec, 6)?;
        let mt = self.mods(&format!("double.{i}.txt"), vec, 6)?;
        let qkv_i = linear(
            &self.params,
            &format!("double.{i}.img.qkv"),
            &modulate(img, &mi[0], &mi[1])?,
        )?
        .split(1, &[d, d, d])?;
        let qkv_t = linear(
            &self.params,
            &format!("double.{i}.txt.qkv"),
            &modulate(txt, &mt[0], &mt[1])?,
        )?
        .split(1, &[d, d, d])?;
        let joint = |j: usize| Tensor::concat(&[qkv_t[j].clone(), qkv_i[j].clone()], 0);
        let attn = self
            .attend(&joint(0)?, &joint(1)?, &joint(2)?, positions)?
            .split(0, &[nt, ni])?;

        let stream = |x: &Tensor, a: &Tensor, m: &[Tensor], n: String| -> Result<Tensor> {
            let x = x.add(&linear(&self.params, &format!("{n}.proj"), a)?.mul(&m[2])?)?;
            let h = linear(
                &self.params,
                &format!("{n}.fc1"),
                &modulate(&x, &m[3], &m[4])?,
            )?
            .gelu()?;
            x.add(&linear(&self.params, &format!("{n}.fc2"), &h)?.mul(&m[5])?)
        };
        let txt = stream(txt, &attn[0], &mt, format!("double.{i}.txt"))?;
        let img = stream(img, &attn[1], &mi, format!("double.{i}.img"))?;
        Ok((img, txt))
    }

    fn single_block(
        &self,
        i: usize,
        x: &Tensor,
        vec: &Tensor,
        positions: &[[f64; 3]],
    ) -> Result<Tensor> {
        let d = self.config.dim;
        let f = self.config.ffn_dim;
        let n = format!("single.{i}");
        let m = self.mods(&n, vec, 3)?;
        let h = linear(
            &self.params,
            &format!("{n}.linear1"),
            &modulate(x, &m[0], &m[1])?,
        )?
        .split(1, &[d, d, d, f])?;
        let attn = self.attend(&h[0], &h[1], &h[2], positions)?;
        let cat = Tensor::concat(&[attn, h[3].gelu()?], 1)?;
        x.add(&linear(&self.params, &format!("{n}.linear2"), &cat)?.mul(&m[2])?)
    }

    /// Velocity for patch tokens `x: [n, in_channels * patch_volume]` at
    /// `positions`; returns `[n, out_channels * patch_volume]`.
    pub fn forward_tokens(
        &self,
        x: &Tensor,
        positions: &[[f64; 3]],
        text: &TextEmbedding,
        t: f64,
    ) -> Result<Tensor> {
        let c = &self.config;
        let p_in = c.in_channels * c.patch_volume();
        let n = x.shape()[0];
        x.ensure_shape("mmdit input", &[n, p_in])?;
        let nt = text.tokens.shape()[0];
        text.tokens.ensure_shape("mmdit text", &[nt, c.text_dim])?;

        let mut img = linear(&self.params, "img_in", x)?;
        let mut txt = linear(&self.params, "txt_in", &text.tokens)?;
        let temb = timestep_embedding(t, c.time_freq_dim)?;
        let temb = linear(
            &self.params,
            "time_in.fc2",
            &linear(&self.params, "time_in.fc1", &temb)?.silu()?,
        )?;
        let vec = temb.add(&linear(
            &self.params,
            "vector_in",
            &text.pooled.reshape(&[1, c.pooled_dim])?,
        )?)?;

        let mut joint_pos = vec![[0.0; 3]; nt];
        joint_pos.extend_from_slice(positions);
        for i in 0..c.double_layers {
            (img, txt) = self.double_block(i, &img, &txt, &vec, &joint_pos)?;
        }
        let mut h = Tensor::concat(&[txt, img], 0)?;
        for i in 0..c.single_layers {
            h = self.single_block(i, &h, &vec, &joint_pos)?;
        }
        let img = h.narrow(0, nt, n)?;
        let m = self.mods("final", &vec, 2)?;
        linear(&self.params, "final.proj", &modulate(&img, &m[0], &m[1])?)
    }

    /// Velocity latent `[out_channels, t, h, w]` for an input latent
    /// `[in_channels, t, h, w]`.
    pub fn forward(&self, latent: &Tensor, text: &TextEmbedding, t: f64) -> Result<Tensor> {
        let (tokens, grid) = patchify(latent, self.config.patch)?;
        let positions = grid_positions(grid.t, grid.h, grid.w);
        let out = self.forward_tokens(&tokens, &positions, text, t)?;
        unpatchify(
            &out,
            &super::PatchGrid {
                channels: self.config.out_channels,
                ..grid
            },
        )
    }
}
