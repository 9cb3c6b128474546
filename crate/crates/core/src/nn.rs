//! Small building blocks shared by the autoencoder and the transformer.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

/// Registers `{name}.weight: [fan_in, fan_out]` and `{name}.bias: [fan_out]`.
/// `std = None` zero-initializes both.
pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    std: Option<f64>,
    rng: &mut Rng,
) {
    let w = match std {
        Some(s) => Tensor::randn(&[fan_in, fan_out], s, rng),
        None => Tensor::zeros(&[fan_in, fan_out]),
    };
    store.insert(format!("{name}.weight"), w);
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

/// Fan-in scaled normal init.
pub fn xavier(fan_in: usize) -> Option<f64> {
    Some(1.0 / (fan_in as f64).sqrt())
}

/// Token-major linear layer: `[.., fan_in] -> [.., fan_out]`.
pub fn linear(store: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{name}.weight"))?;
    let b = store.get(&format!("{name}.bias"))?;
    x.linear(w, Some(b))
}

/// `[n, heads * hd] -> [heads, n, hd]`.
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    x.reshape(&[n, heads, d / heads])?.permute(&[1, 0, 2])
}

/// `[heads, n, hd] -> [n, heads * hd]`.
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (h, n, hd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.permute(&[1, 0, 2])?.reshape(&[n, h * hd])
}

/// Exact softmax attention over `[heads, n, hd]` operands.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let hd = *q.shape().last().expect("rank 3");
    let scores = q
        .matmul(&k.transpose_last()?)?
        .scale(1.0 / (hd as f64).sqrt())?;
    scores.softmax()?.matmul(v)
}

/// Pre-norm self-attention + MLP block over `[n, dim]` tokens, residual on
/// both paths. Output projections of both paths are zero-initialized, so a
/// fresh block is the identity map.
pub struct PlainBlock;

impl PlainBlock {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut Rng) {
        init_linear(
            store,
            &format!("{name}.qkv"),
            dim,
            3 * dim,
            xavier(dim),
            rng,
        );
        init_linear(store, &format!("{name}.proj"), dim, dim, None, rng);
        init_linear(store, &format!("{name}.fc1"), dim, hidden, xavier(dim), rng);
        init_linear(store, &format!("{name}.fc2"), hidden, dim, None, rng);
    }

    pub fn forward(store: &ParamStore, name: &str, x: &Tensor, heads: usize) -> Result<Tensor> {
        let dim = x.shape()[1];
        let qkv = linear(store, &format!("{name}.qkv"), &x.rms_norm()?)?;
        let parts = qkv.split(1, &[dim, dim, dim])?;
        let (q, k, v) = (
            split_heads(&parts[0], heads)?,
            split_heads(&parts[1], heads)?,
            split_heads(&parts[2], heads)?,
        );
        let attn = merge_heads(&scaled_dot_attention(&q, &k, &v)?)?;
        let x = x.add(&linear(store, &format!("{name}.proj"), &attn)?)?;
        let h = linear(store, &format!("{name}.fc1"), &x.rms_norm()?)?.gelu()?;
        x.add(&linear(store, &format!("{name}.fc2"), &h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn fresh_plain_block_is_identity() {
        let mut r = rng::from_seed(3);
        let mut store = ParamStore::new();
        PlainBlock::init(&mut store, "b", 8, 16, &mut r);
        let x = Tensor::randn(&[5, 8], 1.0, &mut r);
        let y = PlainBlock::forward(&store, "b", &x, 2).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn heads_round_trip() {
        let mut r = rng::from_seed(4);
        let x = Tensor::randn(&[6, 8], 1.0, &mut r);
        let y = merge_heads(&split_heads(&x, 4).unwrap()).unwrap();
        assert_eq!(x.data(), y.data());
    }
}
