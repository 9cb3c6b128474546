//! Deterministic stand-in for the text encoders.
//!
//! Every whitespace token hashes (FNV-1a) to a seed for a fixed unit vector,
//! so equal tokens always embed identically regardless of context.

use crate::error::Result;
use crate::rng::{fnv1a64, from_seed};
use crate::tensor::Tensor;

/// Token used for empty captions and the unconditional branch.
pub const NULL_TOKEN: &str = "<null>";

#[derive(Debug, Clone)]
pub struct TextEmbedding {
    /// `[tokens, dim]`.
    pub tokens: Tensor,
    /// `[dim]`, mean of the token vectors.
    pub pooled: Tensor,
}

fn token_vector(token: &str, dim: usize) -> Result<Vec<f64>> {
    let mut r = from_seed(fnv1a64(token.as_bytes()));
    let v = Tensor::randn(&[dim], 1.0, &mut r);
    let norm = v.l2_norm().max(f64::MIN_POSITIVE);
    Ok(v.data().iter().map(|x| x / norm).collect())
}

pub fn toy_text_embed(caption: &str, dim: usize) -> Result<TextEmbedding> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    let words = if words.is_empty() {
        vec![NULL_TOKEN]
    } else {
        words
    };
    let mut data = Vec::with_capacity(words.len() * dim);
    for w in &words {
        data.extend(token_vector(w, dim)?);
    }
    let tokens = Tensor::new(&[words.len(), dim], data)?;
    let pooled = tokens.mean_axis(0)?.reshape(&[dim])?;
    Ok(TextEmbedding { tokens, pooled })
}

impl TextEmbedding {
    /// Embedding of the empty caption.
    pub fn null(dim: usize) -> Result<Self> {
        toy_text_embed("", dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn deterministic() {
        let a = toy_text_embed("a red ball bounces", 16).unwrap();
        let b = toy_text_embed("a red ball bounces", 16).unwrap();
        assert_eq!(a.tokens.data(), b.tokens.data());
        assert_eq!(a.pooled.data(), b.pooled.data());
    }

    #[test]
    fn one_token_changes_one_row() {
        let a = rows(&toy_text_embed("a red ball bounces", 16).unwrap().tokens);
        let b = rows(&toy_text_embed("a blue ball bounces", 16).unwrap().tokens);
        let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert_eq!(differing, 1);
    }

    #[test]
    fn pooled_of_repeated_token() {
        let aa = toy_text_embed("a a", 8).unwrap();
        let a = toy_text_embed("a", 8).unwrap();
        for (x, y) in aa.pooled.data().iter().zip(a.pooled.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn empty_caption_is_null_token() {
        let e = toy_text_embed("   ", 8).unwrap();
        assert_eq!(e.tokens.shape(), &[1, 8]);
        assert_eq!(
            e.tokens.data(),
            toy_text_embed(NULL_TOKEN, 8).unwrap().tokens.data()
        );
    }

    #[test]
    fn unit_vectors() {
        let e = toy_text_embed("x y z", 32).unwrap();
        for r in rows(&e.tokens) {
            let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
