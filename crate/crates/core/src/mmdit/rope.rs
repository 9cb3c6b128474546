//! Axial rotary embedding over `(t, h, w)` token coordinates.
//!
//! Each head vector is laid out as `[t part | h part | w part]`; inside a
//! part, consecutive pairs `(2i, 2i + 1)` rotate by `pos * theta^(-2i / d)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type RopeSplit = (usize, usize, usize);

pub const ROPE_THETA: f64 = 10_000.0;

/// Splits `head_dim` in the ratio 2:3:3 over `(t, h, w)`, every part even;
/// any remainder goes to the spatial axes.
pub fn default_rope_split(head_dim: usize) -> RopeSplit {
    let even = |v: usize| v & !1;
    let t = even(head_dim * 2 / 8);
    let h = even(head_dim * 3 / 8);
    let w = even(head_dim.saturating_sub(t + h));
    let rest = head_dim.saturating_sub(t + h + w);
    (t, h + even(rest), w)
}

fn angles(positions: &[[f64; 3]], split: RopeSplit, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let hd = split.0 + split.1 + split.2;
    let mut cos = Vec::with_capacity(positions.len() * hd);
    let mut sin = Vec::with_capacity(positions.len() * hd);
    for pos in positions {
        for (axis, d) in [split.0, split.1, split.2].into_iter().enumerate() {
            for i in 0..d / 2 {
                let freq = theta.powf(-((2 * i) as f64) / d as f64);
                let a = pos[axis] * freq;
                let (s, c) = a.sin_cos();
                cos.extend([c, c]);
                sin.extend([-s, s]);
            }
        }
    }
    (cos, sin)
}

/// Rotates `x: [heads, n, head_dim]` by the positions of its `n` tokens.
pub fn rope3d(x: &Tensor, positions: &[[f64; 3]], split: RopeSplit, theta: f64) -> Result<Tensor> {
    let &[heads, n, hd] = x.shape() else {
        return Err(crate::error::shape_err(
            "rope3d",
            format!("expected [heads, n, hd], got {:?}", x.shape()),
        ));
    };
    if split.0 + split.1 + split.2 != hd || !split.0.is_multiple_of(2) || !split.1.is_multiple_of(2) || !split.2.is_multiple_of(2)
    {
        return Err(Error::Config(format!(
            "rope split {split:?} does not tile head dim {hd} in even parts"
        )));
    }
    if positions.len() != n {
        return Err(crate::error::shape_err(
            "rope3d",
            format!("{} positions for {n} tokens", positions.len()),
        ));
    }
    let (cos, sin) = angles(positions, split, theta);
    let cos = Tensor::new(&[n, hd], cos)?;
    let sin = Tensor::new(&[n, hd], sin)?;
    let pairs = x.reshape(&[heads, n, hd / 2, 2])?.split(3, &[1, 1])?;
    let swapped =
        Tensor::concat(&[pairs[1].clone(), pairs[0].clone()], 3)?.reshape(&[heads, n, hd])?;
    x.mul(&cos)?.add(&swapped.mul(&sin)?)
}
