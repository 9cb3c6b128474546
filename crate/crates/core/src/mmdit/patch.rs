use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token grid of a patchified latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub channels: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub patch: (usize, usize, usize),
}

impl PatchGrid {
    pub fn tokens(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// `(t, h, w)` position of every token, row-major over the grid.
pub fn grid_positions(t: usize, h: usize, w: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(t * h * w);
    for a in 0..t {
        for b in 0..h {
            for c in 0..w {
                out.push([a as f64, b as f64, c as f64]);
            }
        }
    }
    out
}

/// `[c, t, h, w] -> [tokens, c * pt * ph * pw]`; each row is one patch
/// flattened as `(c, dt, dh, dw)`.
pub fn patchify(latent: &Tensor, patch: (usize, usize, usize)) -> Result<(Tensor, PatchGrid)> {
    let &[c, t, h, w] = latent.shape() else {
        return Err(crate::error::shape_err(
            "patchify",
            format!("expected [c, t, h, w], got {:?}", latent.shape()),
        ));
    };
    let (pt, ph, pw) = patch;
    if pt == 0 || ph == 0 || pw == 0 || t % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Divisibility {
            what: "latent extent",
            detail: format!("({t}, {h}, {w}) by patch {patch:?}"),
        });
    }
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    let tokens = latent
        .reshape(&[c, gt, pt, gh, ph, gw, pw])?
        .permute(&[1, 3, 5, 0, 2, 4, 6])?
        .reshape(&[gt * gh * gw, c * pt * ph * pw])?;
    Ok((
        tokens,
        PatchGrid {
            channels: c,
            t: gt,
            h: gh,
            w: gw,
            patch,
        },
    ))
}

/// Inverse of [`patchify`] for `grid.channels` channels.
pub fn unpatchify(tokens: &Tensor, grid: &PatchGrid) -> Result<Tensor> {
    let (pt, ph, pw) = grid.patch;
    let c = grid.channels;
    tokens.ensure_shape("unpatchify", &[grid.tokens(), c * pt * ph * pw])?;
    tokens
        .reshape(&[grid.t, grid.h, grid.w, c, pt, ph, pw])?
        .permute(&[3, 0, 4, 1, 5, 2, 6])?
        .reshape(&[c, grid.t * pt, grid.h * ph, grid.w * pw])
}
