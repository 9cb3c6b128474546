use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Weights of the reconstruction objective `w1 * L1 + wp * Lperc + wa * Ladv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeLossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl AeLossWeights {
    /// First training phase: L1 + 0.5 perceptual.
    pub fn phase1() -> Self {
        Self {
            l1: 1.0,
            perceptual: 0.5,
            adversarial: 0.0,
        }
    }

    /// Second phase adds the adversarial term at 0.05.
    pub fn phase2() -> Self {
        Self {
            l1: 1.0,
            perceptual: 0.5,
            adversarial: 0.05,
        }
    }
}

/// An externally supplied loss component (perceptual network, discriminator).
pub trait LossTerm {
    fn loss(&self, recon: &Tensor, target: &Tensor) -> Result<Tensor>;
}

impl<F: Fn(&Tensor, &Tensor) -> Result<Tensor>> LossTerm for F {
    fn loss(&self, recon: &Tensor, target: &Tensor) -> Result<Tensor> {
        self(recon, target)
    }
}

/// Mean absolute error. `|d| = d * sign(d)` with the sign held constant,
/// which gives the usual subgradient.
pub fn l1_loss(recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    if recon.shape() != target.shape() {
        return Err(shape_err(
            "ae_loss",
            format!("{:?} vs {:?}", recon.shape(), target.shape()),
        ));
    }
    let d = recon.sub(target)?;
    let sign: Vec<f64> = d
        .data()
        .iter()
        .map(|v| {
            if *v > 0.0 {
                1.0
            } else if *v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    d.mul(&Tensor::new(d.shape(), sign)?)?.mean()
}

/// Weighted reconstruction loss; missing plugins contribute zero.
pub fn ae_loss(
    recon: &Tensor,
    target: &Tensor,
    weights: AeLossWeights,
    perceptual: Option<&dyn LossTerm>,
    adversarial: Option<&dyn LossTerm>,
) -> Result<Tensor> {
    let mut total = l1_loss(recon, target)?.scale(weights.l1)?;
    for (w, term) in [
        (weights.perceptual, perceptual),
        (weights.adversarial, adversarial),
    ] {
        if let Some(term) = term {
            if w != 0.0 {
                total = total.add(&term.loss(recon, target)?.scale(w)?)?;
            }
        }
    }
    Ok(total)
}

/// Peak signal-to-noise ratio in dB; infinite for identical inputs.
pub fn psnr(recon: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    if recon.shape() != target.shape() {
        return Err(shape_err(
            "psnr",
            format!("{:?} vs {:?}", recon.shape(), target.shape()),
        ));
    }
    let mse = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / recon.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Structural similarity from global statistics of each `[h, w]` plane,
/// averaged over all planes of a `[c, t, h, w]` video.
pub fn ssim(recon: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    if recon.shape() != target.shape() || recon.ndim() != 4 {
        return Err(shape_err(
            "ssim",
            format!("{:?} vs {:?}", recon.shape(), target.shape()),
        ));
    }
    let plane = recon.shape()[2] * recon.shape()[3];
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    let mut planes = 0;
    for (a, b) in recon.data().chunks(plane).zip(target.data().chunks(plane)) {
        let n = plane as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let cov = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / n;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        planes += 1;
    }
    Ok(total / planes as f64)
}
