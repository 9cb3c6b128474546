//! Space-time pixel shuffle and the shortcut paths built on it.
//!
//! Channel layout after shuffling a `[c, t, h, w]` tensor by `(ft, fh, fw)`:
//! output channel `((ci * ft + dt) * fh + dh) * fw + dw` holds input voxel
//! `(ci, t' * ft + dt, h' * fh + dh, w' * fw + dw)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Factors = (usize, usize, usize);

fn dims4(x: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match x.shape() {
        &[c, t, h, w] => Ok([c, t, h, w]),
        other => Err(crate::error::shape_err(
            op,
            format!("expected [c, t, h, w], got {other:?}"),
        )),
    }
}

fn check_factors(f: Factors) -> Result<()> {
    if f.0 == 0 || f.1 == 0 || f.2 == 0 {
        return Err(Error::OutOfRange(format!(
            "shuffle factors must be >= 1, got {f:?}"
        )));
    }
    Ok(())
}

/// `[c, t, h, w] -> [c * ft * fh * fw, t / ft, h / fh, w / fw]`.
pub fn space_time_to_channel(x: &Tensor, f: Factors) -> Result<Tensor> {
    check_factors(f)?;
    let [c, t, h, w] = dims4(x, "space_time_to_channel")?;
    let (ft, fh, fw) = f;
    if t % ft != 0 || h % fh != 0 || w % fw != 0 {
        return Err(Error::Divisibility {
            what: "video extent",
            detail: format!("({t}, {h}, {w}) by factors {f:?}"),
        });
    }
    let (t2, h2, w2) = (t / ft, h / fh, w / fw);
    x.reshape(&[c, t2, ft, h2, fh, w2, fw])?
        .permute(&[0, 2, 4, 6, 1, 3, 5])?
        .reshape(&[c * ft * fh * fw, t2, h2, w2])
}

/// Exact inverse of [`space_time_to_channel`].
pub fn channel_to_space_time(x: &Tensor, f: Factors) -> Result<Tensor> {
    check_factors(f)?;
    let [cf, t2, h2, w2] = dims4(x, "channel_to_space_time")?;
    let (ft, fh, fw) = f;
    let block = ft * fh * fw;
    if cf % block != 0 {
        return Err(Error::Divisibility {
            what: "channel count",
            detail: format!("{cf} by {block}"),
        });
    }
    let c = cf / block;
    x.reshape(&[c, ft, fh, fw, t2, h2, w2])?
        .permute(&[0, 4, 1, 5, 2, 6, 3])?
        .reshape(&[c, t2 * ft, h2 * fh, w2 * fw])
}

/// Shuffle, then average contiguous channel groups down to `out_channels`.
pub fn downsample_residual(x: &Tensor, f: Factors, out_channels: usize) -> Result<Tensor> {
    let s = space_time_to_channel(x, f)?;
    let [cf, t, h, w] = dims4(&s, "downsample_residual")?;
    if out_channels == 0 || cf % out_channels != 0 {
        return Err(Error::Divisibility {
            what: "shuffled channel count",
            detail: format!("{cf} by {out_channels} output channels"),
        });
    }
    let group = cf / out_channels;
    if group == 1 {
        return Ok(s);
    }
    s.reshape(&[out_channels, group, t, h, w])?.mean_axis(1)
}

/// Duplicate each channel contiguously up to `out_channels * ft * fh * fw`,
/// then unshuffle to `out_channels`.
pub fn upsample_residual(x: &Tensor, f: Factors, out_channels: usize) -> Result<Tensor> {
    check_factors(f)?;
    let [c, t, h, w] = dims4(x, "upsample_residual")?;
    let target = out_channels * f.0 * f.1 * f.2;
    if out_channels == 0 || !target.is_multiple_of(c) {
        return Err(Error::Divisibility {
            what: "upsampled channel count",
            detail: format!("{target} by {c} input channels"),
        });
    }
    let repeat = target / c;
    let dup = if repeat == 1 {
        x.clone()
    } else {
        x.reshape(&[c, 1, t * h * w])?
            .mul(&Tensor::ones(&[1, repeat, 1]))?
            .reshape(&[target, t, h, w])?
    };
    channel_to_space_time(&dup, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{with_precision, Precision};

    fn seq(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn eight_voxels_into_channels() {
        let x = seq(&[1, 2, 2, 2]);
        let y = space_time_to_channel(&x, (2, 2, 2)).unwrap();
        assert_eq!(y.shape(), &[8, 1, 1, 1]);
        // Channel order is (dt, dh, dw) row-major, identical to the input's.
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn layout_matches_formula() {
        let x = seq(&[2, 4, 4, 6]);
        let (ft, fh, fw) = (2, 2, 3);
        let y = space_time_to_channel(&x, (ft, fh, fw)).unwrap();
        let [_, t2, h2, w2] = [y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]];
        for ci in 0..2 {
            for dt in 0..ft {
                for dh in 0..fh {
                    for dw in 0..fw {
                        let oc = ((ci * ft + dt) * fh + dh) * fw + dw;
                        for a in 0..t2 {
                            for b in 0..h2 {
                                for c in 0..w2 {
                                    let src = ((ci * 4 + a * ft + dt) * 4 + b * fh + dh) * 6
                                        + c * fw
                                        + dw;
                                    let dst = ((oc * t2 + a) * h2 + b) * w2 + c;
                                    assert_eq!(y.data()[dst], x.data()[src]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unit_factors_are_identity() {
        let x = seq(&[3, 2, 4, 4]);
        assert_eq!(
            space_time_to_channel(&x, (1, 1, 1)).unwrap().data(),
            x.data()
        );
    }

    #[test]
    fn round_trip_random() {
        let mut r = rng::from_seed(9);
        let x = Tensor::randn(&[3, 4, 8, 8], 1.0, &mut r);
        let y = channel_to_space_time(&space_time_to_channel(&x, (2, 2, 2)).unwrap(), (2, 2, 2))
            .unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn non_divisible_extent() {
        let x = seq(&[1, 3, 4, 4]);
        assert!(matches!(
            space_time_to_channel(&x, (2, 2, 2)),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn downsample_preserves_constants() {
        let x = Tensor::full(&[2, 2, 4, 4], 0.75);
        let y = downsample_residual(&x, (2, 2, 2), 4).unwrap();
        assert_eq!(y.shape(), &[4, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn downsample_is_group_mean() {
        with_precision(Precision::F64, || {
            let x = seq(&[2, 2, 2, 2]);
            let s = space_time_to_channel(&x, (2, 2, 2)).unwrap();
            let y = downsample_residual(&x, (2, 2, 2), 8).unwrap();
            assert_eq!(y.shape(), &[8, 1, 1, 1]);
            for g in 0..8 {
                let expect = 0.5 * (s.data()[2 * g] + s.data()[2 * g + 1]);
                assert_eq!(y.data()[g], expect);
            }
        });
    }

    #[test]
    fn downsample_full_width_is_pure_shuffle() {
        let x = seq(&[2, 2, 2, 2]);
        let y = downsample_residual(&x, (2, 2, 2), 16).unwrap();
        assert_eq!(
            y.data(),
            space_time_to_channel(&x, (2, 2, 2)).unwrap().data()
        );
        assert!(downsample_residual(&x, (2, 2, 2), 3).is_err());
    }

    #[test]
    fn upsample_shape_and_constants() {
        let x = seq(&[8, 1, 1, 1]);
        assert_eq!(
            upsample_residual(&x, (2, 2, 2), 1).unwrap().shape(),
            &[1, 2, 2, 2]
        );
        let c = Tensor::full(&[4, 1, 2, 2], -2.0);
        let y = upsample_residual(&c, (2, 2, 2), 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 4]);
        assert!(y.data().iter().all(|&v| v == -2.0));
        assert!(upsample_residual(&x, (1, 1, 1), 3).is_err());
    }

    #[test]
    fn duplicate_then_average_is_identity() {
        let mut r = rng::from_seed(1);
        let x = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut r);
        for (f, out) in [
            ((2, 2, 2), 2),
            ((1, 2, 2), 4),
            ((2, 1, 1), 8),
            ((1, 1, 1), 4),
        ] {
            let up = upsample_residual(&x, f, out).unwrap();
            let back = downsample_residual(&up, f, 4).unwrap();
            assert_eq!(back.shape(), x.shape());
            let err = back
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "{f:?}: {err}");
        }
    }
}
