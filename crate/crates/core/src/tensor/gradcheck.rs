//! Finite-difference verification of the tape.
//!
//! The analytic side runs at the requested precision; the numeric side is
//! always a 64-bit central difference evaluated at the same input points.

use serde::Serialize;

use super::{with_precision, Precision, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub const PRIMITIVES: &[&str] = &[
    "matmul", "add", "mul", "scale", "silu", "gelu", "softmax", "rms_norm", "reshape", "permute",
    "concat", "split", "sum", "mean",
];

const FD_STEP: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub shapes: Vec<Vec<usize>>,
    pub precision: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn apply(op: &str, xs: &[Tensor]) -> Result<Tensor> {
    let x = &xs[0];
    match op {
        "matmul" => x.matmul(&xs[1]),
        "add" => x.add(&xs[1]),
        "mul" => x.mul(&xs[1]),
        "scale" => x.scale(-1.7),
        "silu" => x.silu(),
        "gelu" => x.gelu(),
        "softmax" => x.softmax(),
        "rms_norm" => x.rms_norm(),
        "reshape" => x.reshape(&[x.numel()]),
        "permute" => {
            let axes: Vec<usize> = (0..x.ndim()).rev().collect();
            x.permute(&axes)
        }
        "concat" => Tensor::concat(&[x.clone(), xs[1].clone()], 0),
        "split" => {
            let n = x.shape()[0];
            let parts = x.split(
                0,
                &[n / 2, n - n / 2]
                    .into_iter()
                    .filter(|&s| s > 0)
                    .collect::<Vec<_>>(),
            )?;
            // Reassemble in reverse so every piece reaches the loss.
            let rev: Vec<Tensor> = parts.into_iter().rev().collect();
            Tensor::concat(&rev, 0)
        }
        "sum" => x.sum(),
        "mean" => x.mean(),
        other => Err(Error::UnknownOp(other.to_string())),
    }
}

fn arity(op: &str) -> usize {
    match op {
        "matmul" | "add" | "mul" | "concat" => 2,
        _ => 1,
    }
}

/// Compares analytic and central-difference gradients of
/// `sum(f(inputs) * w)` for a fixed random projection `w`.
///
/// Returns the maximum relative error over all input elements.
pub fn finite_difference_check(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Vec<f64>],
    shapes: &[Vec<usize>],
    precision: Precision,
    seed: u64,
) -> Result<f64> {
    let round = |v: &[f64]| -> Vec<f64> {
        match precision {
            Precision::F32 => v.iter().map(|x| *x as f32 as f64).collect(),
            Precision::F64 => v.to_vec(),
        }
    };
    let inputs: Vec<Vec<f64>> = inputs.iter().map(|v| round(v)).collect();

    let projection = with_precision(Precision::F64, || -> Result<Tensor> {
        let xs = inputs
            .iter()
            .zip(shapes)
            .map(|(d, s)| Tensor::new(s, d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&xs)?;
        let mut r = rng::stream(seed, "gradcheck.projection");
        Ok(Tensor::rand_uniform(y.shape(), -1.0, 1.0, &mut r))
    })?;
    let w: Vec<f64> = round(projection.data());

    let analytic = with_precision(precision, || -> Result<Vec<Vec<f64>>> {
        let xs = inputs
            .iter()
            .zip(shapes)
            .map(|(d, s)| Tensor::new(s, d.clone()).map(|t| t.requires_grad()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&xs)?;
        let wt = Tensor::new(y.shape(), w.clone())?;
        y.mul(&wt)?.sum()?.backward()?;
        Ok(xs
            .iter()
            .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
            .collect())
    })?;

    with_precision(Precision::F64, || -> Result<f64> {
        let wt = |shape: &[usize]| Tensor::new(shape, w.clone());
        let loss = |xs: &[Vec<f64>]| -> Result<f64> {
            let ts = xs
                .iter()
                .zip(shapes)
                .map(|(d, s)| Tensor::new(s, d.clone()))
                .collect::<Result<Vec<_>>>()?;
            let y = f(&ts)?;
            Ok(y.mul(&wt(y.shape())?)?.sum()?.item())
        };
        let mut worst: f64 = 0.0;
        let mut probe = inputs.clone();
        for i in 0..inputs.len() {
            for j in 0..inputs[i].len() {
                let x0 = inputs[i][j];
                probe[i][j] = x0 + FD_STEP;
                let up = loss(&probe)?;
                probe[i][j] = x0 - FD_STEP;
                let down = loss(&probe)?;
                probe[i][j] = x0;
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(analytic[i][j], numeric));
            }
        }
        Ok(worst)
    })
}

/// Gradient check of a registered primitive on random inputs in `[-1, 1]`.
///
/// `shapes` gives one shape per operand; single-shape calls for binary ops
/// reuse it for both operands (transposed for `matmul`).
pub fn grad_check(
    op: &str,
    shapes: &[Vec<usize>],
    tolerance: f64,
    precision: Precision,
    seed: u64,
) -> Result<GradCheckReport> {
    if !PRIMITIVES.contains(&op) {
        return Err(Error::UnknownOp(op.to_string()));
    }
    let first = shapes
        .first()
        .ok_or_else(|| Error::Config("grad_check needs at least one shape".into()))?;
    let mut shapes = shapes.to_vec();
    if arity(op) == 2 && shapes.len() == 1 {
        let mut second = first.clone();
        if op == "matmul" && second.len() >= 2 {
            let n = second.len();
            second.swap(n - 1, n - 2);
        }
        shapes.push(second);
    }
    shapes.truncate(arity(op));
    let mut r = rng::stream(seed, &format!("gradcheck.{op}"));
    let inputs: Vec<Vec<f64>> = with_precision(Precision::F64, || {
        shapes
            .iter()
            .map(|s| Tensor::rand_uniform(s, -1.0, 1.0, &mut r).to_vec())
            .collect()
    });
    let op_owned = op.to_string();
    let f = move |xs: &[Tensor]| apply(&op_owned, xs);
    let max_rel_error = finite_difference_check(&f, &inputs, &shapes, precision, seed)?;
    Ok(GradCheckReport {
        op: op.to_string(),
        shapes,
        precision: format!("{precision:?}").to_lowercase(),
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_cases_in_32_bit() {
        for (op, shapes) in [
            ("softmax", vec![vec![4]]),
            ("rms_norm", vec![vec![2, 8]]),
            ("matmul", vec![vec![3, 3]]),
        ] {
            let r = grad_check(op, &shapes, 1e-3, Precision::F32, 11).unwrap();
            assert!(r.passed, "{op}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn every_primitive_in_64_bit() {
        for op in PRIMITIVES {
            let r = grad_check(op, &[vec![3, 4]], 1e-5, Precision::F64, 5).unwrap();
            assert!(r.passed, "{op}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn unknown_op() {
        assert!(matches!(
            grad_check("conv", &[vec![2]], 1e-3, Precision::F64, 0),
            Err(Error::UnknownOp(_))
        ));
    }

    #[test]
    fn broken_gradient_is_caught() {
        // Non-differentiable path: detaching hides the dependence on the input.
        let f = |xs: &[Tensor]| xs[0].detach().mul(&xs[0]);
        let err =
            finite_difference_check(&f, &[vec![0.5, -0.3]], &[vec![2]], Precision::F64, 1).unwrap();
        assert!(err > 0.1);
    }
}
