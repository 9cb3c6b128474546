use super::{numel, Tensor};
use crate::error::{shape_err, Error, Result};

const RMS_EPS: f64 = 1e-6;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (aligned from the right).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index into a tensor of `shape`
/// broadcast to `out`.
fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let src = strides(shape);
    let mut eff = vec![0; out.len()];
    for (i, e) in eff.iter_mut().enumerate().skip(offset) {
        let d = shape[i - offset];
        *e = if d == 1 { 0 } else { src[i - offset] };
    }
    let n = numel(out);
    let mut idx = vec![0; n];
    let mut counter = vec![0usize; out.len()];
    let mut cur = 0usize;
    for slot in idx.iter_mut() {
        *slot = cur;
        for ax in (0..out.len()).rev() {
            counter[ax] += 1;
            cur += eff[ax];
            if counter[ax] < out[ax] {
                break;
            }
            cur -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

fn reduce_to(grad: &[f64], idx: &[usize], len: usize) -> Vec<f64> {
    let mut g = vec![0.0; len];
    for (v, &i) in grad.iter().zip(idx) {
        g[i] += v;
    }
    g
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let th = inner.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: &'static str, mul: bool) -> Result<Tensor> {
        let out_shape = broadcast_shape(op, self.shape(), other.shape())?;
        let ia = broadcast_index(self.shape(), &out_shape);
        let ib = broadcast_index(other.shape(), &out_shape);
        let (ad, bd) = (self.data(), other.data());
        let data: Vec<f64> = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| if mul { ad[i] * bd[j] } else { ad[i] + bd[j] })
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            op,
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = if a.is_tracked() {
                    let local: Vec<f64> = if mul {
                        g.iter().zip(&ib).map(|(gv, &j)| gv * b.data()[j]).collect()
                    } else {
                        g.to_vec()
                    };
                    Some(reduce_to(&local, &ia, a.numel()))
                } else {
                    None
                };
                let gb = if b.is_tracked() {
                    let local: Vec<f64> = if mul {
                        g.iter().zip(&ia).map(|(gv, &i)| gv * a.data()[i]).collect()
                    } else {
                        g.to_vec()
                    };
                    Some(reduce_to(&local, &ib, b.numel()))
                } else {
                    None
                };
                vec![ga, gb]
            },
        )
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", false)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", true)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g| vec![Some(g.iter().map(|v| v * c).collect())],
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0)?)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element (composed from `add`).
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.add(&Tensor::full(&[1], c))
    }

    fn unary(&self, op: &'static str, f: impl Fn(f64) -> (f64, f64)) -> Result<Tensor> {
        let (data, deriv): (Vec<f64>, Vec<f64>) = self.data().iter().map(|&x| f(x)).unzip();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g| vec![Some(g.iter().zip(&deriv).map(|(a, b)| a * b).collect())],
        )
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.unary("silu", |x| {
            let s = sigmoid(x);
            (x * s, s * (1.0 + x * (1.0 - s)))
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor> {
        self.unary("gelu", gelu_parts)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let n = *self.shape().last().expect("tensors have rank >= 1");
        let mut out = vec![0.0; self.numel()];
        for (row, dst) in self.data().chunks(n).zip(out.chunks_mut(n)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - m).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        let y = out.clone();
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// RMS normalization over the last axis, without a learned gain.
    pub fn rms_norm(&self) -> Result<Tensor> {
        let n = *self.shape().last().expect("tensors have rank >= 1");
        let mut out = vec![0.0; self.numel()];
        let mut inv = Vec::with_capacity(self.numel() / n);
        for (row, dst) in self.data().chunks(n).zip(out.chunks_mut(n)) {
            let ms = row.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            inv.push(r);
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = x * r;
            }
        }
        let x = self.clone();
        Tensor::from_op(
            "rms_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for (((gr, xr), dst), &r) in g
                    .chunks(n)
                    .zip(x.data().chunks(n))
                    .zip(gx.chunks_mut(n))
                    .zip(&inv)
                {
                    let dot: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((d, &gv), &xv) in dst.iter_mut().zip(gr).zip(xr) {
                        *d = r * gv - r * r * r * xv * dot;
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Batched matrix product `[.., m, k] x [.., k, n]` with broadcast batch dims.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err(
                "matmul",
                format!("operands need rank >= 2, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner extents differ: {sa:?} x {sb:?}"),
            ));
        }
        let batch = broadcast_shape("matmul", &sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        let ia = broadcast_index(&sa[..sa.len() - 2], &batch);
        let ib = broadcast_index(&sb[..sb.len() - 2], &batch);
        let nb = ia.len().max(1);
        let (ia, ib) = if batch.is_empty() {
            (vec![0], vec![0])
        } else {
            (ia, ib)
        };
        let (ad, bd) = (self.data(), other.data());
        let mut out = vec![0.0; nb * m * n];
        for bi in 0..nb {
            let a = &ad[ia[bi] * m * k..(ia[bi] + 1) * m * k];
            let b = &bd[ib[bi] * k * n..(ib[bi] + 1) * k * n];
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (cv, bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                        *cv += av * bv;
                    }
                }
            }
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let (a_t, b_t) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let (ad, bd) = (a_t.data(), b_t.data());
                let mut ga = a_t.is_tracked().then(|| vec![0.0; ad.len()]);
                let mut gb = b_t.is_tracked().then(|| vec![0.0; bd.len()]);
                for bi in 0..nb {
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    let (oa, ob) = (ia[bi] * m * k, ib[bi] * k * n);
                    if let Some(ga) = ga.as_mut() {
                        // dA = dC · Bᵀ
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gc[i * n + j] * bd[ob + p * n + j];
                                }
                                ga[oa + i * k + p] += s;
                            }
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        // dB = Aᵀ · dC
                        for i in 0..m {
                            for p in 0..k {
                                let av = ad[oa + i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gb[ob + p * n + j] += av * gc[i * n + j];
                                }
                            }
                        }
                    }
                }
                vec![ga, gb]
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape()),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd
            || axes
                .iter()
                .any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(shape_err("permute", format!("axes {axes:?} for rank {nd}")));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let src = gather_index(&out_shape, &perm_strides);
        let data = src.iter().map(|&i| self.data()[i]).collect();
        let len = self.numel();
        Tensor::from_op("permute", out_shape, data, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; len];
            for (gv, &i) in g.iter().zip(&src) {
                gx[i] = *gv;
            }
            vec![Some(gx)]
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(shape_err("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(&axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(shape_err("concat", format!("axis {axis} for rank {nd}")));
        }
        for p in parts {
            let ok = p.ndim() == nd
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs {:?} on axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Tensor::from_op("concat", shape, data, parts.to_vec(), move |g| {
            let mut grads: Vec<Vec<f64>> = widths
                .iter()
                .map(|w| Vec::with_capacity(w * outer))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// The slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let nd = self.ndim();
        if axis >= nd || len == 0 || start + len > self.shape()[axis] {
            return Err(shape_err(
                "split",
                format!(
                    "[{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    self.shape()
                ),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let total = self.numel();
        Tensor::from_op("split", shape, data, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                let base = o * full + start * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Splits along `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if axis >= self.ndim() || sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(shape_err(
                "split",
                format!("sizes {sizes:?} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let t = self.narrow(axis, start, s);
                start += s;
                t
            })
            .collect()
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.sum()?.scale(1.0 / self.numel() as f64)
    }

    /// Sum over one axis, which is removed (rank-1 inputs give shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(shape_err(
                "sum",
                format!("axis {axis} for {:?}", self.shape()),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let mid = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &self.data()[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let total = self.numel();
        Tensor::from_op("sum", shape, out, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                for m in 0..mid {
                    gx[(o * mid + m) * inner..(o * mid + m + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| shape_err("mean", format!("axis {axis}")))?;
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    /// `x · W + b` over the last axis, with `W: [in, out]` and `b: [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    /// Mean squared difference, composed from primitives.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(shape_err(
                "mse",
                format!("{:?} vs {:?}", self.shape(), target.shape()),
            ));
        }
        let d = self.sub(target)?;
        d.mul(&d)?.mean()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn ensure_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Shape {
                op,
                detail: format!("expected {shape:?}, got {:?}", self.shape()),
            });
        }
        Ok(())
    }
}

/// Source flat index for each output position given per-axis source strides.
fn gather_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            cur += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            cur -= src_strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}
