use super::{numel, Tensor};
use crate::error::{config, contract, Error, Result};
use crate::rng::RngState;

/// Label value that contributes nothing to loss or gradient.
pub const IGNORE_INDEX: i64 = -100;

// c[m×n] += a[m×k] · b[k×n]
fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
fn mm_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
fn mm_at(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// How `rhs` lines up against `lhs` in an elementwise op: identical
/// shapes, or `rhs` equal to a trailing suffix of `lhs` (bias style).
fn suffix_broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        Ok(numel(rhs))
    } else {
        Err(Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }
}

fn fold_broadcast(g: &[f64], period: usize) -> Vec<f64> {
    let mut out = vec![0.0; period];
    for chunk in g.chunks(period.max(1)) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += mapped[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= mapped[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

impl Tensor {
    /// Matrix product over the last two axes. Leading (batch) axes must
    /// match, or one side must be a plain matrix shared by every batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch_dims = if ba == bb || bb.is_empty() {
            ba.to_vec()
        } else if ba.is_empty() {
            bb.to_vec()
        } else {
            return Err(err());
        };
        let batch = numel(&batch_dims);
        let a_stride = if ba.is_empty() { 0 } else { m * k };
        let b_stride = if bb.is_empty() { 0 } else { k * n };
        let mut out = vec![0.0; batch * m * n];
        {
            let (a, b) = (self.data(), other.data());
            for bi in 0..batch {
                mm(
                    &a[bi * a_stride..bi * a_stride + m * k],
                    &b[bi * b_stride..bi * b_stride + k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = batch_dims;
        shape.extend([m, n]);
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, shape, vec![self.clone(), other.clone()], move |g| {
            let (a, b) = (ta.data(), tb.data());
            let mut ga = ta.requires_grad().then(|| vec![0.0; a.len()]);
            let mut gb = tb.requires_grad().then(|| vec![0.0; b.len()]);
            for bi in 0..batch {
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    let bs = &b[bi * b_stride..bi * b_stride + k * n];
                    mm_bt(gc, bs, &mut ga[bi * a_stride..bi * a_stride + m * k], m, n, k);
                }
                if let Some(gb) = gb.as_mut() {
                    let as_ = &a[bi * a_stride..bi * a_stride + m * k];
                    mm_at(as_, gc, &mut gb[bi * b_stride..bi * b_stride + k * n], m, k, n);
                }
            }
            vec![ga, gb]
        }))
    }

    /// Elementwise sum; `other` may be a trailing-suffix broadcast.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let period = suffix_broadcast("add", self.shape(), other.shape())?;
        let out: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().enumerate().map(|(i, x)| x + b[i % period]).collect()
        };
        let same = period == self.numel();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], move |g| {
            let gb = if same { g.to_vec() } else { fold_broadcast(g, period) };
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    /// Elementwise product; `other` may be a trailing-suffix broadcast.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let period = suffix_broadcast("mul", self.shape(), other.shape())?;
        let out: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().enumerate().map(|(i, x)| x * b[i % period]).collect()
        };
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], move |g| {
            let (a, b) = (ta.data(), tb.data());
            let ga = ta
                .requires_grad()
                .then(|| g.iter().enumerate().map(|(i, gv)| gv * b[i % period]).collect());
            let gb = tb.requires_grad().then(|| {
                let prod: Vec<f64> = g.iter().zip(a.iter()).map(|(gv, av)| gv * av).collect();
                fold_broadcast(&prod, period)
            });
            vec![ga, gb]
        }))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.data().iter().map(|x| x * factor).collect();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let out = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g| {
            let x = input.data();
            vec![Some(g.iter().zip(x.iter()).map(|(gv, &xv)| gv * df(xv)).collect())]
        })
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn elu(&self) -> Tensor {
        self.unary(
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x| if x > 0.0 { 1.0 } else { x.exp() },
        )
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x| 2.0 * x)
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![], vec![self.clone()], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out the last axis.
    pub fn sum_last(&self) -> Tensor {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&1);
        let out: Vec<f64> = self.data().chunks(d.max(1)).map(|c| c.iter().sum()).collect();
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        Tensor::from_op(out, out_shape, vec![self.clone()], move |g| {
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat(v).take(d)).collect())]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |g| vec![Some(g.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(contract(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let out = permute_data(&self.data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(out, out_shape, vec![self.clone()], move |g| {
            vec![Some(permute_data(g, &grad_shape, &inverse))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(contract("transpose_last needs rank ≥ 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(contract(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| out[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(out, shape, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Replaces entries where `mask` is true with `value`; those entries
    /// pass no gradient.
    pub fn masked_fill(&self, mask: &[bool], value: f64) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(Error::Shape {
                op: "masked_fill",
                lhs: self.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = self.data().iter().zip(mask).map(|(&x, &m)| if m { value } else { x }).collect();
        let mask = mask.to_vec();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect())]
        }))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| contract("layer_norm on a scalar"))?;
        for p in [gain, bias] {
            if p.shape() != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (v - mu) * is;
                }
            }
        }
        let out: Vec<f64> = {
            let (g, b) = (gain.data(), bias.data());
            xhat.iter().enumerate().map(|(i, v)| v * g[i % d] + b[i % d]).collect()
        };
        let gain_t = gain.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g| {
                let gamma = gain_t.data();
                let mut gx = vec![0.0; xhat.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let span = r * d..(r + 1) * d;
                    let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for j in 0..d {
                        ggain[j] += gr[j] * xr[j];
                        gbias[j] += gr[j];
                        let dxh = gr[j] * gamma[j];
                        mean_dx += dxh;
                        mean_dx_x += dxh * xr[j];
                    }
                    mean_dx /= d as f64;
                    mean_dx_x /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gamma[j];
                        gx[r * d + j] = inv_std[r] * (dxh - mean_dx - xr[j] * mean_dx_x);
                    }
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            },
        ))
    }

    /// Mean over positions whose label is not [`IGNORE_INDEX`] of
    /// `-log softmax(logits)[label]`. Logits have the class axis last.
    pub fn masked_cross_entropy(&self, labels: &[i64]) -> Result<Tensor> {
        let classes = *self.shape().last().ok_or_else(|| contract("cross entropy on a scalar"))?;
        let rows = self.numel() / classes.max(1);
        if labels.len() != rows {
            return Err(Error::Shape {
                op: "masked_cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l != IGNORE_INDEX && !(0..classes as i64).contains(&l)) {
            return Err(contract(format!("label id {bad} outside [0, {classes}) and not {IGNORE_INDEX}")));
        }
        let count = labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let mut probs = vec![0.0; self.numel()];
        let mut total = 0.0;
        {
            let x = self.data();
            for (r, &label) in labels.iter().enumerate() {
                if label == IGNORE_INDEX {
                    continue;
                }
                let row = &x[r * classes..(r + 1) * classes];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + z.ln();
                total += lse - row[label as usize];
                for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                    *p = (v - lse).exp();
                }
            }
        }
        let loss = total / count as f64;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(vec![loss], vec![], vec![self.clone()], move |g| {
            let scale = g[0] / count as f64;
            let mut gx = vec![0.0; probs.len()];
            for (r, &label) in labels.iter().enumerate() {
                if label == IGNORE_INDEX {
                    continue;
                }
                for c in 0..classes {
                    gx[r * classes + c] = probs[r * classes + c] * scale;
                }
                gx[r * classes + label as usize] -= scale;
            }
            vec![Some(gx)]
        }))
    }
}

/// Inverted-dropout mask: each entry is `1/(1-p)` with probability
/// `1-p` and `0` otherwise in training mode, all ones in eval mode.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut RngState, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(config(format!("dropout probability {p} outside [0, 1)")));
    }
    let n = numel(shape);
    if !training || p == 0.0 {
        return Tensor::new(vec![1.0; n], shape);
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let data = (0..n).map(|_| if rng.uniform() < keep { scale } else { 0.0 }).collect();
    Tensor::new(data, shape)
}
