//! Index-driven ops: row gathers, row scatters and the edge-list
//! primitives used by graph attention.

use super::Tensor;
use crate::error::{contract, Error, Result};

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

impl Tensor {
    /// Rows `idx` of a `[R, C]` matrix, in order, as `[len(idx), C]`.
    /// Gradients scatter-add back, so repeated indices are fine.
    pub fn index_select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = as_matrix(self, "index_select_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(contract(format!("row index {bad} out of range for {rows} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * cols);
        {
            let x = self.data();
            for &i in idx {
                out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
            }
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out, vec![idx.len(), cols], vec![self.clone()], move |g| {
            let mut gx = vec![0.0; rows * cols];
            for (k, &i) in idx.iter().enumerate() {
                let src = &g[k * cols..(k + 1) * cols];
                gx[i * cols..(i + 1) * cols].iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
            vec![Some(gx)]
        }))
    }

    /// Places row `k` of a `[M, C]` matrix at row `idx[k]` of a zeroed
    /// `[total_rows, C]` output. Indices must be distinct.
    pub fn scatter_rows(&self, idx: &[usize], total_rows: usize) -> Result<Tensor> {
        let (m, cols) = as_matrix(self, "scatter_rows")?;
        if idx.len() != m {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = vec![0.0; total_rows * cols];
        let mut hit = vec![false; total_rows];
        {
            let x = self.data();
            for (k, &i) in idx.iter().enumerate() {
                if i >= total_rows || std::mem::replace(&mut hit[i], true) {
                    return Err(contract(format!("scatter target {i} repeated or out of range")));
                }
                out[i * cols..(i + 1) * cols].copy_from_slice(&x[k * cols..(k + 1) * cols]);
            }
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out, vec![total_rows, cols], vec![self.clone()], move |g| {
            let mut gx = Vec::with_capacity(idx.len() * cols);
            for &i in &idx {
                gx.extend_from_slice(&g[i * cols..(i + 1) * cols]);
            }
            vec![Some(gx)]
        }))
    }

    /// Embedding lookup: rows `ids` of this `[V, D]` table.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let (vocab, _) = as_matrix(self, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(contract(format!("token id {bad} out of range for vocabulary of {vocab}")));
        }
        self.index_select_rows(ids)
    }

    /// Softmax of `[E, H]` edge scores within each segment (edges sharing
    /// a target node), independently per column.
    pub fn segment_softmax(&self, segment: &[usize], num_segments: usize) -> Result<Tensor> {
        let (edges, heads) = as_matrix(self, "segment_softmax")?;
        if segment.len() != edges {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: self.shape().to_vec(),
                rhs: vec![segment.len()],
            });
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= num_segments) {
            return Err(contract(format!("segment {bad} out of range for {num_segments}")));
        }
        let mut max = vec![f64::NEG_INFINITY; num_segments * heads];
        let x = self.to_vec();
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..heads {
                let m = &mut max[s * heads + h];
                *m = m.max(x[e * heads + h]);
            }
        }
        let mut out = vec![0.0; edges * heads];
        let mut total = vec![0.0; num_segments * heads];
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..heads {
                let v = (x[e * heads + h] - max[s * heads + h]).exp();
                out[e * heads + h] = v;
                total[s * heads + h] += v;
            }
        }
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..heads {
                out[e * heads + h] /= total[s * heads + h];
            }
        }
        let y = out.clone();
        let segment = segment.to_vec();
        Ok(Tensor::from_op(out, vec![edges, heads], vec![self.clone()], move |g| {
            let mut dot = vec![0.0; num_segments * heads];
            for (e, &s) in segment.iter().enumerate() {
                for h in 0..heads {
                    dot[s * heads + h] += g[e * heads + h] * y[e * heads + h];
                }
            }
            let gx = segment
                .iter()
                .enumerate()
                .flat_map(|(e, &s)| {
                    let (y, g, dot) = (&y, g, &dot);
                    (0..heads).map(move |h| y[e * heads + h] * (g[e * heads + h] - dot[s * heads + h]))
                })
                .collect();
            vec![Some(gx)]
        }))
    }

    /// Weighted message passing. With `self` as `[E, H]` edge weights and
    /// `values` as `[N, H, Dh]`, returns `[N, H, Dh]` where
    /// `out[dst[e], h] += w[e, h] · values[src[e], h]`.
    pub fn edge_aggregate(&self, values: &Tensor, src: &[usize], dst: &[usize]) -> Result<Tensor> {
        let (edges, heads) = as_matrix(self, "edge_aggregate")?;
        let [nodes, vh, dh] = *values.shape() else {
            return Err(Error::Shape {
                op: "edge_aggregate",
                lhs: self.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        };
        if vh != heads || src.len() != edges || dst.len() != edges {
            return Err(Error::Shape {
                op: "edge_aggregate",
                lhs: self.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        if src.iter().chain(dst).any(|&i| i >= nodes) {
            return Err(contract("edge endpoint out of range"));
        }
        let width = heads * dh;
        let mut out = vec![0.0; nodes * width];
        {
            let (w, v) = (self.data(), values.data());
            for e in 0..edges {
                for h in 0..heads {
                    let a = w[e * heads + h];
                    let from = src[e] * width + h * dh;
                    let to = dst[e] * width + h * dh;
                    for k in 0..dh {
                        out[to + k] += a * v[from + k];
                    }
                }
            }
        }
        let (wt, vt) = (self.clone(), values.clone());
        let (src, dst) = (src.to_vec(), dst.to_vec());
        Ok(Tensor::from_op(out, vec![nodes, heads, dh], vec![self.clone(), values.clone()], move |g| {
            let (w, v) = (wt.data(), vt.data());
            let mut gw = wt.requires_grad().then(|| vec![0.0; edges * heads]);
            let mut gv = vt.requires_grad().then(|| vec![0.0; nodes * width]);
            for e in 0..edges {
                for h in 0..heads {
                    let from = src[e] * width + h * dh;
                    let to = dst[e] * width + h * dh;
                    if let Some(gw) = gw.as_mut() {
                        gw[e * heads + h] = (0..dh).map(|k| g[to + k] * v[from + k]).sum();
                    }
                    if let Some(gv) = gv.as_mut() {
                        let a = w[e * heads + h];
                        for k in 0..dh {
                            gv[from + k] += a * g[to + k];
                        }
                    }
                }
            }
            vec![gw, gv]
        }))
    }
}
