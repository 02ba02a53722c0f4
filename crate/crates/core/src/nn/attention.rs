//! Multi-head scaled dot-product self-attention.

use super::linalg::gemm;
use super::ops::softmax_row;
use super::{NnError, Tensor};

/// Projection weights, each `[d, d]` (input-major, `y = x W + b`), biases `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub bk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    batch: usize,
    tokens: usize,
    d_model: usize,
    nhead: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights `[B, H, T, T]`.
    weights: Vec<f64>,
    /// Concatenated head outputs `[B*T, d]`.
    heads: Vec<f64>,
}

impl AttentionCache {
    /// Attention weights of batch `b`, head `h`, as a `T×T` row-major slice.
    pub fn weights(&self, b: usize, h: usize) -> &[f64] {
        let tt = self.tokens * self.tokens;
        let start = (b * self.nhead + h) * tt;
        &self.weights[start..start + tt]
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dx: Tensor,
    pub dwq: Tensor,
    pub dbq: Tensor,
    pub dwk: Tensor,
    pub dbk: Tensor,
    pub dwv: Tensor,
    pub dbv: Tensor,
    pub dwo: Tensor,
    pub dbo: Tensor,
}

fn project(x: &[f64], rows: usize, d: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(rows, d, d, 1.0, x, false, w.data(), false, 1.0, &mut out);
    out
}

fn check(x: &Tensor, p: &AttentionParams<'_>, nhead: usize) -> Result<(usize, usize, usize), NnError> {
    if x.ndim() != 3 {
        return Err(NnError::ShapeMismatch { op: "attention", detail: format!("input must be [B,T,d], got {:?}", x.shape()) });
    }
    let d = x.dim(2);
    if nhead == 0 || d % nhead != 0 {
        return Err(NnError::IndivisibleHeads { d_model: d, nhead });
    }
    for (name, w) in [("wq", p.wq), ("wk", p.wk), ("wv", p.wv), ("wo", p.wo)] {
        if w.shape() != [d, d] {
            return Err(NnError::ShapeMismatch { op: "attention", detail: format!("{name} {:?} vs d_model {d}", w.shape()) });
        }
    }
    for (name, b) in [("bq", p.bq), ("bk", p.bk), ("bv", p.bv), ("bo", p.bo)] {
        if b.shape() != [d] {
            return Err(NnError::ShapeMismatch { op: "attention", detail: format!("{name} {:?} vs d_model {d}", b.shape()) });
        }
    }
    Ok((x.dim(0), x.dim(1), d))
}

/// Forward pass for `x: [B, T, d]`. Scores are scaled by `1/sqrt(d/nhead)`.
pub fn multi_head_attention(x: &Tensor, p: &AttentionParams<'_>, nhead: usize) -> Result<(Tensor, AttentionCache), NnError> {
    let (batch, tokens, d) = check(x, p, nhead)?;
    let rows = batch * tokens;
    let head_dim = d / nhead;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q = project(x.data(), rows, d, p.wq, p.bq);
    let k = project(x.data(), rows, d, p.wk, p.bk);
    let v = project(x.data(), rows, d, p.wv, p.bv);

    let mut weights = vec![0.0; batch * nhead * tokens * tokens];
    let mut heads = vec![0.0; rows * d];
    for b in 0..batch {
        let base = b * tokens * d;
        for h in 0..nhead {
            let off = h * head_dim;
            let w_start = (b * nhead + h) * tokens * tokens;
            let attn = &mut weights[w_start..w_start + tokens * tokens];
            for t in 0..tokens {
                let qt = &q[base + t * d + off..base + t * d + off + head_dim];
                let row = &mut attn[t * tokens..(t + 1) * tokens];
                for (s, score) in row.iter_mut().enumerate() {
                    let ks = &k[base + s * d + off..base + s * d + off + head_dim];
                    *score = scale * qt.iter().zip(ks).map(|(a, c)| a * c).sum::<f64>();
                }
                softmax_row(row);
                let out = &mut heads[base + t * d + off..base + t * d + off + head_dim];
                for (s, &a) in row.iter().enumerate() {
                    let vs = &v[base + s * d + off..base + s * d + off + head_dim];
                    out.iter_mut().zip(vs).for_each(|(o, vv)| *o += a * vv);
                }
            }
        }
    }
    let y = project(&heads, rows, d, p.wo, p.bo);
    let cache = AttentionCache { batch, tokens, d_model: d, nhead, x: x.data().to_vec(), q, k, v, weights, heads };
    Ok((Tensor::new(vec![batch, tokens, d], y)?, cache))
}

fn weight_grad(input: &[f64], dout: &[f64], rows: usize, d: usize) -> Result<(Tensor, Tensor), NnError> {
    let mut dw = vec![0.0; d * d];
    gemm(d, rows, d, 1.0, input, true, dout, false, 0.0, &mut dw);
    let mut db = vec![0.0; d];
    for row in dout.chunks_exact(d) {
        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    Ok((Tensor::new(vec![d, d], dw)?, Tensor::new(vec![d], db)?))
}

pub fn multi_head_attention_backward(
    cache: &AttentionCache,
    p: &AttentionParams<'_>,
    dy: &Tensor,
) -> Result<AttentionGrads, NnError> {
    let (batch, tokens, d, nhead) = (cache.batch, cache.tokens, cache.d_model, cache.nhead);
    if dy.shape() != [batch, tokens, d] {
        return Err(NnError::ShapeMismatch { op: "attention_backward", detail: format!("dy {:?}", dy.shape()) });
    }
    let rows = batch * tokens;
    let head_dim = d / nhead;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let (dwo, dbo) = weight_grad(&cache.heads, dy.data(), rows, d)?;
    let mut dheads = vec![0.0; rows * d];
    gemm(rows, d, d, 1.0, dy.data(), false, p.wo.data(), true, 0.0, &mut dheads);

    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dscore = vec![0.0; tokens];
    for b in 0..batch {
        let base = b * tokens * d;
        for h in 0..nhead {
            let off = h * head_dim;
            let attn = cache.weights(b, h);
            for t in 0..tokens {
                let dout = &dheads[base + t * d + off..base + t * d + off + head_dim];
                let row = &attn[t * tokens..(t + 1) * tokens];
                // dA[t,s] = dO[t]·V[s]; dV[s] += A[t,s] dO[t]
                for s in 0..tokens {
                    let vs = &cache.v[base + s * d + off..base + s * d + off + head_dim];
                    dscore[s] = dout.iter().zip(vs).map(|(a, c)| a * c).sum();
                    let dvs = &mut dv[base + s * d + off..base + s * d + off + head_dim];
                    dvs.iter_mut().zip(dout).for_each(|(acc, g)| *acc += row[s] * g);
                }
                let dot: f64 = dscore.iter().zip(row).map(|(g, a)| g * a).sum();
                for s in 0..tokens {
                    let ds = scale * row[s] * (dscore[s] - dot);
                    if ds == 0.0 {
                        continue;
                    }
                    let ks = &cache.k[base + s * d + off..base + s * d + off + head_dim];
                    let dqt = &mut dq[base + t * d + off..base + t * d + off + head_dim];
                    dqt.iter_mut().zip(ks).for_each(|(acc, kv)| *acc += ds * kv);
                    let qt = &cache.q[base + t * d + off..base + t * d + off + head_dim];
                    let dks = &mut dk[base + s * d + off..base + s * d + off + head_dim];
                    dks.iter_mut().zip(qt).for_each(|(acc, qv)| *acc += ds * qv);
                }
            }
        }
    }

    let (dwq, dbq) = weight_grad(&cache.x, &dq, rows, d)?;
    let (dwk, dbk) = weight_grad(&cache.x, &dk, rows, d)?;
    let (dwv, dbv) = weight_grad(&cache.x, &dv, rows, d)?;
    let mut dx = vec![0.0; rows * d];
    gemm(rows, d, d, 1.0, &dq, false, p.wq.data(), true, 0.0, &mut dx);
    gemm(rows, d, d, 1.0, &dk, false, p.wk.data(), true, 1.0, &mut dx);
    gemm(rows, d, d, 1.0, &dv, false, p.wv.data(), true, 1.0, &mut dx);

    Ok(AttentionGrads { dx: Tensor::new(vec![batch, tokens, d], dx)?, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo })
}
