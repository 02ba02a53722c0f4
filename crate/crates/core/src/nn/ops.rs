//! Layer kernels: forward passes and their hand-written backward passes.

use super::linalg::gemm;
use super::{NnError, Tensor};

/// Side length of every convolution kernel (3×3, stride 1, no padding).
pub const KERNEL: usize = 3;

fn mismatch(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

fn check_matrix(op: &'static str, t: &Tensor, what: &str) -> Result<(usize, usize), NnError> {
    if t.ndim() != 2 {
        return Err(mismatch(op, format!("{what} must be 2-D, got {:?}", t.shape())));
    }
    Ok((t.dim(0), t.dim(1)))
}

/// `y = x W + b` for `x: [B, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (batch, fan_in) = check_matrix("linear", x, "input")?;
    let (w_in, fan_out) = check_matrix("linear", w, "weight")?;
    if w_in != fan_in {
        return Err(mismatch("linear", format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    if b.shape() != [fan_out] {
        return Err(mismatch("linear", format!("bias {:?} vs {fan_out} outputs", b.shape())));
    }
    let mut out = Vec::with_capacity(batch * fan_out);
    for _ in 0..batch {
        out.extend_from_slice(b.data());
    }
    gemm(batch, fan_in, fan_out, 1.0, x.data(), false, w.data(), false, 1.0, &mut out);
    Tensor::new(vec![batch, fan_out], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LinearGrads, NnError> {
    let (batch, fan_in) = check_matrix("linear_backward", x, "input")?;
    let (_, fan_out) = check_matrix("linear_backward", w, "weight")?;
    if dy.shape() != [batch, fan_out] || w.dim(0) != fan_in {
        return Err(mismatch("linear_backward", format!("dy {:?}, x {:?}, w {:?}", dy.shape(), x.shape(), w.shape())));
    }
    let mut dw = vec![0.0; fan_in * fan_out];
    gemm(fan_in, batch, fan_out, 1.0, x.data(), true, dy.data(), false, 0.0, &mut dw);
    let mut dx = vec![0.0; batch * fan_in];
    gemm(batch, fan_out, fan_in, 1.0, dy.data(), false, w.data(), true, 0.0, &mut dx);
    let mut db = vec![0.0; fan_out];
    for row in dy.data().chunks_exact(fan_out) {
        db.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
    }
    Ok(LinearGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dw: Tensor::new(w.shape().to_vec(), dw)?,
        db: Tensor::new(vec![fan_out], db)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU: `dy` where `x > 0`, else 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, NnError> {
    if x.shape() != dy.shape() {
        return Err(mismatch("relu_backward", format!("{:?} vs {:?}", x.shape(), dy.shape())));
    }
    let data = x.data().iter().zip(dy.data()).map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Row-wise softmax over the last axis of a 2-D tensor, with max subtraction.
pub fn softmax(z: &Tensor) -> Result<Tensor, NnError> {
    let (_, k) = check_matrix("softmax", z, "logits")?;
    let mut out = z.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        softmax_row(row);
    }
    Tensor::new(z.shape().to_vec(), out)
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<(), NnError> {
    if labels.len() != batch {
        return Err(mismatch("cross_entropy", format!("{} labels for batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label: bad, classes });
    }
    Ok(())
}

/// Mean of `-ln p[label]` over the batch.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
    let (batch, classes) = check_matrix("cross_entropy", probs, "probabilities")?;
    check_labels(labels, batch, classes)?;
    let total: f64 = probs.data().chunks_exact(classes).zip(labels).map(|(row, &l)| -row[l].ln()).sum();
    Ok(total / batch as f64)
}

/// Fused softmax + cross-entropy on logits via log-sum-exp.
/// Returns the mean loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (batch, classes) = check_matrix("softmax_cross_entropy", logits, "logits")?;
    check_labels(labels, batch, classes)?;
    let mut grad = logits.data().to_vec();
    let mut loss = 0.0;
    let inv_batch = 1.0 / batch as f64;
    for (row, &label) in grad.chunks_exact_mut(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_batch;
        }
        row[label] -= inv_batch;
    }
    Ok((loss * inv_batch, Tensor::new(logits.shape().to_vec(), grad)?))
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    height: usize,
    width: usize,
    c_out: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn check(x: &Tensor, k: &Tensor) -> Result<Self, NnError> {
        if x.ndim() != 4 {
            return Err(mismatch("conv2d", format!("input must be [B,C,H,W], got {:?}", x.shape())));
        }
        let (batch, c_in, height, width) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if k.shape().len() != 4 || k.dim(1) != c_in || k.dim(2) != KERNEL || k.dim(3) != KERNEL {
            return Err(mismatch(
                "conv2d",
                format!("kernel {:?} incompatible with input {:?} (need [Cout,{c_in},3,3])", k.shape(), x.shape()),
            ));
        }
        if height < KERNEL || width < KERNEL {
            return Err(mismatch("conv2d", format!("input {height}x{width} smaller than kernel")));
        }
        Ok(Self {
            batch,
            c_in,
            height,
            width,
            c_out: k.dim(0),
            out_h: height - KERNEL + 1,
            out_w: width - KERNEL + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * KERNEL * KERNEL
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one sample into `[Cin*9, Ho*Wo]` columns.
fn im2col(dims: &ConvDims, sample: &[f64], cols: &mut [f64]) {
    let positions = dims.positions();
    for c in 0..dims.c_in {
        let plane = &sample[c * dims.height * dims.width..(c + 1) * dims.height * dims.width];
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (c * KERNEL + ki) * KERNEL + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for i in 0..dims.out_h {
                    let src = &plane[(i + ki) * dims.width + kj..(i + ki) * dims.width + kj + dims.out_w];
                    dst[i * dims.out_w..(i + 1) * dims.out_w].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add(dims: &ConvDims, cols: &[f64], sample: &mut [f64]) {
    let positions = dims.positions();
    for c in 0..dims.c_in {
        let plane = &mut sample[c * dims.height * dims.width..(c + 1) * dims.height * dims.width];
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (c * KERNEL + ki) * KERNEL + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for i in 0..dims.out_h {
                    let dst = &mut plane[(i + ki) * dims.width + kj..(i + ki) * dims.width + kj + dims.out_w];
                    dst.iter_mut().zip(&src[i * dims.out_w..(i + 1) * dims.out_w]).for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}

/// Valid 3×3 cross-correlation plus bias: `[B,Cin,H,W] -> [B,Cout,H-2,W-2]`.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let dims = ConvDims::check(x, k)?;
    if b.shape() != [dims.c_out] {
        return Err(mismatch("conv2d", format!("bias {:?} vs {} kernels", b.shape(), dims.c_out)));
    }
    let positions = dims.positions();
    let in_len = dims.c_in * dims.height * dims.width;
    let out_len = dims.c_out * positions;
    let mut cols = vec![0.0; dims.patch_len() * positions];
    let mut out = vec![0.0; dims.batch * out_len];
    for (sample, dst) in x.data().chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
        im2col(&dims, sample, &mut cols);
        for (plane, &bias) in dst.chunks_exact_mut(positions).zip(b.data()) {
            plane.fill(bias);
        }
        gemm(dims.c_out, dims.patch_len(), positions, 1.0, k.data(), false, &cols, false, 1.0, dst);
    }
    Tensor::new(vec![dims.batch, dims.c_out, dims.out_h, dims.out_w], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// Input gradient; `None` when not requested.
    pub dx: Option<Tensor>,
    pub dk: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor, need_dx: bool) -> Result<ConvGrads, NnError> {
    let dims = ConvDims::check(x, k)?;
    if dy.shape() != [dims.batch, dims.c_out, dims.out_h, dims.out_w] {
        return Err(mismatch("conv2d_backward", format!("dy {:?}", dy.shape())));
    }
    let positions = dims.positions();
    let in_len = dims.c_in * dims.height * dims.width;
    let out_len = dims.c_out * positions;
    let mut cols = vec![0.0; dims.patch_len() * positions];
    let mut dcols = vec![0.0; dims.patch_len() * positions];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; dims.c_out];
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    for (n, (sample, grad)) in x.data().chunks_exact(in_len).zip(dy.data().chunks_exact(out_len)).enumerate() {
        im2col(&dims, sample, &mut cols);
        gemm(dims.c_out, positions, dims.patch_len(), 1.0, grad, false, &cols, true, 1.0, &mut dk);
        for (acc, plane) in db.iter_mut().zip(grad.chunks_exact(positions)) {
            *acc += plane.iter().sum::<f64>();
        }
        if need_dx {
            gemm(dims.patch_len(), dims.c_out, positions, 1.0, k.data(), true, grad, false, 0.0, &mut dcols);
            col2im_add(&dims, &dcols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        dx: if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None },
        dk: Tensor::new(k.shape().to_vec(), dk)?,
        db: Tensor::new(vec![dims.c_out], db)?,
    })
}

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Standardizes each row over the last axis, then applies `gamma * x̂ + beta`.
/// The variance is the population variance; `eps` is added under the root.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache), NnError> {
    let width = *x.shape().last().expect("tensor has at least one axis");
    if gamma.shape() != [width] || beta.shape() != [width] {
        return Err(mismatch(
            "layer_norm",
            format!("gamma {:?} / beta {:?} vs feature width {width}", gamma.shape(), beta.shape()),
        ));
    }
    let rows = x.len() / width;
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for ((src, xhat), dst) in x.data().chunks_exact(width).zip(normalized.chunks_exact_mut(width)).zip(out.chunks_exact_mut(width)) {
        let mean = src.iter().sum::<f64>() / width as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for i in 0..width {
            xhat[i] = (src[i] - mean) * inv;
            dst[i] = gamma.data()[i] * xhat[i] + beta.data()[i];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache { normalized: Tensor::new(x.shape().to_vec(), normalized)?, inv_std },
    ))
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> Result<LayerNormGrads, NnError> {
    if dy.shape() != cache.normalized.shape() {
        return Err(mismatch("layer_norm_backward", format!("dy {:?}", dy.shape())));
    }
    let width = gamma.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    let mut dxhat = vec![0.0; width];
    let rows = dy.data().chunks_exact(width).zip(cache.normalized.data().chunks_exact(width));
    for (((g, xhat), dst), &inv) in rows.zip(dx.chunks_exact_mut(width)).zip(&cache.inv_std) {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..width {
            dgamma[i] += g[i] * xhat[i];
            dbeta[i] += g[i];
            dxhat[i] = g[i] * gamma.data()[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
        }
        mean_dxhat /= width as f64;
        mean_dxhat_xhat /= width as f64;
        for i in 0..width {
            dst[i] = inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
    Ok(LayerNormGrads {
        dx: Tensor::new(dy.shape().to_vec(), dx)?,
        dgamma: Tensor::new(vec![width], dgamma)?,
        dbeta: Tensor::new(vec![width], dbeta)?,
    })
}
