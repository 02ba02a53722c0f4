//! Minimal vision transformer: patch embedding + learned positions → one
//! encoder block → mean-pool over tokens → FC head.
//!
//! Post-norm block (default): `n1 = LN(x + MHA(x))`, `out = LN(n1 + MLP(n1))`.
//! Pre-norm block: `r = x + MHA(LN(x))`, `out = r + MLP(LN(r))`.
//! The MLP is `relu(x W1 + b1) W2 + b2` with hidden width `2·d_model`.

use super::{Batch, Model, ModelError, ModelSpec, ParamDef, ParamKind};
use crate::nn::{
    layer_norm, layer_norm_backward, linear_backward, linear_forward, multi_head_attention, multi_head_attention_backward,
    relu, relu_backward, softmax_cross_entropy, AttentionCache, AttentionParams, LayerNormCache, Tensor,
};

/// Added to the variance under the square root in every layer norm.
pub const LN_EPS: f64 = 1e-9;

const EMBED_W: usize = 0;
const EMBED_B: usize = 1;
const POS: usize = 2;
const WQ: usize = 3;
const NORM1_G: usize = 11;
const NORM1_B: usize = 12;
const MLP_W1: usize = 13;
const MLP_B1: usize = 14;
const MLP_W2: usize = 15;
const MLP_B2: usize = 16;
const NORM2_G: usize = 17;
const NORM2_B: usize = 18;
const HEAD_W: usize = 19;
const HEAD_B: usize = 20;

pub(super) fn layout(spec: &ModelSpec) -> Vec<ParamDef> {
    let d = spec.d_model();
    let mut defs = vec![
        ParamDef::new("embed.weight", "embed", ParamKind::Linear, vec![spec.patch_dim(), d]),
        ParamDef::new("embed.bias", "embed", ParamKind::Bias, vec![d]),
        ParamDef::new("embed.pos", "embed", ParamKind::Position, vec![spec.tokens(), d]),
    ];
    for (w, b) in [("attn.wq", "attn.bq"), ("attn.wk", "attn.bk"), ("attn.wv", "attn.bv"), ("attn.wo", "attn.bo")] {
        defs.push(ParamDef::new(w, "attn", ParamKind::Linear, vec![d, d]));
        defs.push(ParamDef::new(b, "attn", ParamKind::Bias, vec![d]));
    }
    defs.extend([
        ParamDef::new("norm1.gamma", "norm", ParamKind::NormScale, vec![d]),
        ParamDef::new("norm1.beta", "norm", ParamKind::NormShift, vec![d]),
        ParamDef::new("mlp.w1", "mlp", ParamKind::Linear, vec![d, 2 * d]),
        ParamDef::new("mlp.b1", "mlp", ParamKind::Bias, vec![2 * d]),
        ParamDef::new("mlp.w2", "mlp", ParamKind::Linear, vec![2 * d, d]),
        ParamDef::new("mlp.b2", "mlp", ParamKind::Bias, vec![d]),
        ParamDef::new("norm2.gamma", "norm", ParamKind::NormScale, vec![d]),
        ParamDef::new("norm2.beta", "norm", ParamKind::NormShift, vec![d]),
        ParamDef::new("head.weight", "head", ParamKind::Linear, vec![d, spec.classes]),
        ParamDef::new("head.bias", "head", ParamKind::Bias, vec![spec.classes]),
    ]);
    defs
}

fn attention_params(model: &Model) -> AttentionParams<'_> {
    AttentionParams {
        wq: model.tensor(WQ),
        bq: model.tensor(WQ + 1),
        wk: model.tensor(WQ + 2),
        bk: model.tensor(WQ + 3),
        wv: model.tensor(WQ + 4),
        bv: model.tensor(WQ + 5),
        wo: model.tensor(WQ + 6),
        bo: model.tensor(WQ + 7),
    }
}

/// `[B, C, H, W]` → `[B*T, patch_dim]`, tokens in row-major grid order.
fn patchify(spec: &ModelSpec, x: &Tensor) -> Result<Tensor, ModelError> {
    let [c, h, w] = spec.input_shape;
    let g = spec.patch_grid();
    let (ph, pw) = (h / g, w / g);
    let batch = x.dim(0);
    let pd = spec.patch_dim();
    let mut out = vec![0.0; batch * g * g * pd];
    for n in 0..batch {
        let img = &x.data()[n * c * h * w..(n + 1) * c * h * w];
        for gi in 0..g {
            for gj in 0..g {
                let tok = &mut out[((n * g + gi) * g + gj) * pd..][..pd];
                for ch in 0..c {
                    for r in 0..ph {
                        let src = &img[(ch * h + gi * ph + r) * w + gj * pw..][..pw];
                        tok[(ch * ph + r) * pw..][..pw].copy_from_slice(src);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![batch * g * g, pd], out)?)
}

fn add_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.add_inplace(b);
    out
}

fn as_tokens(t: Tensor, batch: usize, tokens: usize, d: usize) -> Result<Tensor, ModelError> {
    Ok(t.reshape(&[batch, tokens, d])?)
}

fn as_rows(t: Tensor, d: usize) -> Result<Tensor, ModelError> {
    let rows = t.len() / d;
    Ok(t.reshape(&[rows, d])?)
}

struct Mlp {
    input: Tensor,
    pre: Tensor,
    hidden: Tensor,
    out: Tensor,
}

fn mlp_forward(model: &Model, input: Tensor) -> Result<Mlp, ModelError> {
    let pre = linear_forward(&input, model.tensor(MLP_W1), model.tensor(MLP_B1))?;
    let hidden = relu(&pre);
    let out = linear_forward(&hidden, model.tensor(MLP_W2), model.tensor(MLP_B2))?;
    Ok(Mlp { input, pre, hidden, out })
}

/// Returns d(input) and writes W1, b1, W2, b2 gradients.
fn mlp_backward(model: &Model, m: &Mlp, dout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<Tensor, ModelError> {
    let g2 = linear_backward(&m.hidden, model.tensor(MLP_W2), dout)?;
    let dpre = relu_backward(&m.pre, &g2.dx)?;
    let g1 = linear_backward(&m.input, model.tensor(MLP_W1), &dpre)?;
    grads[MLP_W2] = Some(g2.dw);
    grads[MLP_B2] = Some(g2.db);
    grads[MLP_W1] = Some(g1.dw);
    grads[MLP_B1] = Some(g1.db);
    Ok(g1.dx)
}

struct Activations {
    patches: Tensor,
    attn: AttentionCache,
    ln1: LayerNormCache,
    ln2: LayerNormCache,
    mlp: Mlp,
    pooled: Tensor,
    logits: Tensor,
}

fn run(model: &Model, x: &Tensor) -> Result<Activations, ModelError> {
    let spec = model.spec();
    let (batch, t, d) = (x.dim(0), spec.tokens(), spec.d_model());
    let nhead = spec.nhead();
    let patches = patchify(spec, x)?;
    let mut tokens = linear_forward(&patches, model.tensor(EMBED_W), model.tensor(EMBED_B))?;
    let pos = model.tensor(POS).data();
    for row in tokens.data_mut().chunks_exact_mut(t * d) {
        row.iter_mut().zip(pos).for_each(|(v, p)| *v += p);
    }

    let (g1, b1, g2, b2) = (model.tensor(NORM1_G), model.tensor(NORM1_B), model.tensor(NORM2_G), model.tensor(NORM2_B));
    let (attn, ln1, mlp, ln2, block_out);
    if spec.pre_norm {
        let (n1, c1) = layer_norm(&tokens, g1, b1, LN_EPS)?;
        let (a, cache) = multi_head_attention(&as_tokens(n1, batch, t, d)?, &attention_params(model), nhead)?;
        attn = cache;
        let r1 = add_rows(&tokens, &as_rows(a, d)?);
        let (n2, c2) = layer_norm(&r1, g2, b2, LN_EPS)?;
        mlp = mlp_forward(model, n2)?;
        block_out = add_rows(&r1, &mlp.out);
        ln1 = c1;
        ln2 = c2;
    } else {
        let (a, cache) = multi_head_attention(&as_tokens(tokens.clone(), batch, t, d)?, &attention_params(model), nhead)?;
        attn = cache;
        let r1 = add_rows(&tokens, &as_rows(a, d)?);
        let (n1, c1) = layer_norm(&r1, g1, b1, LN_EPS)?;
        mlp = mlp_forward(model, n1)?;
        let r2 = add_rows(&mlp.input, &mlp.out);
        let (n2, c2) = layer_norm(&r2, g2, b2, LN_EPS)?;
        block_out = n2;
        ln1 = c1;
        ln2 = c2;
    }

    let mut pooled = vec![0.0; batch * d];
    for (dst, rows) in pooled.chunks_exact_mut(d).zip(block_out.data().chunks_exact(t * d)) {
        for row in rows.chunks_exact(d) {
            dst.iter_mut().zip(row).for_each(|(a, v)| *a += v / t as f64);
        }
    }
    let pooled = Tensor::new(vec![batch, d], pooled)?;
    let logits = linear_forward(&pooled, model.tensor(HEAD_W), model.tensor(HEAD_B))?;
    Ok(Activations { patches, attn, ln1, ln2, mlp, pooled, logits })
}

pub(super) fn forward(model: &Model, x: &Tensor) -> Result<Tensor, ModelError> {
    Ok(run(model, x)?.logits)
}

pub(super) fn backward(model: &Model, batch: &Batch) -> Result<(f64, Vec<Tensor>), ModelError> {
    let spec = model.spec();
    let (bsz, t, d) = (batch.x.dim(0), spec.tokens(), spec.d_model());
    let a = run(model, &batch.x)?;
    let mut grads: Vec<Option<Tensor>> = vec![None; model.params().len()];

    let (loss, dlogits) = softmax_cross_entropy(&a.logits, &batch.labels)?;
    let gh = linear_backward(&a.pooled, model.tensor(HEAD_W), &dlogits)?;
    grads[HEAD_W] = Some(gh.dw);
    grads[HEAD_B] = Some(gh.db);

    // mean-pool backward: every token receives dpooled / T
    let mut dblock = vec![0.0; bsz * t * d];
    for (rows, g) in dblock.chunks_exact_mut(t * d).zip(gh.dx.data().chunks_exact(d)) {
        for row in rows.chunks_exact_mut(d) {
            row.iter_mut().zip(g).for_each(|(v, gv)| *v = gv / t as f64);
        }
    }
    let dblock = Tensor::new(vec![bsz * t, d], dblock)?;
    let attn_p = attention_params(model);

    let dtokens = if spec.pre_norm {
        // out = r1 + MLP(LN2(r1)); r1 = x + MHA(LN1(x))
        let dn2 = mlp_backward(model, &a.mlp, &dblock, &mut grads)?;
        let l2 = layer_norm_backward(&a.ln2, model.tensor(NORM2_G), &dn2)?;
        grads[NORM2_G] = Some(l2.dgamma);
        grads[NORM2_B] = Some(l2.dbeta);
        let mut dr1 = dblock;
        dr1.add_inplace(&l2.dx);
        let ga = multi_head_attention_backward(&a.attn, &attn_p, &as_tokens(dr1.clone(), bsz, t, d)?)?;
        let l1 = layer_norm_backward(&a.ln1, model.tensor(NORM1_G), &as_rows(ga.dx.clone(), d)?)?;
        grads[NORM1_G] = Some(l1.dgamma);
        grads[NORM1_B] = Some(l1.dbeta);
        store_attention(&mut grads, ga);
        let mut dx = dr1;
        dx.add_inplace(&l1.dx);
        dx
    } else {
        // n1 = LN1(x + MHA(x)); out = LN2(n1 + MLP(n1))
        let l2 = layer_norm_backward(&a.ln2, model.tensor(NORM2_G), &dblock)?;
        grads[NORM2_G] = Some(l2.dgamma);
        grads[NORM2_B] = Some(l2.dbeta);
        let mut dn1 = mlp_backward(model, &a.mlp, &l2.dx, &mut grads)?;
        dn1.add_inplace(&l2.dx);
        let l1 = layer_norm_backward(&a.ln1, model.tensor(NORM1_G), &dn1)?;
        grads[NORM1_G] = Some(l1.dgamma);
        grads[NORM1_B] = Some(l1.dbeta);
        let ga = multi_head_attention_backward(&a.attn, &attn_p, &as_tokens(l1.dx.clone(), bsz, t, d)?)?;
        let mut dx = l1.dx;
        dx.add_inplace(&as_rows(ga.dx.clone(), d)?);
        store_attention(&mut grads, ga);
        dx
    };

    let mut dpos = vec![0.0; t * d];
    for rows in dtokens.data().chunks_exact(t * d) {
        dpos.iter_mut().zip(rows).for_each(|(acc, g)| *acc += g);
    }
    grads[POS] = Some(Tensor::new(vec![t, d], dpos)?);
    let ge = linear_backward(&a.patches, model.tensor(EMBED_W), &dtokens)?;
    grads[EMBED_W] = Some(ge.dw);
    grads[EMBED_B] = Some(ge.db);

    let grads = grads.into_iter().map(|g| g.expect("every parameter receives a gradient")).collect();
    Ok((loss, grads))
}

fn store_attention(grads: &mut [Option<Tensor>], g: crate::nn::AttentionGrads) {
    grads[WQ] = Some(g.dwq);
    grads[WQ + 1] = Some(g.dbq);
    grads[WQ + 2] = Some(g.dwk);
    grads[WQ + 3] = Some(g.dbk);
    grads[WQ + 4] = Some(g.dwv);
    grads[WQ + 5] = Some(g.dbv);
    grads[WQ + 6] = Some(g.dwo);
    grads[WQ + 7] = Some(g.dbo);
}
