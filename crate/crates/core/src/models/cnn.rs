//! input → Conv1 (3×3, C kernels) → relu → flatten (or global average pool) → FC → softmax

use super::{flatten, Batch, Model, ModelError, ModelSpec, ParamDef, ParamKind};
use crate::nn::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu, relu_backward, softmax_cross_entropy, Tensor,
    KERNEL,
};

fn fc_inputs(spec: &ModelSpec) -> usize {
    let (oh, ow) = spec.conv_output_hw();
    if spec.global_avg_pool {
        spec.channels()
    } else {
        spec.channels() * oh * ow
    }
}

pub(super) fn layout(spec: &ModelSpec) -> Vec<ParamDef> {
    let c = spec.channels();
    vec![
        ParamDef::new("conv1.weight", "conv1", ParamKind::ConvKernel, vec![c, spec.input_shape[0], KERNEL, KERNEL]),
        ParamDef::new("conv1.bias", "conv1", ParamKind::Bias, vec![c]),
        ParamDef::new("fc.weight", "fc", ParamKind::Linear, vec![fc_inputs(spec), spec.classes]),
        ParamDef::new("fc.bias", "fc", ParamKind::Bias, vec![spec.classes]),
    ]
}

struct Activations {
    conv: Tensor,
    features: Tensor,
    logits: Tensor,
}

fn pool(act: &Tensor) -> Result<Tensor, ModelError> {
    let (b, c) = (act.dim(0), act.dim(1));
    let plane = act.dim(2) * act.dim(3);
    let data = act.data().chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Ok(Tensor::new(vec![b, c], data)?)
}

fn unpool(dpooled: &Tensor, shape: &[usize]) -> Result<Tensor, ModelError> {
    let plane = shape[2] * shape[3];
    let mut out = Vec::with_capacity(shape.iter().product());
    for &g in dpooled.data() {
        out.extend(std::iter::repeat(g / plane as f64).take(plane));
    }
    Ok(Tensor::new(shape.to_vec(), out)?)
}

fn run(model: &Model, x: &Tensor) -> Result<Activations, ModelError> {
    let conv = conv2d_forward(x, model.tensor(0), model.tensor(1))?;
    let act = relu(&conv);
    let features = if model.spec().global_avg_pool { pool(&act)? } else { flatten(&act)? };
    let logits = linear_forward(&features, model.tensor(2), model.tensor(3))?;
    Ok(Activations { conv, features, logits })
}

pub(super) fn forward(model: &Model, x: &Tensor) -> Result<Tensor, ModelError> {
    Ok(run(model, x)?.logits)
}

pub(super) fn backward(model: &Model, batch: &Batch) -> Result<(f64, Vec<Tensor>), ModelError> {
    let a = run(model, &batch.x)?;
    let (loss, dlogits) = softmax_cross_entropy(&a.logits, &batch.labels)?;
    let gfc = linear_backward(&a.features, model.tensor(2), &dlogits)?;
    let dact = if model.spec().global_avg_pool {
        unpool(&gfc.dx, a.conv.shape())?
    } else {
        gfc.dx.reshape(a.conv.shape())?
    };
    let dconv = relu_backward(&a.conv, &dact)?;
    let gconv = conv2d_backward(&batch.x, model.tensor(0), &dconv, false)?;
    Ok((loss, vec![gconv.dk, gconv.db, gfc.dw, gfc.db]))
}
