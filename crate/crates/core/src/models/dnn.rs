//! input → FC1 → relu → FC2 → relu → FC3 → softmax

use super::{flatten, Batch, Model, ModelError, ModelSpec, ParamDef, ParamKind};
use crate::nn::{linear_backward, linear_forward, relu, relu_backward, softmax_cross_entropy, Tensor};

pub(super) fn layout(spec: &ModelSpec) -> Vec<ParamDef> {
    let [h1, h2] = spec.hidden();
    let (inp, out) = (spec.input_len(), spec.classes);
    vec![
        ParamDef::new("ip_fc1.weight", "ip_fc1", ParamKind::Linear, vec![inp, h1]),
        ParamDef::new("ip_fc1.bias", "ip_fc1", ParamKind::Bias, vec![h1]),
        ParamDef::new("fc1_fc2.weight", "fc1_fc2", ParamKind::Linear, vec![h1, h2]),
        ParamDef::new("fc1_fc2.bias", "fc1_fc2", ParamKind::Bias, vec![h2]),
        ParamDef::new("fc2_op.weight", "fc2_op", ParamKind::Linear, vec![h2, out]),
        ParamDef::new("fc2_op.bias", "fc2_op", ParamKind::Bias, vec![out]),
    ]
}

struct Activations {
    input: Tensor,
    pre1: Tensor,
    act1: Tensor,
    pre2: Tensor,
    act2: Tensor,
    logits: Tensor,
}

fn run(model: &Model, x: &Tensor) -> Result<Activations, ModelError> {
    let input = flatten(x)?;
    let pre1 = linear_forward(&input, model.tensor(0), model.tensor(1))?;
    let act1 = relu(&pre1);
    let pre2 = linear_forward(&act1, model.tensor(2), model.tensor(3))?;
    let act2 = relu(&pre2);
    let logits = linear_forward(&act2, model.tensor(4), model.tensor(5))?;
    Ok(Activations { input, pre1, act1, pre2, act2, logits })
}

pub(super) fn forward(model: &Model, x: &Tensor) -> Result<Tensor, ModelError> {
    Ok(run(model, x)?.logits)
}

pub(super) fn backward(model: &Model, batch: &Batch) -> Result<(f64, Vec<Tensor>), ModelError> {
    let a = run(model, &batch.x)?;
    let (loss, dlogits) = softmax_cross_entropy(&a.logits, &batch.labels)?;
    let g3 = linear_backward(&a.act2, model.tensor(4), &dlogits)?;
    let dpre2 = relu_backward(&a.pre2, &g3.dx)?;
    let g2 = linear_backward(&a.act1, model.tensor(2), &dpre2)?;
    let dpre1 = relu_backward(&a.pre1, &g2.dx)?;
    let g1 = linear_backward(&a.input, model.tensor(0), &dpre1)?;
    Ok((loss, vec![g1.dw, g1.db, g2.dw, g2.db, g3.dw, g3.db]))
}
