//! The three architecture families as trainable models with named,
//! analyzable parameter groups.

mod cnn;
mod dnn;
mod spec;
mod vit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{normal_init, softmax, softmax_cross_entropy, Differentiable, NnError, RngState, Tensor};

pub use spec::{Family, InitSpec, ModelSpec, CIFAR_SHAPE, DEFAULT_D_MODEL, DEFAULT_PATCH_GRID, MNIST_SHAPE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown weight group `{0}`")]
    UnknownGroup(String),
    #[error("parameter `{name}`: {detail}")]
    BadParameter { name: String, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// How a parameter tensor is laid out, which decides how it is analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// `[in, out]` matrix; each output column is a node.
    Linear,
    /// `[Cout, Cin, 3, 3]`; each kernel is a node.
    ConvKernel,
    /// Layer-norm scale; each entry is a node.
    NormScale,
    Bias,
    NormShift,
    Position,
}

impl ParamKind {
    /// Whether the tensor counts as a "weight" for statistics.
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::Linear | ParamKind::ConvKernel | ParamKind::NormScale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    /// Owning group (`ip_fc1`, `conv1`, `attn`, ...).
    pub group: &'static str,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// A named slice of a model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGroup {
    pub name: String,
    /// Display label (`I/P-FC1`, `Whole Net`, ...).
    pub label: String,
    pub values: Vec<f64>,
}

/// Static description of one weight group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupDef {
    pub name: &'static str,
    pub label: &'static str,
    /// Member parameter groups; empty means "every weight in the model".
    pub members: &'static [&'static str],
}

const DNN_GROUPS: &[GroupDef] = &[
    GroupDef { name: "ip_fc1", label: "I/P-FC1", members: &["ip_fc1"] },
    GroupDef { name: "fc1_fc2", label: "FC1-FC2", members: &["fc1_fc2"] },
    GroupDef { name: "fc2_op", label: "FC2-O/P", members: &["fc2_op"] },
    GroupDef { name: "whole_net", label: "Whole Net", members: &[] },
];

const CNN_GROUPS: &[GroupDef] = &[
    GroupDef { name: "conv1", label: "Conv1", members: &["conv1"] },
    GroupDef { name: "fc", label: "FC", members: &["fc"] },
    GroupDef { name: "all", label: "All", members: &[] },
];

const VIT_GROUPS: &[GroupDef] = &[
    GroupDef { name: "embed", label: "Embed", members: &["embed"] },
    GroupDef { name: "attn", label: "Attn", members: &["attn"] },
    GroupDef { name: "mlp", label: "MLP", members: &["mlp"] },
    GroupDef { name: "norm", label: "Norm", members: &["norm"] },
    GroupDef { name: "head", label: "Head", members: &["head"] },
    GroupDef { name: "all", label: "All", members: &[] },
];

/// Groups drawn as figure panels, in column order.
const DNN_PANELS: &[&str] = &["ip_fc1", "fc1_fc2", "fc2_op", "whole_net"];
const CNN_PANELS: &[&str] = &["conv1", "fc", "all"];
const VIT_PANELS: &[&str] = &["attn", "mlp", "norm", "all"];

impl Family {
    pub fn group_defs(self) -> &'static [GroupDef] {
        match self {
            Family::Dnn => DNN_GROUPS,
            Family::Cnn => CNN_GROUPS,
            Family::Vit => VIT_GROUPS,
        }
    }

    pub fn panel_groups(self) -> &'static [&'static str] {
        match self {
            Family::Dnn => DNN_PANELS,
            Family::Cnn => CNN_PANELS,
            Family::Vit => VIT_PANELS,
        }
    }

    /// Name of the whole-model group.
    pub fn whole_group(self) -> &'static str {
        match self {
            Family::Dnn => "whole_net",
            Family::Cnn | Family::Vit => "all",
        }
    }

    /// Name of the group feeding the decision layer.
    pub fn output_group(self) -> &'static str {
        match self {
            Family::Dnn => "fc2_op",
            Family::Cnn => "fc",
            Family::Vit => "head",
        }
    }

    pub fn group_def(self, name: &str) -> Option<&'static GroupDef> {
        self.group_defs().iter().find(|g| g.name == name)
    }
}

/// Images `[B, C, H, W]` with their class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
}

/// (name, group, kind, shape, init) for one parameter.
pub(crate) struct ParamDef {
    pub name: &'static str,
    pub group: &'static str,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

impl ParamDef {
    pub fn new(name: &'static str, group: &'static str, kind: ParamKind, shape: Vec<usize>) -> Self {
        Self { name, group, kind, shape }
    }
}

impl Model {
    /// Builds and initializes a model. Weight-like tensors (matrices, kernels,
    /// positional embeddings) are drawn from the spec's normal distribution in
    /// declaration order; biases and norm shifts start at 0, norm scales at 1.
    pub fn build(spec: &ModelSpec, strict: bool, rng: &mut RngState) -> Result<Self, ModelError> {
        spec.validate(strict)?;
        let init = spec.init();
        let params = Self::layout(spec)
            .into_iter()
            .map(|d| {
                let tensor = match d.kind {
                    ParamKind::Linear | ParamKind::ConvKernel | ParamKind::Position => {
                        normal_init(&d.shape, init.mean, init.std, rng)?
                    }
                    ParamKind::NormScale => Tensor::filled(&d.shape, 1.0),
                    ParamKind::Bias | ParamKind::NormShift => Tensor::zeros(&d.shape),
                };
                Ok(Param { name: d.name.to_string(), group: d.group, kind: d.kind, tensor })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self { spec: spec.clone(), params })
    }

    /// Reassembles a model from named tensors (e.g. a checkpoint). Every
    /// parameter of the spec's layout must be present with the right shape.
    pub fn from_tensors(spec: &ModelSpec, mut tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        spec.validate(false)?;
        let layout = Self::layout(spec);
        if tensors.len() != layout.len() {
            return Err(ModelError::InvalidSpec(format!("expected {} parameters, found {}", layout.len(), tensors.len())));
        }
        let mut params = Vec::with_capacity(layout.len());
        for d in layout {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == d.name)
                .ok_or_else(|| ModelError::BadParameter { name: d.name.into(), detail: "missing".into() })?;
            let (_, tensor) = tensors.swap_remove(pos);
            if tensor.shape() != d.shape.as_slice() {
                return Err(ModelError::BadParameter {
                    name: d.name.into(),
                    detail: format!("shape {:?}, expected {:?}", tensor.shape(), d.shape),
                });
            }
            params.push(Param { name: d.name.to_string(), group: d.group, kind: d.kind, tensor });
        }
        Ok(Self { spec: spec.clone(), params })
    }

    fn layout(spec: &ModelSpec) -> Vec<ParamDef> {
        match spec.family {
            Family::Dnn => dnn::layout(spec),
            Family::Cnn => cnn::layout(spec),
            Family::Vit => vit::layout(spec),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub(crate) fn tensor(&self, index: usize) -> &Tensor {
        &self.params[index].tensor
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let expected = self.spec.input_shape;
        if x.ndim() != 4 || x.shape()[1..] != expected {
            return Err(NnError::ShapeMismatch {
                op: "model input",
                detail: format!("expected [B, {}, {}, {}], got {:?}", expected[0], expected[1], expected[2], x.shape()),
            }
            .into());
        }
        Ok(())
    }

    /// Logits `[B, classes]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        match self.spec.family {
            Family::Dnn => dnn::forward(self, x),
            Family::Cnn => cnn::forward(self, x),
            Family::Vit => vit::forward(self, x),
        }
    }

    /// Softmax probabilities `[B, classes]`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(softmax(&self.forward(x)?)?)
    }

    /// Mean cross-entropy and gradients in parameter order.
    pub fn backward(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>), ModelError> {
        self.check_input(&batch.x)?;
        match self.spec.family {
            Family::Dnn => dnn::backward(self, batch),
            Family::Cnn => cnn::backward(self, batch),
            Family::Vit => vit::backward(self, batch),
        }
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let logits = self.forward(&batch.x)?;
        Ok(softmax_cross_entropy(&logits, &batch.labels)?.0)
    }

    /// Parameters belonging to group `name`, in model order.
    pub fn group_params(&self, name: &str) -> Result<Vec<&Param>, ModelError> {
        let def = self.spec.family.group_def(name).ok_or_else(|| ModelError::UnknownGroup(name.to_string()))?;
        Ok(self
            .params
            .iter()
            .filter(|p| p.kind.is_weight() && (def.members.is_empty() || def.members.contains(&p.group)))
            .collect())
    }

    /// Flattened weights of one group.
    pub fn weight_group(&self, name: &str) -> Result<WeightGroup, ModelError> {
        let def = self.spec.family.group_def(name).ok_or_else(|| ModelError::UnknownGroup(name.to_string()))?;
        let values = self.group_params(name)?.iter().flat_map(|p| p.tensor.data().iter().copied()).collect();
        Ok(WeightGroup { name: def.name.to_string(), label: def.label.to_string(), values })
    }

    /// Every group of the family, the whole-model group last. Biases, norm
    /// shifts and positional embeddings are excluded.
    pub fn weight_groups(&self) -> Vec<WeightGroup> {
        self.spec
            .family
            .group_defs()
            .iter()
            .map(|d| self.weight_group(d.name).expect("static group definitions are valid"))
            .collect()
    }
}

impl Differentiable for Model {
    type Batch = Batch;

    fn parameters(&self) -> Vec<&Tensor> {
        self.params.iter().map(|p| &p.tensor).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor).collect()
    }

    fn loss(&self, batch: &Batch) -> Result<f64, NnError> {
        Model::loss(self, batch).map_err(into_nn)
    }

    fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>), NnError> {
        self.backward(batch).map_err(into_nn)
    }
}

fn into_nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(inner) => inner,
        other => NnError::InvalidArgument(other.to_string()),
    }
}

/// Flattens `[B, C, H, W]` into `[B, C*H*W]`.
pub(crate) fn flatten(x: &Tensor) -> Result<Tensor, NnError> {
    let b = x.dim(0);
    let rest = x.len() / b;
    x.clone().reshape(&[b, rest])
}
