use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dnn,
    Cnn,
    Vit,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dnn => "dnn",
            Family::Cnn => "cnn",
            Family::Vit => "vit",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normal initialization of weight matrices; biases start at zero, layer-norm
/// scales at one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mean: f64,
    pub std: f64,
}

/// Architecture description. Fields not used by `family` must be absent.
///
/// ```toml
/// family = "dnn"
/// input_shape = [1, 28, 28]
/// hidden = [100, 100]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    /// `[channels, height, width]` of one input image.
    pub input_shape: [usize; 3],
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Defaults to N(0, 0.05²) for DNN/CNN and N(0, 0.02²) for ViT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,

    /// DNN: sizes of the two hidden layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<[usize; 2]>,

    /// CNN: number of 3×3 kernels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// CNN: global average pooling before the FC layer instead of flattening.
    #[serde(default, skip_serializing_if = "is_false")]
    pub global_avg_pool: bool,

    /// ViT: model width (default 784).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nhead: Option<usize>,
    /// ViT: encoder blocks; only 1 is supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_layers: Option<usize>,
    /// ViT: images are cut into a `patch_grid × patch_grid` grid of tokens (default 4).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_grid: Option<usize>,
    /// ViT: pre-norm block order instead of the default post-norm.
    #[serde(default, skip_serializing_if = "is_false")]
    pub pre_norm: bool,
}

fn default_classes() -> usize {
    10
}

fn is_false(b: &bool) -> bool {
    !*b
}

pub const DEFAULT_D_MODEL: usize = 784;
pub const DEFAULT_PATCH_GRID: usize = 4;
pub const MNIST_SHAPE: [usize; 3] = [1, 28, 28];
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];

impl ModelSpec {
    fn base(family: Family, input_shape: [usize; 3]) -> Self {
        Self {
            family,
            input_shape,
            classes: 10,
            init: None,
            hidden: None,
            channels: None,
            global_avg_pool: false,
            d_model: None,
            nhead: None,
            encoder_layers: None,
            patch_grid: None,
            pre_norm: false,
        }
    }

    pub fn dnn(input_shape: [usize; 3], h1: usize, h2: usize) -> Self {
        Self { hidden: Some([h1, h2]), ..Self::base(Family::Dnn, input_shape) }
    }

    pub fn cnn(input_shape: [usize; 3], channels: usize) -> Self {
        Self { channels: Some(channels), ..Self::base(Family::Cnn, input_shape) }
    }

    pub fn vit(input_shape: [usize; 3], nhead: usize) -> Self {
        Self { nhead: Some(nhead), ..Self::base(Family::Vit, input_shape) }
    }

    pub fn with_init(mut self, mean: f64, std: f64) -> Self {
        self.init = Some(InitSpec { mean, std });
        self
    }

    /// Fills every defaulted field so the spec serializes fully resolved.
    pub fn resolved(mut self) -> Self {
        self.init = Some(self.init());
        if self.family == Family::Vit {
            self.d_model = Some(self.d_model());
            self.encoder_layers = Some(self.encoder_layers.unwrap_or(1));
            self.patch_grid = Some(self.patch_grid());
        }
        self
    }

    pub fn init(&self) -> InitSpec {
        self.init.unwrap_or(match self.family {
            Family::Dnn | Family::Cnn => InitSpec { mean: 0.0, std: 0.05 },
            Family::Vit => InitSpec { mean: 0.0, std: 0.02 },
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.hidden.unwrap_or([0, 0])
    }

    pub fn channels(&self) -> usize {
        self.channels.unwrap_or(0)
    }

    pub fn d_model(&self) -> usize {
        self.d_model.unwrap_or(DEFAULT_D_MODEL)
    }

    pub fn nhead(&self) -> usize {
        self.nhead.unwrap_or(0)
    }

    pub fn patch_grid(&self) -> usize {
        self.patch_grid.unwrap_or(DEFAULT_PATCH_GRID)
    }

    /// ViT tokens per image.
    pub fn tokens(&self) -> usize {
        self.patch_grid() * self.patch_grid()
    }

    /// ViT values per patch: `C × (H/g) × (W/g)`.
    pub fn patch_dim(&self) -> usize {
        let g = self.patch_grid();
        self.input_shape[0] * (self.input_shape[1] / g) * (self.input_shape[2] / g)
    }

    /// ViT per-head width.
    pub fn head_dim(&self) -> usize {
        self.d_model() / self.nhead().max(1)
    }

    /// Spatial size of the convolution output.
    pub fn conv_output_hw(&self) -> (usize, usize) {
        (self.input_shape[1] - 2, self.input_shape[2] - 2)
    }

    /// Structural checks always applied; `strict` additionally enforces the
    /// published architecture grid (hidden 5–200 for 28×28 inputs, 5–1000 for
    /// 3×32×32; ViT d_model 784 and 2–16 heads).
    pub fn validate(&self, strict: bool) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.input_shape.iter().any(|&d| d == 0) {
            return bad(format!("input_shape {:?} has a zero dimension", self.input_shape));
        }
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        let init = self.init();
        if !(init.std >= 0.0) || !init.std.is_finite() || !init.mean.is_finite() {
            return bad(format!("init std must be finite and >= 0, got {}", init.std));
        }
        let present = |name: &str, set: bool| if set { Err(ModelError::InvalidSpec(format!("`{name}` does not apply to {}", self.family))) } else { Ok(()) };
        match self.family {
            Family::Dnn => {
                present("channels", self.channels.is_some())?;
                present("nhead", self.nhead.is_some())?;
                let Some([h1, h2]) = self.hidden else { return bad("dnn requires `hidden = [h1, h2]`".into()) };
                if h1 == 0 || h2 == 0 {
                    return bad(format!("hidden sizes must be positive, got ({h1}, {h2})"));
                }
                if strict {
                    let max = if self.input_shape == CIFAR_SHAPE { 1000 } else { 200 };
                    for h in [h1, h2] {
                        if !(5..=max).contains(&h) {
                            return bad(format!("hidden size {h} outside 5..={max} (strict mode)"));
                        }
                    }
                }
            }
            Family::Cnn => {
                present("hidden", self.hidden.is_some())?;
                present("nhead", self.nhead.is_some())?;
                let Some(c) = self.channels else { return bad("cnn requires `channels`".into()) };
                if c == 0 {
                    return bad("channels must be positive".into());
                }
                if self.input_shape[1] < 3 || self.input_shape[2] < 3 {
                    return bad("cnn input must be at least 3x3".into());
                }
            }
            Family::Vit => {
                present("hidden", self.hidden.is_some())?;
                present("channels", self.channels.is_some())?;
                let Some(nhead) = self.nhead else { return bad("vit requires `nhead`".into()) };
                let d = self.d_model();
                if nhead == 0 || d == 0 || d % nhead != 0 {
                    return bad(format!("d_model {d} is not divisible by nhead {nhead}"));
                }
                if self.encoder_layers.unwrap_or(1) != 1 {
                    return bad("only a single encoder block is supported".into());
                }
                let g = self.patch_grid();
                if g == 0 || self.input_shape[1] % g != 0 || self.input_shape[2] % g != 0 {
                    return bad(format!("patch_grid {g} does not divide input {:?}", self.input_shape));
                }
                if strict && (d != DEFAULT_D_MODEL || !(2..=16).contains(&nhead)) {
                    return bad(format!("strict mode needs d_model 784 and nhead in 2..=16, got {d}/{nhead}"));
                }
            }
        }
        Ok(())
    }
}
