use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::feature::{add_sub, FeatureSource, PromptFeature};
use super::train::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Gelu,
}

impl Activation {
    pub(crate) fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Gelu => {
                let c = (2.0f32 / std::f32::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }

    pub(crate) fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Gelu => {
                let c = (2.0f32 / std::f32::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }
}

/// What the network regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorVariant {
    /// `F ≈ f_c + f_s − f_l`; inference uses `f_c + f_s − F`.
    #[default]
    Residual,
    /// `F ≈ f_l`; inference uses `F`.
    Direct,
}

/// Token shape and hidden width of the three-layer network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpProfile {
    pub tokens: usize,
    pub dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl MlpProfile {
    /// 4 adapter tokens of width 2048; 25,453,327 parameters.
    pub const SDXL: MlpProfile = MlpProfile {
        tokens: 4,
        dim: 2048,
        hidden: 995,
        activation: Activation::Silu,
    };

    /// Matches the toy backbone's 4×64 tokens.
    pub const TOY: MlpProfile = MlpProfile {
        tokens: 4,
        dim: 64,
        hidden: 512,
        activation: Activation::Silu,
    };

    pub fn new(tokens: usize, dim: usize, hidden: usize, activation: Activation) -> Result<Self> {
        if tokens == 0 || dim == 0 || hidden == 0 {
            return Err(Error::invalid("profile widths must be positive"));
        }
        Ok(Self {
            tokens,
            dim,
            hidden,
            activation,
        })
    }

    /// Standard profile for `tokens × dim` features: [`MlpProfile::SDXL`]
    /// for 4×2048, otherwise 512 hidden units.
    pub fn for_shape(tokens: usize, dim: usize) -> Result<Self> {
        if (tokens, dim) == (Self::SDXL.tokens, Self::SDXL.dim) {
            return Ok(Self::SDXL);
        }
        Self::new(tokens, dim, Self::TOY.hidden, Activation::Silu)
    }

    pub fn input_width(&self) -> usize {
        2 * self.tokens * self.dim
    }

    pub fn output_width(&self) -> usize {
        self.tokens * self.dim
    }

    pub fn layer_shapes(&self) -> [(usize, usize); 3] {
        [
            (self.input_width(), self.hidden),
            (self.hidden, self.hidden),
            (self.hidden, self.output_width()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// One affine map `x W + b`, with `W: in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform in `±1/√fan_in` for weights and bias.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f32).sqrt();
        Self {
            weight: Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_fn(output, |_| rng.random_range(-bound..=bound)),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub optimizer_steps: usize,
    pub train_triplets: usize,
    pub val_triplets: usize,
    pub data_hash: String,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

/// Layout identifier stored with every model.
pub const FLATTEN_LAYOUT: &str = "row_major_concat_content_style";

/// Three affine layers with activations between them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorModel {
    pub profile: MlpProfile,
    pub variant: IntegratorVariant,
    pub layers: [Linear; 3],
    pub meta: Option<TrainingMeta>,
}

impl IntegratorModel {
    /// All-zero weights: forward is identically zero.
    pub fn zeros(profile: MlpProfile) -> Self {
        let [a, b, c] = profile.layer_shapes();
        Self {
            profile,
            variant: IntegratorVariant::Residual,
            layers: [Linear::zeros(a.0, a.1), Linear::zeros(b.0, b.1), Linear::zeros(c.0, c.1)],
            meta: None,
        }
    }

    pub fn init(profile: MlpProfile, variant: IntegratorVariant, seed: u64) -> Self {
        let mut rng = crate::util::seeded_rng(seed, "mlp-init");
        let [a, b, c] = profile.layer_shapes();
        Self {
            profile,
            variant,
            layers: [
                Linear::init(a.0, a.1, &mut rng),
                Linear::init(b.0, b.1, &mut rng),
                Linear::init(c.0, c.1, &mut rng),
            ],
            meta: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Batched forward on rows of concatenated inputs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.profile.input_width() {
            return Err(Error::invalid(format!(
                "input width {} does not match model input {}",
                x.ncols(),
                self.profile.input_width()
            )));
        }
        let act = self.profile.activation;
        let h1 = self.layers[0].forward(x).mapv(|v| act.apply(v));
        let h2 = self.layers[1].forward(h1.view()).mapv(|v| act.apply(v));
        Ok(self.layers[2].forward(h2.view()))
    }

    pub(crate) fn input_row(&self, f_c: &PromptFeature, f_s: &PromptFeature) -> Result<Array2<f32>> {
        let want = (self.profile.tokens, self.profile.dim);
        for (name, f) in [("content", f_c), ("style", f_s)] {
            if f.shape() != want {
                return Err(Error::invalid(format!(
                    "{name} feature is {:?}, model expects {want:?}",
                    f.shape()
                )));
            }
        }
        let mut row = f_c.flatten();
        row.extend(f_s.flatten());
        Ok(Array2::from_shape_vec((1, row.len()), row).expect("row shape"))
    }
}

/// Raw network output `F(f_c, f_s)` reshaped to `T×D`.
pub fn mlp_forward(model: &IntegratorModel, f_c: &PromptFeature, f_s: &PromptFeature) -> Result<PromptFeature> {
    let x = model.input_row(f_c, f_s)?;
    let y = model.forward_batch(x.view())?;
    let y = y.index_axis_move(Axis(0), 0);
    PromptFeature::from_flat(
        y.as_slice().expect("contiguous"),
        model.profile.tokens,
        model.profile.dim,
        FeatureSource::Integrated,
    )
}

/// Integrated image prompt. Residual models return `f_c + f_s − F`, direct
/// models return `F`.
pub fn integrate_features(model: &IntegratorModel, f_c: &PromptFeature, f_s: &PromptFeature) -> Result<PromptFeature> {
    let out = mlp_forward(model, f_c, f_s)?;
    match model.variant {
        IntegratorVariant::Residual => add_sub(f_c, f_s, &out, FeatureSource::Integrated),
        IntegratorVariant::Direct => Ok(out),
    }
}
