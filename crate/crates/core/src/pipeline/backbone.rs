use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::core_model::{ImagePlane, LatentGrid};
use crate::error::Result;
use crate::guidance::LayerWeights;
use crate::integrator::PromptFeature;

/// Operations a backbone can perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub encode: bool,
    pub decode: bool,
    pub denoise_step: bool,
    pub invert_step: bool,
    pub text_features: bool,
    pub image_features: bool,
    /// Generation conditioned only on an image prompt.
    pub image_prompt_generation: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        encode: true,
        decode: true,
        denoise_step: true,
        invert_step: true,
        text_features: true,
        image_features: true,
        image_prompt_generation: true,
    };
}

/// Shape constants of a backbone family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneProfile {
    pub name: String,
    pub scale_factor: usize,
    pub latent_channels: usize,
    pub image_tokens: usize,
    pub text_tokens: usize,
    pub token_dim: usize,
    /// Longest image edge after resizing.
    pub target_edge: usize,
    /// Both image dims are rounded to multiples of this.
    pub size_multiple: usize,
    pub schedule: ScheduleConfig,
    /// Latent size used for image-prompt-only generation.
    pub preview_latent: (usize, usize),
}

impl BackboneProfile {
    pub fn sdxl() -> Self {
        Self {
            name: "sdxl".into(),
            scale_factor: 8,
            latent_channels: 4,
            image_tokens: 4,
            text_tokens: 77,
            token_dim: 2048,
            target_edge: 1024,
            size_multiple: 64,
            schedule: ScheduleConfig::default(),
            preview_latent: (128, 128),
        }
    }

    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            scale_factor: 8,
            latent_channels: 3 * 8 * 8,
            image_tokens: 4,
            text_tokens: 4,
            token_dim: 64,
            target_edge: 128,
            size_multiple: 16,
            schedule: ScheduleConfig::default(),
            preview_latent: (8, 8),
        }
    }
}

/// Position of one denoiser call on the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    /// 1-based index within its phase.
    pub index: usize,
    pub t_from: usize,
    pub t_to: usize,
    pub seed: u64,
}

/// One cross-attention site inside a denoiser call.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionSite<'a> {
    pub layer: usize,
    pub height: usize,
    pub width: usize,
    pub weights: LayerWeights<'a>,
}

/// Receives the query features at every cross-attention site of a
/// denoiser call and may rewrite them in place.
pub trait AttentionHook {
    fn cross_attention(&mut self, site: &CrossAttentionSite<'_>, z: &mut Array2<f32>) -> Result<()>;
}

/// Leaves every site untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl AttentionHook for NoHook {
    fn cross_attention(&mut self, _site: &CrossAttentionSite<'_>, _z: &mut Array2<f32>) -> Result<()> {
        Ok(())
    }
}

/// Diffusion backbone contract: autoencoder, feature encoders and
/// single-step sampler moves.
pub trait Backbone: Send {
    fn profile(&self) -> &BackboneProfile;
    fn capabilities(&self) -> Capabilities;
    fn schedule(&self) -> &NoiseSchedule;

    fn encode(&mut self, img: &ImagePlane) -> Result<LatentGrid>;
    fn decode(&mut self, z: &LatentGrid) -> Result<ImagePlane>;

    /// Adapter image tokens (`image_tokens × token_dim`).
    fn image_features(&mut self, img: &ImagePlane) -> Result<PromptFeature>;
    /// Text tokens (`text_tokens × token_dim`).
    fn text_features(&mut self, prompt: &str) -> Result<PromptFeature>;
    /// Reserved conditioning used during inversion and reconstruction.
    fn inversion_prompt(&self) -> PromptFeature;

    /// Moves `z` from `t_from` to the noisier `t_to`.
    fn invert_step(&mut self, z: &LatentGrid, step: &StepContext, cond: &PromptFeature) -> Result<LatentGrid>;
    /// Moves `z` from `t_from` to the cleaner `t_to`, calling `hook` at each
    /// cross-attention site.
    fn denoise_step(
        &mut self,
        z: &LatentGrid,
        step: &StepContext,
        cond: &PromptFeature,
        hook: &mut dyn AttentionHook,
    ) -> Result<LatentGrid>;

    /// Closed-form `q(z_t | z_0)` sample; no denoiser call.
    fn forward_noise(&self, z0: &LatentGrid, t: usize, seed: u64) -> Result<LatentGrid>;
}
