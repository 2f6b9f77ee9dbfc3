use crate::error::{Error, Result};

/// Ablation switches. All `true` except `full_diffusion` is the default
/// pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Inject the integrated image feature through rectified cross-attention.
    pub use_image_clip: bool,
    /// Apply latent AdaIN when building the initial blend.
    pub use_init_blend: bool,
    /// Start from an inverted latent; otherwise forward-noise the blend.
    pub use_inversion: bool,
    /// Run the full step grid instead of the fewer-step schedule.
    pub full_diffusion: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_image_clip: true,
            use_init_blend: true,
            use_inversion: true,
            full_diffusion: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub steps_invert: usize,
    pub steps_denoise: usize,
    /// Guidance (cross-attention injection and AdaIN) is active in the first
    /// `inject_steps` reconstruction steps.
    pub inject_steps: usize,
    pub lambda_init: f32,
    pub lambda_diffusion: f32,
    pub dilation_radius_px: i64,
    pub seed: u64,
    /// Extract the content feature from the foreground cut out on white.
    pub content_on_white: bool,
    #[serde(flatten)]
    pub ablation: AblationFlags,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps_invert: 10,
            steps_denoise: 10,
            inject_steps: 5,
            lambda_init: 1.0,
            lambda_diffusion: 0.1,
            dilation_radius_px: 15,
            seed: 0,
            content_on_white: true,
            ablation: AblationFlags::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_invert == 0 || self.steps_denoise == 0 {
            return Err(Error::invalid("step counts must be at least 1"));
        }
        if self.inject_steps > self.steps_denoise {
            return Err(Error::invalid(format!(
                "inject_steps {} exceeds steps_denoise {}",
                self.inject_steps, self.steps_denoise
            )));
        }
        for (name, v) in [
            ("lambda_init", self.lambda_init),
            ("lambda_diffusion", self.lambda_diffusion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.dilation_radius_px < 0 {
            return Err(Error::invalid("dilation radius must be non-negative"));
        }
        Ok(())
    }
}
