use serde_json::json;

use crate::core_model::{ImagePlane, MaskKind, MaskPlane, PipelineConfig, Placement};
use crate::error::{Error, Result};
use crate::integrator::{model_to_bytes, IntegratorModel, MlpProfile};
use crate::util::sha256_hex;

use super::backbone::BackboneProfile;

/// Zero-output integrator sized for `profile`; integration then reduces
/// to `f_c + f_s`.
pub fn fallback_integrator(profile: &BackboneProfile) -> Result<IntegratorModel> {
    Ok(IntegratorModel::zeros(MlpProfile::for_shape(profile.image_tokens, profile.token_dim)?))
}

/// A complete composition request.
#[derive(Debug, Clone)]
pub struct CompositionJob {
    pub bg: ImagePlane,
    pub fg: ImagePlane,
    pub fg_mask: MaskPlane,
    /// Rectangular target region in the background frame.
    pub bg_box: Option<MaskPlane>,
    /// Foreground placement in the original background frame.
    pub placement: Placement,
    pub prompt: Option<String>,
    pub cfg: PipelineConfig,
}

impl CompositionJob {
    pub fn new(bg: ImagePlane, fg: ImagePlane, fg_mask: MaskPlane, placement: Placement) -> Self {
        Self {
            bg,
            fg,
            fg_mask,
            bg_box: None,
            placement,
            prompt: None,
            cfg: PipelineConfig::default(),
        }
    }

    pub fn with_cfg(mut self, cfg: PipelineConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(prompt.into());
        self
    }

    pub fn with_bg_box(mut self, bg_box: MaskPlane) -> Self {
        self.bg_box = Some(bg_box);
        self
    }

    /// Same job with foreground and background exchanged. The old background
    /// becomes the foreground under a full mask, scaled to fit the old
    /// foreground frame.
    pub fn swapped(&self) -> Result<CompositionJob> {
        let (fh, fw) = self.fg.dims();
        let mask = MaskPlane::full(self.bg.height(), self.bg.width(), MaskKind::FgObject);
        let scale = (fw as f64 / self.bg.width() as f64).min(fh as f64 / self.bg.height() as f64);
        let placement = Placement::new(0, 0, scale.min(1.0));
        Ok(CompositionJob {
            bg: self.fg.clone(),
            fg: self.bg.clone(),
            fg_mask: mask,
            bg_box: None,
            placement,
            prompt: self.prompt.clone(),
            cfg: self.cfg.clone(),
        })
    }

    /// Checks configuration, mask pairing and placement.
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.fg_mask.dims() != self.fg.dims() {
            return Err(Error::invalid(format!(
                "foreground mask {:?} does not match foreground {:?}",
                self.fg_mask.dims(),
                self.fg.dims()
            )));
        }
        if let Some(b) = &self.bg_box {
            if b.dims() != self.bg.dims() {
                return Err(Error::invalid("background box does not match background"));
            }
            if b.kind() != MaskKind::BgBox {
                return Err(Error::invalid("background box mask must be of kind bg_box"));
            }
        }
        self.placement.footprint(self.fg.dims(), self.bg.dims())?;
        if let Some(p) = &self.prompt {
            if p.trim().is_empty() {
                return Err(Error::invalid("prompt is empty; omit it for the no-prompt mode"));
            }
        }
        Ok(())
    }

    /// SHA-256 over canonical JSON of everything that affects the output.
    pub fn config_hash(&self, profile: &BackboneProfile, model: &IntegratorModel) -> Result<String> {
        self.config_hash_with(profile, &sha256_hex(&model_to_bytes(model)?))
    }

    /// [`CompositionJob::config_hash`] with a precomputed model digest.
    pub fn config_hash_with(&self, profile: &BackboneProfile, model_hash: &str) -> Result<String> {
        let img = |i: &ImagePlane| sha256_hex(&i.pixels().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>());
        let mask = |m: &MaskPlane| sha256_hex(&m.bits().iter().map(|b| *b as u8).collect::<Vec<_>>());
        let doc = json!({
            "backbone": profile,
            "cfg": self.cfg,
            "placement": self.placement,
            "prompt": self.prompt,
            "bg": img(&self.bg),
            "fg": img(&self.fg),
            "fg_mask": mask(&self.fg_mask),
            "bg_box": self.bg_box.as_ref().map(mask),
            "model": model_hash,
        });
        Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
    }
}
