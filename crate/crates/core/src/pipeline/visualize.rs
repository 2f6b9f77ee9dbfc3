use super::backbone::Backbone;
use super::run::{invert, reconstruct};
use super::trace::Trace;
use crate::core_model::{ImagePlane, MaskKind, MaskPlane};
use crate::error::{Error, Result};
use crate::guidance::{AttentionMaskField, GuidanceBundle};
use crate::integrator::PromptFeature;

/// Renders an image conditioned only on `f`.
///
/// A mid-grey canvas at the profile's preview size is inverted over the
/// full grid and reconstructed with `f` injected over the whole frame at
/// every step.
pub fn visualize_integrated_feature(f: &PromptFeature, backbone: &mut dyn Backbone, seed: u64) -> Result<ImagePlane> {
    if !backbone.capabilities().image_prompt_generation {
        return Err(Error::Capability("backbone cannot generate from an image prompt alone".into()));
    }
    let profile = backbone.profile().clone();
    if f.shape() != (profile.image_tokens, profile.token_dim) {
        return Err(Error::invalid(format!(
            "feature is {:?}, backbone expects {:?}",
            f.shape(),
            (profile.image_tokens, profile.token_dim)
        )));
    }
    let (lh, lw) = profile.preview_latent;
    let (h, w) = (lh * profile.scale_factor, lw * profile.scale_factor);
    let canvas = ImagePlane::filled(h, w, [0.5; 3])?;
    let z = backbone.encode(&canvas)?;
    let steps = profile.schedule.full_steps;
    let mut trace = Trace::new();
    let traj = invert(&z, steps, backbone, seed, &mut trace)?;
    let mut bundle = GuidanceBundle {
        f_text: None,
        f_integrate: Some(f.clone()),
        mask_field: AttentionMaskField::new(MaskPlane::full(h, w, MaskKind::Dilated)),
        lambda_diffusion: 0.0,
        inject_steps: steps,
    };
    let z0 = reconstruct(&traj, &mut bundle, backbone, &mut trace)?;
    backbone.decode(&z0)
}
