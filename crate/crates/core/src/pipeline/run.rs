use ndarray::Array2;

use super::backbone::{AttentionHook, Backbone, CrossAttentionSite, NoHook, StepContext};
use super::job::CompositionJob;
use super::trace::{Hook, Phase, Trace};
use crate::blend::{initial_blend, BlendResult};
use crate::core_model::{
    fit_dims_longest_edge, resize_bilinear, ImagePlane, LatentGrid, MaskKind, MaskPlane,
    PipelineConfig, Placement,
};
use crate::error::{Error, Result, Stage};
use crate::guidance::{adain_applicable, apply_guidance, preserve_background, step_adain, AttentionMaskField, GuidanceBundle};
use crate::integrator::{integrate_features, IntegratorModel, PromptFeature};

/// Receives progress and may request cancellation between steps.
pub trait RunObserver {
    fn progress(&mut self, _stage: Stage, _step: Option<usize>) {}
    fn is_cancelled(&self) -> bool {
        false
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Latents from `z_blend` (index 0) to the start latent `z_T`.
#[derive(Debug, Clone)]
pub struct InversionTrajectory {
    pub latents: Vec<LatentGrid>,
    pub timesteps: Vec<usize>,
    /// Digest of the conditioning used while inverting.
    pub prompt_id: String,
    /// `false` when built by forward noising.
    pub inverted: bool,
    pub seed: u64,
}

impl InversionTrajectory {
    pub fn steps(&self) -> usize {
        self.latents.len() - 1
    }

    pub fn z_t(&self) -> &LatentGrid {
        self.latents.last().expect("nonempty trajectory")
    }

    pub fn z_0(&self) -> &LatentGrid {
        &self.latents[0]
    }
}

/// `(steps_invert, steps_denoise)` after applying the full-diffusion toggle.
pub fn effective_steps(cfg: &PipelineConfig, full_steps: usize) -> (usize, usize) {
    if cfg.ablation.full_diffusion {
        (full_steps, full_steps)
    } else {
        (cfg.steps_invert, cfg.steps_denoise)
    }
}

/// Denoiser calls a job makes: inversion steps (when inverting) plus
/// reconstruction steps.
pub fn expected_denoiser_calls(cfg: &PipelineConfig, full_steps: usize) -> usize {
    let (si, sd) = effective_steps(cfg, full_steps);
    if cfg.ablation.use_inversion {
        si + sd
    } else {
        sd
    }
}

/// Calls of a dual-branch pipeline at the full step count: two branches,
/// each inverting and reconstructing.
pub const fn dual_branch_full_calls(full_steps: usize) -> usize {
    2 * 2 * full_steps
}

fn check_cancel(observer: &dyn RunObserver) -> Result<()> {
    if observer.is_cancelled() {
        Err(Error::Cancelled)
    } else {
        Ok(())
    }
}

fn prompt_id(p: &PromptFeature) -> String {
    let bytes: Vec<u8> = p.tokens().iter().flat_map(|v| v.to_le_bytes()).collect();
    crate::util::sha256_hex(&bytes)[..16].to_string()
}

/// Inverts `z_blend` through `steps` intervals of the schedule grid.
pub fn invert(z_blend: &LatentGrid, steps: usize, backbone: &mut dyn Backbone, seed: u64, trace: &mut Trace) -> Result<InversionTrajectory> {
    invert_observed(z_blend, steps, backbone, seed, trace, &mut NullObserver)
}

pub fn invert_observed(
    z_blend: &LatentGrid,
    steps: usize,
    backbone: &mut dyn Backbone,
    seed: u64,
    trace: &mut Trace,
    observer: &mut dyn RunObserver,
) -> Result<InversionTrajectory> {
    let timesteps = backbone.schedule().grid(steps)?;
    let cond = backbone.inversion_prompt();
    let mut latents = Vec::with_capacity(steps + 1);
    latents.push(z_blend.clone());
    for i in 1..=steps {
        check_cancel(observer)?;
        let step = StepContext {
            index: i,
            t_from: timesteps[i - 1],
            t_to: timesteps[i],
            seed,
        };
        trace.denoiser_call(Phase::Invert, i);
        let z = backbone
            .invert_step(&latents[i - 1], &step, &cond)
            .map_err(|e| e.at_step("invert", i))?;
        latents.push(z);
        observer.progress(Stage::Invert, Some(i));
    }
    Ok(InversionTrajectory {
        latents,
        timesteps,
        prompt_id: prompt_id(&cond),
        inverted: true,
        seed,
    })
}

/// Trajectory built by forward-noising `z_blend` to each grid timestep; no
/// denoiser calls.
pub fn forward_trajectory(
    z_blend: &LatentGrid,
    steps: usize,
    backbone: &mut dyn Backbone,
    seed: u64,
    trace: &mut Trace,
) -> Result<InversionTrajectory> {
    let timesteps = backbone.schedule().grid(steps)?;
    let mut latents = Vec::with_capacity(steps + 1);
    latents.push(z_blend.clone());
    for (i, &t) in timesteps.iter().enumerate().skip(1) {
        trace.push(Phase::Invert, i, Hook::ForwardNoise);
        latents.push(backbone.forward_noise(z_blend, t, seed).map_err(|e| e.at_step("forward_noise", i))?);
    }
    Ok(InversionTrajectory {
        latents,
        timesteps,
        prompt_id: prompt_id(&backbone.inversion_prompt()),
        inverted: false,
        seed,
    })
}

struct GuidanceHook<'a> {
    bundle: &'a mut GuidanceBundle,
    trace: &'a mut Trace,
    phase: Phase,
    step: usize,
}

impl AttentionHook for GuidanceHook<'_> {
    fn cross_attention(&mut self, site: &CrossAttentionSite<'_>, z: &mut Array2<f32>) -> Result<()> {
        if !self.bundle.has_features() {
            return Ok(());
        }
        let mask = self.bundle.mask_field.for_grid(site.height, site.width)?.to_row();
        let (out, applied) = apply_guidance(
            z.view(),
            self.bundle.f_integrate.as_ref(),
            self.bundle.f_text.as_ref(),
            site.weights,
            &mask,
        )
        .map_err(|e| match e {
            Error::Numerical { context, detail } => Error::Numerical {
                context: format!("layer {} step {}: {context}", site.layer, self.step),
                detail,
            },
            other => other,
        })?;
        *z = out;
        if applied.image {
            self.trace.push(self.phase, self.step, Hook::AttnImage);
        }
        if applied.text {
            self.trace.push(self.phase, self.step, Hook::AttnText);
        }
        Ok(())
    }
}

/// Denoises from the trajectory's start latent back to `t = 0`.
///
/// Steps `1..=inject_steps` run rectified cross-attention at every site and
/// then step AdaIN; every step ends with background preservation against
/// the trajectory latent of the same timestep.
pub fn reconstruct(
    traj: &InversionTrajectory,
    bundle: &mut GuidanceBundle,
    backbone: &mut dyn Backbone,
    trace: &mut Trace,
) -> Result<LatentGrid> {
    reconstruct_observed(traj, bundle, backbone, trace, &mut NullObserver)
}

pub fn reconstruct_observed(
    traj: &InversionTrajectory,
    bundle: &mut GuidanceBundle,
    backbone: &mut dyn Backbone,
    trace: &mut Trace,
    observer: &mut dyn RunObserver,
) -> Result<LatentGrid> {
    let n = traj.steps();
    let start = traj.z_t();
    let latent_mask = bundle.mask_field.for_grid(start.height(), start.width())?.clone();
    let cond = backbone.inversion_prompt();
    let adain_ok = adain_applicable(&latent_mask);
    let mut z = start.clone();
    for i in 1..=n {
        check_cancel(observer)?;
        let step = StepContext {
            index: i,
            t_from: traj.timesteps[n - i + 1],
            t_to: traj.timesteps[n - i],
            seed: traj.seed,
        };
        let active = i <= bundle.inject_steps;
        trace.denoiser_call(Phase::Reconstruct, i);
        z = if active {
            let mut hook = GuidanceHook {
                bundle: &mut *bundle,
                trace: &mut *trace,
                phase: Phase::Reconstruct,
                step: i,
            };
            backbone.denoise_step(&z, &step, &cond, &mut hook)
        } else {
            backbone.denoise_step(&z, &step, &cond, &mut NoHook)
        }
        .map_err(|e| e.at_step("reconstruct", i))?;
        if active && adain_ok {
            trace.push(Phase::Reconstruct, i, Hook::StepAdain);
            z = step_adain(&z, &latent_mask, bundle.lambda_diffusion).map_err(|e| e.at_step("reconstruct", i))?;
        }
        z = preserve_background(&z, &traj.latents[n - i], &latent_mask).map_err(|e| e.at_step("reconstruct", i))?;
        trace.push(Phase::Reconstruct, i, Hook::Preserve);
        observer.progress(Stage::Reconstruct, Some(i));
    }
    Ok(z)
}

/// Everything a composition run produced.
#[derive(Debug, Clone)]
pub struct CompositionOutput {
    pub image: ImagePlane,
    /// Decoded initial blend.
    pub preview: ImagePlane,
    pub blend: BlendResult,
    /// Background after resizing; the frame of `image`.
    pub background: ImagePlane,
    pub placement: Placement,
    pub f_integrate: Option<PromptFeature>,
    pub trajectory: InversionTrajectory,
    pub z_0: LatentGrid,
    pub trace: Trace,
}

/// Composes and returns only the image.
pub fn compose(job: &CompositionJob, backbone: &mut dyn Backbone, model: &IntegratorModel) -> Result<ImagePlane> {
    compose_detailed(job, backbone, model).map(|o| o.image)
}

pub fn compose_detailed(job: &CompositionJob, backbone: &mut dyn Backbone, model: &IntegratorModel) -> Result<CompositionOutput> {
    compose_observed(job, backbone, model, &mut NullObserver)
}

fn resize_inputs(job: &CompositionJob, target: usize, multiple: usize) -> Result<(ImagePlane, Placement)> {
    let (h, w) = job.bg.dims();
    let (nh, nw) = fit_dims_longest_edge(h, w, target, multiple)?;
    if (nh, nw) == (h, w) {
        return Ok((job.bg.clone(), job.placement));
    }
    let bg = resize_bilinear(&job.bg, nh, nw)?;
    let placement = job
        .placement
        .rescaled(nh as f64 / h as f64, nw as f64 / w as f64, job.fg.dims(), (nh, nw))?;
    Ok((bg, placement))
}

/// Full flow: resize, blend, features, integration, inversion,
/// reconstruction and decoding. Errors carry their stage and, once the
/// blend exists, the decoded blend as a preview.
pub fn compose_observed(
    job: &CompositionJob,
    backbone: &mut dyn Backbone,
    model: &IntegratorModel,
    observer: &mut dyn RunObserver,
) -> Result<CompositionOutput> {
    let cfg = &job.cfg;
    let profile = backbone.profile().clone();
    let full_steps = profile.schedule.full_steps;
    let (steps_invert, steps_denoise) = effective_steps(cfg, full_steps);

    observer.progress(Stage::Validate, None);
    job.validate().map_err(|e| e.at_stage(Stage::Validate))?;
    if cfg.ablation.use_inversion && steps_invert != steps_denoise {
        return Err(Error::invalid(format!(
            "steps_invert {steps_invert} and steps_denoise {steps_denoise} must match when inverting"
        ))
        .at_stage(Stage::Validate));
    }
    if cfg.ablation.use_image_clip && (model.profile.tokens, model.profile.dim) != (profile.image_tokens, profile.token_dim) {
        return Err(Error::invalid(format!(
            "integrator expects {}x{} tokens, backbone produces {}x{}",
            model.profile.tokens, model.profile.dim, profile.image_tokens, profile.token_dim
        ))
        .at_stage(Stage::Validate));
    }
    check_cancel(observer)?;

    observer.progress(Stage::Resize, None);
    let (bg, placement) =
        resize_inputs(job, profile.target_edge, profile.size_multiple).map_err(|e| e.at_stage(Stage::Resize))?;

    observer.progress(Stage::Blend, None);
    let blend_cfg = PipelineConfig {
        steps_invert,
        steps_denoise,
        ..cfg.clone()
    };
    let blend = initial_blend(&bg, &job.fg, &job.fg_mask, &placement, &blend_cfg, backbone)
        .map_err(|e| e.at_stage(Stage::Blend))?;
    let mut trace = Trace::new();
    if cfg.ablation.use_init_blend && cfg.lambda_init > 0.0 {
        trace.push(Phase::Blend, 0, Hook::InitAdain);
    }
    let preview = backbone.decode(&blend.z_blend).map_err(|e| e.at_stage(Stage::Blend))?;
    let with_preview = |e: Error, stage: Stage| match e.at_stage(stage) {
        Error::Stage { stage, source, .. } => Error::Stage {
            stage,
            source,
            preview: Some(Box::new(preview.clone())),
        },
        other => other,
    };
    check_cancel(observer)?;

    observer.progress(Stage::Features, None);
    let features = (|| -> Result<_> {
        let content_img = if cfg.content_on_white {
            job.fg.isolate_on_white(&job.fg_mask)?
        } else {
            job.fg.clone()
        };
        let f_text = job.prompt.as_deref().map(|p| backbone.text_features(p)).transpose()?;
        if !cfg.ablation.use_image_clip {
            return Ok((None, None, f_text));
        }
        let f_c = backbone.image_features(&content_img)?;
        let f_s = backbone
            .image_features(&bg)?
            .with_source(crate::integrator::FeatureSource::ImageStyle);
        Ok((Some(f_c), Some(f_s), f_text))
    })()
    .map_err(|e| with_preview(e, Stage::Features))?;
    let (f_c, f_s, f_text) = features;

    observer.progress(Stage::Integrate, None);
    let f_integrate = match (&f_c, &f_s) {
        (Some(c), Some(s)) => Some(integrate_features(model, c, s).map_err(|e| with_preview(e, Stage::Integrate))?),
        _ => None,
    };
    check_cancel(observer)?;

    observer.progress(Stage::Invert, Some(0));
    let trajectory = if cfg.ablation.use_inversion {
        invert_observed(&blend.z_blend, steps_invert, backbone, cfg.seed, &mut trace, observer)
    } else {
        forward_trajectory(&blend.z_blend, steps_denoise, backbone, cfg.seed, &mut trace)
    }
    .map_err(|e| with_preview(e, Stage::Invert))?;

    observer.progress(Stage::Reconstruct, Some(0));
    let mut bundle = GuidanceBundle {
        f_text,
        f_integrate: f_integrate.clone(),
        mask_field: AttentionMaskField::new(blend.dilated_mask.clone()),
        lambda_diffusion: cfg.lambda_diffusion,
        inject_steps: cfg.inject_steps,
    };
    let z_0 = reconstruct_observed(&trajectory, &mut bundle, backbone, &mut trace, observer)
        .map_err(|e| with_preview(e, Stage::Reconstruct))?;

    observer.progress(Stage::Decode, None);
    let image = backbone.decode(&z_0).map_err(|e| with_preview(e, Stage::Decode))?;
    Ok(CompositionOutput {
        image,
        preview,
        blend,
        background: bg,
        placement,
        f_integrate,
        trajectory,
        z_0,
        trace,
    })
}

/// Latent-resolution dilated mask of a finished run, upsampled back to
/// pixels. Pixels outside it are preserved exactly on the toy backbone.
pub fn preserved_region(output: &CompositionOutput, scale_factor: usize) -> Result<MaskPlane> {
    let mut field = AttentionMaskField::new(output.blend.dilated_mask.clone());
    let latent = field.level(scale_factor)?.clone();
    let up = crate::core_model::mask_from_latent(&latent, scale_factor);
    let bits = up.bits().mapv(|b| !b);
    MaskPlane::new(bits, MaskKind::Dilated)
}
