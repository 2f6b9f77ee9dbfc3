//! Orchestration of the single-branch fewer-step flow over an abstract
//! diffusion backbone, plus the toy backbone used for verification.

mod backbone;
mod job;
mod run;
mod schedule;
mod sdxl;
mod toy;
mod trace;
mod visualize;

pub use backbone::{AttentionHook, Backbone, BackboneProfile, Capabilities, CrossAttentionSite, NoHook, StepContext};
pub use job::{fallback_integrator, CompositionJob};
pub use run::{
    compose, compose_detailed, compose_observed, dual_branch_full_calls, effective_steps, expected_denoiser_calls,
    forward_trajectory, invert, invert_observed, preserved_region, reconstruct, reconstruct_observed,
    CompositionOutput, InversionTrajectory, NullObserver, RunObserver,
};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use sdxl::{open_backbone, open_sdxl, sdxl_weights_from_env, BackboneKind, SDXL_WEIGHTS_ENV};
pub use toy::{StatFeatureEncoder, ToyBackbone, ToyDenoiser, TOY_KEY_WIDTH, TOY_STAT_WIDTH};
pub use trace::{Hook, Phase, Trace, TraceRecord};
pub use visualize::visualize_integrated_feature;
