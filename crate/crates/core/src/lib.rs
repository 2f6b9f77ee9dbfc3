//! Prompt-free cross-domain image composition.
//!
//! A foreground object is pasted into a background of a different style, the
//! paste is harmonized in latent space with AdaIN, inverted for a few sampler
//! steps and then reconstructed while a mask-local cross-attention injects an
//! image feature that mixes the foreground's content with the background's
//! style. The diffusion model is abstracted behind [`pipeline::Backbone`]; a
//! deterministic toy backbone ships with the crate so every stage can be
//! exercised on a laptop.
//!
//! Modules, bottom-up:
//!
//! - [`core_model`]: images, masks, latents, placement, resize and morphology.
//! - [`blend`]: pixel paste plus latent AdaIN for the initial blend.
//! - [`integrator`]: adapter features, the residual MLP, its trainer, triplet
//!   tooling and the LDA separability experiment.
//! - [`guidance`]: rectified cross-attention, in-diffusion AdaIN and
//!   background preservation.
//! - [`pipeline`]: backbone contract, toy backbone, inversion and
//!   reconstruction, end-to-end composition and instrumentation.
//! - [`benchkit`]: benchmark manifests, metric scoring and reports.
//! - [`service`]: job queue, run cache and the HTTP API.
//! - [`cli`]: the command-line front end used by the `xcompose` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod benchkit;
pub mod blend;
pub mod cli;
pub mod core_model;
pub mod error;
pub mod guidance;
pub mod integrator;
pub mod pipeline;
pub mod service;
pub(crate) mod util;

pub use error::{Error, Result, Stage};
