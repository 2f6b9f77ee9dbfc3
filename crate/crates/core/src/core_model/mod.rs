//! Shared value types, geometry and resize rules.
//!
//! Everything in here is a pure function on immutable values. Images are
//! `H×W×3` planes of `f32` in `[0, 1]`, masks are `H×W` boolean planes and
//! latents are `C×h×w` grids produced by a backbone autoencoder.

mod config;
mod image;
mod latent;
mod mask;
mod placement;
mod resize;

pub use config::{AblationFlags, PipelineConfig};
pub use image::{ColorSpace, ImagePlane, MIN_IMAGE_EDGE};
pub use latent::LatentGrid;
pub use mask::{dilate_mask, mask_from_latent, mask_to_latent, MaskKind, MaskPlane, Rect};
pub use placement::Placement;
pub use resize::{
    fit_dims_longest_edge, resize_bilinear, resize_longest_edge, resize_mask_longest_edge,
    resize_mask_nearest,
};
