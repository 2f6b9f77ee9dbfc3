//! Paste plus latent AdaIN at several strengths. Prints how far the
//! foreground region's channel moments sit from the background's.

#[path = "shared/mod.rs"]
mod shared;

use xcompose::blend::{channel_moments, gather_cells, initial_blend};
use xcompose::core_model::{mask_to_latent, PipelineConfig};
use xcompose::pipeline::{Backbone, ToyBackbone};

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("initial_blend");
    let job = shared::scene();
    let mut backbone = ToyBackbone::linear(0);

    for lambda in [0.0f32, 0.5, 1.0] {
        let cfg = PipelineConfig { lambda_init: lambda, ..PipelineConfig::default() };
        let b = initial_blend(&job.bg, &job.fg, &job.fg_mask, &job.placement, &cfg, &mut backbone)?;
        let cells = mask_to_latent(&b.placed_fg_mask, b.z_blend.scale_factor())?;
        let inside = channel_moments(gather_cells(&b.z_blend, &cells, true)?.view());
        let outside = channel_moments(gather_cells(&b.z_bg, &cells, false)?.view());
        let n = inside.len() as f64;
        let gap_mean = inside.iter().zip(&outside).map(|(a, b)| (a.0 - b.0).abs()).sum::<f64>() / n;
        let gap_std = inside.iter().zip(&outside).map(|(a, b)| (a.1 - b.1).abs()).sum::<f64>() / n;
        println!("λ = {lambda}: mean |Δμ| {gap_mean:.5}, mean |Δσ| {gap_std:.5} over {n} channels");
        backbone.decode(&b.z_blend)?.save(dir.join(format!("blend_{lambda}.png")))?;
        if lambda == 0.0 {
            b.blended_image.save(dir.join("paste.png"))?;
            b.dilated_mask.save(dir.join("dilated_mask.png"))?;
        }
    }
    println!("images in {}", dir.display());
    Ok(())
}
