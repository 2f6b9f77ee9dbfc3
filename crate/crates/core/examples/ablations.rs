//! Runs the pipeline with each ablation switched off and reports denoiser
//! calls and how far the result moves from the full configuration.

#[path = "shared/mod.rs"]
mod shared;

use xcompose::core_model::{AblationFlags, ImagePlane, PipelineConfig};
use xcompose::pipeline::{compose_detailed, fallback_integrator, BackboneProfile, ToyBackbone};

fn mse(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let n = a.pixels().len() as f64;
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n
}

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("ablations");
    let model = fallback_integrator(&BackboneProfile::toy())?;
    let base = AblationFlags::default();
    let variants = [
        ("full", base),
        ("no_image_clip", AblationFlags { use_image_clip: false, ..base }),
        ("no_init_blend", AblationFlags { use_init_blend: false, ..base }),
        ("no_inversion", AblationFlags { use_inversion: false, ..base }),
        ("full_diffusion", AblationFlags { full_diffusion: true, ..base }),
    ];
    let mut reference = None;
    for (name, ablation) in variants {
        let job = shared::scene().with_cfg(PipelineConfig { ablation, ..PipelineConfig::default() });
        let out = compose_detailed(&job, &mut ToyBackbone::linear(0), &model)?;
        let reference = reference.get_or_insert_with(|| out.image.clone());
        println!("{name:<15} calls {:>2}  mse vs full {:.6}", out.trace.denoiser_calls(), mse(&out.image, reference));
        out.image.save(dir.join(format!("{name}.png")))?;
    }
    Ok(())
}
