//! Renders image-prompt-only generations from the content feature, the
//! style feature and their integration.

#[path = "shared/mod.rs"]
mod shared;

use xcompose::integrator::integrate_features;
use xcompose::pipeline::{fallback_integrator, visualize_integrated_feature, Backbone, ToyBackbone};

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("visualize_feature");
    let job = shared::scene();
    let mut backbone = ToyBackbone::linear(0);
    let model = fallback_integrator(backbone.profile())?;
    let f_c = backbone.image_features(&job.fg)?;
    let f_s = backbone.image_features(&job.bg)?;
    let f_i = integrate_features(&model, &f_c, &f_s)?;
    for (name, f) in [("content", &f_c), ("style", &f_s), ("integrated", &f_i)] {
        let img = visualize_integrated_feature(f, &mut backbone, 0)?;
        img.save(dir.join(format!("{name}.png")))?;
        println!("{name:<10} {:?}", img.dims());
    }
    Ok(())
}
