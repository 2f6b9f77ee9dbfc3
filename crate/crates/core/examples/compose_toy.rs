//! Composes the synthetic scene on the toy backbone and writes the result,
//! the blend preview and the instrumentation trace.
//!
//! ```text
//! cargo run --example compose_toy [out-dir]
//! ```

#[path = "shared/mod.rs"]
mod shared;

use xcompose::pipeline::{compose_detailed, fallback_integrator, Phase, ToyBackbone};
use xcompose::service::RunArtifacts;

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("compose_toy");
    let job = shared::scene().with_prompt("a striped ball in the meadow");
    let mut backbone = ToyBackbone::linear(0);
    let model = fallback_integrator(&xcompose::pipeline::BackboneProfile::toy())?;

    let out = compose_detailed(&job, &mut backbone, &model)?;
    let artifacts = RunArtifacts::in_dir(&dir);
    artifacts.write(&out)?;

    println!("config hash   {}", job.config_hash(&xcompose::pipeline::BackboneProfile::toy(), &model)?);
    println!("denoiser calls {} (invert {}, reconstruct {})",
        out.trace.denoiser_calls(),
        out.trace.calls_in(Phase::Invert),
        out.trace.calls_in(Phase::Reconstruct));
    println!("wrote {}", artifacts.result.display());
    Ok(())
}
