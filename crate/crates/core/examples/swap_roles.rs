//! Exchanges foreground and background: the meadow goes into the disk's
//! frame.

#[path = "shared/mod.rs"]
mod shared;

use xcompose::pipeline::{compose_detailed, fallback_integrator, BackboneProfile, ToyBackbone};

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("swap_roles");
    let model = fallback_integrator(&BackboneProfile::toy())?;
    let job = shared::scene();
    let swapped = job.swapped()?;
    let forward = compose_detailed(&job, &mut ToyBackbone::linear(0), &model)?;
    let reverse = compose_detailed(&swapped, &mut ToyBackbone::linear(0), &model)?;
    forward.image.save(dir.join("forward.png"))?;
    reverse.image.save(dir.join("swapped.png"))?;
    println!("forward {:?}, swapped {:?}", forward.image.dims(), reverse.image.dims());
    Ok(())
}
