//! Trains the residual feature integrator on a synthetic linear world and
//! compares it with the additive fallback on held-out triplets.

#[path = "shared/mod.rs"]
mod shared;

use xcompose::integrator::synthetic::LinearWorld;
use xcompose::integrator::{integrate_features, save_model, IntegratorModel, MlpProfile, TrainConfig, train_integrator};

fn mean_cosine(model: &IntegratorModel, world: &LinearWorld, n: usize) -> f64 {
    let val = world.sample(n, 7);
    let sum: f64 = val
        .iter()
        .map(|t| integrate_features(model, &t.f_c, &t.f_s).unwrap().cosine(&t.f_l).unwrap())
        .sum();
    sum / n as f64
}

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("train_integrator");
    let world = LinearWorld::projected(4, 64, 32, 0.7, 0.3, 11);
    let triplets = world.sample(1000, 0);
    let profile = MlpProfile::for_shape(4, 64)?;
    let cfg = TrainConfig { lr: 1e-3, epochs: 15, ..TrainConfig::default() };

    let report = train_integrator(&triplets, profile, &cfg)?;
    for e in &report.history {
        println!("epoch {:>2}  train {:.5}  val {}", e.epoch, e.train_loss,
            e.val_loss.map(|v| format!("{v:.5}")).unwrap_or_default());
    }
    println!("fallback cosine {:.4}", mean_cosine(&IntegratorModel::zeros(profile), &world, 200));
    println!("trained  cosine {:.4}", mean_cosine(&report.model, &world, 200));

    let path = dir.join("integrator.bin");
    save_model(&report.model, &path)?;
    report.write_loss_curve(dir.join("loss.csv"))?;
    println!("model at {}", path.display());
    Ok(())
}
