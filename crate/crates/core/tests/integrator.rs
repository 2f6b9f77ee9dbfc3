use std::time::Instant;

use xcompose::integrator::synthetic::{CircleClasses, LinearWorld};
use xcompose::integrator::{
    evaluate_loss, integrate_features, lda_separability_vectors, load_model, save_model, train_integrator_split,
    IntegratorModel, IntegratorVariant, MlpProfile, StyleTriplet, TrainConfig,
};

/// Adapter-like world: tokens are a fixed projection of a 32-dimensional
/// per-image embedding.
fn world() -> LinearWorld {
    LinearWorld::projected(4, 64, 32, 0.7, 0.3, 11)
}

fn cosines(model: &IntegratorModel, world: &LinearWorld, val: &[StyleTriplet]) -> Vec<f64> {
    val.iter()
        .map(|t| integrate_features(model, &t.f_c, &t.f_s).unwrap().cosine(&world.stylize(&t.f_c, &t.f_s)).unwrap())
        .collect()
}

#[test]
fn residual_integrator_recovers_linear_world() {
    let world = world();
    let (train, val) = (world.sample(2000, 0), world.sample(500, 1));
    let start = Instant::now();
    let report = train_integrator_split(&train, &val, MlpProfile::TOY, &TrainConfig::default()).unwrap();
    let cos = cosines(&report.model, &world, &val);
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    eprintln!("held-out cosine mean {mean:.5} after {} epochs in {:?}", report.history.len(), start.elapsed());
    assert!(mean >= 0.99, "mean cosine {mean}");
    let meta = report.model.meta.as_ref().unwrap();
    assert_eq!(meta.config.lr, 1e-4);
    assert_eq!((meta.train_triplets, meta.val_triplets), (2000, 500));
}

#[test]
fn direct_variant_is_recorded_and_used() {
    let world = world();
    let cfg = TrainConfig {
        variant: IntegratorVariant::Direct,
        epochs: 2,
        ..TrainConfig::default()
    };
    let report = train_integrator_split(&world.sample(128, 0), &world.sample(32, 1), MlpProfile::TOY, &cfg).unwrap();
    assert_eq!(report.model.variant, IntegratorVariant::Direct);
    assert_eq!(report.model.meta.as_ref().unwrap().config.variant, IntegratorVariant::Direct);
}

/// Each run stops on its own best validation epoch; the large run is capped
/// at 1500 steps to bound runtime. Fails on the noiseless linear world
/// (about 0.026 vs 0.0035), see the README.
#[test]
#[ignore = "long-running data-size comparison; known not to hold on a noiseless world"]
fn small_training_sets_stay_within_twice_the_large_set_loss() {
    let world = world();
    let val = world.sample(500, 9);
    let small_cfg = TrainConfig {
        epochs: 400,
        ..TrainConfig::default()
    };
    let large_cfg = TrainConfig {
        max_steps: Some(1500),
        ..TrainConfig::default()
    };
    let small = train_integrator_split(&world.sample(300, 0), &val, MlpProfile::TOY, &small_cfg).unwrap();
    let large = train_integrator_split(&world.sample(30_000, 1), &val, MlpProfile::TOY, &large_cfg).unwrap();
    let (ls, ll) = (evaluate_loss(&small.model, &val).unwrap(), evaluate_loss(&large.model, &val).unwrap());
    eprintln!("val loss: 300 triplets {ls:.5}, 30000 triplets {ll:.5}");
    assert!(ls <= 2.0 * ll, "{ls} vs {ll}");
}

#[test]
fn zero_model_is_the_additive_fallback() {
    let world = LinearWorld::new(4, 64, 0.7, 0.3, 3);
    let model = IntegratorModel::zeros(MlpProfile::TOY);
    for t in world.sample(10, 0) {
        let f = integrate_features(&model, &t.f_c, &t.f_s).unwrap();
        assert_eq!(f.tokens(), &(t.f_c.tokens() + t.f_s.tokens()));
    }
}

#[test]
fn trained_model_survives_save_and_load() {
    let world = world();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let report = train_integrator_split(&world.sample(64, 0), &[], MlpProfile::TOY, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.xcmlp");
    save_model(&report.model, &p).unwrap();
    let back = load_model(&p).unwrap();
    assert_eq!(back, report.model);
    let t = &world.sample(1, 5)[0];
    assert_eq!(
        integrate_features(&back, &t.f_c, &t.f_s).unwrap(),
        integrate_features(&report.model, &t.f_c, &t.f_s).unwrap()
    );
}

#[test]
fn lda_purity_on_twenty_classes() {
    let (x, y) = CircleClasses {
        n_classes: 20,
        per_class: 80,
        dim: 32,
        separation: 5.0,
        sigma: 1.0,
        seed: 7,
    }
    .sample();
    let r = lda_separability_vectors(&x, &y, 20).unwrap();
    assert!(r.purity >= 0.95, "purity {}", r.purity);
    assert_eq!(r.projection.len(), 1600);
}
