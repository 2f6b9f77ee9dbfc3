mod common;

use xcompose::core_model::PipelineConfig;
use xcompose::pipeline::{
    compose, compose_detailed, dual_branch_full_calls, expected_denoiser_calls, preserved_region, Backbone, Hook,
    Phase, ToyBackbone,
};
use xcompose::Error;

fn cfg(f: impl FnOnce(&mut PipelineConfig)) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    f(&mut c);
    c
}

#[test]
fn empty_mask_returns_background_exactly() {
    let job = common::empty_mask_job(PipelineConfig::default());
    let out = compose(&job, &mut common::toy(), &common::fallback()).unwrap();
    assert_eq!(out, job.bg);
}

#[test]
fn pixels_outside_dilated_mask_are_preserved() {
    let job = common::job(PipelineConfig::default());
    let out = compose_detailed(&job, &mut common::toy(), &common::fallback()).unwrap();
    let keep = preserved_region(&out, 8).unwrap();
    assert!(keep.count() > 0 && !keep.is_full());
    let mut changed_inside = 0;
    for y in 0..128 {
        for x in 0..128 {
            if keep.get(y, x) {
                assert_eq!(out.image.get(y, x), out.background.get(y, x), "pixel ({y}, {x})");
            } else if out.image.get(y, x) != out.background.get(y, x) {
                changed_inside += 1;
            }
        }
    }
    assert!(changed_inside > 0);
}

#[test]
fn denoiser_call_counts() {
    let model = common::fallback();
    let full = common::toy().profile().schedule.full_steps;
    let cases = [
        (PipelineConfig::default(), 20),
        (cfg(|c| c.ablation.full_diffusion = true), 40),
        (cfg(|c| c.ablation.use_inversion = false), 10),
        (cfg(|c| c.ablation.use_image_clip = false), 20),
        (cfg(|c| c.ablation.use_init_blend = false), 20),
    ];
    for (c, expected) in cases {
        let out = compose_detailed(&common::job(c.clone()), &mut common::toy(), &model).unwrap();
        assert_eq!(out.trace.denoiser_calls() as usize, expected, "{:?}", c.ablation);
        assert_eq!(expected_denoiser_calls(&c, full), expected);
    }
    assert_eq!(dual_branch_full_calls(full), 80);
}

#[test]
fn no_inversion_has_no_inversion_calls() {
    let c = cfg(|c| c.ablation.use_inversion = false);
    let out = compose_detailed(&common::job(c), &mut common::toy(), &common::fallback()).unwrap();
    assert_eq!(out.trace.calls_in(Phase::Invert), 0);
    assert_eq!(out.trace.calls_in(Phase::Reconstruct), 10);
    assert_eq!(out.trace.count(Phase::Invert, Hook::ForwardNoise), 10);
    assert!(!out.trajectory.inverted);
}

#[test]
fn guidance_runs_in_the_first_inject_steps_only() {
    let out = compose_detailed(&common::job(PipelineConfig::default()), &mut common::toy(), &common::fallback()).unwrap();
    let t = &out.trace;
    assert_eq!(t.steps_with(Phase::Reconstruct, Hook::AttnImage), [1, 2, 3, 4, 5]);
    assert_eq!(t.steps_with(Phase::Reconstruct, Hook::StepAdain), [1, 2, 3, 4, 5]);
    assert_eq!(t.steps_with(Phase::Reconstruct, Hook::Preserve), (1..=10).collect::<Vec<_>>());
    assert!(t.steps_with(Phase::Reconstruct, Hook::AttnText).is_empty());
    assert_eq!(t.count(Phase::Blend, Hook::InitAdain), 1);
}

#[test]
fn prompt_adds_text_attention() {
    let job = common::job(PipelineConfig::default()).with_prompt("a watercolor painting");
    let out = compose_detailed(&job, &mut common::toy(), &common::fallback()).unwrap();
    assert_eq!(out.trace.steps_with(Phase::Reconstruct, Hook::AttnText), [1, 2, 3, 4, 5]);
}

#[test]
fn ablations_only_remove_their_own_events() {
    let model = common::fallback();
    let base = compose_detailed(&common::job(PipelineConfig::default()), &mut common::toy(), &model).unwrap();
    let no_clip = compose_detailed(&common::job(cfg(|c| c.ablation.use_image_clip = false)), &mut common::toy(), &model).unwrap();
    let no_blend = compose_detailed(&common::job(cfg(|c| c.ablation.use_init_blend = false)), &mut common::toy(), &model).unwrap();
    assert_eq!(no_clip.trace.count(Phase::Reconstruct, Hook::AttnImage), 0);
    assert_eq!(
        base.trace.events_without(&[Hook::AttnImage]),
        no_clip.trace.events_without(&[Hook::AttnImage])
    );
    assert_eq!(no_blend.trace.count(Phase::Blend, Hook::InitAdain), 0);
    assert_eq!(
        base.trace.events_without(&[Hook::InitAdain]),
        no_blend.trace.events_without(&[Hook::InitAdain])
    );
    let mut schema = no_blend.trace.schema();
    schema.push((Phase::Blend, Hook::InitAdain));
    schema.sort();
    let mut base_schema = base.trace.schema();
    base_schema.sort();
    assert_eq!(base_schema, schema);
}

#[test]
fn ablations_change_the_result() {
    let model = common::fallback();
    let base = compose(&common::job(PipelineConfig::default()), &mut common::toy(), &model).unwrap();
    for c in [
        cfg(|c| c.ablation.use_image_clip = false),
        cfg(|c| c.ablation.use_init_blend = false),
        cfg(|c| c.ablation.use_inversion = false),
        cfg(|c| c.ablation.full_diffusion = true),
    ] {
        let out = compose(&common::job(c.clone()), &mut common::toy(), &model).unwrap();
        assert_ne!(out, base, "{:?}", c.ablation);
    }
}

#[test]
fn composition_is_deterministic() {
    let model = common::fallback();
    let job = common::job(PipelineConfig::default());
    let a = compose(&job, &mut common::toy(), &model).unwrap();
    let b = compose(&job, &mut common::toy(), &model).unwrap();
    assert_eq!(a.to_png_bytes().unwrap(), b.to_png_bytes().unwrap());
}

#[test]
fn mismatched_steps_are_rejected_when_inverting() {
    let c = cfg(|c| c.steps_invert = 8);
    let err = compose(&common::job(c), &mut common::toy(), &common::fallback()).unwrap_err();
    assert_eq!(err.stage(), Some(xcompose::Stage::Validate));
    assert!(matches!(err.root(), Error::InvalidArgument(_)));
}

#[test]
fn out_of_frame_placement_is_invalid() {
    let mut job = common::job(PipelineConfig::default());
    job.placement.offset_x = 100;
    let err = compose(&job, &mut common::toy(), &common::fallback()).unwrap_err();
    assert!(matches!(err.root(), Error::InvalidArgument(_)));
}

#[test]
fn roles_can_be_swapped() {
    let job = common::job(PipelineConfig::default());
    let swapped = job.swapped().unwrap();
    assert_eq!(swapped.bg, job.fg);
    assert_eq!(swapped.fg, job.bg);
    let out = compose(&swapped, &mut common::toy(), &common::fallback()).unwrap();
    assert_eq!(out.dims(), (128, 128));
}

#[test]
fn trace_jsonl_roundtrip() {
    let out = compose_detailed(&common::job(PipelineConfig::default()), &mut common::toy(), &common::fallback()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.jsonl");
    out.trace.write_jsonl(&p).unwrap();
    let back = xcompose::pipeline::Trace::read_jsonl(&p).unwrap();
    assert_eq!(back.records(), out.trace.records());
    let first = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["phase"], "blend");
}

#[test]
fn identity_denoiser_inversion_has_zero_drift() {
    let out = compose_detailed(&common::job(PipelineConfig::default()), &mut ToyBackbone::identity(0), &common::fallback()).unwrap();
    assert_eq!(out.trajectory.latents.len(), 11);
    for z in &out.trajectory.latents {
        assert_eq!(z, &out.blend.z_blend);
    }
}

#[test]
fn no_injection_on_identity_denoiser_returns_the_blend() {
    let job = common::job(cfg(|c| c.inject_steps = 0));
    let out = compose_detailed(&job, &mut ToyBackbone::identity(0), &common::fallback()).unwrap();
    assert_eq!(out.z_0, out.blend.z_blend);
    assert_eq!(out.trace.count(Phase::Reconstruct, Hook::AttnImage), 0);
}

#[test]
fn linear_invert_then_denoise_returns_the_blend() {
    let job = common::job(cfg(|c| c.inject_steps = 0));
    let out = compose_detailed(&job, &mut common::toy(), &common::fallback()).unwrap();
    let d = out.z_0.max_abs_diff(&out.blend.z_blend);
    assert!(d <= 1e-4, "{d}");
}
