//! Builds a two-sample benchmark from composed results, scores it with PSNR
//! outside the box and a fixed mock LPIPS, and prints the report table.

#[path = "shared/mod.rs"]
mod shared;

use serde_json::json;

use xcompose::benchkit::{evaluate_run, load_manifest, render_improvement, render_table, Metric, MockScorer, ScorerRegistry};
use xcompose::core_model::PipelineConfig;
use xcompose::pipeline::{compose_detailed, fallback_integrator, BackboneProfile, ToyBackbone};

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("benchmark_eval");
    let (inputs, results) = (dir.join("inputs"), dir.join("results"));
    std::fs::create_dir_all(&inputs)?;
    std::fs::create_dir_all(&results)?;
    let model = fallback_integrator(&BackboneProfile::toy())?;

    let mut manifest = String::new();
    for (i, id) in ["meadow", "meadow_seed1"].iter().enumerate() {
        let job = shared::scene().with_cfg(PipelineConfig { seed: i as u64, ..PipelineConfig::default() });
        job.bg.save(inputs.join(format!("{id}_bg.png")))?;
        job.fg.save(inputs.join(format!("{id}_fg.png")))?;
        job.fg_mask.save(inputs.join(format!("{id}_fg_mask.png")))?;
        job.bg_box.as_ref().unwrap().save(inputs.join(format!("{id}_box.png")))?;
        compose_detailed(&job, &mut ToyBackbone::linear(0), &model)?.image.save(results.join(format!("{id}.png")))?;
        let row = json!({
            "id": id,
            "bg_path": format!("inputs/{id}_bg.png"),
            "fg_path": format!("inputs/{id}_fg.png"),
            "bg_box_path": format!("inputs/{id}_box.png"),
            "fg_mask_path": format!("inputs/{id}_fg_mask.png"),
        });
        manifest.push_str(&format!("{row}\n"));
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;

    let manifest = load_manifest(&path)?;
    let registry = ScorerRegistry::psnr_only().with(MockScorer::constant(Metric::Lpips, 0.4195));
    let report = evaluate_run(&results, &manifest, &registry, "ours")?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!("LPIPS improvement over 0.6036: {}", render_improvement(0.6036, report.value(Metric::Lpips).unwrap(), true));
    report.save_json(dir.join("report.json"))?;
    Ok(())
}
