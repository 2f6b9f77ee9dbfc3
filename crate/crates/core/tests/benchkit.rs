mod common;

use xcompose::benchkit::{
    evaluate_run, load_manifest, psnr_outside_box, relative_improvement, render_csv, render_improvement, CommandScorer,
    EvalReport, Metric, MockPoolScorer, MockScorer, ScorerRegistry,
};
use xcompose::core_model::{ImagePlane, MaskKind, MaskPlane, Rect};

fn registry() -> ScorerRegistry {
    ScorerRegistry::psnr_only()
        .with(MockScorer::per_sample(
            Metric::Lpips,
            [("a".to_string(), 0.2), ("b".to_string(), 0.4), ("c".to_string(), 0.9)],
        ))
        .with(MockScorer::constant(Metric::ClipI, 0.7))
        .with(MockScorer::per_sample(Metric::Csd, [("a".to_string(), 0.1), ("c".to_string(), 0.5)]))
        .with_pool(MockPoolScorer { metric: Metric::Fid, value: 12.5 })
}

fn fixture_psnr() -> f64 {
    20.0 * (255.0f64 / 51.0).log10()
}

#[test]
fn aggregates_equal_hand_computed_means() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b", "c"]);
    let manifest = load_manifest(&fx.manifest).unwrap();
    assert_eq!(manifest.samples.len(), 3);
    assert!(manifest.errors.is_empty());
    let report = evaluate_run(&fx.results, &manifest, &registry(), "ours").unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.missing.is_empty() && report.failed.is_empty());

    assert!((report.value(Metric::Lpips).unwrap() - 0.5).abs() < 1e-12);
    assert!((report.value(Metric::ClipI).unwrap() - 0.7).abs() < 1e-12);
    // the scorer has no value for `b`, so only two samples count
    assert!((report.value(Metric::Csd).unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(report.rows[1].get(Metric::Csd), None);
    assert_eq!(report.value(Metric::Fid), Some(12.5));
    assert_eq!(report.value(Metric::ClipT), None);
    for row in &report.rows {
        assert!((row.get(Metric::Psnr).unwrap() - fixture_psnr()).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn uniform_tenth_offset_is_20_db() {
    let bg = ImagePlane::from_fn(32, 32, |y, x, c| 0.2 + 0.01 * ((y + x + c) % 30) as f32).unwrap();
    let px = bg.pixels().to_owned();
    let result = ImagePlane::from_fn(32, 32, |y, x, c| {
        if (8..16).contains(&y) && (8..16).contains(&x) {
            0.0
        } else {
            px[[y, x, c]] + 0.1
        }
    })
    .unwrap();
    let bx = MaskPlane::rect(32, 32, Rect::new(8, 8, 8, 8), MaskKind::BgBox).unwrap();
    let psnr = psnr_outside_box(&result, &bg, &bx).unwrap();
    assert!((psnr - 20.0).abs() < 1e-5, "{psnr}");
    assert_eq!(psnr_outside_box(&bg, &bg, &bx).unwrap(), 100.0);
}

#[test]
fn missing_results_are_listed_and_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b", "c"]);
    std::fs::remove_file(fx.results.join("b.png")).unwrap();
    let manifest = load_manifest(&fx.manifest).unwrap();
    let report = evaluate_run(&fx.results, &manifest, &registry(), "ours").unwrap();
    assert_eq!(report.missing, ["b"]);
    assert_eq!(report.rows.len(), 2);
    assert!((report.value(Metric::Lpips).unwrap() - 0.55).abs() < 1e-12);
}

#[test]
fn wrong_size_result_is_failed_not_scored() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b"]);
    ImagePlane::filled(16, 16, [0.5; 3]).unwrap().save(fx.results.join("a.png")).unwrap();
    let manifest = load_manifest(&fx.manifest).unwrap();
    let report = evaluate_run(&fx.results, &manifest, &registry(), "ours").unwrap();
    assert_eq!(report.failed, ["a"]);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.value(Metric::Lpips), Some(0.4));
}

#[test]
fn malformed_manifest_rows_are_collected() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b"]);
    let mut text = std::fs::read_to_string(&fx.manifest).unwrap();
    let first = text.lines().next().unwrap().to_string();
    text.push_str("{not json\n");
    text.push_str(&first);
    text.push('\n');
    text.push_str(&first.replace("inputs/a_bg.png", "inputs/missing.png").replace("\"a\"", "\"z\""));
    text.push('\n');
    text.push_str(&first.replace("\"a\"", "\"g\"").replace("\"domain_tags\"", "\"clip_t_scope\":\"global\",\"domain_tags\""));
    text.push('\n');
    std::fs::write(&fx.manifest, text).unwrap();
    let manifest = load_manifest(&fx.manifest).unwrap();
    assert_eq!(manifest.samples.len(), 2);
    let lines: Vec<usize> = manifest.errors.iter().map(|e| e.line).collect();
    assert_eq!(lines, [3, 4, 5, 6]);
    assert!(manifest.errors[1].message.contains("duplicate"));
    assert!(manifest.errors[3].message.contains("global"));
}

#[test]
fn command_scorer_reads_one_number() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a"]);
    let script = dir.path().join("score.sh");
    std::fs::write(&script, "#!/bin/sh\ntest -f \"$1\" || exit 1\necho 0.25\n").unwrap();
    let bad = dir.path().join("bad.sh");
    std::fs::write(&bad, "#!/bin/sh\necho nan-ish\n").unwrap();
    let reg = ScorerRegistry::psnr_only()
        .with(CommandScorer { metric: Metric::ClipT, program: "/bin/sh".into(), args: vec![script.display().to_string()] })
        .with(CommandScorer { metric: Metric::ClipI, program: "/bin/sh".into(), args: vec![bad.display().to_string()] });
    let manifest = load_manifest(&fx.manifest).unwrap();
    let report = evaluate_run(&fx.results, &manifest, &reg, "ours").unwrap();
    assert_eq!(report.value(Metric::ClipT), Some(0.25));
    assert_eq!(report.value(Metric::ClipI), None);
    assert_eq!(report.rows.len(), 1);
}

#[test]
fn report_hash_and_json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b", "c"]);
    let manifest = load_manifest(&fx.manifest).unwrap();
    let ours = evaluate_run(&fx.results, &manifest, &registry(), "ours").unwrap();
    let again = evaluate_run(&fx.results, &manifest, &registry(), "ours").unwrap();
    let other = evaluate_run(&fx.results, &manifest, &registry(), "baseline").unwrap();
    assert_eq!(ours.config_hash, again.config_hash);
    assert_ne!(ours.config_hash, other.config_hash);
    let p = dir.path().join("report.json");
    ours.save_json(&p).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(back, ours);
    let csv = render_csv(&[other, ours]);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("method,"), "{header}");
    assert!(csv.lines().nth(2).unwrap().starts_with("ours,"));
}

#[test]
fn lpips_improvement_renders_as_30_5_percent() {
    assert_eq!(render_improvement(0.6036, 0.4195, true), "30.5%");
    assert!((relative_improvement(0.6036, 0.4195, true) - 30.5003).abs() < 1e-4);
}
