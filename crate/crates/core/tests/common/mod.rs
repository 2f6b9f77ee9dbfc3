#![allow(dead_code)]

use std::path::{Path, PathBuf};

use xcompose::core_model::{ImagePlane, MaskKind, MaskPlane, PipelineConfig, Placement, Rect};
use xcompose::pipeline::{fallback_integrator, BackboneProfile, CompositionJob, ToyBackbone};
use xcompose::integrator::synthetic::LinearWorld;
use xcompose::integrator::{write_triplet_manifest, IntegratorModel, Provenance, StyleTriplet, TripletRecord};

/// Smooth two-tone landscape with a horizon.
pub fn background(h: usize, w: usize) -> ImagePlane {
    ImagePlane::from_fn(h, w, |y, x, c| {
        let fy = y as f32 / h as f32;
        let fx = x as f32 / w as f32;
        let sky = [0.55 + 0.3 * fx, 0.7, 0.9 - 0.2 * fy][c];
        let ground = [0.25, 0.45 + 0.2 * fx, 0.2 + 0.1 * fy][c];
        if fy < 0.55 { sky } else { ground }
    })
    .unwrap()
}

/// Striped disk on white, with its silhouette mask.
pub fn foreground(size: usize) -> (ImagePlane, MaskPlane) {
    let r = size as f32 * 0.4;
    let c = size as f32 / 2.0;
    let inside = |y: usize, x: usize| {
        let (dy, dx) = (y as f32 + 0.5 - c, x as f32 + 0.5 - c);
        dy * dy + dx * dx <= r * r
    };
    let img = ImagePlane::from_fn(size, size, |y, x, ch| {
        if !inside(y, x) {
            return 1.0;
        }
        let stripe = ((x / 4) % 2) as f32;
        [0.8 - 0.5 * stripe, 0.2 + 0.3 * stripe, 0.15][ch]
    })
    .unwrap();
    let mask = MaskPlane::from_fn(size, size, MaskKind::FgObject, |(y, x)| inside(y, x)).unwrap();
    (img, mask)
}

/// 128×128 background, 48 px foreground placed at (40, 48).
pub fn job(cfg: PipelineConfig) -> CompositionJob {
    let (fg, mask) = foreground(48);
    let bg = background(128, 128);
    let bx = MaskPlane::rect(128, 128, Rect::new(40, 48, 48, 48), MaskKind::BgBox).unwrap();
    CompositionJob::new(bg, fg, mask, Placement::new(40, 48, 1.0))
        .with_cfg(cfg)
        .with_bg_box(bx)
}

pub fn empty_mask_job(cfg: PipelineConfig) -> CompositionJob {
    let mut j = job(cfg);
    j.fg_mask = MaskPlane::empty(48, 48, MaskKind::FgObject);
    j
}

pub fn toy() -> ToyBackbone {
    ToyBackbone::linear(0)
}

pub fn fallback() -> IntegratorModel {
    fallback_integrator(&BackboneProfile::toy()).unwrap()
}

pub struct FixtureFiles {
    pub bg: PathBuf,
    pub fg: PathBuf,
    pub fg_mask: PathBuf,
    pub bg_box: PathBuf,
}

pub fn write_fixture(dir: &Path) -> FixtureFiles {
    let j = job(PipelineConfig::default());
    let files = FixtureFiles {
        bg: dir.join("bg.png"),
        fg: dir.join("fg.png"),
        fg_mask: dir.join("fg_mask.png"),
        bg_box: dir.join("bg_box.png"),
    };
    j.bg.save(&files.bg).unwrap();
    j.fg.save(&files.fg).unwrap();
    j.fg_mask.save(&files.fg_mask).unwrap();
    j.bg_box.as_ref().unwrap().save(&files.bg_box).unwrap();
    files
}

/// The job as it looks after its images went through 8-bit PNG files.
pub fn png_roundtrip(mut j: CompositionJob) -> CompositionJob {
    j.bg = ImagePlane::from_encoded_bytes(&j.bg.to_png_bytes().unwrap()).unwrap();
    j.fg = ImagePlane::from_encoded_bytes(&j.fg.to_png_bytes().unwrap()).unwrap();
    j
}

/// Writes `n` triplets of `world` as a manifest and returns them.
pub fn write_world_triplets(path: &Path, world: &LinearWorld, n: usize, stream: u64) -> Vec<StyleTriplet> {
    let triplets = world.sample(n, stream);
    let records: Vec<TripletRecord> = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| TripletRecord {
            provenance: Provenance {
                content_id: format!("c{i}"),
                style_id: format!("s{i}"),
                stylizer_id: "linear".into(),
            },
            content_path: None,
            style_path: None,
            stylized_path: None,
            triplet: t.clone(),
        })
        .collect();
    write_triplet_manifest(path, &records).unwrap();
    triplets
}

/// 8-bit step between background and result outside the box.
pub const BENCH_OFFSET: f32 = 51.0 / 255.0;

pub struct BenchFixture {
    pub manifest: PathBuf,
    pub results: PathBuf,
    pub ids: Vec<String>,
}

/// Benchmark manifest with one result per sample. Results differ from the
/// background by exactly [`BENCH_OFFSET`] on every channel outside the box.
pub fn write_benchmark(dir: &Path, ids: &[&str]) -> BenchFixture {
    let inputs = dir.join("inputs");
    let results = dir.join("results");
    std::fs::create_dir_all(&inputs).unwrap();
    std::fs::create_dir_all(&results).unwrap();
    let mut lines = String::new();
    for (i, id) in ids.iter().enumerate() {
        let bg = ImagePlane::from_encoded_bytes(&background(64, 64).to_png_bytes().unwrap()).unwrap();
        let (fg, mask) = foreground(32);
        let bx = MaskPlane::rect(64, 64, Rect::new(16 + i, 16, 32, 32), MaskKind::BgBox).unwrap();
        bg.save(inputs.join(format!("{id}_bg.png"))).unwrap();
        fg.save(inputs.join(format!("{id}_fg.png"))).unwrap();
        mask.save(inputs.join(format!("{id}_fg_mask.png"))).unwrap();
        bx.save(inputs.join(format!("{id}_box.png"))).unwrap();
        let px = bg.pixels();
        let result = ImagePlane::from_fn(64, 64, |y, x, c| {
            let v = px[[y, x, c]];
            if v < 0.5 { v + BENCH_OFFSET } else { v - BENCH_OFFSET }
        })
        .unwrap();
        result.save(results.join(format!("{id}.png"))).unwrap();
        let row = serde_json::json!({
            "id": id,
            "bg_path": format!("inputs/{id}_bg.png"),
            "fg_path": format!("inputs/{id}_fg.png"),
            "bg_box_path": format!("inputs/{id}_box.png"),
            "fg_mask_path": format!("inputs/{id}_fg_mask.png"),
            "prompt": format!("a striped disk number {i}"),
            "domain_tags": ["photo", "sketch"],
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines).unwrap();
    BenchFixture {
        manifest,
        results,
        ids: ids.iter().map(|s| s.to_string()).collect(),
    }
}
