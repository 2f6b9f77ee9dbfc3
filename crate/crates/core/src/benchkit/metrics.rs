use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::blend::paste_pixels;
use crate::core_model::{resize_bilinear, ImagePlane, MaskKind, MaskPlane, Placement, Rect};
use crate::error::{Error, Result};

use super::manifest::{BenchmarkSample, ClipTScope, SampleInputs};

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Lpips,
    Csd,
    Psnr,
    ClipT,
    ClipI,
    Fid,
    #[serde(rename = "artfid")]
    ArtFid,
}

impl Metric {
    pub const PER_SAMPLE: [Metric; 5] = [Metric::Lpips, Metric::Csd, Metric::Psnr, Metric::ClipT, Metric::ClipI];
    pub const POOLED: [Metric; 2] = [Metric::Fid, Metric::ArtFid];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Lpips => "lpips",
            Metric::Csd => "csd",
            Metric::Psnr => "psnr",
            Metric::ClipT => "clip_t",
            Metric::ClipI => "clip_i",
            Metric::Fid => "fid",
            Metric::ArtFid => "artfid",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Lpips | Metric::Fid | Metric::ArtFid)
    }

    pub fn parse(s: &str) -> Result<Metric> {
        Metric::PER_SAMPLE
            .iter()
            .chain(&Metric::POOLED)
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

/// PSNR over pixels outside `bg_box`, capped at [`PSNR_CAP_DB`].
pub fn psnr_outside_box(result: &ImagePlane, bg: &ImagePlane, bg_box: &MaskPlane) -> Result<f64> {
    if result.dims() != bg.dims() || bg_box.dims() != bg.dims() {
        return Err(Error::invalid("PSNR inputs differ in size"));
    }
    let (a, b) = (result.pixels(), bg.pixels());
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for ((y, x), inside) in bg_box.bits().indexed_iter() {
        if *inside {
            continue;
        }
        for c in 0..3 {
            sum += (a[[y, x, c]] as f64 - b[[y, x, c]] as f64).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::UndefinedRegion("background box covers the whole frame".into()));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Direct paste of the foreground's mask-bounding-box crop, fitted into the
/// background box.
pub fn hybrid_image(inputs: &SampleInputs) -> Result<ImagePlane> {
    let bx = inputs.box_rect();
    let (fg, mask) = match inputs.fg_mask.bounding_box() {
        Some(r) if r.width >= crate::core_model::MIN_IMAGE_EDGE && r.height >= crate::core_model::MIN_IMAGE_EDGE => {
            let crop = inputs.fg.crop(r)?;
            let m = MaskPlane::from_fn(r.height, r.width, MaskKind::FgObject, |(y, x)| inputs.fg_mask.get(r.y + y, r.x + x))?;
            (crop, m)
        }
        _ => (inputs.fg.clone(), inputs.fg_mask.clone()),
    };
    let placement = Placement::fit_to_box(fg.dims(), bx)?;
    Ok(paste_pixels(&inputs.bg, &fg, &mask, &placement)?.0)
}

/// Operands prepared for one metric.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub sample_id: &'a str,
    pub image: &'a ImagePlane,
    pub reference: Option<&'a ImagePlane>,
    pub text: Option<&'a str>,
}

/// A per-sample metric implementation.
pub trait MetricScorer: Send + Sync {
    fn metric(&self) -> Metric;
    /// Stable description of the scorer and its settings, hashed into
    /// reports.
    fn descriptor(&self) -> String;
    fn score(&self, input: &ScoreInput<'_>) -> Result<f64>;
}

/// A metric defined over pools of images.
pub trait PoolScorer: Send + Sync {
    fn metric(&self) -> Metric;
    fn descriptor(&self) -> String;
    /// Input size pool images are resampled to, if any.
    fn input_size(&self) -> Option<(usize, usize)> {
        None
    }
    fn score_pool(&self, results: &[ImagePlane], references: &[ImagePlane]) -> Result<f64>;
}

/// Fixed values, keyed by sample id with an optional default.
#[derive(Debug, Clone)]
pub struct MockScorer {
    pub metric: Metric,
    pub values: BTreeMap<String, f64>,
    pub default: Option<f64>,
}

impl MockScorer {
    pub fn constant(metric: Metric, value: f64) -> Self {
        Self {
            metric,
            values: BTreeMap::new(),
            default: Some(value),
        }
    }

    pub fn per_sample(metric: Metric, values: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            metric,
            values: values.into_iter().collect(),
            default: None,
        }
    }
}

impl MetricScorer for MockScorer {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn descriptor(&self) -> String {
        format!("mock:{}:{:?}:{:?}", self.metric.name(), self.values, self.default)
    }

    fn score(&self, input: &ScoreInput<'_>) -> Result<f64> {
        self.values
            .get(input.sample_id)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::Capability(format!("mock has no value for {}", input.sample_id)))
    }
}

#[derive(Debug, Clone)]
pub struct MockPoolScorer {
    pub metric: Metric,
    pub value: f64,
}

impl PoolScorer for MockPoolScorer {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn descriptor(&self) -> String {
        format!("mock-pool:{}:{}", self.metric.name(), self.value)
    }

    fn score_pool(&self, results: &[ImagePlane], _references: &[ImagePlane]) -> Result<f64> {
        if results.is_empty() {
            return Err(Error::UndefinedRegion("empty pool".into()));
        }
        Ok(self.value)
    }
}

/// Adapter for an external scorer program.
///
/// The program is called as `program [args…] <image.png> [<reference.png>]
/// [<text>]` and must print one number on stdout.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub metric: Metric,
    pub program: PathBuf,
    pub args: Vec<String>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_png(img: &ImagePlane) -> Result<PathBuf> {
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let p = std::env::temp_dir().join(format!("xcompose-score-{}-{n}.png", std::process::id()));
    img.save(&p)?;
    Ok(p)
}

impl MetricScorer for CommandScorer {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn descriptor(&self) -> String {
        format!("command:{}:{}:{}", self.metric.name(), self.program.display(), self.args.join(" "))
    }

    fn score(&self, input: &ScoreInput<'_>) -> Result<f64> {
        let a = temp_png(input.image)?;
        let b = input.reference.map(temp_png).transpose()?;
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).arg(&a);
        if let Some(b) = &b {
            cmd.arg(b);
        }
        if let Some(t) = input.text {
            cmd.arg(t);
        }
        let out = cmd.output();
        let _ = std::fs::remove_file(&a);
        if let Some(b) = &b {
            let _ = std::fs::remove_file(b);
        }
        let out = out?;
        if !out.status.success() {
            return Err(Error::Capability(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| Error::Capability(format!("scorer printed {:?}, expected a number", text.trim())))
    }
}

/// Scorers available to an evaluation.
#[derive(Default)]
pub struct ScorerRegistry {
    psnr: bool,
    sample: Vec<Box<dyn MetricScorer>>,
    pool: Vec<Box<dyn PoolScorer>>,
}

impl ScorerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn psnr_only() -> Self {
        Self::new().with_psnr()
    }

    pub fn with_psnr(mut self) -> Self {
        self.psnr = true;
        self
    }

    pub fn with(mut self, scorer: impl MetricScorer + 'static) -> Self {
        self.sample.push(Box::new(scorer));
        self
    }

    pub fn with_pool(mut self, scorer: impl PoolScorer + 'static) -> Self {
        self.pool.push(Box::new(scorer));
        self
    }

    pub fn sample_scorer(&self, m: Metric) -> Option<&dyn MetricScorer> {
        self.sample.iter().find(|s| s.metric() == m).map(|b| b.as_ref())
    }

    pub fn pool_scorers(&self) -> &[Box<dyn PoolScorer>] {
        &self.pool
    }

    pub fn has_psnr(&self) -> bool {
        self.psnr
    }

    /// Sorted descriptors of every registered scorer.
    pub fn descriptors(&self) -> Vec<String> {
        let mut d: Vec<String> = self.sample.iter().map(|s| s.descriptor()).collect();
        d.extend(self.pool.iter().map(|s| s.descriptor()));
        if self.psnr {
            d.push(format!("builtin:psnr:cap={PSNR_CAP_DB}"));
        }
        d.sort();
        d
    }
}

/// Per-sample metric values; `None` marks an unavailable metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub values: BTreeMap<Metric, Option<f64>>,
}

impl MetricRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.get(&m).copied().flatten()
    }
}

fn crop_box(img: &ImagePlane, r: Rect) -> Result<ImagePlane> {
    // widen boxes below the minimum edge, staying inside the frame
    let min = crate::core_model::MIN_IMAGE_EDGE;
    let grow = |start: usize, len: usize, limit: usize| -> (usize, usize) {
        if len >= min {
            return (start, len);
        }
        let s = start.saturating_sub((min - len) / 2).min(limit - min);
        (s, min)
    };
    let (x, w) = grow(r.x, r.width, img.width());
    let (y, h) = grow(r.y, r.height, img.height());
    img.crop(Rect::new(x, y, w, h))
}

/// Region an image metric looks at.
pub fn box_crop(img: &ImagePlane, inputs: &SampleInputs) -> Result<ImagePlane> {
    crop_box(img, inputs.box_rect())
}

/// Scores one result. Missing scorers and scorer failures leave the metric
/// unavailable; the row is always produced.
pub fn score_sample(
    sample: &BenchmarkSample,
    inputs: &SampleInputs,
    result: &ImagePlane,
    registry: &ScorerRegistry,
) -> Result<MetricRow> {
    if result.dims() != inputs.bg.dims() {
        return Err(Error::invalid(format!(
            "result for {} is {:?}, background is {:?}",
            sample.id,
            result.dims(),
            inputs.bg.dims()
        )));
    }
    let hybrid = hybrid_image(inputs)?;
    let result_crop = box_crop(result, inputs)?;
    let hybrid_crop = box_crop(&hybrid, inputs)?;
    let mut values = BTreeMap::new();
    let psnr = if registry.has_psnr() {
        Some(psnr_outside_box(result, &inputs.bg, &inputs.bg_box)?)
    } else {
        None
    };
    values.insert(Metric::Psnr, psnr);
    for m in [Metric::Lpips, Metric::Csd, Metric::ClipT, Metric::ClipI] {
        let Some(scorer) = registry.sample_scorer(m) else {
            values.insert(m, None);
            continue;
        };
        let input = match m {
            Metric::Lpips => ScoreInput {
                sample_id: &sample.id,
                image: &result_crop,
                reference: Some(&hybrid_crop),
                text: None,
            },
            Metric::Csd => ScoreInput {
                sample_id: &sample.id,
                image: &result_crop,
                reference: Some(&inputs.bg),
                text: None,
            },
            Metric::ClipT => {
                let Some(prompt) = sample.prompt.as_deref() else {
                    values.insert(m, None);
                    continue;
                };
                ScoreInput {
                    sample_id: &sample.id,
                    image: match sample.clip_t_scope {
                        ClipTScope::Local => &result_crop,
                        ClipTScope::Global => result,
                    },
                    reference: None,
                    text: Some(prompt),
                }
            }
            _ => ScoreInput {
                sample_id: &sample.id,
                image: &result_crop,
                reference: Some(&inputs.fg),
                text: None,
            },
        };
        let v = match scorer.score(&input) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(v) => {
                log::warn!("{} scorer returned {v} for {}", m.name(), sample.id);
                None
            }
            Err(e) => {
                log::warn!("{} scorer failed on {}: {e}", m.name(), sample.id);
                None
            }
        };
        values.insert(m, v);
    }
    Ok(MetricRow {
        id: sample.id.clone(),
        values,
    })
}

/// Resamples pool images to a scorer's input size.
pub(crate) fn prepare_pool(images: &[ImagePlane], size: Option<(usize, usize)>) -> Result<Vec<ImagePlane>> {
    match size {
        None => Ok(images.to_vec()),
        Some((h, w)) => images.iter().map(|i| resize_bilinear(i, h, w)).collect(),
    }
}
