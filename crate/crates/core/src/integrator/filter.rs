use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::triplets::{channel_stats, TripletCandidate, TripletRecord};
use crate::core_model::ImagePlane;
use crate::error::Result;

/// Why a triplet was flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterReason {
    /// Content inconsistency: `cosine(f_c, f_l) < τ_a`.
    #[serde(rename = "a")]
    ContentInconsistency,
    /// Style discrepancy: style score below `τ_b`.
    #[serde(rename = "b")]
    StyleDiscrepancy,
    /// Substandard quality: non-finite, out-of-range or flat output.
    #[serde(rename = "c")]
    Quality,
}

impl FilterReason {
    pub fn code(self) -> &'static str {
        match self {
            FilterReason::ContentInconsistency => "a",
            FilterReason::StyleDiscrepancy => "b",
            FilterReason::Quality => "c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub tau_a: f64,
    pub tau_b: f64,
    /// Largest tolerated fraction of stylized values outside `[0, 1]`.
    pub max_out_of_range: f64,
    /// Smallest tolerated std over all stylized values.
    pub min_std: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            tau_a: 0.6,
            tau_b: 0.3,
            max_out_of_range: 0.01,
            min_std: 1e-3,
        }
    }
}

/// Style similarity in `[0, 1]` between a style image and a stylized output.
pub trait StyleScorer {
    fn score(&self, style: &ImagePlane, stylized: &ImagePlane) -> f64;
}

/// `1 / (1 + d / scale)` where `d` is the distance between per-channel
/// (mean, std) vectors.
#[derive(Debug, Clone, Copy)]
pub struct PaletteScorer {
    pub scale: f64,
}

impl Default for PaletteScorer {
    fn default() -> Self {
        Self { scale: 0.1 }
    }
}

impl StyleScorer for PaletteScorer {
    fn score(&self, style: &ImagePlane, stylized: &ImagePlane) -> f64 {
        let a = channel_stats(style.pixels());
        let b = channel_stats(stylized.pixels());
        let d: f64 = a
            .iter()
            .zip(&b)
            .map(|((m1, s1), (m2, s2))| (m1 - m2).powi(2) + (s1 - s2).powi(2))
            .sum::<f64>()
            .sqrt();
        1.0 / (1.0 + d / self.scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterVerdict {
    pub record: TripletRecord,
    pub content_cosine: f64,
    pub style_score: Option<f64>,
    pub reasons: Vec<FilterReason>,
}

impl FilterVerdict {
    pub fn kept(&self) -> bool {
        self.reasons.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<FilterVerdict>,
    pub rejected: Vec<FilterVerdict>,
}

impl FilterOutcome {
    pub fn keep_ratio(&self) -> f64 {
        let n = self.kept.len() + self.rejected.len();
        if n == 0 {
            0.0
        } else {
            self.kept.len() as f64 / n as f64
        }
    }

    /// One JSON object per triplet with its automatic decision, for manual
    /// confirmation.
    pub fn write_review_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        for v in self.kept.iter().chain(&self.rejected) {
            let mut obj = v.record.to_json();
            let m = obj.as_object_mut().expect("record is an object");
            m.insert("decision".into(), (if v.kept() { "keep" } else { "reject" }).into());
            m.insert("reasons".into(), serde_json::to_value(&v.reasons)?);
            m.insert("content_cosine".into(), v.content_cosine.into());
            m.insert("style_score".into(), serde_json::to_value(v.style_score)?);
            m.insert("confirmed".into(), serde_json::Value::Null);
            serde_json::to_writer(&mut f, &obj)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn quality_ok(raw: &Array3<f32>, th: &FilterThresholds) -> bool {
    if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let n = raw.len() as f64;
    let out = raw.iter().filter(|v| **v < 0.0 || **v > 1.0).count() as f64;
    if out / n > th.max_out_of_range {
        return false;
    }
    let mean = raw.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = raw.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() >= th.min_std
}

/// Applies the automatic proxies (a), (b), (c). Every input ends up in
/// exactly one of `kept` or `rejected`.
pub fn filter_triplets(candidates: Vec<TripletCandidate>, th: &FilterThresholds, scorer: &dyn StyleScorer) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for cand in candidates {
        let t = &cand.record.triplet;
        let content_cosine = t.f_c.cosine(&t.f_l).unwrap_or(f64::NAN);
        let mut reasons = Vec::new();
        if content_cosine.is_nan() || content_cosine < th.tau_a {
            reasons.push(FilterReason::ContentInconsistency);
        }
        let quality = quality_ok(&cand.stylized_raw, th);
        let style_score = ImagePlane::new(cand.stylized_raw.clone())
            .ok()
            .map(|img| scorer.score(&cand.style_image, &img));
        match style_score {
            Some(s) if s >= th.tau_b => {}
            Some(_) => reasons.push(FilterReason::StyleDiscrepancy),
            None if quality => reasons.push(FilterReason::StyleDiscrepancy),
            None => {}
        }
        if !quality {
            reasons.push(FilterReason::Quality);
        }
        let verdict = FilterVerdict {
            record: cand.record,
            content_cosine,
            style_score,
            reasons,
        };
        if verdict.kept() {
            out.kept.push(verdict);
        } else {
            out.rejected.push(verdict);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::feature::{FeatureSource, PromptFeature};
    use crate::integrator::triplets::{Provenance, StyleTriplet};
    use ndarray::array;

    fn candidate(f_c: [f32; 2], f_l: [f32; 2], style: &ImagePlane, stylized: Array3<f32>) -> TripletCandidate {
        let f = |v: [f32; 2]| PromptFeature::new(array![[v[0], v[1]]], FeatureSource::ImageContent).unwrap();
        TripletCandidate {
            record: TripletRecord {
                provenance: Provenance {
                    content_id: "c".into(),
                    style_id: "s".into(),
                    stylizer_id: "x".into(),
                },
                content_path: None,
                style_path: None,
                stylized_path: None,
                triplet: StyleTriplet::new(f(f_c), f([0.0, 1.0]), f(f_l)).unwrap(),
            },
            style_image: style.clone(),
            stylized_raw: stylized,
        }
    }

    fn textured(v: f32) -> ImagePlane {
        ImagePlane::from_fn(8, 8, |y, x, _| ((y + x) % 2) as f32 * 0.2 + v).unwrap()
    }

    #[test]
    fn reasons_are_tagged() {
        let style = textured(0.3);
        let good = candidate([1.0, 0.0], [1.0, 0.0], &style, style.pixels().to_owned());
        let mut nan = style.pixels().to_owned();
        nan[[0, 0, 0]] = f32::NAN;
        let broken = candidate([1.0, 0.0], [1.0, 0.0], &style, nan);
        let off_content = candidate([1.0, 0.0], [0.0, 1.0], &style, style.pixels().to_owned());
        let off_style = candidate([1.0, 0.0], [1.0, 0.1], &style, textured(0.75).pixels().to_owned());
        let flat = candidate([1.0, 0.0], [1.0, 0.0], &style, ImagePlane::filled(8, 8, [0.4; 3]).unwrap().into_pixels());
        let out = filter_triplets(vec![good, broken, off_content, off_style, flat], &FilterThresholds::default(), &PaletteScorer::default());
        assert_eq!(out.kept.len(), 1);
        let reasons: Vec<_> = out.rejected.iter().map(|v| v.reasons.clone()).collect();
        assert_eq!(reasons[0], vec![FilterReason::Quality]);
        assert_eq!(reasons[1], vec![FilterReason::ContentInconsistency]);
        assert_eq!(reasons[2], vec![FilterReason::StyleDiscrepancy]);
        assert!(reasons[3].contains(&FilterReason::Quality));
        assert_eq!(out.keep_ratio(), 0.2);
    }

    #[test]
    fn empty_input_and_review_manifest() {
        let out = filter_triplets(vec![], &FilterThresholds::default(), &PaletteScorer::default());
        assert!(out.kept.is_empty() && out.rejected.is_empty());
        let style = textured(0.3);
        let mut nan = style.pixels().to_owned();
        nan[[1, 1, 1]] = f32::INFINITY;
        let out = filter_triplets(
            vec![candidate([1.0, 0.0], [1.0, 0.0], &style, nan), candidate([1.0, 0.0], [1.0, 0.0], &style, style.pixels().to_owned())],
            &FilterThresholds::default(),
            &PaletteScorer::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("review.jsonl");
        out.write_review_manifest(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["decision"], "keep");
        assert_eq!(rows[1]["reasons"], serde_json::json!(["c"]));
    }

    #[test]
    fn full_scale_keep_ratio() {
        let ratio: f64 = 37_445.0 / 65_429.0;
        assert!((ratio - 0.572).abs() < 1e-3);
    }
}
