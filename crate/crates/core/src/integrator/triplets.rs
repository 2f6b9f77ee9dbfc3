use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::feature::{FeatureSource, PromptFeature};
use crate::core_model::ImagePlane;
use crate::error::{Error, Result};

/// Content, style and stylized features of one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTriplet {
    pub f_c: PromptFeature,
    pub f_s: PromptFeature,
    pub f_l: PromptFeature,
}

impl StyleTriplet {
    pub fn new(f_c: PromptFeature, f_s: PromptFeature, f_l: PromptFeature) -> Result<Self> {
        f_c.check_shape(&f_s)?;
        f_c.check_shape(&f_l)?;
        Ok(Self { f_c, f_s, f_l })
    }

    pub fn scaled(&self, k: f32) -> Result<Self> {
        Self::new(self.f_c.scaled(k)?, self.f_s.scaled(k)?, self.f_l.scaled(k)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub content_id: String,
    pub style_id: String,
    pub stylizer_id: String,
}

/// One line of a triplet manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub provenance: Provenance,
    pub content_path: Option<String>,
    pub style_path: Option<String>,
    pub stylized_path: Option<String>,
    pub triplet: StyleTriplet,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    content_id: String,
    style_id: String,
    stylizer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    content_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    style_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stylized_path: Option<String>,
    f_c: Vec<Vec<f32>>,
    f_s: Vec<Vec<f32>>,
    f_l: Vec<Vec<f32>>,
}

impl TripletRecord {
    pub(crate) fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RecordLine {
            content_id: self.provenance.content_id.clone(),
            style_id: self.provenance.style_id.clone(),
            stylizer_id: self.provenance.stylizer_id.clone(),
            content_path: self.content_path.clone(),
            style_path: self.style_path.clone(),
            stylized_path: self.stylized_path.clone(),
            f_c: self.triplet.f_c.nested(),
            f_s: self.triplet.f_s.nested(),
            f_l: self.triplet.f_l.nested(),
        })
        .expect("serializable record")
    }

    fn from_line(line: &str) -> Result<Self> {
        let r: RecordLine = serde_json::from_str(line)?;
        let triplet = StyleTriplet::new(
            PromptFeature::from_nested(&r.f_c, FeatureSource::ImageContent)?,
            PromptFeature::from_nested(&r.f_s, FeatureSource::ImageStyle)?,
            PromptFeature::from_nested(&r.f_l, FeatureSource::ImageContent)?,
        )?;
        Ok(Self {
            provenance: Provenance {
                content_id: r.content_id,
                style_id: r.style_id,
                stylizer_id: r.stylizer_id,
            },
            content_path: r.content_path,
            style_path: r.style_path,
            stylized_path: r.stylized_path,
            triplet,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_triplet_manifest(path: impl AsRef<Path>, records: &[TripletRecord]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, &r.to_json())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a triplet manifest. Any malformed line fails the whole read with
/// its line number.
pub fn read_triplet_manifest(path: impl AsRef<Path>) -> Result<Vec<TripletRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut shape = None;
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = TripletRecord::from_line(&line)
            .map_err(|e| Error::invalid(format!("triplet manifest line {}: {e}", i + 1)))?;
        let s = rec.triplet.f_c.shape();
        if *shape.get_or_insert(s) != s {
            return Err(Error::invalid(format!(
                "triplet manifest line {}: shape {s:?} differs from {:?}",
                i + 1,
                shape.unwrap()
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Produces a stylized rendering of a content image in a style. The output
/// is raw pixels; it is not required to be a valid image.
pub trait Stylizer {
    fn id(&self) -> &str;
    fn stylize(&mut self, content: &ImagePlane, style: &ImagePlane) -> Result<Array3<f32>>;
}

/// Returns the content unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityStylizer;

impl Stylizer for IdentityStylizer {
    fn id(&self) -> &str {
        "identity"
    }

    fn stylize(&mut self, content: &ImagePlane, _style: &ImagePlane) -> Result<Array3<f32>> {
        Ok(content.pixels().to_owned())
    }
}

/// Per-channel colour transfer: content pixels renormalized to the style's
/// channel mean and std.
#[derive(Debug, Default, Clone, Copy)]
pub struct ColorTransferStylizer;

impl Stylizer for ColorTransferStylizer {
    fn id(&self) -> &str {
        "color_transfer"
    }

    fn stylize(&mut self, content: &ImagePlane, style: &ImagePlane) -> Result<Array3<f32>> {
        let cm = channel_stats(content.pixels());
        let sm = channel_stats(style.pixels());
        let mut out = content.pixels().to_owned();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            let (mc, sc) = cm[c];
            let (ms, ss) = sm[c];
            *v = (((*v as f64 - mc) / (sc + 1e-6) * ss + ms) as f32).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

pub(crate) fn channel_stats(px: ndarray::ArrayView3<'_, f32>) -> [(f64, f64); 3] {
    let mut out = [(0.0, 0.0); 3];
    for (c, o) in out.iter_mut().enumerate() {
        let ch = px.index_axis(ndarray::Axis(2), c);
        let n = ch.len() as f64;
        let mean = ch.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = ch.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        *o = (mean, var.sqrt());
    }
    out
}

/// Maps an image to adapter tokens.
pub trait FeatureEncoder {
    fn encode_image(&mut self, img: &ImagePlane) -> Result<PromptFeature>;
}

/// An image with an identifier and optional source path.
#[derive(Debug, Clone)]
pub struct NamedImage {
    pub id: String,
    pub image: ImagePlane,
    pub path: Option<String>,
}

impl NamedImage {
    pub fn new(id: impl Into<String>, image: ImagePlane) -> Self {
        Self {
            id: id.into(),
            image,
            path: None,
        }
    }
}

/// A built triplet together with the images needed for filtering.
#[derive(Debug, Clone)]
pub struct TripletCandidate {
    pub record: TripletRecord,
    pub style_image: ImagePlane,
    pub stylized_raw: Array3<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedPair {
    pub content_id: String,
    pub style_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub candidates: Vec<TripletCandidate>,
    pub skipped: Vec<SkippedPair>,
}

impl TripletBatch {
    pub fn triplets(&self) -> Vec<StyleTriplet> {
        self.candidates.iter().map(|c| c.record.triplet.clone()).collect()
    }

    pub fn records(&self) -> Vec<TripletRecord> {
        self.candidates.iter().map(|c| c.record.clone()).collect()
    }
}

/// Stylizes every (content, style) pair and encodes all three images.
///
/// A failing pair is logged and skipped. Content and style features are
/// encoded once per image.
pub fn build_triplets(
    contents: &[NamedImage],
    styles: &[NamedImage],
    stylizer: &mut dyn Stylizer,
    encoder: &mut dyn FeatureEncoder,
) -> Result<TripletBatch> {
    let mut batch = TripletBatch::default();
    let mut style_feats: HashMap<usize, Result<PromptFeature, String>> = HashMap::new();
    for content in contents {
        let f_c = encoder.encode_image(&content.image).map_err(|e| e.to_string());
        for (si, style) in styles.iter().enumerate() {
            let skip = |reason: String| SkippedPair {
                content_id: content.id.clone(),
                style_id: style.id.clone(),
                reason,
            };
            let f_c = match &f_c {
                Ok(f) => f.clone(),
                Err(e) => {
                    log::warn!("content {} not encodable: {e}", content.id);
                    batch.skipped.push(skip(format!("content encoding: {e}")));
                    continue;
                }
            };
            let f_s = style_feats
                .entry(si)
                .or_insert_with(|| {
                    encoder
                        .encode_image(&style.image)
                        .map(|f| f.with_source(FeatureSource::ImageStyle))
                        .map_err(|e| e.to_string())
                })
                .clone();
            let f_s = match f_s {
                Ok(f) => f,
                Err(e) => {
                    batch.skipped.push(skip(format!("style encoding: {e}")));
                    continue;
                }
            };
            let raw = match stylizer.stylize(&content.image, &style.image) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("stylizer failed on ({}, {}): {e}", content.id, style.id);
                    batch.skipped.push(skip(format!("stylizer: {e}")));
                    continue;
                }
            };
            let f_l = match ImagePlane::sanitized(raw.clone()).and_then(|img| encoder.encode_image(&img)) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("stylized ({}, {}) not encodable: {e}", content.id, style.id);
                    batch.skipped.push(skip(format!("stylized encoding: {e}")));
                    continue;
                }
            };
            let triplet = StyleTriplet::new(f_c.with_source(FeatureSource::ImageContent), f_s, f_l)?;
            batch.candidates.push(TripletCandidate {
                record: TripletRecord {
                    provenance: Provenance {
                        content_id: content.id.clone(),
                        style_id: style.id.clone(),
                        stylizer_id: stylizer.id().to_string(),
                    },
                    content_path: content.path.clone(),
                    style_path: style.path.clone(),
                    stylized_path: None,
                    triplet,
                },
                style_image: style.image.clone(),
                stylized_raw: raw,
            });
        }
    }
    Ok(batch)
}

/// Number of pairs a full cartesian build produces.
pub const fn pair_count(contents: usize, styles: usize) -> usize {
    contents * styles
}
