use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::core_model::{ImagePlane, MaskKind, MaskPlane, Rect};
use crate::error::{Error, Result};

/// Region a CLIP-T score is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipTScope {
    /// Whole result image; prompts that describe the full scene.
    Global,
    /// The background-box crop of the result.
    #[default]
    Local,
}

/// Origin tag that permits a global CLIP-T scope.
pub const GLOBAL_SCOPE_ORIGIN: &str = "tf_icon";

/// One benchmark case. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub bg_path: String,
    pub fg_path: String,
    pub bg_box_path: String,
    pub fg_mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default)]
    pub domain_tags: Vec<String>,
    #[serde(default)]
    pub clip_t_scope: ClipTScope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Decoded inputs of a sample.
#[derive(Debug, Clone)]
pub struct SampleInputs {
    pub bg: ImagePlane,
    pub fg: ImagePlane,
    pub bg_box: MaskPlane,
    pub fg_mask: MaskPlane,
}

impl SampleInputs {
    pub fn box_rect(&self) -> Rect {
        self.bg_box.bounding_box().expect("validated nonempty box")
    }
}

impl BenchmarkSample {
    pub fn resolve(&self, base: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    fn paths(&self) -> [(&'static str, &str); 4] {
        [
            ("bg_path", &self.bg_path),
            ("fg_path", &self.fg_path),
            ("bg_box_path", &self.bg_box_path),
            ("fg_mask_path", &self.fg_mask_path),
        ]
    }

    fn validate(&self, base: &Path) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        for (name, rel) in self.paths() {
            if !self.resolve(base, rel).is_file() {
                return Err(format!("{name} {rel:?} does not resolve to a file"));
            }
        }
        if self.clip_t_scope == ClipTScope::Global && self.origin.as_deref() != Some(GLOBAL_SCOPE_ORIGIN) {
            return Err(format!("global CLIP-T scope requires origin {GLOBAL_SCOPE_ORIGIN:?}"));
        }
        Ok(())
    }

    /// Loads and checks images and masks.
    pub fn load_inputs(&self, base: &Path) -> Result<SampleInputs> {
        let bg = ImagePlane::load(self.resolve(base, &self.bg_path))?;
        let fg = ImagePlane::load(self.resolve(base, &self.fg_path))?;
        let bg_box = MaskPlane::load(self.resolve(base, &self.bg_box_path), MaskKind::BgBox)?;
        let fg_mask = MaskPlane::load(self.resolve(base, &self.fg_mask_path), MaskKind::FgObject)?;
        if bg_box.dims() != bg.dims() || fg_mask.dims() != fg.dims() {
            return Err(Error::invalid(format!("sample {}: mask and image sizes differ", self.id)));
        }
        if bg_box.is_empty() {
            return Err(Error::invalid(format!("sample {}: empty background box", self.id)));
        }
        Ok(SampleInputs { bg, fg, bg_box, fg_mask })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Cross-domain subset of the earlier composition benchmark.
    Baseline,
    Extended,
}

impl BenchmarkKind {
    pub const fn expected_count(self) -> usize {
        match self {
            BenchmarkKind::Baseline => 95,
            BenchmarkKind::Extended => 367,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub samples: Vec<BenchmarkSample>,
    pub errors: Vec<ManifestError>,
}

impl Manifest {
    /// Warns when the sample count differs from the benchmark's size.
    pub fn check_count(&self, kind: BenchmarkKind) -> bool {
        let ok = self.samples.len() == kind.expected_count();
        if !ok {
            log::warn!(
                "{} has {} valid samples, {kind:?} benchmark has {}",
                self.path.display(),
                self.samples.len(),
                kind.expected_count()
            );
        }
        ok
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Reads a JSONL manifest. Rows that do not parse, repeat an id or point
/// at missing files are collected in `errors`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut samples: Vec<BenchmarkSample> = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<BenchmarkSample>(&line)
            .map_err(|e| e.to_string())
            .and_then(|s| s.validate(&base_dir).map(|_| s))
            .and_then(|s| {
                if samples.iter().any(|o| o.id == s.id) {
                    Err(format!("duplicate id {:?}", s.id))
                } else {
                    Ok(s)
                }
            });
        match parsed {
            Ok(s) => samples.push(s),
            Err(message) => {
                log::warn!("{}:{}: {message}", path.display(), i + 1);
                errors.push(ManifestError { line: i + 1, message });
            }
        }
    }
    log::info!("{}: {} samples, {} malformed rows", path.display(), samples.len(), errors.len());
    Ok(Manifest {
        path: path.to_path_buf(),
        base_dir,
        samples,
        errors,
    })
}
