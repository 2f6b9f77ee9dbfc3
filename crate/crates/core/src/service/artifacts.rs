use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::CompositionOutput;

/// Files written for one finished composition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub result: PathBuf,
    /// Decoded initial blend.
    pub preview: PathBuf,
    pub trace: PathBuf,
}

impl RunArtifacts {
    /// `result.png`, `preview.png` and `trace.jsonl` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            result: dir.join("result.png"),
            preview: dir.join("preview.png"),
            trace: dir.join("trace.jsonl"),
        }
    }

    /// `out.png` plus `out.preview.png` and `out.trace.jsonl` next to it.
    pub fn beside(out: impl AsRef<Path>) -> Self {
        let out = out.as_ref();
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
        let sibling = |suffix: &str| out.with_file_name(format!("{stem}{suffix}"));
        Self {
            result: out.to_path_buf(),
            preview: sibling(".preview.png"),
            trace: sibling(".trace.jsonl"),
        }
    }

    pub fn exists(&self) -> bool {
        self.result.is_file() && self.preview.is_file() && self.trace.is_file()
    }

    pub fn write(&self, output: &CompositionOutput) -> Result<()> {
        for p in [&self.result, &self.preview, &self.trace] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
        }
        output.image.save(&self.result)?;
        output.preview.save(&self.preview)?;
        output.trace.write_jsonl(&self.trace)?;
        Ok(())
    }
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Content-addressed store of finished runs, one directory per config hash.
#[derive(Debug, Clone)]
pub struct RunCache {
    root: PathBuf,
}

impl RunCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifacts(&self, config_hash: &str) -> RunArtifacts {
        RunArtifacts::in_dir(self.root.join(config_hash))
    }

    pub fn lookup(&self, config_hash: &str) -> Option<RunArtifacts> {
        let a = self.artifacts(config_hash);
        a.exists().then_some(a)
    }

    /// Writes into a scratch directory and renames it into place, so a
    /// partially written run is never visible.
    pub fn store(&self, config_hash: &str, output: &CompositionOutput) -> Result<RunArtifacts> {
        std::fs::create_dir_all(&self.root)?;
        let final_dir = self.root.join(config_hash);
        let n = SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed);
        let scratch = self.root.join(format!(".{config_hash}.{}.{n}.tmp", std::process::id()));
        if scratch.exists() {
            std::fs::remove_dir_all(&scratch)?;
        }
        RunArtifacts::in_dir(&scratch).write(output)?;
        if final_dir.exists() {
            std::fs::remove_dir_all(&final_dir)?;
        }
        std::fs::rename(&scratch, &final_dir)?;
        Ok(RunArtifacts::in_dir(final_dir))
    }
}
