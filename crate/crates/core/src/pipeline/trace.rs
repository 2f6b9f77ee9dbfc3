use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Blend,
    Invert,
    Reconstruct,
    Generate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hook {
    Denoiser,
    AttnImage,
    AttnText,
    StepAdain,
    Preserve,
    InitAdain,
    ForwardNoise,
}

/// One instrumentation event. `call_count` is the running total of denoiser
/// calls in the job when the event was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub phase: Phase,
    pub hook: Hook,
    pub call_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
    calls: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Counts a denoiser call and records it.
    pub fn denoiser_call(&mut self, phase: Phase, step: usize) {
        self.calls += 1;
        self.push(phase, step, Hook::Denoiser);
    }

    pub fn push(&mut self, phase: Phase, step: usize, hook: Hook) {
        self.records.push(TraceRecord {
            step,
            phase,
            hook,
            call_count: self.calls,
        });
    }

    pub fn denoiser_calls(&self) -> u64 {
        self.calls
    }

    pub fn calls_in(&self, phase: Phase) -> usize {
        self.count(phase, Hook::Denoiser)
    }

    pub fn count(&self, phase: Phase, hook: Hook) -> usize {
        self.records.iter().filter(|r| r.phase == phase && r.hook == hook).count()
    }

    /// Sorted distinct steps at which `hook` fired in `phase`.
    pub fn steps_with(&self, phase: Phase, hook: Hook) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.phase == phase && r.hook == hook)
            .map(|r| r.step)
            .collect();
        s.dedup();
        s
    }

    /// Distinct `(phase, hook)` kinds, in first-seen order.
    pub fn schema(&self) -> Vec<(Phase, Hook)> {
        let mut out = Vec::new();
        for r in &self.records {
            if !out.contains(&(r.phase, r.hook)) {
                out.push((r.phase, r.hook));
            }
        }
        out
    }

    /// `(phase, step, hook)` events with the given hooks removed.
    pub fn events_without(&self, hooks: &[Hook]) -> Vec<(Phase, usize, Hook)> {
        self.records
            .iter()
            .filter(|r| !hooks.contains(&r.hook))
            .map(|r| (r.phase, r.step, r.hook))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("serializable"));
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut t = Trace::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord =
                serde_json::from_str(&line).map_err(|e| Error::invalid(format!("trace line {}: {e}", i + 1)))?;
            t.calls = t.calls.max(r.call_count);
            t.records.push(r);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut t = Trace::new();
        t.denoiser_call(Phase::Invert, 1);
        t.push(Phase::Reconstruct, 1, Hook::AttnImage);
        let line = t.to_jsonl();
        assert_eq!(
            line.lines().next().unwrap(),
            r#"{"step":1,"phase":"invert","hook":"denoiser","call_count":1}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        t.write_jsonl(&p).unwrap();
        assert_eq!(Trace::read_jsonl(&p).unwrap(), t);
    }
}
