use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::manifest::Manifest;
use super::metrics::{box_crop, hybrid_image, prepare_pool, score_sample, Metric, MetricRow, ScorerRegistry};
use crate::core_model::ImagePlane;
use crate::error::Result;
use crate::util::sha256_hex;

/// Evaluation of one method over a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    /// Mean of each metric over rows where it is available.
    pub aggregates: BTreeMap<Metric, f64>,
    /// Pool-level metrics; `None` when the scorer failed.
    pub pooled: BTreeMap<Metric, Option<f64>>,
    /// Sample ids without a result image.
    pub missing: Vec<String>,
    /// Sample ids whose inputs or result could not be scored.
    pub failed: Vec<String>,
}

/// Order-independent mean: values are summed in sorted order.
pub fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Means over available values of each per-sample metric.
pub fn aggregate(rows: &[MetricRow]) -> BTreeMap<Metric, f64> {
    let mut out = BTreeMap::new();
    for m in Metric::PER_SAMPLE {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.get(m)).collect();
        if let Some(mean) = stable_mean(&vals) {
            out.insert(m, mean);
        }
    }
    out
}

/// Hash of everything that affects scores: method, samples, scorers.
pub fn report_config_hash(method: &str, manifest: &Manifest, registry: &ScorerRegistry) -> String {
    let samples: Vec<_> = manifest
        .samples
        .iter()
        .map(|s| serde_json::to_value(s).expect("serializable sample"))
        .collect();
    let doc = json!({
        "method": method,
        "samples": samples,
        "scorers": registry.descriptors(),
    });
    sha256_hex(doc.to_string().as_bytes())
}

fn find_result(dir: &Path, id: &str) -> Option<std::path::PathBuf> {
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Scores `<results_dir>/<id>.png` (or `.jpg`) for every manifest sample.
/// Missing results are listed and excluded from aggregates.
pub fn evaluate_run(results_dir: impl AsRef<Path>, manifest: &Manifest, registry: &ScorerRegistry, method: &str) -> Result<EvalReport> {
    let dir = results_dir.as_ref();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let mut failed = Vec::new();
    let mut pool_results = Vec::new();
    let mut pool_refs = Vec::new();
    for sample in &manifest.samples {
        let Some(path) = find_result(dir, &sample.id) else {
            missing.push(sample.id.clone());
            continue;
        };
        let scored = (|| -> Result<_> {
            let inputs = sample.load_inputs(&manifest.base_dir)?;
            let result = ImagePlane::load(&path)?;
            let row = score_sample(sample, &inputs, &result, registry)?;
            Ok((row, box_crop(&result, &inputs)?, box_crop(&hybrid_image(&inputs)?, &inputs)?))
        })();
        match scored {
            Ok((row, rc, hc)) => {
                rows.push(row);
                pool_results.push(rc);
                pool_refs.push(hc);
            }
            Err(e) => {
                log::warn!("sample {} not scored: {e}", sample.id);
                failed.push(sample.id.clone());
            }
        }
    }
    if !missing.is_empty() {
        log::warn!("{} results missing: {}", missing.len(), missing.join(", "));
    }
    let mut pooled = BTreeMap::new();
    for scorer in registry.pool_scorers() {
        let v = prepare_pool(&pool_results, scorer.input_size())
            .and_then(|r| Ok((r, prepare_pool(&pool_refs, scorer.input_size())?)))
            .and_then(|(r, h)| scorer.score_pool(&r, &h));
        let v = match v {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("{} pool scorer failed: {e}", scorer.metric().name());
                None
            }
        };
        pooled.insert(scorer.metric(), v);
    }
    Ok(EvalReport {
        method: method.to_string(),
        config_hash: report_config_hash(method, manifest, registry),
        aggregates: aggregate(&rows),
        rows,
        pooled,
        missing,
        failed,
    })
}

impl EvalReport {
    /// Aggregate or pooled value of `m`.
    pub fn value(&self, m: Metric) -> Option<f64> {
        self.aggregates.get(&m).copied().or_else(|| self.pooled.get(&m).copied().flatten())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Relative improvement in percent, positive when `ours` is better.
pub fn relative_improvement(baseline: f64, ours: f64, lower_is_better: bool) -> f64 {
    let d = if lower_is_better { baseline - ours } else { ours - baseline };
    100.0 * d / baseline.abs()
}

/// `"30.5%"`-style rendering with one decimal.
pub fn render_improvement(baseline: f64, ours: f64, lower_is_better: bool) -> String {
    format!("{:.1}%", relative_improvement(baseline, ours, lower_is_better))
}

fn metrics_present(reports: &[EvalReport]) -> Vec<Metric> {
    Metric::PER_SAMPLE
        .iter()
        .chain(&Metric::POOLED)
        .copied()
        .filter(|m| reports.iter().any(|r| r.value(*m).is_some()))
        .collect()
}

/// Methods as rows, metrics as columns.
pub fn render_table(reports: &[EvalReport]) -> String {
    let metrics = metrics_present(reports);
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = write!(s, "{:<width$}", "method");
    for m in &metrics {
        let arrow = if m.lower_is_better() { "↓" } else { "↑" };
        let _ = write!(s, " {:>10}", format!("{}{arrow}", m.name()));
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<width$}", r.method);
        for m in &metrics {
            match r.value(*m) {
                Some(v) => {
                    let _ = write!(s, " {v:>10.4}");
                }
                None => {
                    let _ = write!(s, " {:>10}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn render_csv(reports: &[EvalReport]) -> String {
    let metrics = metrics_present(reports);
    let mut s = String::from("method");
    for m in &metrics {
        s.push(',');
        s.push_str(m.name());
    }
    s.push('\n');
    for r in reports {
        s.push_str(&r.method);
        for m in &metrics {
            s.push(',');
            if let Some(v) = r.value(*m) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

/// Per-sample rows as CSV.
pub fn render_rows_csv(report: &EvalReport) -> String {
    let mut s = String::from("id");
    for m in Metric::PER_SAMPLE {
        s.push(',');
        s.push_str(m.name());
    }
    s.push('\n');
    for row in &report.rows {
        s.push_str(&row.id);
        for m in Metric::PER_SAMPLE {
            s.push(',');
            if let Some(v) = row.get(m) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}
