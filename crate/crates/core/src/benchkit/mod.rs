//! Benchmark manifests, metric scoring through pluggable scorers, and
//! report rendering.

mod manifest;
mod metrics;
mod report;

pub use manifest::{
    load_manifest, BenchmarkKind, BenchmarkSample, ClipTScope, Manifest, ManifestError, SampleInputs,
    GLOBAL_SCOPE_ORIGIN,
};
pub use metrics::{
    box_crop, hybrid_image, psnr_outside_box, score_sample, CommandScorer, Metric, MetricRow, MetricScorer,
    MockPoolScorer, MockScorer, PoolScorer, ScoreInput, ScorerRegistry, PSNR_CAP_DB,
};
pub use report::{
    aggregate, evaluate_run, relative_improvement, render_csv, render_improvement, render_rows_csv, render_table,
    report_config_hash, stable_mean, EvalReport,
};
