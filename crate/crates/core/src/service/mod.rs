//! Job-oriented composition service: a FIFO queue per priority class, a
//! bounded pool of backbone workers, a content-addressed run cache and the
//! `/v1` HTTP API.

mod artifacts;
mod http;
mod jobs;

pub use artifacts::{RunArtifacts, RunCache};
pub use http::{router, serve, ApiError, MAX_UPLOAD_BYTES};
pub use jobs::{
    BackboneFactory, CancelError, JobProgress, JobRecord, JobService, JobState, Priority, ServiceConfig, SubmitError,
    DATA_DIR_ENV, MODEL_ENV, QUEUE_LIMIT_ENV, WORKERS_ENV,
};
