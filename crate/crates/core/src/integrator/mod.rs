//! Image-prompt features, the residual integrator network, its trainer and
//! data pipeline, and the LDA separability probe.

mod feature;
mod filter;
mod lda;
mod mlp;
mod model_io;
pub mod synthetic;
mod train;
mod triplets;

pub use feature::{add_sub, FeatureSource, PromptFeature};
pub use filter::{filter_triplets, FilterOutcome, FilterReason, FilterThresholds, FilterVerdict, PaletteScorer, StyleScorer};
pub use lda::{lda_separability, lda_separability_vectors, LdaResult, LDA_RIDGE};
pub use mlp::{
    integrate_features, mlp_forward, Activation, IntegratorModel, IntegratorVariant, Linear, MlpProfile, TrainingMeta,
    FLATTEN_LAYOUT,
};
pub use model_io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    evaluate_loss, split_holdout, train_integrator, train_integrator_split, EpochLoss, TrainConfig, TrainReport,
};
pub use triplets::{
    build_triplets, pair_count, read_triplet_manifest, write_triplet_manifest, ColorTransferStylizer, FeatureEncoder,
    IdentityStylizer, NamedImage, Provenance, SkippedPair, StyleTriplet, Stylizer, TripletBatch, TripletCandidate,
    TripletRecord,
};
