//! No-reference quality assessment for blurred images by statistical
//! aggregation of per-patch features and partial least squares regression.
//!
//! The pipeline is:
//!
//! 1. [`layout`] covers an image with overlapping square patches.
//! 2. [`backend`] turns every patch into a feature vector (a builtin
//!    low-level extractor, a feature file produced elsewhere, or an external
//!    deep model speaking a line protocol over a subprocess).
//! 3. [`aggregate`] collapses the `n × l` patch feature matrix into a
//!    fixed-length image descriptor: mean & std, quartiles, or root central
//!    moments.
//! 4. [`plsr`] regresses quality scores on the descriptors.
//! 5. [`pipeline`] trains one regressor per descriptor and averages their
//!    predicted scores.
//! 6. [`evaluation`] provides SROCC/PLCC/RMSE, four-parameter logistic
//!    mapping, content-disjoint Monte-Carlo splits, cross-dataset runs,
//!    training-ratio sweeps and the outlier ratio.
//!
//! [`dataset`] holds manifests and the binary feature container, and
//! [`synthetic`] generates deterministic test imagery.

pub mod aggregate;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod layout;
mod linalg;
pub mod pipeline;
pub mod plsr;
pub mod synthetic;

pub use aggregate::{AggregateError, AggregateKind, AggregatedFeature};
pub use backend::{BackendError, BackendKind, ExtractorConfig, FeatureSet, RawImage};
pub use dataset::{ArtifactTag, DatasetManifest, FeatureFile, ImageEntry, IngestError, ScoreKind};
pub use evaluation::{EvalError, EvalReport, LogisticParams, SplitPlan};
pub use layout::{ImageDims, LayoutError, PatchGrid, PatchSpec, RepresentationMode};
pub use pipeline::{EnsembleRule, PipelineError, SfaModel};
pub use plsr::{PlsrConfig, PlsrError, PlsrModel};

/// Union of every module error, used where stages are chained.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Plsr(#[from] PlsrError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
