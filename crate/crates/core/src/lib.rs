//! Subinterval classification of running gait from knee and ankle
//! accelerometers: moment features, trend lines, entropy-based feature
//! selection, steady-state filtering and weighted minimum-distance
//! matching.

pub mod classify;
pub mod error;
pub mod filter;
pub mod ingest;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod select;
pub mod synth;
pub mod trend;

pub use classify::{ClassificationResult, TrainedModel};
pub use error::{Error, ErrorKind, Result};
pub use model::ModelFile;
