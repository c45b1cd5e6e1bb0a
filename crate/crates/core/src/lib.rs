pub mod catalog;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod model;
pub mod query;
pub mod serve;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
