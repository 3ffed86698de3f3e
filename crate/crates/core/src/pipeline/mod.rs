//! Dataset schema, ingestion, target transforms and reproducible splits.

mod catalog;
mod dataset;
mod split;
mod transform;

use std::path::PathBuf;

use thiserror::Error;

pub use catalog::{PropertyCatalog, PropertySpec};
pub use dataset::{
    load_csv, load_dataset, property_subset, read_csv, read_jsonl, write_jsonl, LoadOutcome, PolymerRecord, Sample,
    Warning,
};
pub use split::{make_split, test_size, SplitPlan, MIN_SPLIT_SIZE, N_FOLDS, TEST_FRACTION};
pub use transform::{inverse_target, transform_target, Standardizer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("CSV has no psmiles column")]
    MissingPsmilesColumn,
    #[error("unreadable CSV: {0}")]
    Csv(String),
    #[error("line {line}: {message}")]
    Jsonl { line: u64, message: String },
    #[error("duplicate id {id:?} (line {line})")]
    DuplicateId { id: String, line: u64 },
    #[error("unknown property {0:?}")]
    UnknownProperty(String),
    #[error("{property} = {value} is not positive; log10 undefined")]
    NonpositiveLogInput { property: String, value: f64 },
    #[error("standardization needs at least 2 values, got {n}")]
    TooFewValues { n: usize },
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error("{n} records; at least {min} needed for a test set and 5 folds")]
    TooFewRecords { n: usize, min: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
