//! Token-level explanations and embedding geometry.
//!
//! [`integrated_gradients`] attributes a scalar prediction to the tokens of a
//! PSMILES string through the mean-pooled text embedding. [`cosine_matrix`]
//! and [`pca_reduce`] summarise token and polymer embeddings.

mod ig;
mod pca;
mod similarity;

use thiserror::Error;

use crate::model::ModelError;
use crate::ndmath::NdError;
use crate::psmiles::MergeError;

pub use ig::{
    attribute, integrated_gradients, normalize_by_star, Attribution, IgResult, LinearProbe, ModelScorer, Scorer,
};
pub use pca::{fix_sign, pca_reduce, Pca};
pub use similarity::{cosine_matrix, Edge, SimilarityMatrix};

/// Default number of integration steps.
pub const DEFAULT_STEPS: usize = 64;

#[derive(Debug, Error)]
pub enum AttrError {
    #[error("expected width {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("{tokens} tokens but {vectors} vectors")]
    LengthMismatch { tokens: usize, vectors: usize },
    #[error("integration steps must be at least 1")]
    Steps,
    #[error("no tokens to attribute")]
    EmptyTokens,
    #[error("no [*] token to normalize by")]
    NoReference,
    #[error("the [*] reference score is zero")]
    ZeroReference,
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("requested {k} components, at most {max} available")]
    ComponentsOutOfRange { k: usize, max: usize },
    #[error(transparent)]
    Shape(#[from] NdError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

impl AttrError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, AttrError::Model(e) if e.is_numerical())
    }
}
