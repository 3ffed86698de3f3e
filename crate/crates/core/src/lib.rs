//! Polymer property prediction from fused language-model and 3D-structure
//! embeddings.
//!
//! The crate covers the whole desk-side pipeline around two precomputed
//! embedding files:
//!
//! * [`psmiles`]: repeat-unit validation, capping, chemical tokenization and
//!   subword merge maps.
//! * [`embed_store`]: the PLYE/PLYT embedding file formats and deterministic
//!   synthetic embeddings.
//! * [`ndmath`]: a small f64 tensor engine with hand-written backward passes.
//! * [`model`]: the LoRA-adapted gated-fusion regressor and its PLYM
//!   checkpoints.
//! * [`pipeline`]: property catalog, CSV ingestion, target transforms and
//!   seeded splits.
//! * [`trainer`]: AdamW, plateau scheduling, early stopping, cross-validation,
//!   grid search, metrics and a ridge baseline.
//! * [`attribution`]: integrated gradients over token embeddings, cosine
//!   similarity graphs and PCA.
//! * [`cli`]: the `polyllmem` command line front end.

pub mod attribution;
pub mod cli;
pub mod embed_store;
pub mod model;
pub mod ndmath;
pub mod pipeline;
pub mod psmiles;
pub mod rng;
pub mod trainer;
