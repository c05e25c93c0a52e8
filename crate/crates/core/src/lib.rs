//! Supervised mid-level features for word image representation.
//!
//! This crate learns a projection of local image blocks into a low-dimensional
//! space correlated with the characters the blocks overlap, using character
//! bounding box annotations available only at training time. The mid-level
//! features are extracted densely (with an exact integral-grid fast path),
//! aggregated into global Fisher-vector signatures and, optionally, pushed
//! through a word-attributes + common-subspace layer that embeds word images
//! and text strings into the same compact space for retrieval and recognition.
//!
//! Pipeline, end to end:
//!
//! 1. [`corpus`] — synthetic annotated word images, manifests, height
//!    normalization.
//! 2. [`features`] — dense multi-scale SIFT descriptors and PCA reduction.
//! 3. [`codebook`] — diagonal-covariance GMM vocabularies (EM).
//! 4. [`fisher`] — Fisher-vector encoding, spatial pyramids, normalizations.
//! 5. [`supervision`] — block sampling and character-region overlap labels.
//! 6. [`embedding`] — regularized CCA, the projection `U` and its quadrant
//!    rearrangement `Û`.
//! 7. [`midlevel`] — naive and fast (integral grid) mid-level extraction.
//! 8. [`wordrep`] — global signatures, string embeddings, attributes and the
//!    common subspace.
//! 9. [`eval`], [`archive`], [`experiment`] — metrics, model persistence and
//!    experiment orchestration.

pub mod alphabet;
pub mod archive;
pub mod codebook;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod fisher;
pub mod linalg;
pub mod midlevel;
pub mod supervision;
pub mod verify;
pub mod wordrep;

pub use error::{Error, Result};
