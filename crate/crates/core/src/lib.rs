//! Representation-similarity toolkit.
//!
//! * [`repcore`]: tagged representation matrices and shared domain types.
//! * [`similarity`]: linear-kernel Gram, HSIC and CKA, including layer-by-layer grids.
//! * [`ingest`]: NPY array files and the JSON run manifest.
//! * [`analysis`]: cross-seed/cross-method grids, augmentation invariance, class alignment.
//! * [`probe`]: multinomial logistic linear probes.
//! * [`toytrain`]: a small residual network trained with cross-entropy or InfoNCE,
//!   with residual/post-residual taps.

pub mod analysis;
pub mod error;
pub mod ingest;
pub mod probe;
pub mod repcore;
pub mod similarity;
pub mod toytrain;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use repcore::{
    validate_alignment, BlockGroupSpec, CkaMatrix, GramMatrix, LabelMatrix, LayerTag, Method, Parity, RepMatrix,
};
pub use similarity::{cka, cka_features, cka_reps, gram, hsic, pairwise_cka};
