//! Domain types shared by every stage of the pipeline: tagged representation
//! matrices, Gram matrices, CKA grids, label matrices and block-group layouts.
//!
//! Everything here is immutable after construction.

mod blocks;
mod labels;
mod matrix;
mod tag;

pub use blocks::BlockGroupSpec;
pub use labels::LabelMatrix;
pub(crate) use matrix::mean_defined;
pub use matrix::{flatten_sample_block, CkaMatrix, GramMatrix, RepMatrix, MIN_SAMPLES};
pub use tag::{LayerTag, Method, Parity};

use crate::error::{Error, Result};

/// Checks that every matrix has the same number of rows as the first one.
pub fn validate_alignment(reps: &[RepMatrix]) -> Result<()> {
    let first = reps
        .first()
        .ok_or_else(|| Error::precondition("no representations to align"))?;
    let expected = first.samples();
    match reps.iter().find(|r| r.samples() != expected) {
        Some(bad) => Err(Error::Alignment {
            expected,
            found: bad.samples(),
            tag: Box::new(bad.tag().clone()),
        }),
        None => Ok(()),
    }
}
