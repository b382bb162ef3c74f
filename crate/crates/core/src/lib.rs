//! Cue-augmented binary descriptors for visual place recognition.
//!
//! Keypoint positions and semantic labels are encoded as Hamming-compatible
//! bit strings and appended to appearance descriptors, so that any search
//! structure built for plain binary descriptors works unchanged. The crate
//! ships four such structures (exhaustive, multi-probe LSH, vocabulary tree,
//! Hamming search tree), a dataset format with a synthetic generator, and
//! the precision/recall and mAP evaluation used to sweep the augmentation
//! weight.

pub mod bitvec;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod index;
pub mod sweep;

pub use bitvec::BinaryDescriptor;
pub use error::{Error, Result};
