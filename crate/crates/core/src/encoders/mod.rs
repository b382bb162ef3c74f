//! Cue encoders: turn continuous and categorical side information into bit
//! strings whose Hamming distance tracks cue similarity, and append them to
//! appearance descriptors.

mod cue;
mod lut;
mod schema;

pub use cue::{
    encode_continuous, encode_selector, normalize, quantization_steps, ContinuousCueSpec,
    CueKind, CueSpec, CueValue, SelectorCueSpec, MAX_BELOW_ONE,
};
pub use lut::CoordinateLut;
pub use schema::{augment, augment_with_block, encode_cues, CueSchema, NamedCue};
