use super::cue::CueValue;
use super::schema::{encode_cues, CueSchema};
use crate::bitvec::BinaryDescriptor;
use crate::error::{Error, Result};

/// Keypoint-coordinate codes for every pixel of a `width x height` image,
/// computed once so that encoding a keypoint is a single lookup.
#[derive(Debug, Clone)]
pub struct CoordinateLut {
    width: u32,
    height: u32,
    bits: usize,
    stride: usize,
    table: Vec<u64>,
}

impl CoordinateLut {
    /// Unpadded `u`-then-`v` codes with `intervals_u` and `intervals_v` bins.
    pub fn new(width: u32, height: u32, intervals_u: u32, intervals_v: u32) -> Result<Self> {
        let schema = CueSchema::keypoint(width, height, intervals_u, intervals_v, 1)?
            .with_padding(false);
        Self::from_schema(width, height, &schema)
    }

    /// Table for any two-cue continuous schema over pixel coordinates.
    pub fn from_schema(width: u32, height: u32, schema: &CueSchema) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec("lookup table needs a non-empty image".into()));
        }
        let bits = schema.block_bits();
        let stride = bits.div_ceil(64);
        let mut table = Vec::with_capacity(stride * width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                let code = encode_cues(
                    &[
                        CueValue::Continuous(f64::from(u)),
                        CueValue::Continuous(f64::from(v)),
                    ],
                    schema,
                )?;
                table.extend_from_slice(code.words());
            }
        }
        Ok(Self {
            width,
            height,
            bits,
            stride,
            table,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, u: u32, v: u32) -> Result<BinaryDescriptor> {
        if u >= self.width || v >= self.height {
            return Err(Error::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        let at = (v as usize * self.width as usize + u as usize) * self.stride;
        BinaryDescriptor::from_words(self.table[at..at + self.stride].to_vec(), self.bits)
    }
}
