//! Packed binary descriptors.
//!
//! Bit `i` lives in word `i / 64` at position `i % 64`, least significant
//! bit first. Storage bits at positions `>= len` are always zero, so a plain
//! word-wise XOR/popcount gives the Hamming distance without masking.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Fixed-length bit string compared by Hamming distance.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    words: Vec<u64>,
    len: usize,
}

impl BinaryDescriptor {
    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyDescriptor);
        }
        Ok(Self {
            words: vec![0; words_for(len)],
            len,
        })
    }

    pub fn from_fn(len: usize, mut bit: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut out = Self::zeros(len)?;
        for i in 0..len {
            if bit(i) {
                out.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(out)
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    /// Builds a descriptor from packed words. Bits beyond `len` are cleared.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyDescriptor);
        }
        let needed = words_for(len);
        if words.len() < needed {
            return Err(Error::LengthMismatch {
                expected: len,
                found: words.len() * WORD_BITS,
            });
        }
        words.truncate(needed);
        let tail = len % WORD_BITS;
        if tail != 0 {
            words[needed - 1] &= (1u64 << tail) - 1;
        }
        Ok(Self { words, len })
    }

    /// Uniformly random descriptor.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Result<Self> {
        let words = (0..words_for(len.max(1))).map(|_| rng.random()).collect();
        Self::from_words(words, len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; descriptors have at least one bit.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for {} bits", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn with_flipped(mut self, i: usize) -> Self {
        assert!(i < self.len, "bit {i} out of range for {} bits", self.len);
        self.words[i / WORD_BITS] ^= 1 << (i % WORD_BITS);
        self
    }

    pub fn complement(&self) -> Self {
        let words = self.words.iter().map(|w| !w).collect();
        Self::from_words(words, self.len).expect("same length")
    }

    /// Number of differing bit positions.
    pub fn hamming(&self, other: &Self) -> Result<u32> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                found: other.len,
            });
        }
        Ok(hamming_words(&self.words, &other.words))
    }

    /// Concatenates parts in order.
    pub fn concat<'a, I>(parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a BinaryDescriptor>,
    {
        let mut words = Vec::new();
        let mut len = 0;
        for part in parts {
            append_words(&mut words, &mut len, &part.words, part.len);
        }
        if len == 0 {
            return Err(Error::EmptyConcat);
        }
        Ok(Self { words, len })
    }

    /// `times` copies of `self` back to back. Zero copies is no block at all.
    pub fn repeat(&self, times: usize) -> Option<Self> {
        if times == 0 {
            return None;
        }
        let mut words = Vec::with_capacity(words_for(self.len * times));
        let mut len = 0;
        for _ in 0..times {
            append_words(&mut words, &mut len, &self.words, self.len);
        }
        Some(Self { words, len })
    }

    /// Packed payload: bit `i` at byte `i / 8`, position `i % 8`.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_payload(bytes: &[u8], len: usize) -> Result<Self> {
        let needed = len.div_ceil(8);
        if bytes.len() != needed {
            return Err(Error::format(
                "descriptor payload",
                format!("{len} bits need {needed} bytes, got {}", bytes.len()),
            ));
        }
        let words = bytes
            .chunks(8)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..chunk.len()].copy_from_slice(chunk);
                u64::from_le_bytes(buf)
            })
            .collect();
        let out = Self::from_words(words, len)?;
        if out.payload_bytes() != bytes {
            return Err(Error::format(
                "descriptor payload",
                "non-zero padding bits after the last valid bit",
            ));
        }
        Ok(out)
    }

    /// `u32` little-endian bit length followed by the packed payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let len = u32::try_from(self.len).expect("descriptor longer than u32::MAX bits");
        let mut out = len.to_le_bytes().to_vec();
        out.extend(self.payload_bytes());
        out
    }

    /// Parses one serialized descriptor, returning it and the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let header: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::format("descriptor", "truncated length header"))?;
        let len = u32::from_le_bytes(header) as usize;
        let end = 4 + len.div_ceil(8);
        let payload = bytes
            .get(4..end)
            .ok_or_else(|| Error::format("descriptor", "truncated payload"))?;
        Ok((Self::from_payload(payload, len)?, end))
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor<{}>(", self.len)?;
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

fn append_words(dst: &mut Vec<u64>, dst_len: &mut usize, src: &[u64], src_len: usize) {
    let shift = *dst_len % WORD_BITS;
    if shift == 0 {
        dst.extend_from_slice(src);
    } else {
        for &w in src {
            *dst.last_mut().expect("non-empty when shift > 0") |= w << shift;
            dst.push(w >> (WORD_BITS - shift));
        }
    }
    *dst_len += src_len;
    dst.truncate(words_for(*dst_len));
}

/// Hamming distance over equally sized packed word slices.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Hamming distance if it does not exceed `limit`; gives up as soon as the
/// running count passes it.
#[inline]
pub fn hamming_words_within(a: &[u64], b: &[u64], limit: u32) -> Option<u32> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0;
    for (x, y) in a.iter().zip(b) {
        acc += (x ^ y).count_ones();
        if acc > limit {
            return None;
        }
    }
    Some(acc)
}
