//! Similarity search backends sharing one contract: insert whole images,
//! query with a whole image, get per-image scores and descriptor matches.
//!
//! None of the backends knows about cues. Augmented descriptors are just
//! longer descriptors.

pub mod bf;
pub mod bof;
pub mod bst;
pub mod lsh;

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use bf::BruteForceIndex;
pub use bof::{BagOfFeaturesIndex, BofConfig, BowVector, Vocabulary, VocabularyParams};
pub use bst::{BstConfig, HammingTreeIndex};
pub use lsh::{LshConfig, LshIndex};

use crate::bitvec::hamming_words_within;
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

/// Nearest reference descriptor reported for one query descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Position of the descriptor within the query image.
    pub query_descriptor: u32,
    /// Global insertion index of the reference descriptor.
    pub reference_descriptor: u32,
    pub reference_image: Arc<str>,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image_id: Arc<str>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Descending by score, ties by ascending image id.
    pub scores: Vec<ImageScore>,
    pub matches: Vec<MatchResult>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Bf,
    Lsh,
    Bof,
    Bst,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::Bf, Backend::Lsh, Backend::Bof, Backend::Bst];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Bf => "bf",
            Backend::Lsh => "lsh",
            Backend::Bof => "bof",
            Backend::Bst => "bst",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bf" => Ok(Backend::Bf),
            "lsh" => Ok(Backend::Lsh),
            "bof" => Ok(Backend::Bof),
            "bst" => Ok(Backend::Bst),
            other => Err(Error::Config(vec![format!(
                "backend: unknown backend '{other}' (expected bf, lsh, bof or bst)"
            )])),
        }
    }
}

/// Per-backend settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub lsh: LshConfig,
    pub bof: BofConfig,
    pub bst: BstConfig,
}

/// Common contract of all backends. Inserts need exclusive access, queries
/// are read-only and may run concurrently.
pub trait SearchIndex: Send + Sync {
    fn backend(&self) -> Backend;

    fn descriptor_bits(&self) -> usize;

    fn image_count(&self) -> usize;

    fn insert(&mut self, image: &ImageRecord) -> Result<()>;

    /// Finishes pending work after inserts (vocabulary training for BoF).
    fn commit(&mut self) -> Result<()> {
        Ok(())
    }

    /// Untimed query.
    fn search(&self, image: &ImageRecord, tau: f64) -> Result<(Vec<ImageScore>, Vec<MatchResult>)>;

    fn query(&self, image: &ImageRecord, tau: f64) -> Result<QueryResult> {
        let start = Instant::now();
        let (scores, matches) = self.search(image, tau)?;
        Ok(QueryResult {
            scores,
            matches,
            elapsed: start.elapsed(),
        })
    }
}

pub fn build_index(
    backend: Backend,
    descriptor_bits: usize,
    config: &IndexConfig,
) -> Result<Box<dyn SearchIndex>> {
    Ok(match backend {
        Backend::Bf => Box::new(BruteForceIndex::new(descriptor_bits)?),
        Backend::Lsh => Box::new(LshIndex::new(descriptor_bits, config.lsh.clone())?),
        Backend::Bof => Box::new(BagOfFeaturesIndex::new(descriptor_bits, config.bof.clone())?),
        Backend::Bst => Box::new(HammingTreeIndex::new(descriptor_bits, config.bst.clone())?),
    })
}

/// Largest integer distance admitted by a real threshold `tau`.
pub fn distance_limit(tau: f64, descriptor_bits: usize) -> Result<u32> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Config(vec![format!(
            "tau: threshold must be finite and non-negative, got {tau}"
        )]));
    }
    Ok(tau.floor().min(descriptor_bits as f64) as u32)
}

/// Flat storage of every inserted descriptor, grouped by image.
#[derive(Debug, Clone)]
pub(crate) struct DescriptorStore {
    bits: usize,
    stride: usize,
    words: Vec<u64>,
    owner: Vec<u32>,
    images: Vec<Arc<str>>,
    ranges: Vec<Range<u32>>,
    ids: HashSet<Arc<str>>,
}

impl DescriptorStore {
    pub(crate) fn new(bits: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::EmptyDescriptor);
        }
        Ok(Self {
            bits,
            stride: bits.div_ceil(64),
            words: Vec::new(),
            owner: Vec::new(),
            images: Vec::new(),
            ranges: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub(crate) fn bits(&self) -> usize {
        self.bits
    }

    pub(crate) fn check_lengths(&self, image: &ImageRecord) -> Result<()> {
        match image.descriptors.iter().find(|d| d.len() != self.bits) {
            Some(d) => Err(Error::LengthMismatch {
                expected: self.bits,
                found: d.len(),
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_insert(&self, image: &ImageRecord) -> Result<()> {
        if self.ids.contains(image.image_id.as_str()) {
            return Err(Error::DuplicateImage(image.image_id.clone()));
        }
        self.check_lengths(image)
    }

    /// Appends an already checked image; returns its slot and descriptor ids.
    pub(crate) fn push(&mut self, image: &ImageRecord) -> (u32, Range<u32>) {
        let slot = self.images.len() as u32;
        let start = self.owner.len() as u32;
        for d in &image.descriptors {
            self.words.extend_from_slice(d.words());
            self.owner.push(slot);
        }
        let id: Arc<str> = Arc::from(image.image_id.as_str());
        self.ids.insert(id.clone());
        self.images.push(id);
        let range = start..self.owner.len() as u32;
        self.ranges.push(range.clone());
        (slot, range)
    }

    pub(crate) fn len(&self) -> usize {
        self.owner.len()
    }

    pub(crate) fn image_count(&self) -> usize {
        self.images.len()
    }

    #[inline]
    pub(crate) fn descriptor(&self, id: u32) -> &[u64] {
        let at = id as usize * self.stride;
        &self.words[at..at + self.stride]
    }

    pub(crate) fn owner(&self, id: u32) -> u32 {
        self.owner[id as usize]
    }

    pub(crate) fn image_id(&self, slot: u32) -> &Arc<str> {
        &self.images[slot as usize]
    }

    pub(crate) fn range(&self, slot: u32) -> Range<u32> {
        self.ranges[slot as usize].clone()
    }

    pub(crate) fn to_descriptor(&self, id: u32) -> crate::bitvec::BinaryDescriptor {
        crate::bitvec::BinaryDescriptor::from_words(self.descriptor(id).to_vec(), self.bits)
            .expect("stored descriptors are canonical")
    }

    /// Nearest of `ids` (visited in ascending order) within `limit`.
    pub(crate) fn nearest_sorted(
        &self,
        query: &[u64],
        ids: impl IntoIterator<Item = u32>,
        limit: u32,
    ) -> Option<(u32, u32)> {
        let mut best: Option<(u32, u32)> = None;
        let mut bound = limit;
        for id in ids {
            if let Some(d) = hamming_words_within(query, self.descriptor(id), bound) {
                best = Some((d, id));
                if d == 0 {
                    break;
                }
                bound = d - 1;
            }
        }
        best
    }

    /// Turns per-descriptor nearest neighbors into a query result with match
    /// counts as image scores.
    pub(crate) fn tally(
        &self,
        nearest: impl IntoIterator<Item = (u32, Option<(u32, u32)>)>,
    ) -> (Vec<ImageScore>, Vec<MatchResult>) {
        let mut counts = vec![0u32; self.images.len()];
        let mut matches = Vec::new();
        for (qi, hit) in nearest {
            if let Some((distance, id)) = hit {
                let slot = self.owner(id);
                counts[slot as usize] += 1;
                matches.push(MatchResult {
                    query_descriptor: qi,
                    reference_descriptor: id,
                    reference_image: self.image_id(slot).clone(),
                    distance,
                });
            }
        }
        let scores = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(slot, &c)| ImageScore {
                image_id: self.images[slot].clone(),
                score: f64::from(c),
            })
            .collect();
        (rank_scores(scores), matches)
    }
}

/// Sorts by descending score, then ascending image id.
pub fn rank_scores(mut scores: Vec<ImageScore>) -> Vec<ImageScore> {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    scores
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_limits() {
        assert_eq!(distance_limit(27.2, 272).unwrap(), 27);
        assert_eq!(distance_limit(0.0, 8).unwrap(), 0);
        assert_eq!(distance_limit(1e9, 8).unwrap(), 8);
        assert!(distance_limit(-1.0, 8).is_err());
        assert!(distance_limit(f64::NAN, 8).is_err());
    }

    #[test]
    fn backend_names() {
        for b in Backend::ALL {
            assert_eq!(b.as_str().parse::<Backend>().unwrap(), b);
        }
        assert!("kd".parse::<Backend>().is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let s = |id: &str, score| ImageScore {
            image_id: Arc::from(id),
            score,
        };
        let ranked = rank_scores(vec![s("b", 2.0), s("c", 5.0), s("a", 2.0)]);
        let ids: Vec<&str> = ranked.iter().map(|s| &*s.image_id).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }
}
