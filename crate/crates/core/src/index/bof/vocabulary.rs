//! Hierarchical vocabulary of binary visual words.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmajority::k_majority;
use crate::bitvec::{hamming_words, BinaryDescriptor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BVOC";
const VERSION: u32 = 1;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularyParams {
    pub branching: usize,
    pub depth: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for VocabularyParams {
    fn default() -> Self {
        Self {
            branching: 10,
            depth: 3,
            max_iterations: 10,
            seed: 0xb0f,
        }
    }
}

impl VocabularyParams {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut problems = Vec::new();
        if self.branching < 2 {
            problems.push(format!("{prefix}branching must be at least 2, got {}", self.branching));
        }
        if self.depth == 0 {
            problems.push(format!("{prefix}depth must be at least 1"));
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    /// Unused (all zero) for the root.
    centroid: BinaryDescriptor,
    children: Vec<u32>,
    word: Option<u32>,
}

/// Sparse word histogram, idf weighted and L1 normalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BowVector(BTreeMap<u32, f64>);

impl BowVector {
    /// Normalizes non-negative weights to unit sum, dropping zeros. All-zero
    /// input gives the empty vector.
    pub fn from_weights(weights: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (w, x) in weights {
            if x > 0.0 {
                *map.entry(w).or_insert(0.0) += x;
            }
        }
        let total: f64 = map.values().sum();
        if total > 0.0 {
            map.values_mut().for_each(|x| *x /= total);
        }
        Self(map)
    }

    pub fn get(&self, word: u32) -> f64 {
        self.0.get(&word).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0.iter().map(|(&w, &x)| (w, x))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 - |a - b|_1 / 2`, and 0 when either side is empty.
    pub fn l1_similarity(&self, other: &BowVector) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        let words: BTreeSet<u32> = self.0.keys().chain(other.0.keys()).copied().collect();
        let diff: f64 = words
            .into_iter()
            .map(|w| (self.get(w) - other.get(w)).abs())
            .sum();
        1.0 - 0.5 * diff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    branching: usize,
    depth: usize,
    bits: usize,
    nodes: Vec<Node>,
    idf: Vec<f64>,
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::format("vocabulary", "truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// `ln(total / n)` per word, 0 for words never seen.
fn idf_table(occurrences: &[usize], total: usize) -> Vec<f64> {
    occurrences
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                (total as f64 / n as f64).ln()
            }
        })
        .collect()
}

impl Vocabulary {
    /// Recursive k-majority clustering of `descriptors` into a tree of at most
    /// `branching` children per node and `depth` levels. Word ids follow
    /// depth-first order; idf is computed over the training descriptors.
    pub fn train(descriptors: &[BinaryDescriptor], params: &VocabularyParams) -> Result<Self> {
        let problems = params.problems("");
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        if descriptors.len() < params.branching {
            return Err(Error::TooFewDescriptors {
                needed: params.branching,
                got: descriptors.len(),
            });
        }
        let bits = descriptors[0].len();
        if let Some(d) = descriptors.iter().find(|d| d.len() != bits) {
            return Err(Error::LengthMismatch {
                expected: bits,
                found: d.len(),
            });
        }
        let mut vocab = Self {
            branching: params.branching,
            depth: params.depth,
            bits,
            nodes: vec![Node {
                centroid: BinaryDescriptor::zeros(bits)?,
                children: Vec::new(),
                word: None,
            }],
            idf: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let all: Vec<&BinaryDescriptor> = descriptors.iter().collect();
        let mut occurrences = Vec::new();
        vocab.grow(0, &all, 0, params, &mut rng, &mut occurrences);
        vocab.idf = idf_table(&occurrences, descriptors.len());
        Ok(vocab)
    }

    fn grow(
        &mut self,
        at: usize,
        data: &[&BinaryDescriptor],
        level: usize,
        params: &VocabularyParams,
        rng: &mut ChaCha8Rng,
        occurrences: &mut Vec<usize>,
    ) {
        let clusters: Vec<(BinaryDescriptor, Vec<&BinaryDescriptor>)> = if level == self.depth {
            Vec::new()
        } else if data.len() <= self.branching {
            let mut distinct: Vec<(BinaryDescriptor, Vec<&BinaryDescriptor>)> = Vec::new();
            for &d in data {
                match distinct.iter_mut().find(|(c, _)| c == d) {
                    Some((_, members)) => members.push(d),
                    None => distinct.push((d.clone(), vec![d])),
                }
            }
            distinct
        } else {
            let clustering = k_majority(data, self.branching, params.max_iterations, rng);
            let mut members = vec![Vec::new(); self.branching];
            for (&d, &c) in data.iter().zip(&clustering.assignment) {
                members[c].push(d);
            }
            clustering
                .centroids
                .into_iter()
                .zip(members)
                .filter(|(_, m)| !m.is_empty())
                .collect()
        };

        if clusters.len() <= 1 {
            self.nodes[at].word = Some(occurrences.len() as u32);
            occurrences.push(data.len());
            return;
        }
        for (centroid, members) in clusters {
            let child = self.nodes.len();
            self.nodes.push(Node {
                centroid,
                children: Vec::new(),
                word: None,
            });
            self.nodes[at].children.push(child as u32);
            self.grow(child, &members, level + 1, params, rng, occurrences);
        }
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn descriptor_bits(&self) -> usize {
        self.bits
    }

    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Greedy descent: nearest child at every level, lowest index on ties.
    pub fn word_of(&self, words: &[u64]) -> u32 {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            if let Some(w) = node.word {
                return w;
            }
            let mut best = (u32::MAX, node.children[0]);
            for &c in &node.children {
                let d = hamming_words(self.nodes[c as usize].centroid.words(), words);
                if d < best.0 {
                    best = (d, c);
                }
            }
            at = best.1 as usize;
        }
    }

    pub fn transform_words<'a>(&self, descriptors: impl IntoIterator<Item = &'a [u64]>) -> BowVector {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for d in descriptors {
            *counts.entry(self.word_of(d)).or_insert(0) += 1;
        }
        BowVector::from_weights(
            counts
                .into_iter()
                .map(|(w, n)| (w, n as f64 * self.idf[w as usize])),
        )
    }

    pub fn transform(&self, descriptors: &[BinaryDescriptor]) -> Result<BowVector> {
        if let Some(d) = descriptors.iter().find(|d| d.len() != self.bits) {
            return Err(Error::LengthMismatch {
                expected: self.bits,
                found: d.len(),
            });
        }
        Ok(self.transform_words(descriptors.iter().map(|d| d.words())))
    }

    /// Replaces idf with `ln(N / n_w)` over documents, where `n_w` counts
    /// the documents containing word `w` at least once.
    pub fn set_idf_from_documents<'a, D, I>(&mut self, documents: D)
    where
        D: IntoIterator<Item = I>,
        I: IntoIterator<Item = &'a [u64]>,
    {
        let mut containing = vec![0usize; self.word_count()];
        let mut total = 0;
        for doc in documents {
            total += 1;
            let words: BTreeSet<u32> = doc.into_iter().map(|d| self.word_of(d)).collect();
            for w in words {
                containing[w as usize] += 1;
            }
        }
        self.idf = idf_table(&containing, total);
    }

    /// Checks fan-out, depth, centroid lengths, word numbering and idf.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let mut next_word = 0u32;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, level)) = stack.pop() {
            let node = &self.nodes[at];
            if node.centroid.len() != self.bits {
                return Err(format!("node {at} centroid has {} bits", node.centroid.len()));
            }
            if level > self.depth {
                return Err(format!("node {at} below depth {}", self.depth));
            }
            match node.word {
                Some(w) if node.children.is_empty() => {
                    if w != next_word {
                        return Err(format!("word {w} out of depth-first order"));
                    }
                    next_word += 1;
                }
                None if (2..=self.branching).contains(&node.children.len()) => {
                    stack.extend(node.children.iter().rev().map(|&c| (c as usize, level + 1)));
                }
                _ => return Err(format!("node {at} malformed")),
            }
        }
        if next_word as usize != self.idf.len() {
            return Err("idf table size differs from word count".into());
        }
        if self.idf.iter().any(|x| !(*x >= 0.0)) {
            return Err("negative idf weight".into());
        }
        Ok(())
    }

    /// `BVOC`, then u32 LE version, branching, depth, bits and node count;
    /// per node in creation order u32 parent, u32 word (both `u32::MAX`
    /// when absent) and the centroid payload; then u32 word count and one
    /// f64 LE idf per word.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut parent = vec![NONE; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                parent[c as usize] = i as u32;
            }
        }
        let mut out = MAGIC.to_vec();
        for x in [
            VERSION,
            self.branching as u32,
            self.depth as u32,
            self.bits as u32,
            self.nodes.len() as u32,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for (n, p) in self.nodes.iter().zip(parent) {
            out.extend_from_slice(&p.to_le_bytes());
            out.extend_from_slice(&n.word.unwrap_or(NONE).to_le_bytes());
            out.extend_from_slice(&n.centroid.payload_bytes());
        }
        out.extend_from_slice(&(self.idf.len() as u32).to_le_bytes());
        for x in &self.idf {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("vocabulary", m);
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let branching = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let bits = r.u32()? as usize;
        let node_count = r.u32()? as usize;
        if bits == 0 || node_count == 0 {
            return Err(bad("empty vocabulary"));
        }
        let payload = bits.div_ceil(8);
        let mut nodes: Vec<Node> = Vec::with_capacity(node_count.min(1 << 20));
        for i in 0..node_count {
            let parent = r.u32()?;
            let word = r.u32()?;
            let centroid = BinaryDescriptor::from_payload(r.take(payload)?, bits)?;
            match (i, parent) {
                (0, NONE) => {}
                (0, _) => return Err(bad("root has a parent")),
                (_, p) if (p as usize) < i => nodes[p as usize].children.push(i as u32),
                _ => return Err(bad("parent must precede child")),
            }
            nodes.push(Node {
                centroid,
                children: Vec::new(),
                word: (word != NONE).then_some(word),
            });
        }
        let words = r.u32()? as usize;
        let mut idf = Vec::with_capacity(words.min(1 << 20));
        for _ in 0..words {
            idf.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        if !r.0.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let vocab = Self {
            branching,
            depth,
            bits,
            nodes,
            idf,
        };
        vocab.audit().map_err(|m| bad(&m))?;
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clustered(centers: usize, per: usize, bits: usize, flips: usize, seed: u64) -> Vec<BinaryDescriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs: Vec<_> = (0..centers)
            .map(|_| BinaryDescriptor::random(&mut rng, bits).unwrap())
            .collect();
        (0..centers * per)
            .map(|i| {
                let mut d = cs[i % centers].clone();
                for _ in 0..flips {
                    d = d.with_flipped(rng.random_range(0..bits));
                }
                d
            })
            .collect()
    }

    #[test]
    fn identical_training_set_gives_one_word() {
        let d = BinaryDescriptor::zeros(64).unwrap().with_flipped(7);
        let vocab = Vocabulary::train(&vec![d.clone(); 40], &VocabularyParams::default()).unwrap();
        assert_eq!(vocab.word_count(), 1);
        vocab.audit().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = BinaryDescriptor::random(&mut rng, 64).unwrap();
            assert_eq!(vocab.word_of(q.words()), 0);
        }
    }

    #[test]
    fn structure_and_determinism() {
        let data = clustered(30, 20, 128, 12, 3);
        let params = VocabularyParams::default();
        let a = Vocabulary::train(&data, &params).unwrap();
        let b = Vocabulary::train(&data, &params).unwrap();
        a.audit().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.word_count() > 10 && a.word_count() <= 1000);
        let other = Vocabulary::train(&data, &VocabularyParams { seed: 99, ..params }).unwrap();
        other.audit().unwrap();
    }

    #[test]
    fn two_clusters_recovered_at_depth_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let c0 = BinaryDescriptor::random(&mut rng, 256).unwrap();
        let c1 = c0.complement();
        let data: Vec<_> = (0..100)
            .map(|i| {
                let mut d = if i % 2 == 0 { c0.clone() } else { c1.clone() };
                for _ in 0..8 {
                    d = d.with_flipped(rng.random_range(0..256));
                }
                d
            })
            .collect();
        let params = VocabularyParams {
            branching: 2,
            depth: 1,
            ..VocabularyParams::default()
        };
        let vocab = Vocabulary::train(&data, &params).unwrap();
        assert_eq!(vocab.word_count(), 2);
        for truth in [&c0, &c1] {
            let best = vocab.nodes[1..]
                .iter()
                .map(|n| n.centroid.hamming(truth).unwrap())
                .min()
                .unwrap();
            assert!(best <= 2);
        }
        assert_ne!(vocab.word_of(c0.words()), vocab.word_of(c1.words()));
    }

    #[test]
    fn errors() {
        let data = clustered(2, 2, 32, 1, 1);
        assert!(matches!(
            Vocabulary::train(&data, &VocabularyParams::default()),
            Err(Error::TooFewDescriptors { needed: 10, got: 4 })
        ));
        let params = VocabularyParams {
            branching: 1,
            ..VocabularyParams::default()
        };
        assert!(matches!(Vocabulary::train(&data, &params), Err(Error::Config(_))));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let data = clustered(12, 10, 100, 5, 8);
        let mut vocab = Vocabulary::train(&data, &VocabularyParams::default()).unwrap();
        vocab.set_idf_from_documents(data.chunks(10).map(|c| c.iter().map(|d| d.words())));
        let bytes = vocab.to_bytes();
        assert_eq!(&bytes[..4], b"BVOC");
        assert_eq!(Vocabulary::from_bytes(&bytes).unwrap(), vocab);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bvoc");
        vocab.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), vocab);

        assert!(Vocabulary::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Vocabulary::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Vocabulary::from_bytes(&magic).is_err());
    }

    #[test]
    fn transform_is_normalized() {
        let data = clustered(20, 10, 64, 4, 2);
        let vocab = Vocabulary::train(&data, &VocabularyParams::default()).unwrap();
        let bow = vocab.transform(&data[..50]).unwrap();
        assert!(!bow.is_empty());
        let total: f64 = bow.iter().map(|(_, x)| x).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(bow.iter().all(|(_, x)| x > 0.0));
        assert!((bow.l1_similarity(&bow) - 1.0).abs() < 1e-12);
        assert_eq!(bow.l1_similarity(&BowVector::default()), 0.0);
        assert!(vocab.transform(&[BinaryDescriptor::zeros(8).unwrap()]).is_err());
    }
}
