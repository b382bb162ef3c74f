//! Hamming binary search tree.
//!
//! Inner nodes test one bit and send descriptors left (0) or right (1).
//! Leaves hold descriptor buckets; a bucket that outgrows `max_leaf_size`
//! splits on the untested bit whose set fraction within the bucket is
//! closest to one half. Queries follow a single root-to-leaf path and scan
//! that leaf only, so the true nearest neighbor can be missed.

use serde::{Deserialize, Serialize};

use super::{distance_limit, Backend, DescriptorStore, ImageScore, MatchResult, SearchIndex};
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BstConfig {
    /// `None` never splits, leaving a single exhaustive leaf. Written as
    /// `"unbounded"` in config files.
    #[serde(with = "leaf_size")]
    pub max_leaf_size: Option<usize>,
}

mod leaf_size {
    use serde::{de, Deserialize, Deserializer, Serializer};

    const UNBOUNDED: &str = "unbounded";

    pub fn serialize<S: Serializer>(value: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(n) => s.serialize_u64(*n as u64),
            None => s.serialize_str(UNBOUNDED),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Size(usize),
        Word(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Size(n) => Ok(Some(n)),
            Raw::Word(w) if w == UNBOUNDED => Ok(None),
            Raw::Word(w) => Err(de::Error::custom(format!(
                "expected a leaf size or \"{UNBOUNDED}\", got \"{w}\""
            ))),
        }
    }
}

impl Default for BstConfig {
    fn default() -> Self {
        Self {
            max_leaf_size: Some(100),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<u32>),
    Inner {
        bit: u32,
        children: [usize; 2],
    },
}

#[derive(Debug, Clone)]
pub struct HammingTreeIndex {
    config: BstConfig,
    store: DescriptorStore,
    nodes: Vec<Node>,
}

#[inline]
fn bit_of(words: &[u64], bit: u32) -> usize {
    ((words[bit as usize / 64] >> (bit % 64)) & 1) as usize
}

impl HammingTreeIndex {
    pub fn new(descriptor_bits: usize, config: BstConfig) -> Result<Self> {
        if config.max_leaf_size == Some(0) {
            return Err(Error::Config(vec![
                "bst.max_leaf_size must be at least 1".to_string()
            ]));
        }
        Ok(Self {
            store: DescriptorStore::new(descriptor_bits)?,
            nodes: vec![Node::Leaf(Vec::new())],
            config,
        })
    }

    /// Leaf reached by `words`, plus the bits tested on the way.
    fn descend(&self, words: &[u64]) -> (usize, Vec<u32>) {
        let mut at = 0;
        let mut path = Vec::new();
        while let Node::Inner { bit, children } = &self.nodes[at] {
            path.push(*bit);
            at = children[bit_of(words, *bit)];
        }
        (at, path)
    }

    fn leaf_of(&self, words: &[u64]) -> usize {
        let mut at = 0;
        while let Node::Inner { bit, children } = &self.nodes[at] {
            at = children[bit_of(words, *bit)];
        }
        at
    }

    /// Untested bit whose set fraction is closest to 1/2, if any bit
    /// separates the bucket at all.
    fn choose_split(&self, entries: &[u32], tested: &[u32]) -> Option<u32> {
        let bits = self.store.bits();
        let mut counts = vec![0usize; bits];
        for &id in entries {
            for (w, &word) in self.store.descriptor(id).iter().enumerate() {
                let mut rest = word;
                while rest != 0 {
                    counts[w * 64 + rest.trailing_zeros() as usize] += 1;
                    rest &= rest - 1;
                }
            }
        }
        let n = entries.len();
        let mut best: Option<(usize, u32)> = None;
        for (bit, &ones) in counts.iter().enumerate() {
            let bit = bit as u32;
            if ones == 0 || ones == n || tested.contains(&bit) {
                continue;
            }
            // |ones/n - 1/2| compared exactly as |2*ones - n|
            let imbalance = (2 * ones).abs_diff(n);
            if best.is_none_or(|(b, _)| imbalance < b) {
                best = Some((imbalance, bit));
            }
        }
        best.map(|(_, bit)| bit)
    }

    fn maybe_split(&mut self, leaf: usize, tested: Vec<u32>) {
        let Some(max) = self.config.max_leaf_size else {
            return;
        };
        let Node::Leaf(entries) = &self.nodes[leaf] else {
            unreachable!("split target is a leaf");
        };
        if entries.len() <= max {
            return;
        }
        let Some(bit) = self.choose_split(entries, &tested) else {
            return;
        };
        let Node::Leaf(entries) = std::mem::replace(&mut self.nodes[leaf], Node::Leaf(Vec::new()))
        else {
            unreachable!();
        };
        let (ones, zeros): (Vec<u32>, Vec<u32>) = entries
            .into_iter()
            .partition(|&id| bit_of(self.store.descriptor(id), bit) == 1);
        let zero_child = self.nodes.len();
        self.nodes.push(Node::Leaf(zeros));
        let one_child = self.nodes.len();
        self.nodes.push(Node::Leaf(ones));
        self.nodes[leaf] = Node::Inner {
            bit,
            children: [zero_child, one_child],
        };
        let mut below = tested;
        below.push(bit);
        self.maybe_split(zero_child, below.clone());
        self.maybe_split(one_child, below);
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Inner { children, .. } => {
                    1 + rec(nodes, children[0]).max(rec(nodes, children[1]))
                }
            }
        }
        rec(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }

    /// Checks the structural invariants of the whole tree.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let mut seen = 0usize;
        let mut stack = vec![(0usize, Vec::<(u32, usize)>::new())];
        while let Some((at, path)) = stack.pop() {
            match &self.nodes[at] {
                Node::Inner { bit, children } => {
                    if path.iter().any(|(b, _)| b == bit) {
                        return Err(format!("bit {bit} tested twice on one path"));
                    }
                    for (side, &child) in children.iter().enumerate() {
                        let mut p = path.clone();
                        p.push((*bit, side));
                        stack.push((child, p));
                    }
                }
                Node::Leaf(entries) => {
                    seen += entries.len();
                    for &id in entries {
                        let words = self.store.descriptor(id);
                        if let Some((b, side)) =
                            path.iter().find(|(b, side)| bit_of(words, *b) != *side)
                        {
                            return Err(format!("descriptor {id} on side {side} of bit {b}"));
                        }
                    }
                    if !entries.windows(2).all(|w| w[0] < w[1]) {
                        return Err("leaf entries out of insertion order".into());
                    }
                    if let Some(max) = self.config.max_leaf_size {
                        let tested: Vec<u32> = path.iter().map(|(b, _)| *b).collect();
                        if entries.len() > max && self.choose_split(entries, &tested).is_some() {
                            return Err(format!(
                                "leaf of {} entries could still be split",
                                entries.len()
                            ));
                        }
                    }
                }
            }
        }
        if seen != self.store.len() {
            return Err(format!("{seen} entries in leaves, {} stored", self.store.len()));
        }
        Ok(())
    }
}

impl SearchIndex for HammingTreeIndex {
    fn backend(&self) -> Backend {
        Backend::Bst
    }

    fn descriptor_bits(&self) -> usize {
        self.store.bits()
    }

    fn image_count(&self) -> usize {
        self.store.image_count()
    }

    fn insert(&mut self, image: &ImageRecord) -> Result<()> {
        self.store.check_insert(image)?;
        let (_, ids) = self.store.push(image);
        for id in ids {
            let (leaf, tested) = self.descend(self.store.descriptor(id));
            if let Node::Leaf(entries) = &mut self.nodes[leaf] {
                entries.push(id);
            }
            self.maybe_split(leaf, tested);
        }
        Ok(())
    }

    fn search(&self, image: &ImageRecord, tau: f64) -> Result<(Vec<ImageScore>, Vec<MatchResult>)> {
        self.store.check_lengths(image)?;
        let limit = distance_limit(tau, self.store.bits())?;
        let nearest = image.descriptors.iter().enumerate().map(|(qi, d)| {
            let Node::Leaf(entries) = &self.nodes[self.leaf_of(d.words())] else {
                unreachable!("descent ends in a leaf");
            };
            (
                qi as u32,
                self.store
                    .nearest_sorted(d.words(), entries.iter().copied(), limit),
            )
        });
        Ok(self.store.tally(nearest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::BinaryDescriptor;
    use crate::dataset::Role;
    use crate::index::BruteForceIndex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(id: &str, n: usize, bits: usize, rng: &mut ChaCha8Rng) -> ImageRecord {
        ImageRecord::from_descriptors(
            id,
            Role::Reference,
            (0..n)
                .map(|_| BinaryDescriptor::random(rng, bits).unwrap())
                .collect(),
        )
    }

    #[test]
    fn splits_keep_structure_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bst = HammingTreeIndex::new(64, BstConfig { max_leaf_size: Some(8) }).unwrap();
        for i in 0..20 {
            bst.insert(&random_image(&format!("i{i}"), 25, 64, &mut rng)).unwrap();
        }
        bst.audit().unwrap();
        assert!(bst.depth() >= 5);
        assert!(bst.leaf_count() >= 500 / 8);
    }

    #[test]
    fn identical_descriptors_stay_in_one_leaf() {
        let d = BinaryDescriptor::zeros(32).unwrap().with_flipped(4);
        let mut bst = HammingTreeIndex::new(32, BstConfig { max_leaf_size: Some(4) }).unwrap();
        for i in 0..5 {
            bst.insert(&ImageRecord::from_descriptors(
                format!("i{i}"),
                Role::Reference,
                vec![d.clone(); 10],
            ))
            .unwrap();
        }
        assert_eq!(bst.leaf_count(), 1);
        bst.audit().unwrap();
    }

    #[test]
    fn split_prefers_balanced_bit_then_lowest_index() {
        // bit 0 set in 1 of 4, bits 1 and 2 in 2 of 4: bit 1 wins
        let make = |bits: &[usize]| {
            bits.iter()
                .fold(BinaryDescriptor::zeros(8).unwrap(), |d, &b| d.with_flipped(b))
        };
        let descs = vec![make(&[0, 1, 2]), make(&[1]), make(&[2]), make(&[])];
        let mut bst = HammingTreeIndex::new(8, BstConfig { max_leaf_size: Some(3) }).unwrap();
        bst.insert(&ImageRecord::from_descriptors("a", Role::Reference, descs))
            .unwrap();
        assert!(matches!(bst.nodes[0], Node::Inner { bit: 1, .. }));
    }

    #[test]
    fn unbounded_leaf_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bst = HammingTreeIndex::new(96, BstConfig { max_leaf_size: None }).unwrap();
        let mut bf = BruteForceIndex::new(96).unwrap();
        for i in 0..8 {
            let im = random_image(&format!("r{i}"), 40, 96, &mut rng);
            bst.insert(&im).unwrap();
            bf.insert(&im).unwrap();
        }
        let q = random_image("q", 60, 96, &mut rng);
        assert_eq!(bst.search(&q, 40.0).unwrap(), bf.search(&q, 40.0).unwrap());
        assert_eq!(bst.leaf_count(), 1);
    }

    #[test]
    fn self_recall_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut bst = HammingTreeIndex::new(256, BstConfig::default()).unwrap();
        let images: Vec<_> = (0..10)
            .map(|i| random_image(&format!("i{i}"), 100, 256, &mut rng))
            .collect();
        for im in &images {
            bst.insert(im).unwrap();
        }
        for im in &images {
            let r = bst.query(im, 0.0).unwrap();
            assert_eq!(r.matches.len(), 100);
        }
        bst.audit().unwrap();
    }

    #[test]
    fn unbounded_leaf_size_round_trips_through_toml() {
        for config in [BstConfig::default(), BstConfig { max_leaf_size: None }] {
            let text = toml::to_string(&config).unwrap();
            assert_eq!(toml::from_str::<BstConfig>(&text).unwrap(), config, "{text}");
        }
        assert!(toml::from_str::<BstConfig>("max_leaf_size = \"many\"").is_err());
    }

    #[test]
    fn zero_leaf_size_rejected() {
        assert!(HammingTreeIndex::new(8, BstConfig { max_leaf_size: Some(0) }).is_err());
    }
}
