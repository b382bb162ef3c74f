//! Multi-probe bit-sampling LSH.
//!
//! Each table keys descriptors by a random subset of their bits. A query
//! probes every bucket whose key is within `probe_radius` bit flips of its
//! own key, in every table, and ranks the union of candidates exactly.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance_limit, Backend, DescriptorStore, ImageScore, MatchResult, SearchIndex};
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub table_count: usize,
    pub key_bits: usize,
    pub probe_radius: usize,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self {
            table_count: 4,
            key_bits: 12,
            probe_radius: 1,
            seed: 0x1d5e_ed00,
        }
    }
}

impl LshConfig {
    pub fn validate(&self, descriptor_bits: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.table_count == 0 {
            problems.push("lsh.table_count must be at least 1".to_string());
        }
        if self.key_bits == 0 || self.key_bits > 64 {
            problems.push(format!("lsh.key_bits must lie in 1..=64, got {}", self.key_bits));
        }
        if self.key_bits > descriptor_bits {
            problems.push(format!(
                "lsh.key_bits ({}) exceeds descriptor length ({descriptor_bits})",
                self.key_bits
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone)]
struct Table {
    positions: Vec<usize>,
    buckets: HashMap<u64, Vec<u32>>,
}

impl Table {
    fn key(&self, words: &[u64]) -> u64 {
        self.positions
            .iter()
            .enumerate()
            .fold(0, |key, (i, &pos)| key | ((words[pos / 64] >> (pos % 64)) & 1) << i)
    }
}

#[derive(Debug, Clone)]
pub struct LshIndex {
    config: LshConfig,
    store: DescriptorStore,
    tables: Vec<Table>,
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

impl LshIndex {
    pub fn new(descriptor_bits: usize, config: LshConfig) -> Result<Self> {
        config.validate(descriptor_bits)?;
        let tables = (0..config.table_count)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                let mut positions = sample(&mut rng, descriptor_bits, config.key_bits).into_vec();
                positions.sort_unstable();
                Table {
                    positions,
                    buckets: HashMap::new(),
                }
            })
            .collect();
        Ok(Self {
            store: DescriptorStore::new(descriptor_bits)?,
            config,
            tables,
        })
    }

    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    /// Bit positions sampled by each table.
    pub fn table_positions(&self) -> Vec<&[usize]> {
        self.tables.iter().map(|t| t.positions.as_slice()).collect()
    }

    fn probe_count(&self) -> u128 {
        let kb = self.config.key_bits;
        (0..=self.config.probe_radius.min(kb)).map(|r| binomial(kb, r)).sum()
    }

    fn candidates(&self, words: &[u64], out: &mut Vec<u32>) {
        out.clear();
        let radius = self.config.probe_radius.min(self.config.key_bits);
        let probes = self.probe_count();
        for table in &self.tables {
            let key = table.key(words);
            if probes > table.buckets.len() as u128 {
                for (&k, ids) in &table.buckets {
                    if ((k ^ key).count_ones() as usize) <= radius {
                        out.extend_from_slice(ids);
                    }
                }
            } else {
                let mut visit = |k: u64| {
                    if let Some(ids) = table.buckets.get(&k) {
                        out.extend_from_slice(ids);
                    }
                };
                for_each_within(key, self.config.key_bits, radius, &mut visit);
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// Calls `f` on every key within `radius` flips of `key` (including `key`).
fn for_each_within(key: u64, key_bits: usize, radius: usize, f: &mut impl FnMut(u64)) {
    fn rec(key: u64, from: usize, key_bits: usize, left: usize, f: &mut impl FnMut(u64)) {
        f(key);
        if left == 0 {
            return;
        }
        for bit in from..key_bits {
            rec(key ^ (1 << bit), bit + 1, key_bits, left - 1, f);
        }
    }
    rec(key, 0, key_bits, radius, f);
}

impl SearchIndex for LshIndex {
    fn backend(&self) -> Backend {
        Backend::Lsh
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
            for t in 0..self.tables.len() {
                let key = self.tables[t].key(self.store.descriptor(id));
                self.tables[t].buckets.entry(key).or_default().push(id);
            }
        }
        Ok(())
    }

    fn search(&self, image: &ImageRecord, tau: f64) -> Result<(Vec<ImageScore>, Vec<MatchResult>)> {
        self.store.check_lengths(image)?;
        let limit = distance_limit(tau, self.store.bits())?;
        let mut buf = Vec::new();
        let mut nearest = Vec::with_capacity(image.len());
        for (qi, d) in image.descriptors.iter().enumerate() {
            self.candidates(d.words(), &mut buf);
            nearest.push((
                qi as u32,
                self.store.nearest_sorted(d.words(), buf.iter().copied(), limit),
            ));
        }
        Ok(self.store.tally(nearest))
    }
}
