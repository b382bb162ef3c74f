//! Exhaustive matcher: every query descriptor against every stored one.

use super::{distance_limit, Backend, DescriptorStore, ImageScore, MatchResult, SearchIndex};
use crate::dataset::ImageRecord;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct BruteForceIndex {
    store: DescriptorStore,
}

impl BruteForceIndex {
    pub fn new(descriptor_bits: usize) -> Result<Self> {
        Ok(Self {
            store: DescriptorStore::new(descriptor_bits)?,
        })
    }

    pub fn descriptor_count(&self) -> usize {
        self.store.len()
    }
}

impl SearchIndex for BruteForceIndex {
    fn backend(&self) -> Backend {
        Backend::Bf
    }

    fn descriptor_bits(&self) -> usize {
        self.store.bits()
    }

    fn image_count(&self) -> usize {
        self.store.image_count()
    }

    fn insert(&mut self, image: &ImageRecord) -> Result<()> {
        self.store.check_insert(image)?;
        self.store.push(image);
        Ok(())
    }

    fn search(&self, image: &ImageRecord, tau: f64) -> Result<(Vec<ImageScore>, Vec<MatchResult>)> {
        self.store.check_lengths(image)?;
        let limit = distance_limit(tau, self.store.bits())?;
        let all = 0..self.store.len() as u32;
        let nearest = image.descriptors.iter().enumerate().map(|(qi, d)| {
            (qi as u32, self.store.nearest_sorted(d.words(), all.clone(), limit))
        });
        Ok(self.store.tally(nearest))
    }
}
