//! Bag-of-features backend: images become idf-weighted word histograms over
//! a k-majority vocabulary tree and are scored through an inverted index.
//!
//! The vocabulary is trained on the stored images themselves. `commit`
//! (re)trains it once enough new images have arrived, so queries issued
//! before the first training see an empty database.

pub mod kmajority;
mod vocabulary;

use serde::{Deserialize, Serialize};

pub use vocabulary::{BowVector, Vocabulary, VocabularyParams};

use super::{distance_limit, Backend, DescriptorStore, ImageScore, MatchResult, SearchIndex};
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BofConfig {
    pub branching: usize,
    pub depth: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Retrain after this many inserts (fewer while the database is small).
    pub retrain_every: usize,
    /// Images returned per query.
    pub top_n: usize,
}

impl Default for BofConfig {
    fn default() -> Self {
        let v = VocabularyParams::default();
        Self {
            branching: v.branching,
            depth: v.depth,
            max_iterations: v.max_iterations,
            seed: v.seed,
            retrain_every: 50,
            top_n: 10,
        }
    }
}

impl BofConfig {
    pub fn vocabulary_params(&self) -> VocabularyParams {
        VocabularyParams {
            branching: self.branching,
            depth: self.depth,
            max_iterations: self.max_iterations,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = self.vocabulary_params().problems("bof.");
        if self.retrain_every == 0 {
            problems.push("bof.retrain_every must be at least 1".into());
        }
        if self.top_n == 0 {
            problems.push("bof.top_n must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BagOfFeaturesIndex {
    config: BofConfig,
    store: DescriptorStore,
    vocabulary: Option<Vocabulary>,
    bows: Vec<BowVector>,
    /// word -> (image slot, weight), slots ascending.
    postings: Vec<Vec<(u32, f64)>>,
    trained_on: usize,
    trainings: usize,
}

impl BagOfFeaturesIndex {
    pub fn new(descriptor_bits: usize, config: BofConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            store: DescriptorStore::new(descriptor_bits)?,
            config,
            vocabulary: None,
            bows: Vec::new(),
            postings: Vec::new(),
            trained_on: 0,
            trainings: 0,
        })
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocabulary.as_ref()
    }

    pub fn training_count(&self) -> usize {
        self.trainings
    }

    pub fn bow(&self, slot: usize) -> Option<&BowVector> {
        self.bows.get(slot)
    }

    fn image_words(&self, slot: u32) -> impl Iterator<Item = &[u64]> + '_ {
        self.store.range(slot).map(|id| self.store.descriptor(id))
    }

    fn needs_training(&self) -> bool {
        let images = self.store.image_count();
        if self.vocabulary.is_none() {
            return images > 0 && self.store.len() >= self.config.branching;
        }
        let pending = images - self.trained_on;
        pending > 0 && pending >= self.config.retrain_every.min(self.trained_on)
    }

    /// Trains on every stored descriptor, sets image-level idf and rebuilds
    /// the inverted index.
    pub fn train(&mut self) -> Result<()> {
        let descriptors: Vec<_> = (0..self.store.len() as u32)
            .map(|id| self.store.to_descriptor(id))
            .collect();
        let mut vocab = Vocabulary::train(&descriptors, &self.config.vocabulary_params())?;
        let slots = 0..self.store.image_count() as u32;
        vocab.set_idf_from_documents(slots.clone().map(|s| self.image_words(s)));
        self.postings = vec![Vec::new(); vocab.word_count()];
        self.bows = Vec::with_capacity(self.store.image_count());
        for slot in slots {
            let bow = vocab.transform_words(self.image_words(slot));
            for (w, x) in bow.iter() {
                self.postings[w as usize].push((slot, x));
            }
            self.bows.push(bow);
        }
        self.vocabulary = Some(vocab);
        self.trained_on = self.store.image_count();
        self.trainings += 1;
        Ok(())
    }

    /// Similarity to every stored image sharing a word with `bow`, summed
    /// as `min(a_w, b_w)` over shared words. Ranked like all image scores.
    fn ranked_slots(&self, bow: &BowVector) -> Vec<(u32, f64)> {
        let mut acc = vec![0.0f64; self.bows.len()];
        let mut touched = vec![false; self.bows.len()];
        for (w, q) in bow.iter() {
            for &(slot, r) in &self.postings[w as usize] {
                acc[slot as usize] += q.min(r);
                touched[slot as usize] = true;
            }
        }
        let mut ranked: Vec<(u32, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|&(slot, _)| touched[slot])
            .map(|(slot, score)| (slot as u32, score))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.store.image_id(a.0).cmp(self.store.image_id(b.0)))
        });
        ranked
    }

    pub fn scores_for(&self, bow: &BowVector) -> Vec<ImageScore> {
        self.ranked_slots(bow)
            .into_iter()
            .map(|(slot, score)| ImageScore {
                image_id: self.store.image_id(slot).clone(),
                score,
            })
            .collect()
    }
}

impl SearchIndex for BagOfFeaturesIndex {
    fn backend(&self) -> Backend {
        Backend::Bof
    }

    fn descriptor_bits(&self) -> usize {
        self.store.bits()
    }

    fn image_count(&self) -> usize {
        self.store.image_count()
    }

    fn insert(&mut self, image: &ImageRecord) -> Result<()> {
        self.store.check_insert(image)?;
        let (slot, _) = self.store.push(image);
        let bow = match &self.vocabulary {
            Some(vocab) => vocab.transform_words(self.image_words(slot)),
            None => BowVector::default(),
        };
        for (w, x) in bow.iter() {
            self.postings[w as usize].push((slot, x));
        }
        self.bows.push(bow);
        Ok(())
    }

    fn commit(&mut self) -> Result<()> {
        if self.needs_training() {
            self.train()?;
        }
        Ok(())
    }

    /// Ranks the `top_n` most similar images, then matches each query
    /// descriptor exhaustively against the descriptors of those images.
    fn search(&self, image: &ImageRecord, tau: f64) -> Result<(Vec<ImageScore>, Vec<MatchResult>)> {
        self.store.check_lengths(image)?;
        let limit = distance_limit(tau, self.store.bits())?;
        let Some(vocab) = &self.vocabulary else {
            return Ok((Vec::new(), Vec::new()));
        };
        let bow = vocab.transform_words(image.descriptors.iter().map(|d| d.words()));
        let mut ranked = self.ranked_slots(&bow);
        ranked.truncate(self.config.top_n);
        let scores = ranked
            .iter()
            .map(|&(slot, score)| ImageScore {
                image_id: self.store.image_id(slot).clone(),
                score,
            })
            .collect();
        let mut slots: Vec<u32> = ranked.iter().map(|&(slot, _)| slot).collect();
        slots.sort_unstable();
        let mut matches = Vec::new();
        for (qi, d) in image.descriptors.iter().enumerate() {
            let candidates = slots.iter().flat_map(|&s| self.store.range(s));
            if let Some((distance, id)) = self.store.nearest_sorted(d.words(), candidates, limit) {
                matches.push(MatchResult {
                    query_descriptor: qi as u32,
                    reference_descriptor: id,
                    reference_image: self.store.image_id(self.store.owner(id)).clone(),
                    distance,
                });
            }
        }
        Ok((scores, matches))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::BinaryDescriptor;
    use crate::dataset::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Images drawn from a shared pool of prototypes so that they overlap
    /// in words.
    fn corpus(images: usize, per: usize, seed: u64) -> Vec<ImageRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<_> = (0..60)
            .map(|_| BinaryDescriptor::random(&mut rng, 128).unwrap())
            .collect();
        (0..images)
            .map(|i| {
                let descs = (0..per)
                    .map(|_| {
                        let mut d = pool[rng.random_range(0..pool.len())].clone();
                        for _ in 0..6 {
                            d = d.with_flipped(rng.random_range(0..128));
                        }
                        d
                    })
                    .collect();
                ImageRecord::from_descriptors(format!("img{i:03}"), Role::Reference, descs)
            })
            .collect()
    }

    fn built(images: &[ImageRecord]) -> BagOfFeaturesIndex {
        let mut bof = BagOfFeaturesIndex::new(128, BofConfig::default()).unwrap();
        for im in images {
            bof.insert(im).unwrap();
        }
        bof.commit().unwrap();
        bof
    }

    #[test]
    fn inverted_index_equals_dense_comparison() {
        let images = corpus(20, 30, 4);
        let bof = built(&images);
        for (a, qa) in bof.bows.iter().enumerate() {
            let scores = bof.scores_for(qa);
            for (b, rb) in bof.bows.iter().enumerate() {
                let dense = qa.l1_similarity(rb);
                let sparse = scores
                    .iter()
                    .find(|s| *s.image_id == *images[b].image_id)
                    .map_or(0.0, |s| s.score);
                assert!((dense - sparse).abs() < 1e-12, "{a} vs {b}: {dense} {sparse}");
            }
        }
    }

    #[test]
    fn stored_image_scores_one_and_ranks_first() {
        let images = corpus(15, 40, 6);
        let bof = built(&images);
        for im in &images {
            let r = bof.query(im, 0.0).unwrap();
            assert_eq!(*r.scores[0].image_id, *im.image_id);
            assert!((r.scores[0].score - 1.0).abs() < 1e-9);
            assert!(r.scores.len() <= 10);
            assert!(r.scores.windows(2).all(|w| w[0].score >= w[1].score));
            assert_eq!(r.matches.len(), 40);
        }
    }

    #[test]
    fn disjoint_image_never_returned() {
        let mut images = corpus(10, 30, 7);
        // all-ones descriptors land in a word no other image uses
        let ones = BinaryDescriptor::zeros(128).unwrap().complement();
        images.push(ImageRecord::from_descriptors("odd", Role::Reference, vec![ones.clone(); 30]));
        let bof = built(&images);
        let r = bof.query(&images[0], 128.0).unwrap();
        assert!(r.scores.iter().all(|s| &*s.image_id != "odd"));
        let r = bof.query(&images[10], 128.0).unwrap();
        assert_eq!(&*r.scores[0].image_id, "odd");
    }

    #[test]
    fn retraining_schedule() {
        let images = corpus(120, 10, 9);
        let mut bof = BagOfFeaturesIndex::new(128, BofConfig::default()).unwrap();
        let mut trained_at = Vec::new();
        for im in &images {
            bof.insert(im).unwrap();
            let before = bof.training_count();
            bof.commit().unwrap();
            if bof.training_count() > before {
                trained_at.push(bof.image_count());
            }
        }
        assert_eq!(trained_at, vec![1, 2, 4, 8, 16, 32, 64, 114]);
    }

    #[test]
    fn untrained_index_is_empty() {
        let images = corpus(2, 3, 1);
        let mut bof = BagOfFeaturesIndex::new(128, BofConfig::default()).unwrap();
        bof.insert(&images[0]).unwrap();
        bof.commit().unwrap();
        assert!(bof.vocabulary().is_none());
        let r = bof.query(&images[0], 50.0).unwrap();
        assert!(r.scores.is_empty() && r.matches.is_empty());
    }

    #[test]
    fn invalid_config() {
        let config = BofConfig {
            top_n: 0,
            retrain_every: 0,
            ..BofConfig::default()
        };
        match BagOfFeaturesIndex::new(64, config) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
