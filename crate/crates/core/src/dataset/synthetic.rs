//! Seeded synthetic place-recognition sequences.
//!
//! A route of `place_count` places is traversed `revisits_per_place` times.
//! Each place owns a canonical feature set (descriptor, keypoint, label);
//! every traversal observes it through independent bit flips, Gaussian
//! keypoint jitter and occasional label flips. Consecutive places can share
//! a fraction of their features (`place_overlap`): the shared feature keeps
//! its descriptor and label but is seen at a different keypoint, which is
//! what makes neighboring places look alike to appearance-only matching.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CueColumn, Dataset, GroundTruth, ImageRecord, Role};
use crate::bitvec::BinaryDescriptor;
use crate::encoders::{CueKind, CueValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub place_count: usize,
    /// Observations per place. The first is the reference, later ones are queries.
    pub revisits_per_place: usize,
    pub descriptors_per_image: usize,
    pub descriptor_bits: usize,
    pub bit_flip_probability: f64,
    /// Standard deviation of keypoint jitter in pixels, clamped to the image.
    pub keypoint_noise_sigma: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub label_count: u32,
    pub label_flip_probability: f64,
    pub distractor_image_count: usize,
    /// Fraction of a place's features inherited from the previous place.
    pub place_overlap: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            place_count: 20,
            revisits_per_place: 2,
            descriptors_per_image: 100,
            descriptor_bits: 256,
            bit_flip_probability: 0.05,
            keypoint_noise_sigma: 5.0,
            image_width: 1241,
            image_height: 376,
            label_count: 12,
            label_flip_probability: 0.1,
            distractor_image_count: 0,
            place_overlap: 0.0,
        }
    }
}

impl SyntheticConfig {
    /// 20 places seen twice with 500 features each: 10k reference and 10k
    /// query descriptors of 256 bits at 5% bit noise.
    pub fn benchmark_10k(seed: u64) -> Self {
        Self {
            seed,
            place_count: 20,
            revisits_per_place: 2,
            descriptors_per_image: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                problems.push(format!("synthetic.{msg}"));
            }
        };
        check(self.place_count >= 1, "place_count must be at least 1");
        check(self.revisits_per_place >= 1, "revisits_per_place must be at least 1");
        check(self.descriptors_per_image >= 1, "descriptors_per_image must be at least 1");
        check(self.descriptor_bits >= 1, "descriptor_bits must be at least 1");
        check(
            (0.0..=0.5).contains(&self.bit_flip_probability),
            "bit_flip_probability must lie in [0, 0.5]",
        );
        check(
            self.keypoint_noise_sigma.is_finite() && self.keypoint_noise_sigma >= 0.0,
            "keypoint_noise_sigma must be finite and non-negative",
        );
        check(
            self.image_width >= 1 && self.image_height >= 1,
            "image_width/image_height must be positive",
        );
        check(self.label_count >= 2, "label_count must be at least 2");
        check(
            (0.0..=1.0).contains(&self.label_flip_probability),
            "label_flip_probability must lie in [0, 1]",
        );
        check(
            (0.0..1.0).contains(&self.place_overlap),
            "place_overlap must lie in [0, 1)",
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone)]
struct Feature {
    descriptor: BinaryDescriptor,
    u: f64,
    v: f64,
    label: u32,
}

fn place_id(place: usize, visit: usize) -> String {
    format!("p{place:05}_v{visit:02}")
}

fn distractor_id(k: usize) -> String {
    format!("distractor_{k:05}")
}

fn flip_bits(d: &BinaryDescriptor, p: f64, rng: &mut ChaCha8Rng) -> BinaryDescriptor {
    if p == 0.0 {
        return d.clone();
    }
    let words = d
        .words()
        .iter()
        .enumerate()
        .map(|(w, &word)| {
            let valid = (d.len() - w * 64).min(64);
            let mut mask = 0u64;
            for bit in 0..valid {
                if rng.random_bool(p) {
                    mask |= 1 << bit;
                }
            }
            word ^ mask
        })
        .collect();
    BinaryDescriptor::from_words(words, d.len()).expect("same length")
}

/// Generates a dataset that is fully determined by `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bits = config.descriptor_bits;
    let n = config.descriptors_per_image;
    let max_u = f64::from(config.image_width - 1);
    let max_v = f64::from(config.image_height - 1);

    let fresh = |rng: &mut ChaCha8Rng| -> Result<Feature> {
        Ok(Feature {
            descriptor: BinaryDescriptor::random(rng, bits)?,
            u: rng.random_range(0.0..=max_u),
            v: rng.random_range(0.0..=max_v),
            label: rng.random_range(0..config.label_count),
        })
    };

    let inherited = (config.place_overlap * n as f64).round() as usize;
    let mut places: Vec<Vec<Feature>> = Vec::with_capacity(config.place_count);
    for p in 0..config.place_count {
        let mut features = Vec::with_capacity(n);
        if p > 0 && inherited > 0 {
            let prev = &places[p - 1];
            for idx in sample(&mut rng, n, inherited).into_iter() {
                let mut f = prev[idx].clone();
                f.u = rng.random_range(0.0..=max_u);
                f.v = rng.random_range(0.0..=max_v);
                features.push(f);
            }
        }
        while features.len() < n {
            features.push(fresh(&mut rng)?);
        }
        places.push(features);
    }

    let jitter = if config.keypoint_noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.keypoint_noise_sigma).expect("validated sigma"))
    } else {
        None
    };

    let to_record = |id: String, role: Role, features: Vec<Feature>| -> Result<ImageRecord> {
        let (descriptors, cues) = features
            .into_iter()
            .map(|f| {
                (
                    f.descriptor,
                    vec![
                        CueValue::Continuous(f.u),
                        CueValue::Continuous(f.v),
                        CueValue::Selector(f.label),
                    ],
                )
            })
            .unzip();
        ImageRecord::new(id, role, descriptors, cues)
    };

    let mut images = Vec::new();
    for k in 0..config.distractor_image_count {
        let features = (0..n).map(|_| fresh(&mut rng)).collect::<Result<Vec<_>>>()?;
        images.push(to_record(distractor_id(k), Role::Reference, features)?);
    }

    for visit in 0..config.revisits_per_place {
        let role = if visit == 0 { Role::Reference } else { Role::Query };
        for (p, canonical) in places.iter().enumerate() {
            let observed = canonical
                .iter()
                .map(|f| {
                    let descriptor = flip_bits(&f.descriptor, config.bit_flip_probability, &mut rng);
                    let (mut u, mut v) = (f.u, f.v);
                    if let Some(noise) = &jitter {
                        u = (u + noise.sample(&mut rng)).clamp(0.0, max_u);
                        v = (v + noise.sample(&mut rng)).clamp(0.0, max_v);
                    }
                    let mut label = f.label;
                    if config.label_flip_probability > 0.0
                        && rng.random_bool(config.label_flip_probability)
                    {
                        let shift = rng.random_range(1..config.label_count);
                        label = (label + shift) % config.label_count;
                    }
                    Feature {
                        descriptor,
                        u,
                        v,
                        label,
                    }
                })
                .collect();
            images.push(to_record(place_id(p, visit), role, observed)?);
        }
    }

    let mut ground_truth = GroundTruth::new();
    for p in 0..config.place_count {
        for visit in 1..config.revisits_per_place {
            let query = place_id(p, visit);
            ground_truth.add_query(query.clone());
            for other in (0..config.revisits_per_place).filter(|&o| o != visit) {
                ground_truth.add_pair(query.clone(), place_id(p, other));
            }
        }
    }

    Dataset::new(
        bits,
        vec![
            CueColumn::new("u", CueKind::Continuous),
            CueColumn::new("v", CueKind::Continuous),
            CueColumn::new("label", CueKind::Selector),
        ],
        images,
        ground_truth,
    )
}
