//! k-majority clustering: k-means for bit strings, with Hamming distance for
//! assignment and a per-bit majority vote for the centroid update.

use rand::seq::index::sample;
use rand::Rng;

use crate::bitvec::{hamming_words, BinaryDescriptor};

#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: Vec<BinaryDescriptor>,
    pub assignment: Vec<usize>,
    /// Total distance to assigned centroids after each assignment step.
    pub cost_history: Vec<u64>,
}

fn nearest(centroids: &[BinaryDescriptor], d: &BinaryDescriptor) -> (usize, u32) {
    let mut best = (0, u32::MAX);
    for (c, centroid) in centroids.iter().enumerate() {
        let dist = hamming_words(centroid.words(), d.words());
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Per-bit majority of `members`; a tie leaves the bit at zero.
pub fn majority(members: &[&BinaryDescriptor], bits: usize) -> BinaryDescriptor {
    let mut ones = vec![0usize; bits];
    for d in members {
        for (w, &word) in d.words().iter().enumerate() {
            let mut rest = word;
            while rest != 0 {
                ones[w * 64 + rest.trailing_zeros() as usize] += 1;
                rest &= rest - 1;
            }
        }
    }
    let n = members.len();
    BinaryDescriptor::from_fn(bits, |i| 2 * ones[i] > n).expect("bits > 0")
}

/// Clusters `data` into at most `k` groups. Centroids start at `k` distinct
/// sampled points; iteration stops when assignments stop changing or after
/// `max_iterations` updates. Empty clusters keep their previous centroid.
pub fn k_majority<R: Rng + ?Sized>(
    data: &[&BinaryDescriptor],
    k: usize,
    max_iterations: usize,
    rng: &mut R,
) -> Clustering {
    assert!(k >= 1 && data.len() >= k, "need at least k points");
    let bits = data[0].len();
    let mut centroids: Vec<BinaryDescriptor> = sample(rng, data.len(), k)
        .into_iter()
        .map(|i| data[i].clone())
        .collect();
    let mut assignment = vec![usize::MAX; data.len()];
    let mut cost_history = Vec::new();

    for iteration in 0..=max_iterations {
        let mut changed = false;
        let mut cost = 0u64;
        for (i, d) in data.iter().enumerate() {
            let (c, dist) = nearest(&centroids, d);
            cost += u64::from(dist);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        cost_history.push(cost);
        if !changed || iteration == max_iterations {
            break;
        }
        let mut members: Vec<Vec<&BinaryDescriptor>> = vec![Vec::new(); k];
        for (d, &c) in data.iter().zip(&assignment) {
            members[c].push(d);
        }
        for (centroid, group) in centroids.iter_mut().zip(&members) {
            if !group.is_empty() {
                *centroid = majority(group, bits);
            }
        }
    }

    Clustering {
        centroids,
        assignment,
        cost_history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noisy(center: &BinaryDescriptor, flips: usize, rng: &mut ChaCha8Rng) -> BinaryDescriptor {
        let mut d = center.clone();
        for _ in 0..flips {
            d = d.with_flipped(rng.random_range(0..center.len()));
        }
        d
    }

    #[test]
    fn majority_ties_resolve_to_zero() {
        let a = BinaryDescriptor::from_bits(&[true, true, false]).unwrap();
        let b = BinaryDescriptor::from_bits(&[true, false, false]).unwrap();
        let m = majority(&[&a, &b], 3);
        assert_eq!(m.to_bits(), vec![true, false, false]);
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c0 = BinaryDescriptor::random(&mut rng, 256).unwrap();
        let c1 = c0.complement();
        let data: Vec<BinaryDescriptor> = (0..200)
            .map(|i| noisy(if i % 2 == 0 { &c0 } else { &c1 }, 10, &mut rng))
            .collect();
        let refs: Vec<&BinaryDescriptor> = data.iter().collect();
        let clustering = k_majority(&refs, 2, 20, &mut rng);
        for truth in [&c0, &c1] {
            let best = clustering
                .centroids
                .iter()
                .map(|c| c.hamming(truth).unwrap())
                .min()
                .unwrap();
            assert!(best <= 2, "centroid {best} bits from true center");
        }
    }

    #[test]
    fn cost_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers: Vec<_> = (0..6)
            .map(|_| BinaryDescriptor::random(&mut rng, 128).unwrap())
            .collect();
        let data: Vec<BinaryDescriptor> = (0..600)
            .map(|i| noisy(&centers[i % 6], 30, &mut rng))
            .collect();
        let refs: Vec<&BinaryDescriptor> = data.iter().collect();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = k_majority(&refs, 8, 30, &mut rng);
            assert!(c.cost_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", c.cost_history);
        }
    }
}
