//! Precision/recall, average precision and timing statistics.
//!
//! A *report* is a (query image, reference image) pair the search claims
//! shows the same place. Its score is whatever the backend ranks by.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruth;
use crate::error::{Error, Result};
use crate::index::{Backend, MatchResult};

/// Area under the precision/recall curve of one ranked list, by trapezoids
/// between consecutive ranks, starting from precision 1 at recall 0. Ranks
/// after the last relevant hit add nothing. No relevant items gives 0.
pub fn average_precision<'a>(
    ranked: impl IntoIterator<Item = &'a str>,
    relevant: &BTreeSet<String>,
) -> f64 {
    let hits: Vec<bool> = ranked.into_iter().map(|id| relevant.contains(id)).collect();
    average_precision_of_hits(&hits, relevant.len())
}

/// As [`average_precision`], with the ranked list given as hit flags.
pub fn average_precision_of_hits(hits: &[bool], relevant_count: usize) -> f64 {
    if relevant_count == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut ap = 0.0;
    let mut old_recall = 0.0;
    let mut old_precision = 1.0;
    for (rank, &hit) in hits.iter().enumerate() {
        if hit {
            found += 1;
        }
        let recall = found as f64 / relevant_count as f64;
        let precision = found as f64 / (rank + 1) as f64;
        ap += (recall - old_recall) * (old_precision + precision) / 2.0;
        old_recall = recall;
        old_precision = precision;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query_id: String,
    pub relevant: usize,
    /// `None` when the query has nothing relevant in the database; such
    /// queries do not enter the mean.
    pub ap: Option<f64>,
}

/// Mean over queries with at least one relevant item; 0 if there are none.
pub fn mean_average_precision(aps: &[QueryAp]) -> f64 {
    let scored: Vec<f64> = aps.iter().filter_map(|q| q.ap).collect();
    if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query_id: String,
    pub reference_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Reports with score at or above this value are counted.
    pub threshold: f64,
    pub reported: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Ordered by descending threshold, so recall never decreases.
    pub points: Vec<PrPoint>,
    pub possible: usize,
}

/// One operating point per distinct score, thresholding all reports at
/// once. Possible matches are all (query, relevant) pairs in `gt`; a report
/// for a query absent from `gt` is incorrect. With no reports the curve is
/// the single point (recall 0, precision 1).
pub fn pr_curve(pairs: &[ScoredPair], gt: &GroundTruth, known: &BTreeSet<&str>) -> Result<PrCurve> {
    let mut seen = BTreeSet::new();
    for p in pairs {
        if !seen.insert((&p.query_id, &p.reference_id)) {
            return Err(Error::format(
                "report",
                format!("pair {} -> {} reported twice", p.query_id, p.reference_id),
            ));
        }
        for id in [&p.query_id, &p.reference_id] {
            if !known.contains(id.as_str()) {
                return Err(Error::UnknownImage(id.clone()));
            }
        }
        if !p.score.is_finite() {
            return Err(Error::format("report", format!("non-finite score {}", p.score)));
        }
    }
    let possible = gt.pairs().count();
    let recall_of = |correct: usize| {
        if possible == 0 {
            0.0
        } else {
            correct as f64 / possible as f64
        }
    };
    if pairs.is_empty() {
        return Ok(PrCurve {
            points: vec![PrPoint {
                threshold: 0.0,
                reported: 0,
                correct: 0,
                precision: 1.0,
                recall: 0.0,
            }],
            possible,
        });
    }
    let mut order: Vec<&ScoredPair> = pairs.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut reported, mut correct) = (0, 0);
    for (i, p) in order.iter().enumerate() {
        reported += 1;
        if gt.is_relevant(&p.query_id, &p.reference_id) {
            correct += 1;
        }
        let last_at_score = order.get(i + 1).is_none_or(|next| next.score != p.score);
        if last_at_score {
            points.push(PrPoint {
                threshold: p.score,
                reported,
                correct,
                precision: correct as f64 / reported as f64,
                recall: recall_of(correct),
            });
        }
    }
    Ok(PrCurve { points, possible })
}

/// Share of query descriptors whose exact nearest neighbor (within the
/// threshold) is matched by the approximate result at the same distance.
/// Returns `(hits, total)`.
pub fn recall_at_1(exact: &[MatchResult], approximate: &[MatchResult]) -> (usize, usize) {
    let found: BTreeMap<u32, u32> = approximate
        .iter()
        .map(|m| (m.query_descriptor, m.distance))
        .collect();
    let hits = exact
        .iter()
        .filter(|m| found.get(&m.query_descriptor) == Some(&m.distance))
        .count();
    (hits, exact.len())
}

/// Mean of per-image processing times, in seconds.
pub fn mean_processing_time(samples: &[Duration]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(Duration::as_secs_f64).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub images_per_run: usize,
    /// Mean over every timed image of every run.
    pub mean_seconds: f64,
    pub min_run_mean_seconds: f64,
    pub max_run_mean_seconds: f64,
}

impl TimingStats {
    /// `runs` holds one list of per-image durations per timed run.
    pub fn from_runs(runs: &[Vec<Duration>]) -> Self {
        let means: Vec<f64> = runs.iter().map(|r| mean_processing_time(r)).collect();
        let all: Vec<Duration> = runs.iter().flatten().copied().collect();
        Self {
            runs: runs.len(),
            images_per_run: runs.first().map_or(0, Vec::len),
            mean_seconds: mean_processing_time(&all),
            min_run_mean_seconds: means.iter().copied().fold(f64::INFINITY, f64::min),
            max_run_mean_seconds: means.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Result of one (backend, λ) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: Backend,
    pub lambda: u32,
    pub tau: f64,
    pub descriptor_bits: usize,
    pub augmented_bits: usize,
    pub map: f64,
    pub query_aps: Vec<QueryAp>,
    pub curve: PrCurve,
}

impl EvalReport {
    pub fn evaluated_queries(&self) -> usize {
        self.query_aps.iter().filter(|q| q.ap.is_some()).count()
    }
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "backend",
    "lambda",
    "descriptor_bits",
    "augmented_bits",
    "tau",
    "queries",
    "evaluated_queries",
    "map",
    "reported_pairs",
    "correct_pairs",
    "possible_pairs",
];

pub const CURVE_HEADER: [&str; 5] = ["threshold", "reported", "correct", "precision", "recall"];

pub fn summary_row(r: &EvalReport) -> Vec<String> {
    let last = r.curve.points.last();
    vec![
        r.backend.to_string(),
        r.lambda.to_string(),
        r.descriptor_bits.to_string(),
        r.augmented_bits.to_string(),
        r.tau.to_string(),
        r.query_aps.len().to_string(),
        r.evaluated_queries().to_string(),
        r.map.to_string(),
        last.map_or(0, |p| p.reported).to_string(),
        last.map_or(0, |p| p.correct).to_string(),
        r.curve.possible.to_string(),
    ]
}

pub fn write_curve_csv(curve: &PrCurve, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for p in &curve.points {
        w.write_record([
            p.threshold.to_string(),
            p.reported.to_string(),
            p.correct.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(["a", "b", "x"], &set(&["a", "b"])), 1.0);
        // irrelevant first: precision falls to 0 before the hit at 1/2
        assert_eq!(average_precision(["x", "a"], &set(&["a"])), 0.25);
        // the miss drags the interpolation start down to 1/2
        let ap = average_precision(["a", "x", "b"], &set(&["a", "b"]));
        assert!((ap - (0.5 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0)).abs() < 1e-12);
        assert_eq!(average_precision(["x"], &set(&[])), 0.0);
        // relevant item never retrieved caps recall
        assert_eq!(average_precision(["a"], &set(&["a", "b"])), 0.5);
        assert_eq!(average_precision([], &set(&["a"])), 0.0);
    }

    #[test]
    fn map_skips_queries_without_relevant_items() {
        let q = |ap| QueryAp {
            query_id: "q".into(),
            relevant: 1,
            ap,
        };
        assert_eq!(mean_average_precision(&[q(Some(1.0)), q(None), q(Some(0.5))]), 0.75);
        assert_eq!(mean_average_precision(&[q(None)]), 0.0);
    }

    fn gt_and_known() -> (GroundTruth, BTreeSet<&'static str>) {
        let mut gt = GroundTruth::new();
        gt.add_pair("q", "r1");
        gt.add_pair("q", "r2");
        (gt, ["q", "r1", "r2", "r3"].into_iter().collect())
    }

    fn pair(q: &str, r: &str, score: f64) -> ScoredPair {
        ScoredPair {
            query_id: q.into(),
            reference_id: r.into(),
            score,
        }
    }

    #[test]
    fn pr_hand_case() {
        let (gt, known) = gt_and_known();
        let curve = pr_curve(&[pair("q", "r1", 3.0), pair("q", "r3", 3.0)], &gt, &known).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!((curve.points[0].recall, curve.points[0].precision), (0.5, 0.5));

        let curve = pr_curve(&[pair("q", "r3", 1.0), pair("q", "r1", 3.0), pair("q", "r2", 2.0)], &gt, &known)
            .unwrap();
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(0.5, 1.0), (1.0, 1.0), (1.0, 2.0 / 3.0)]);
    }

    #[test]
    fn pr_perfect_and_empty() {
        let (gt, known) = gt_and_known();
        let curve = pr_curve(&[pair("q", "r1", 1.0), pair("q", "r2", 1.0)], &gt, &known).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!((curve.points[0].recall, curve.points[0].precision), (1.0, 1.0));

        let curve = pr_curve(&[], &gt, &known).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!((curve.points[0].recall, curve.points[0].precision), (0.0, 1.0));
    }

    #[test]
    fn pr_rejects_unknown_ids() {
        let (gt, known) = gt_and_known();
        assert!(matches!(
            pr_curve(&[pair("q", "zz", 1.0)], &gt, &known),
            Err(Error::UnknownImage(id)) if id == "zz"
        ));
        let twice = [pair("q", "r1", 1.0), pair("q", "r1", 0.5)];
        assert!(matches!(pr_curve(&twice, &gt, &known), Err(Error::Format { .. })));
    }

    #[test]
    fn reports_for_queries_without_ground_truth_are_wrong() {
        let (gt, mut known) = gt_and_known();
        known.insert("other");
        let curve = pr_curve(&[pair("other", "r1", 1.0)], &gt, &known).unwrap();
        assert_eq!(curve.points[0].precision, 0.0);
    }

    #[test]
    fn recall_at_1_counts_equal_distances() {
        let m = |q, r, d| MatchResult {
            query_descriptor: q,
            reference_descriptor: r,
            reference_image: "a".into(),
            distance: d,
        };
        let exact = [m(0, 5, 3), m(1, 6, 4), m(2, 7, 1)];
        let approx = [m(0, 9, 3), m(1, 6, 5)];
        assert_eq!(recall_at_1(&exact, &approx), (1, 3));
    }

    #[test]
    fn timing_stats() {
        let ms = Duration::from_millis;
        let stats = TimingStats::from_runs(&[vec![ms(10), ms(30)], vec![ms(20), ms(20)]]);
        assert_eq!(stats.runs, 2);
        assert_eq!(stats.images_per_run, 2);
        assert!((stats.mean_seconds - 0.02).abs() < 1e-12);
        assert!((stats.min_run_mean_seconds - 0.02).abs() < 1e-12);
        assert_eq!(mean_processing_time(&[]), 0.0);
    }

    fn hits_strategy() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 1..30)
    }

    proptest! {
        #[test]
        fn ap_is_in_unit_interval(hits in hits_strategy(), extra in 0usize..5) {
            let relevant = hits.iter().filter(|h| **h).count() + extra;
            let ap = average_precision_of_hits(&hits, relevant);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }

        #[test]
        fn misses_after_last_hit_are_invisible(hits in hits_strategy(), tail in 0usize..6) {
            let relevant = hits.iter().filter(|h| **h).count().max(1);
            let mut longer = hits.clone();
            longer.extend(std::iter::repeat_n(false, tail));
            prop_assert_eq!(
                average_precision_of_hits(&hits, relevant),
                average_precision_of_hits(&longer, relevant)
            );
        }

        #[test]
        fn inserted_miss_above_a_hit_lowers_ap(hits in hits_strategy(), at in 0usize..30) {
            prop_assume!(hits.iter().any(|h| *h));
            let last_hit = hits.iter().rposition(|h| *h).unwrap();
            let at = at % (last_hit + 1);
            let relevant = hits.iter().filter(|h| **h).count();
            let mut worse = hits.clone();
            worse.insert(at, false);
            prop_assert!(
                average_precision_of_hits(&worse, relevant) < average_precision_of_hits(&hits, relevant)
            );
        }

        #[test]
        fn identical_queries_average_to_their_ap(hits in hits_strategy(), n in 1usize..6) {
            let relevant = hits.iter().filter(|h| **h).count().max(1);
            let ap = average_precision_of_hits(&hits, relevant);
            let aps: Vec<QueryAp> = (0..n)
                .map(|i| QueryAp { query_id: i.to_string(), relevant, ap: Some(ap) })
                .collect();
            prop_assert!((mean_average_precision(&aps) - ap).abs() < 1e-12);
        }

        #[test]
        fn curve_recall_is_monotone(scores in prop::collection::vec((0u8..4, 0u8..6), 0..40)) {
            let mut gt = GroundTruth::new();
            for q in 0..4 {
                gt.add_pair(format!("q{q}"), format!("r{q}"));
                gt.add_pair(format!("q{q}"), format!("r{}", q + 1));
            }
            let names: Vec<String> = (0..4).map(|i| format!("q{i}"))
                .chain((0..6).map(|i| format!("r{i}"))).collect();
            let known: BTreeSet<&str> = names.iter().map(String::as_str).collect();
            let unique: BTreeSet<(u8, u8)> = scores.iter().copied().collect();
            let pairs: Vec<ScoredPair> = unique.iter().enumerate()
                .map(|(i, &(q, r))| pair(&format!("q{q}"), &format!("r{r}"), (i % 5) as f64))
                .collect();
            let curve = pr_curve(&pairs, &gt, &known).unwrap();
            prop_assert!(curve.points.windows(2).all(|w| w[0].recall <= w[1].recall));
            prop_assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall)));
        }
    }
}
