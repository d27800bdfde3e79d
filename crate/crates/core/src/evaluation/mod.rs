//! Human–AI agreement metrics: per-band means, mean absolute difference
//! against the human baseline, box-plot distribution statistics, and the
//! round-number clustering index.
//!
//! All metrics are pure functions over normalized 10-point score series
//! and are permutation-invariant in their input order. Quartiles use
//! linear interpolation between closest ranks (the same convention as
//! numpy's default percentile). Full precision is kept throughout;
//! two-decimal rounding happens in the render layer only.

mod render;

pub use render::{render_csv, render_distributions_json, render_text};

use crate::corpus::{BaselineScores, Corpus, QualityBand};
use crate::graders::Strategy;
use crate::pipeline::PipelineResult;
use crate::rubric::normalize_score;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const METHOD_HUMAN: &str = "Human TA";
pub const METHOD_DIRECT_10: &str = "Direct (10-pt)";
pub const METHOD_DIRECT_100: &str = "Direct (100-pt scaled)";
pub const METHOD_REVERSE_10: &str = "Reverse (10-pt)";
pub const METHOD_REVERSE_100: &str = "Reverse (100-pt scaled)";

/// Canonical report row order; methods outside this list sort after it,
/// alphabetically.
pub const CANONICAL_METHODS: [&str; 5] = [
    METHOD_HUMAN,
    METHOD_DIRECT_10,
    METHOD_DIRECT_100,
    METHOD_REVERSE_10,
    METHOD_REVERSE_100,
];

pub(crate) fn method_sort_key(method: &str) -> (usize, &str) {
    match CANONICAL_METHODS.iter().position(|m| *m == method) {
        Some(i) => (i, method),
        None => (CANONICAL_METHODS.len(), method),
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series share no submission ids")]
    EmptyIntersection,
    #[error("series `{0}` is empty")]
    EmptySeries(String),
    #[error("scored submission `{0}` has no band in the corpus")]
    MissingBand(String),
    #[error("invalid series `{method}`: {detail}")]
    InvalidSeries { method: String, detail: String },
}

/// One method's normalized scores: `(submission id, score on [0, 10])`
/// pairs, id-sorted and unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    method: String,
    pairs: Vec<(String, f64)>,
}

impl ScoreSeries {
    pub fn new(
        method: impl Into<String>,
        mut pairs: Vec<(String, f64)>,
    ) -> Result<Self, EvalError> {
        let method = method.into();
        let mut seen = BTreeSet::new();
        for (id, score) in &pairs {
            if !score.is_finite() || *score < 0.0 || *score > 10.0 {
                return Err(EvalError::InvalidSeries {
                    method,
                    detail: format!("score {score} for `{id}` outside [0, 10]"),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(EvalError::InvalidSeries {
                    method,
                    detail: format!("duplicate submission id `{id}`"),
                });
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(ScoreSeries { method, pairs })
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn pairs(&self) -> &[(String, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.pairs
            .binary_search_by(|(sid, _)| sid.as_str().cmp(id))
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

/// Mean over the id intersection of `|ai - human|`.
pub fn mean_abs_diff(ai: &ScoreSeries, human: &ScoreSeries) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (id, score) in ai.pairs() {
        if let Some(h) = human.score(id) {
            sum += (score - h).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyIntersection);
    }
    Ok(sum / count as f64)
}

/// method → band → mean; a method with no scores in a band simply has no
/// cell (rendered as empty, never as zero).
pub type BandMeans = BTreeMap<String, BTreeMap<QualityBand, f64>>;

/// Per-method per-band arithmetic means. Every scored submission must
/// resolve to a corpus entry (that is where its band lives).
pub fn band_averages(series: &[ScoreSeries], corpus: &Corpus) -> Result<BandMeans, EvalError> {
    let mut table = BandMeans::new();
    for s in series {
        let mut sums: BTreeMap<QualityBand, (f64, usize)> = BTreeMap::new();
        for (id, score) in s.pairs() {
            let band = corpus
                .submission(id)
                .map(|sub| sub.band)
                .ok_or_else(|| EvalError::MissingBand(id.clone()))?;
            let entry = sums.entry(band).or_insert((0.0, 0));
            entry.0 += score;
            entry.1 += 1;
        }
        let means = sums
            .into_iter()
            .map(|(band, (sum, n))| (band, sum / n as f64))
            .collect();
        table.insert(s.method().to_string(), means);
    }
    Ok(table)
}

/// Five-number summary for box plots; whiskers sit at min/max, no outlier
/// trimming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Percentile by linear interpolation between closest ranks: for sorted
/// `x[0..n]`, percentile `p` sits at rank `p * (n - 1)`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let weight = rank - lo as f64;
        sorted[lo] * (1.0 - weight) + sorted[hi] * weight
    }
}

pub fn distribution_stats(series: &ScoreSeries) -> Result<FiveNumber, EvalError> {
    if series.is_empty() {
        return Err(EvalError::EmptySeries(series.method().to_string()));
    }
    let mut scores: Vec<f64> = series.pairs().iter().map(|(_, s)| *s).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    Ok(FiveNumber {
        min: scores[0],
        q1: percentile(&scores, 0.25),
        median: percentile(&scores, 0.5),
        q3: percentile(&scores, 0.75),
        max: scores[scores.len() - 1],
    })
}

const INTEGER_EPSILON: f64 = 1e-9;

/// Fraction of scores sitting exactly on an integer. Graders that cluster
/// on round numbers (6, 7, 8) score high here; finer-grained graders
/// score low.
pub fn round_clustering_index(series: &ScoreSeries) -> Result<f64, EvalError> {
    if series.is_empty() {
        return Err(EvalError::EmptySeries(series.method().to_string()));
    }
    let integral = series
        .pairs()
        .iter()
        .filter(|(_, s)| (s - s.round()).abs() <= INTEGER_EPSILON)
        .count();
    Ok(integral as f64 / series.len() as f64)
}

/// The assembled comparison: Table-shaped band means, MAD against the
/// human baseline, distribution statistics, and clustering, plus a log of
/// everything that was excluded and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub band_means: BandMeans,
    pub mad: BTreeMap<String, f64>,
    pub distributions: BTreeMap<String, FiveNumber>,
    pub clustering: BTreeMap<String, f64>,
    pub exclusions: Vec<String>,
}

/// Label for an LLM grade on its native scale.
pub fn method_label(strategy: Strategy, scale: f64) -> String {
    let name = match strategy {
        Strategy::Direct => "Direct",
        Strategy::Reverse => "Reverse",
        Strategy::AutoPass => "AutoPass",
    };
    if scale == 10.0 {
        format!("{name} (10-pt)")
    } else if scale == 100.0 {
        format!("{name} (100-pt scaled)")
    } else {
        format!("{name} ({scale}-pt scaled)")
    }
}

/// Collapse the baseline to one normalized score per submission (mean over
/// graders, each record first mapped onto the 10-point scale).
pub fn human_series(baseline: &BaselineScores) -> Result<ScoreSeries, EvalError> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for record in baseline.records() {
        let normalized = normalize_score(record.total, record.scale, 10.0).map_err(|e| {
            EvalError::InvalidSeries {
                method: METHOD_HUMAN.into(),
                detail: e.to_string(),
            }
        })?;
        let entry = sums.entry(record.submission_id.clone()).or_insert((0.0, 0));
        entry.0 += normalized;
        entry.1 += 1;
    }
    let pairs = sums
        .into_iter()
        .map(|(id, (sum, n))| (id, sum / n as f64))
        .collect();
    ScoreSeries::new(METHOD_HUMAN, pairs)
}

/// Group grade results into per-method series.
///
/// Auto-pass grades carry no strategy of their own; their full-mark score
/// is folded into every LLM method present in the result set, since that
/// is the grade the pipeline reports for those submissions under any
/// strategy. Duplicate (method, submission) pairs keep the first value.
pub fn series_from_results(results: &[PipelineResult]) -> Result<Vec<ScoreSeries>, EvalError> {
    let mut methods: BTreeSet<String> = BTreeSet::new();
    for result in results {
        for grade in &result.results {
            if grade.strategy != Strategy::AutoPass {
                methods.insert(method_label(grade.strategy, grade.scale));
            }
        }
    }

    let mut by_method: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for result in results {
        for grade in &result.results {
            match grade.strategy {
                Strategy::AutoPass => {
                    for method in &methods {
                        by_method
                            .entry(method.clone())
                            .or_default()
                            .entry(grade.submission_id.clone())
                            .or_insert(grade.normalized_total);
                    }
                }
                strategy => {
                    by_method
                        .entry(method_label(strategy, grade.scale))
                        .or_default()
                        .entry(grade.submission_id.clone())
                        .or_insert(grade.normalized_total);
                }
            }
        }
    }

    by_method
        .into_iter()
        .map(|(method, scores)| ScoreSeries::new(method, scores.into_iter().collect()))
        .collect()
}

/// Assemble the full report from pipeline results, the human baseline, and
/// the corpus (bands). Deterministic: same inputs, same report, byte for
/// byte once rendered.
pub fn build_report(
    results: &[PipelineResult],
    baseline: &BaselineScores,
    corpus: &Corpus,
) -> Result<EvaluationReport, EvalError> {
    let mut exclusions = Vec::new();

    let human_all = human_series(baseline)?;
    if human_all.is_empty() {
        return Err(EvalError::EmptySeries(METHOD_HUMAN.into()));
    }
    // Baseline rows for submissions outside the corpus have no band; drop
    // them up front, loudly.
    let mut known = Vec::new();
    for (id, score) in human_all.pairs() {
        if corpus.submission(id).is_some() {
            known.push((id.clone(), *score));
        } else {
            exclusions.push(format!(
                "baseline submission `{id}` is not in the corpus; excluded from all metrics"
            ));
        }
    }
    let human = ScoreSeries::new(METHOD_HUMAN, known)?;
    if human.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }

    let ai_series = series_from_results(results)?;
    let mut all_series = vec![human.clone()];
    all_series.extend(ai_series.iter().cloned());

    let band_means = band_averages(&all_series, corpus)?;

    let mut mad = BTreeMap::new();
    for series in &ai_series {
        for (id, _) in series.pairs() {
            if human.score(id).is_none() {
                exclusions.push(format!(
                    "`{id}` has no baseline score; excluded from `{}` MAD",
                    series.method()
                ));
            }
        }
        mad.insert(series.method().to_string(), mean_abs_diff(series, &human)?);
    }

    let mut distributions = BTreeMap::new();
    let mut clustering = BTreeMap::new();
    for series in &all_series {
        distributions.insert(series.method().to_string(), distribution_stats(series)?);
        clustering.insert(series.method().to_string(), round_clustering_index(series)?);
    }

    exclusions.sort();
    exclusions.dedup();
    Ok(EvaluationReport {
        band_means,
        mad,
        distributions,
        clustering,
        exclusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusMetadata, Problem, Provenance, Submission};
    use proptest::prelude::*;

    fn series(method: &str, scores: &[(&str, f64)]) -> ScoreSeries {
        ScoreSeries::new(
            method,
            scores.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mad_hand_examples() {
        let ai = series("ai", &[("a", 3.0), ("b", 6.0), ("c", 7.0)]);
        let human = series("h", &[("a", 2.0), ("b", 5.0), ("c", 8.0)]);
        assert_eq!(mean_abs_diff(&ai, &human).unwrap(), 1.0);
        assert_eq!(mean_abs_diff(&ai, &ai).unwrap(), 0.0);
    }

    #[test]
    fn mad_requires_overlap() {
        let ai = series("ai", &[("a", 3.0)]);
        let human = series("h", &[("b", 2.0)]);
        assert!(matches!(
            mean_abs_diff(&ai, &human),
            Err(EvalError::EmptyIntersection)
        ));
    }

    #[test]
    fn mad_is_symmetric() {
        let a = series("a", &[("x", 3.5), ("y", 7.25), ("z", 0.5)]);
        let b = series("b", &[("x", 4.0), ("y", 6.0), ("z", 2.0)]);
        assert_eq!(
            mean_abs_diff(&a, &b).unwrap(),
            mean_abs_diff(&b, &a).unwrap()
        );
    }

    #[test]
    fn series_rejects_bad_scores_and_duplicates() {
        assert!(ScoreSeries::new("m", vec![("a".into(), 11.0)]).is_err());
        assert!(ScoreSeries::new("m", vec![("a".into(), -0.1)]).is_err());
        assert!(ScoreSeries::new("m", vec![("a".into(), 5.0), ("a".into(), 6.0)]).is_err());
    }

    #[test]
    fn distribution_textbook_case() {
        let s = series(
            "m",
            &[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0), ("e", 5.0)],
        );
        let stats = distribution_stats(&s).unwrap();
        assert_eq!(stats.min, 1.0);
        assert_eq!(stats.q1, 2.0);
        assert_eq!(stats.median, 3.0);
        assert_eq!(stats.q3, 4.0);
        assert_eq!(stats.max, 5.0);
    }

    #[test]
    fn distribution_single_score() {
        let s = series("m", &[("a", 7.3)]);
        let stats = distribution_stats(&s).unwrap();
        for v in [stats.min, stats.q1, stats.median, stats.q3, stats.max] {
            assert_eq!(v, 7.3);
        }
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(
            round_clustering_index(&series("m", &[("a", 6.0), ("b", 7.0), ("c", 8.0)])).unwrap(),
            1.0
        );
        assert_eq!(
            round_clustering_index(&series("m", &[("a", 5.74), ("b", 6.21)])).unwrap(),
            0.0
        );
        assert_eq!(
            round_clustering_index(&series(
                "m",
                &[("a", 6.0), ("b", 6.5), ("c", 7.0), ("d", 7.5)]
            ))
            .unwrap(),
            0.5
        );
    }

    #[test]
    fn empty_series_errors() {
        let empty = ScoreSeries::new("m", vec![]).unwrap();
        assert!(matches!(
            distribution_stats(&empty),
            Err(EvalError::EmptySeries(_))
        ));
        assert!(matches!(
            round_clustering_index(&empty),
            Err(EvalError::EmptySeries(_))
        ));
    }

    fn banded_corpus(entries: &[(&str, QualityBand)]) -> Corpus {
        let problem = Problem {
            id: "p1".into(),
            title: "T".into(),
            statement: "S".into(),
            reference_solution: "class A {}\n".into(),
            test_suite_ref: Some("suite:p1".into()),
            language_tag: "java".into(),
        };
        let submissions = entries
            .iter()
            .map(|(id, band)| Submission {
                id: id.to_string(),
                problem_id: "p1".into(),
                source: "class A {}\n".into(),
                band: *band,
                provenance: Provenance::Synthetic,
                error_notes: None,
            })
            .collect();
        Corpus::new(vec![problem], submissions, CorpusMetadata::default()).unwrap()
    }

    #[test]
    fn band_means_match_table_formatting_example() {
        let corpus = banded_corpus(&[
            ("a", QualityBand::Poor),
            ("b", QualityBand::Poor),
            ("c", QualityBand::Poor),
        ]);
        let s = series(METHOD_HUMAN, &[("a", 2.0), ("b", 2.27), ("c", 2.54)]);
        let means = band_averages(&[s], &corpus).unwrap();
        let poor = means[METHOD_HUMAN][&QualityBand::Poor];
        assert!((poor - 2.27).abs() < 1e-9);
        assert_eq!(format!("{poor:.2}"), "2.27");
    }

    #[test]
    fn band_means_single_submission_per_band() {
        let corpus = banded_corpus(&[
            ("a", QualityBand::Poor),
            ("b", QualityBand::Moderate),
            ("c", QualityBand::Good),
        ]);
        let s = series("m", &[("a", 2.5), ("b", 5.5), ("c", 9.0)]);
        let means = band_averages(&[s], &corpus).unwrap();
        assert_eq!(means["m"][&QualityBand::Poor], 2.5);
        assert_eq!(means["m"][&QualityBand::Moderate], 5.5);
        assert_eq!(means["m"][&QualityBand::Good], 9.0);
    }

    #[test]
    fn band_means_reject_unknown_submissions() {
        let corpus = banded_corpus(&[("a", QualityBand::Poor)]);
        let s = series("m", &[("zzz", 5.0)]);
        assert!(matches!(
            band_averages(&[s], &corpus),
            Err(EvalError::MissingBand(_))
        ));
    }

    #[test]
    fn conservation_band_means_recombine_to_overall_mean() {
        let corpus = banded_corpus(&[
            ("a", QualityBand::Poor),
            ("b", QualityBand::Poor),
            ("c", QualityBand::Moderate),
            ("d", QualityBand::Good),
            ("e", QualityBand::Good),
            ("f", QualityBand::Good),
        ]);
        let s = series(
            "m",
            &[
                ("a", 1.0),
                ("b", 3.0),
                ("c", 5.5),
                ("d", 8.0),
                ("e", 9.0),
                ("f", 10.0),
            ],
        );
        let overall: f64 = s.pairs().iter().map(|(_, v)| v).sum::<f64>() / s.len() as f64;
        let means = band_averages(std::slice::from_ref(&s), &corpus).unwrap();
        let mut weighted = 0.0;
        for (band, mean) in &means["m"] {
            let count = s
                .pairs()
                .iter()
                .filter(|(id, _)| corpus.submission(id).unwrap().band == *band)
                .count();
            weighted += mean * count as f64;
        }
        assert!((weighted / s.len() as f64 - overall).abs() <= 1e-9);
    }

    #[test]
    fn report_excludes_missing_baseline_rows_from_mad_only() {
        use crate::graders::{GradePayload, GradeResult, Strategy};
        use crate::pipeline::{PipelineResult, Route};

        let corpus = banded_corpus(&[
            ("a", QualityBand::Poor),
            ("b", QualityBand::Moderate),
            ("c", QualityBand::Good),
        ]);
        let results: Vec<PipelineResult> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| PipelineResult {
                submission_id: id.to_string(),
                route: Route::LlmGraded,
                results: vec![GradeResult {
                    submission_id: id.to_string(),
                    strategy: Strategy::Direct,
                    scale: 10.0,
                    raw_total: 2.0 + i as f64,
                    normalized_total: 2.0 + i as f64,
                    payload: GradePayload::AutoPass,
                    parse_attempts: 1,
                    flags: vec![],
                }],
                review_flag: None,
            })
            .collect();

        // Baseline covers a and b only; c must drop out of MAD but stay in
        // the AI band means, and the exclusion must be logged.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        std::fs::write(
            &path,
            "submission_id,grader_id,scale,total\na,ta1,10,2\nb,ta1,10,4\n",
        )
        .unwrap();
        let baseline = crate::corpus::load_baseline(&path).unwrap();

        let report = build_report(&results, &baseline, &corpus).unwrap();
        let mad = report.mad[METHOD_DIRECT_10];
        // |2-2| and |3-4| over the two matched ids.
        assert!((mad - 0.5).abs() < 1e-12);
        assert_eq!(
            report.band_means[METHOD_DIRECT_10][&QualityBand::Good],
            4.0,
            "unmatched submission still counts toward band means"
        );
        assert!(
            report.exclusions.iter().any(|e| e.contains("`c`")),
            "exclusion must be logged: {:?}",
            report.exclusions
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metrics_are_permutation_invariant(
            scores in proptest::collection::vec(0.0f64..=10.0, 2..20),
            seed in proptest::num::u64::ANY,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let pairs: Vec<(String, f64)> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("s{i:03}"), *s))
                .collect();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = ScoreSeries::new("m", pairs).unwrap();
            let b = ScoreSeries::new("m", shuffled).unwrap();
            prop_assert_eq!(distribution_stats(&a).unwrap(), distribution_stats(&b).unwrap());
            prop_assert_eq!(
                round_clustering_index(&a).unwrap(),
                round_clustering_index(&b).unwrap()
            );
        }
    }
}
