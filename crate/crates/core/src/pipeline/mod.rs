//! Pipeline orchestration: unit-test gate, strategy routing, review
//! flagging, and batch execution.
//!
//! Per submission: run the unit tests; a pass is auto-graded at full marks
//! with zero gateway traffic, a failure is graded by every configured LLM
//! strategy, and an infrastructure fault routes straight to a human.
//! Batches fan out over a bounded worker pool; results come back in
//! submission-id order no matter how workers were scheduled.

mod runner;

pub use runner::{
    run_unit_tests, CommandRunner, ReferenceDiffRunner, ScriptedRunner, TestOutcome, TestRunner,
    TestStatus, DEFAULT_TEST_TIMEOUT,
};

use crate::corpus::{Corpus, Problem, Submission};
use crate::exec::{self, Parallelism};
use crate::gateway::{CompletionGateway, GatewayError};
use crate::graders::{
    grade_direct, grade_reverse, GradeError, GradeFlag, GradeResult, LlmStrategy, Strategy,
};
use crate::rubric::Rubric;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Default cross-strategy disagreement (on the 10-point scale) that sends
/// a submission to human review.
pub const DEFAULT_REVIEW_THRESHOLD: f64 = 2.0;

const NORMALIZATION_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("malformed results file at line {line}: {detail}")]
    MalformedResults { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Passed the unit-test gate; full marks, no model involved.
    AutoFull,
    /// Failed the gate and was graded by the configured LLM strategies.
    LlmGraded,
    /// Something made the grade untrustworthy; a human takes over.
    NeedsHuman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewReason {
    /// Direct and Reverse disagree by at least the review threshold.
    ScoreDivergence,
    /// A reverse grade's claimed and computed totals disagree.
    ConsistencyMismatch,
    RunnerError,
    ParseFailure,
    ReplayMiss,
    GatewayError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewFlag {
    pub reason: ReviewReason,
    /// Cross-strategy score gap on the 10-point scale; zero when the flag
    /// does not stem from a score comparison.
    pub magnitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Everything the pipeline decided about one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub submission_id: String,
    pub route: Route,
    pub results: Vec<GradeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_flag: Option<ReviewFlag>,
}

/// Batch configuration shared by every worker.
#[derive(Clone)]
pub struct GradeConfig {
    pub rubric: Rubric,
    pub strategies: Vec<LlmStrategy>,
    pub review_threshold: f64,
    pub workers: Option<usize>,
}

impl GradeConfig {
    pub fn new(rubric: Rubric, strategies: Vec<LlmStrategy>) -> GradeConfig {
        GradeConfig {
            rubric,
            strategies,
            review_threshold: DEFAULT_REVIEW_THRESHOLD,
            workers: None,
        }
    }
}

fn check_normalized(result: &GradeResult) -> Result<(), PipelineError> {
    if !(result.scale.is_finite() && result.scale > 0.0) {
        return Err(PipelineError::ScaleMismatch(format!(
            "grade for `{}` has invalid scale {}",
            result.submission_id, result.scale
        )));
    }
    let expected = result.raw_total * 10.0 / result.scale;
    if (result.normalized_total - expected).abs() > NORMALIZATION_EPSILON {
        return Err(PipelineError::ScaleMismatch(format!(
            "grade for `{}` is not normalized to the 10-point scale",
            result.submission_id
        )));
    }
    Ok(())
}

fn flag_from_pair(
    direct: &GradeResult,
    reverse: &GradeResult,
    threshold: f64,
) -> Option<ReviewFlag> {
    let magnitude = (direct.normalized_total - reverse.normalized_total).abs();
    let consistency = direct.has_flag(GradeFlag::ConsistencyMismatch)
        || reverse.has_flag(GradeFlag::ConsistencyMismatch);
    if magnitude >= threshold {
        Some(ReviewFlag {
            reason: ReviewReason::ScoreDivergence,
            magnitude,
            detail: None,
        })
    } else if consistency {
        Some(ReviewFlag {
            reason: ReviewReason::ConsistencyMismatch,
            magnitude,
            detail: None,
        })
    } else {
        None
    }
}

/// Flag a submission for human review when the two strategies disagree by
/// at least `threshold` on the 10-point scale, or when either grade
/// carries a consistency mismatch.
pub fn flag_for_review(
    direct: &GradeResult,
    reverse: &GradeResult,
    threshold: f64,
) -> Result<Option<ReviewFlag>, PipelineError> {
    check_normalized(direct)?;
    check_normalized(reverse)?;
    Ok(flag_from_pair(direct, reverse, threshold))
}

fn classify_failure(error: &GradeError) -> ReviewReason {
    match error {
        GradeError::GradingFailed { .. } => ReviewReason::ParseFailure,
        GradeError::Gateway(GatewayError::ReplayMiss { .. }) => ReviewReason::ReplayMiss,
        GradeError::Gateway(_) => ReviewReason::GatewayError,
    }
}

/// Grade one submission end to end: gate, route, grade, flag.
pub fn grade_submission(
    submission: &Submission,
    problem: &Problem,
    config: &GradeConfig,
    gateway: &dyn CompletionGateway,
    runner: &dyn TestRunner,
) -> PipelineResult {
    let outcome = run_unit_tests(submission, problem, runner);
    match outcome.status {
        TestStatus::Pass => PipelineResult {
            submission_id: submission.id.clone(),
            route: Route::AutoFull,
            results: vec![GradeResult::auto_pass(
                &submission.id,
                config.rubric.scale_total(),
            )],
            review_flag: None,
        },
        TestStatus::RunnerError => PipelineResult {
            submission_id: submission.id.clone(),
            route: Route::NeedsHuman,
            results: Vec::new(),
            review_flag: Some(ReviewFlag {
                reason: ReviewReason::RunnerError,
                magnitude: 0.0,
                detail: Some(first_line(&outcome.log)),
            }),
        },
        TestStatus::Fail => {
            let mut results = Vec::new();
            let mut failure: Option<(ReviewReason, String)> = None;
            for &strategy in &config.strategies {
                let graded = match strategy {
                    LlmStrategy::Direct => grade_direct(submission, &config.rubric, gateway),
                    LlmStrategy::Reverse => grade_reverse(submission, &config.rubric, gateway),
                };
                match graded {
                    Ok(result) => results.push(result),
                    Err(error) => {
                        log::warn!(
                            "{:?} grading failed for {}: {error}",
                            strategy,
                            submission.id
                        );
                        if failure.is_none() {
                            failure = Some((classify_failure(&error), error.to_string()));
                        }
                    }
                }
            }
            if let Some((reason, detail)) = failure {
                return PipelineResult {
                    submission_id: submission.id.clone(),
                    route: Route::NeedsHuman,
                    results,
                    review_flag: Some(ReviewFlag {
                        reason,
                        magnitude: 0.0,
                        detail: Some(detail),
                    }),
                };
            }
            let direct = results.iter().find(|r| r.strategy == Strategy::Direct);
            let reverse = results.iter().find(|r| r.strategy == Strategy::Reverse);
            let review_flag = match (direct, reverse) {
                (Some(d), Some(r)) => flag_from_pair(d, r, config.review_threshold),
                // Single-strategy runs have no divergence measure; still
                // surface consistency mismatches.
                _ => results
                    .iter()
                    .find(|r| r.has_flag(GradeFlag::ConsistencyMismatch))
                    .map(|_| ReviewFlag {
                        reason: ReviewReason::ConsistencyMismatch,
                        magnitude: 0.0,
                        detail: None,
                    }),
            };
            PipelineResult {
                submission_id: submission.id.clone(),
                route: Route::LlmGraded,
                results,
                review_flag,
            }
        }
    }
}

fn first_line(text: &str) -> String {
    text.lines().next().unwrap_or_default().to_string()
}

/// Grade every submission in the corpus. Output is ordered by submission
/// id; per-submission failures are isolated into `NeedsHuman` results.
pub fn run_batch(
    corpus: &Corpus,
    config: &GradeConfig,
    gateway: &dyn CompletionGateway,
    runner: &dyn TestRunner,
) -> Vec<PipelineResult> {
    run_batch_with(corpus, config, gateway, runner, Parallelism::default())
}

pub fn run_batch_with(
    corpus: &Corpus,
    config: &GradeConfig,
    gateway: &dyn CompletionGateway,
    runner: &dyn TestRunner,
    parallelism: Parallelism,
) -> Vec<PipelineResult> {
    // Submissions are already id-sorted; an order-preserving map keeps the
    // output deterministic under any scheduling.
    exec::map_slice_bounded(
        parallelism,
        config.workers,
        corpus.submissions(),
        |submission| match corpus.problem(&submission.problem_id) {
            Some(problem) => grade_submission(submission, problem, config, gateway, runner),
            None => PipelineResult {
                submission_id: submission.id.clone(),
                route: Route::NeedsHuman,
                results: Vec::new(),
                review_flag: Some(ReviewFlag {
                    reason: ReviewReason::RunnerError,
                    magnitude: 0.0,
                    detail: Some(format!("unknown problem `{}`", submission.problem_id)),
                }),
            },
        },
    )
}

// --- result persistence -------------------------------------------------

/// Line-delimited JSON, one [`PipelineResult`] per line, in id order.
pub fn results_to_jsonl(results: &[PipelineResult]) -> String {
    let mut out = String::new();
    for result in results {
        out.push_str(&serde_json::to_string(result).expect("results serialize"));
        out.push('\n');
    }
    out
}

pub fn write_results_jsonl(results: &[PipelineResult], path: &Path) -> Result<(), PipelineError> {
    let text = results_to_jsonl(results);
    let mut file = std::fs::File::create(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    file.write_all(text.as_bytes())
        .map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

pub fn read_results_jsonl(path: &Path) -> Result<Vec<PipelineResult>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| PipelineError::MalformedResults {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Route and flag tallies for one batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub auto_full: usize,
    pub llm_graded: usize,
    pub needs_human: usize,
    pub review_flagged: usize,
    pub grade_results: usize,
}

pub fn summarize(results: &[PipelineResult]) -> BatchSummary {
    BatchSummary {
        total: results.len(),
        auto_full: results
            .iter()
            .filter(|r| r.route == Route::AutoFull)
            .count(),
        llm_graded: results
            .iter()
            .filter(|r| r.route == Route::LlmGraded)
            .count(),
        needs_human: results
            .iter()
            .filter(|r| r.route == Route::NeedsHuman)
            .count(),
        review_flagged: results.iter().filter(|r| r.review_flag.is_some()).count(),
        grade_results: results.iter().map(|r| r.results.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusMetadata, Provenance, QualityBand};
    use crate::graders::{GradePayload, ReverseGrade};
    use crate::rubric::default_rubric;
    use crate::testkit::ScriptedGateway;

    fn problem(id: &str) -> Problem {
        Problem {
            id: id.into(),
            title: "T".into(),
            statement: "S".into(),
            reference_solution: "class A { }\n".into(),
            test_suite_ref: Some(format!("suite:{id}")),
            language_tag: "java".into(),
        }
    }

    fn submission(id: &str) -> Submission {
        Submission {
            id: id.into(),
            problem_id: "p1".into(),
            source: format!("class A {{ // {id}\n}}\n"),
            band: QualityBand::Moderate,
            provenance: Provenance::Synthetic,
            error_notes: None,
        }
    }

    fn grade(strategy: Strategy, normalized: f64, flags: Vec<GradeFlag>) -> GradeResult {
        GradeResult {
            submission_id: "s1".into(),
            strategy,
            scale: 10.0,
            raw_total: normalized,
            normalized_total: normalized,
            payload: GradePayload::Reverse(ReverseGrade {
                corrected_source: "x".into(),
                fixes: vec![],
                claimed_total: normalized,
                computed_total: normalized,
                consistency_delta: 0.0,
            }),
            parse_attempts: 1,
            flags,
        }
    }

    #[test]
    fn flagger_threshold_examples() {
        let flag = flag_for_review(
            &grade(Strategy::Direct, 6.0, vec![]),
            &grade(Strategy::Reverse, 8.5, vec![]),
            2.0,
        )
        .unwrap()
        .expect("should flag");
        assert_eq!(flag.reason, ReviewReason::ScoreDivergence);
        assert!((flag.magnitude - 2.5).abs() < 1e-12);

        let none = flag_for_review(
            &grade(Strategy::Direct, 7.0, vec![]),
            &grade(Strategy::Reverse, 7.4, vec![]),
            2.0,
        )
        .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn flagger_fires_on_consistency_mismatch_regardless_of_gap() {
        let flag = flag_for_review(
            &grade(Strategy::Direct, 7.0, vec![]),
            &grade(Strategy::Reverse, 7.1, vec![GradeFlag::ConsistencyMismatch]),
            2.0,
        )
        .unwrap()
        .expect("should flag");
        assert_eq!(flag.reason, ReviewReason::ConsistencyMismatch);
    }

    #[test]
    fn flagger_rejects_denormalized_input() {
        let mut bad = grade(Strategy::Direct, 6.0, vec![]);
        bad.normalized_total = 3.0; // inconsistent with raw/scale
        let err = flag_for_review(&bad, &grade(Strategy::Reverse, 6.0, vec![]), 2.0).unwrap_err();
        assert!(matches!(err, PipelineError::ScaleMismatch(_)));
    }

    fn corpus(n: usize) -> Corpus {
        let submissions = (0..n).map(|i| submission(&format!("s{i:02}"))).collect();
        Corpus::new(vec![problem("p1")], submissions, CorpusMetadata::default()).unwrap()
    }

    #[test]
    fn passing_submission_is_auto_full_with_zero_gateway_calls() {
        let config = GradeConfig::new(
            default_rubric(),
            vec![LlmStrategy::Direct, LlmStrategy::Reverse],
        );
        let gateway = crate::gateway::CountingGateway::new(ScriptedGateway::new(default_rubric()));
        let runner = ScriptedRunner::new().with_outcome("s1", TestOutcome::pass(5, ""));
        let result = grade_submission(
            &submission("s1"),
            &problem("p1"),
            &config,
            &gateway,
            &runner,
        );
        assert_eq!(result.route, Route::AutoFull);
        assert_eq!(result.results.len(), 1);
        assert_eq!(result.results[0].strategy, Strategy::AutoPass);
        assert_eq!(result.results[0].normalized_total, 10.0);
        assert_eq!(gateway.total_calls(), 0);
    }

    #[test]
    fn failing_submission_gets_both_strategies() {
        let config = GradeConfig::new(
            default_rubric(),
            vec![LlmStrategy::Direct, LlmStrategy::Reverse],
        );
        let gateway = ScriptedGateway::new(default_rubric());
        let runner = ScriptedRunner::new().with_outcome("s1", TestOutcome::fail(2, 3, ""));
        let result = grade_submission(
            &submission("s1"),
            &problem("p1"),
            &config,
            &gateway,
            &runner,
        );
        assert_eq!(result.route, Route::LlmGraded);
        assert_eq!(result.results.len(), 2);
        let strategies: Vec<Strategy> = result.results.iter().map(|r| r.strategy).collect();
        assert!(strategies.contains(&Strategy::Direct));
        assert!(strategies.contains(&Strategy::Reverse));
    }

    #[test]
    fn runner_error_routes_to_human() {
        let config = GradeConfig::new(default_rubric(), vec![LlmStrategy::Direct]);
        let gateway = ScriptedGateway::new(default_rubric());
        let runner =
            ScriptedRunner::new().with_outcome("s1", TestOutcome::runner_error("javac not found"));
        let result = grade_submission(
            &submission("s1"),
            &problem("p1"),
            &config,
            &gateway,
            &runner,
        );
        assert_eq!(result.route, Route::NeedsHuman);
        assert_eq!(result.results.len(), 0);
        let flag = result.review_flag.unwrap();
        assert_eq!(flag.reason, ReviewReason::RunnerError);
        assert_eq!(flag.detail.as_deref(), Some("javac not found"));
    }

    #[test]
    fn batch_results_are_ordered_and_scheduling_independent() {
        let corpus = corpus(12);
        let config = GradeConfig::new(default_rubric(), vec![LlmStrategy::Direct]);
        let gateway = ScriptedGateway::new(default_rubric());
        let mut runner = ScriptedRunner::new();
        for (i, submission) in corpus.submissions().iter().enumerate() {
            let outcome = if i % 3 == 0 {
                TestOutcome::pass(5, "")
            } else {
                TestOutcome::fail(1, 4, "")
            };
            runner = runner.with_outcome(&submission.id, outcome);
        }

        let sequential =
            run_batch_with(&corpus, &config, &gateway, &runner, Parallelism::Sequential);
        let ids: Vec<&str> = sequential
            .iter()
            .map(|r| r.submission_id.as_str())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "results come back in id order");

        #[cfg(feature = "parallel")]
        {
            let parallel = run_batch_with(&corpus, &config, &gateway, &runner, Parallelism::Rayon);
            assert_eq!(parallel, sequential);
            let mut bounded_config = config.clone();
            bounded_config.workers = Some(3);
            let bounded = run_batch_with(
                &corpus,
                &bounded_config,
                &gateway,
                &runner,
                Parallelism::Rayon,
            );
            assert_eq!(bounded, sequential);
        }
    }

    #[test]
    fn empty_corpus_grades_to_empty_list() {
        let corpus = Corpus::default();
        let config = GradeConfig::new(default_rubric(), vec![LlmStrategy::Direct]);
        let gateway = ScriptedGateway::new(default_rubric());
        let runner = ScriptedRunner::new();
        assert!(run_batch(&corpus, &config, &gateway, &runner).is_empty());
    }

    #[test]
    fn results_jsonl_round_trip() {
        let corpus = corpus(3);
        let config = GradeConfig::new(default_rubric(), vec![LlmStrategy::Reverse]);
        let gateway = ScriptedGateway::new(default_rubric());
        let mut runner = ScriptedRunner::new();
        for submission in corpus.submissions() {
            runner = runner.with_outcome(&submission.id, TestOutcome::fail(0, 1, ""));
        }
        let results = run_batch(&corpus, &config, &gateway, &runner);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        write_results_jsonl(&results, &path).unwrap();
        let loaded = read_results_jsonl(&path).unwrap();
        assert_eq!(loaded, results);

        let summary = summarize(&results);
        assert_eq!(summary.total, 3);
        assert_eq!(summary.llm_graded, 3);
    }
}
