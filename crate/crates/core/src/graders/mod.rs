//! The two LLM grading strategies.
//!
//! *Direct* applies the rubric point by point and reports per-category
//! scores. *Reverse* first repairs the code, classifies each fix as minor
//! or major, and derives the score by deducting the fix costs from a
//! perfect score. Both run the same loop: build prompt, complete through
//! the gateway, parse strictly, and on a parse failure re-prompt with the
//! parser error appended, up to [`MAX_PARSE_REPAIRS`] times.

mod parse;
mod prompts;

pub use parse::{
    compute_reverse_total, parse_direct_response, parse_reverse_response, ParseError,
    TOTAL_MISMATCH_EPSILON,
};
pub use prompts::{
    build_direct_prompt, build_repair_prompt, build_reverse_prompt, render_contract, render_rubric,
    DIRECT_TEMPLATE_VERSION, GENERATE_TEMPLATE_VERSION, REVERSE_TEMPLATE_VERSION,
};

use crate::corpus::Submission;
use crate::gateway::{CompletionGateway, GatewayError};
use crate::rubric::{normalize_score, Rubric};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Parse-failure repair rounds after the first attempt.
pub const MAX_PARSE_REPAIRS: u32 = 2;

/// A reverse grade whose claimed and computed totals disagree by more than
/// this (on the 10-point scale) is flagged for review.
pub const CONSISTENCY_FLAG_THRESHOLD: f64 = 0.5;

/// Scale every grade is normalized onto for reporting.
pub const REPORT_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("grading failed after {attempts} attempt(s): {last}")]
    GradingFailed { attempts: u32, last: ParseError },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How a grade came to be. `AutoPass` marks the unit-test gate's automatic
/// full-mark grade; the other two are LLM strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Direct,
    Reverse,
    AutoPass,
}

/// The LLM strategies a pipeline run can be configured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmStrategy {
    Direct,
    Reverse,
}

impl LlmStrategy {
    pub fn as_strategy(self) -> Strategy {
        match self {
            LlmStrategy::Direct => Strategy::Direct,
            LlmStrategy::Reverse => Strategy::Reverse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeFlag {
    /// Direct: the model's stated total disagreed with the category sum.
    TotalMismatch,
    /// Reverse: claimed and computed totals disagree beyond the threshold.
    ConsistencyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub score: f64,
    pub rationale: String,
}

/// Rubric applied point by point: one score per category plus a one-line
/// summary. `total` always equals the category sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectGrade {
    pub per_category: BTreeMap<String, CategoryScore>,
    pub total: f64,
    pub summary: String,
}

/// One correction the model made while repairing a submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub description: String,
    pub category: String,
    pub severity: Severity,
    pub deduction: f64,
}

/// Fix-then-deduct grade. `computed_total` is the deduction arithmetic;
/// `claimed_total` is whatever the model said, kept for the consistency
/// check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseGrade {
    pub corrected_source: String,
    pub fixes: Vec<FixRecord>,
    pub claimed_total: f64,
    pub computed_total: f64,
    pub consistency_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradePayload {
    Direct(DirectGrade),
    Reverse(ReverseGrade),
    AutoPass,
}

/// A strategy-tagged, scale-normalized grade for one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub submission_id: String,
    pub strategy: Strategy,
    /// Native scale the grade was produced on (10 or 100).
    pub scale: f64,
    pub raw_total: f64,
    /// `raw_total` mapped onto the 10-point reporting scale.
    pub normalized_total: f64,
    pub payload: GradePayload,
    pub parse_attempts: u32,
    pub flags: Vec<GradeFlag>,
}

impl GradeResult {
    fn assemble(
        submission_id: String,
        strategy: Strategy,
        scale: f64,
        raw_total: f64,
        payload: GradePayload,
        parse_attempts: u32,
        flags: Vec<GradeFlag>,
    ) -> GradeResult {
        let normalized_total = normalize_score(raw_total, scale, REPORT_SCALE)
            .expect("parser bounds keep raw totals within the scale");
        GradeResult {
            submission_id,
            strategy,
            scale,
            raw_total,
            normalized_total,
            payload,
            parse_attempts,
            flags,
        }
    }

    /// The unit-test gate's automatic full-mark grade.
    pub fn auto_pass(submission_id: &str, scale: f64) -> GradeResult {
        GradeResult::assemble(
            submission_id.to_string(),
            Strategy::AutoPass,
            scale,
            scale,
            GradePayload::AutoPass,
            0,
            Vec::new(),
        )
    }

    pub fn has_flag(&self, flag: GradeFlag) -> bool {
        self.flags.contains(&flag)
    }
}

enum Parsed {
    Direct(DirectGrade, Vec<GradeFlag>),
    Reverse(ReverseGrade),
}

/// Shared build → complete → parse → repair loop.
fn grade_with(
    strategy: LlmStrategy,
    submission: &Submission,
    rubric: &Rubric,
    gateway: &dyn CompletionGateway,
) -> Result<GradeResult, GradeError> {
    let mut request = match strategy {
        LlmStrategy::Direct => build_direct_prompt(submission, rubric),
        LlmStrategy::Reverse => build_reverse_prompt(submission, rubric),
    };
    let mut last_error = None;
    for attempt in 1..=MAX_PARSE_REPAIRS + 1 {
        let response = gateway.complete(&request)?;
        let parsed = match strategy {
            LlmStrategy::Direct => parse_direct_response(&response.text, rubric)
                .map(|(grade, flags)| Parsed::Direct(grade, flags)),
            LlmStrategy::Reverse => {
                parse_reverse_response(&response.text, rubric).map(Parsed::Reverse)
            }
        };
        match parsed {
            Ok(Parsed::Direct(grade, flags)) => {
                let raw = grade.total;
                return Ok(GradeResult::assemble(
                    submission.id.clone(),
                    Strategy::Direct,
                    rubric.scale_total(),
                    raw,
                    GradePayload::Direct(grade),
                    attempt,
                    flags,
                ));
            }
            Ok(Parsed::Reverse(grade)) => {
                let mut flags = Vec::new();
                let delta_normalized =
                    grade.consistency_delta * REPORT_SCALE / rubric.scale_total();
                if delta_normalized > CONSISTENCY_FLAG_THRESHOLD {
                    flags.push(GradeFlag::ConsistencyMismatch);
                }
                // The score source is the arithmetic, never the claim.
                let raw = grade.computed_total;
                return Ok(GradeResult::assemble(
                    submission.id.clone(),
                    Strategy::Reverse,
                    rubric.scale_total(),
                    raw,
                    GradePayload::Reverse(grade),
                    attempt,
                    flags,
                ));
            }
            Err(error) => {
                log::debug!(
                    "parse failure for {} ({:?}) on attempt {attempt}: {error}",
                    submission.id,
                    strategy
                );
                request = build_repair_prompt(&request, &error, rubric);
                last_error = Some(error);
            }
        }
    }
    Err(GradeError::GradingFailed {
        attempts: MAX_PARSE_REPAIRS + 1,
        last: last_error.expect("loop ran at least once"),
    })
}

/// Grade by applying the rubric directly.
pub fn grade_direct(
    submission: &Submission,
    rubric: &Rubric,
    gateway: &dyn CompletionGateway,
) -> Result<GradeResult, GradeError> {
    grade_with(LlmStrategy::Direct, submission, rubric, gateway)
}

/// Grade by repairing first, then deducting fix costs.
pub fn grade_reverse(
    submission: &Submission,
    rubric: &Rubric,
    gateway: &dyn CompletionGateway,
) -> Result<GradeResult, GradeError> {
    grade_with(LlmStrategy::Reverse, submission, rubric, gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, QualityBand};
    use crate::gateway::{Gateway, TranscriptEntry, TranscriptStore};
    use crate::rubric::default_rubric;

    fn submission() -> Submission {
        Submission {
            id: "good-01".into(),
            problem_id: "p1".into(),
            source: "class A { int f() { return 1; } }\n".into(),
            band: QualityBand::Good,
            provenance: Provenance::Synthetic,
            error_notes: None,
        }
    }

    fn store_with(
        entries: &[(String, crate::gateway::PromptKind, &str)],
    ) -> (tempfile::TempDir, TranscriptStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        for (key, strategy, response) in entries {
            store
                .put(&TranscriptEntry {
                    key: key.clone(),
                    strategy: *strategy,
                    response: response.to_string(),
                })
                .unwrap();
        }
        (dir, store)
    }

    const VALID_DIRECT: &str = r#"```json
{"categories": [
  {"name": "Syntax", "score": 2.5, "rationale": "clean"},
  {"name": "Logic", "score": 2.0, "rationale": "minor gap"},
  {"name": "Output Correctness", "score": 1.5, "rationale": "edge case"},
  {"name": "Style", "score": 2.0, "rationale": "fine"}
], "total": 8.0, "summary": "solid"}
```"#;

    #[test]
    fn replayed_direct_grade_parses_first_try() {
        let rubric = default_rubric();
        let sub = submission();
        let prompt = build_direct_prompt(&sub, &rubric);
        let (_dir, store) =
            store_with(&[(prompt.transcript_key.clone(), prompt.strategy, VALID_DIRECT)]);
        let gateway = Gateway::replay(store);

        let result = grade_direct(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.strategy, Strategy::Direct);
        assert_eq!(result.parse_attempts, 1);
        assert_eq!(result.raw_total, 8.0);
        assert_eq!(result.normalized_total, 8.0);
        assert!(result.flags.is_empty());
    }

    #[test]
    fn malformed_then_valid_takes_two_attempts() {
        let rubric = default_rubric();
        let sub = submission();
        let prompt = build_direct_prompt(&sub, &rubric);
        let bad = "I liked this submission a lot.";
        let error = parse_direct_response(bad, &rubric).unwrap_err();
        let repair = build_repair_prompt(&prompt, &error, &rubric);
        let (_dir, store) = store_with(&[
            (prompt.transcript_key.clone(), prompt.strategy, bad),
            (repair.transcript_key.clone(), repair.strategy, VALID_DIRECT),
        ]);
        let gateway = Gateway::replay(store);

        let result = grade_direct(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.parse_attempts, 2);
        assert_eq!(result.raw_total, 8.0);
    }

    #[test]
    fn three_malformed_responses_exhaust_repairs() {
        let rubric = default_rubric();
        let sub = submission();
        let bad = "still no structure";
        let first = build_direct_prompt(&sub, &rubric);
        let e1 = parse_direct_response(bad, &rubric).unwrap_err();
        let second = build_repair_prompt(&first, &e1, &rubric);
        let third = build_repair_prompt(&second, &e1, &rubric);
        let (_dir, store) = store_with(&[
            (first.transcript_key.clone(), first.strategy, bad),
            (second.transcript_key.clone(), second.strategy, bad),
            (third.transcript_key.clone(), third.strategy, bad),
        ]);
        let gateway = Gateway::replay(store);

        let err = grade_direct(&sub, &rubric, &gateway).unwrap_err();
        match err {
            GradeError::GradingFailed { attempts, last } => {
                assert_eq!(attempts, 3);
                assert_eq!(last, ParseError::NoStructuredBlock);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn reverse_records_fix_and_consistency() {
        let rubric = default_rubric();
        let sub = Submission {
            id: "moderate-missing-semicolon".into(),
            ..submission()
        };
        let prompt = build_reverse_prompt(&sub, &rubric);
        let response = r#"```json
{"corrected_code": "class A { int f() { return 1; } }",
 "fixes": [{"description": "added the missing semicolon", "category": "Syntax", "severity": "minor", "deduction": 0.5}],
 "claimed_total": 9.5,
 "reason": "one small syntax slip"}
```"#;
        let (_dir, store) =
            store_with(&[(prompt.transcript_key.clone(), prompt.strategy, response)]);
        let gateway = Gateway::replay(store);

        let result = grade_reverse(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.strategy, Strategy::Reverse);
        assert_eq!(result.raw_total, 9.5);
        assert!(result.flags.is_empty());
        match &result.payload {
            GradePayload::Reverse(grade) => {
                assert_eq!(grade.fixes.len(), 1);
                assert_eq!(grade.fixes[0].severity, Severity::Minor);
                assert_eq!(grade.fixes[0].category, "Syntax");
            }
            other => panic!("unexpected payload {other:?}"),
        }
    }

    #[test]
    fn reverse_uses_computed_total_and_flags_mismatch() {
        let rubric = default_rubric();
        let sub = submission();
        let prompt = build_reverse_prompt(&sub, &rubric);
        // Claimed 8.0, but deductions say 10 - 1.5 - 2.0 = 6.5.
        let response = r#"```json
{"corrected_code": "class A {}",
 "fixes": [
   {"description": "rewrote condition", "category": "Logic", "severity": "major", "deduction": 2.0},
   {"description": "fixed print", "category": "Output Correctness", "severity": "minor", "deduction": 1.5}
 ],
 "claimed_total": 8.0}
```"#;
        let (_dir, store) =
            store_with(&[(prompt.transcript_key.clone(), prompt.strategy, response)]);
        let gateway = Gateway::replay(store);

        let result = grade_reverse(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.raw_total, 6.5, "arithmetic beats the claim");
        assert!(result.has_flag(GradeFlag::ConsistencyMismatch));
    }

    #[test]
    fn reverse_empty_fixes_and_claim_ten() {
        let rubric = default_rubric();
        let sub = submission();
        let prompt = build_reverse_prompt(&sub, &rubric);
        let response = r#"```json
{"corrected_code": "class A {}", "fixes": [], "claimed_total": 10}
```"#;
        let (_dir, store) =
            store_with(&[(prompt.transcript_key.clone(), prompt.strategy, response)]);
        let gateway = Gateway::replay(store);
        let result = grade_reverse(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.raw_total, 10.0);
        assert!(result.flags.is_empty());
    }

    #[test]
    fn auto_pass_results_are_full_marks() {
        let result = GradeResult::auto_pass("s1", 100.0);
        assert_eq!(result.strategy, Strategy::AutoPass);
        assert_eq!(result.raw_total, 100.0);
        assert_eq!(result.normalized_total, 10.0);
        assert_eq!(result.parse_attempts, 0);
    }

    #[test]
    fn normalization_matches_rubric_module_exactly() {
        let rubric = default_rubric().expand_scale(10);
        let sub = submission();
        let prompt = build_direct_prompt(&sub, &rubric);
        let response = r#"```json
{"categories": [
  {"name": "Syntax", "score": 14.2, "rationale": ""},
  {"name": "Logic", "score": 20.0, "rationale": ""},
  {"name": "Output Correctness", "score": 11.2, "rationale": ""},
  {"name": "Style", "score": 12.0, "rationale": ""}
]}
```"#;
        let (_dir, store) =
            store_with(&[(prompt.transcript_key.clone(), prompt.strategy, response)]);
        let gateway = Gateway::replay(store);
        let result = grade_direct(&sub, &rubric, &gateway).unwrap();
        assert_eq!(result.scale, 100.0);
        assert_eq!(
            result.normalized_total,
            crate::rubric::normalize_score(result.raw_total, 100.0, 10.0).unwrap()
        );
    }
}
