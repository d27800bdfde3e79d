//! Strict parsing of model responses into grades.
//!
//! Responses must carry a fenced JSON block per the prompt contract. The
//! extractor tolerates prose around the block and a missing fence when the
//! whole reply is JSON, but grades themselves are validated hard: full
//! category coverage, rubric bounds on every number, and arithmetic
//! reconciliation. Arbitrary input yields a defined [`ParseError`], never
//! a panic and never an out-of-bounds grade.

use super::{CategoryScore, DirectGrade, FixRecord, GradeFlag, ReverseGrade, Severity};
use crate::rubric::Rubric;
use serde_json::Value;
use std::collections::BTreeMap;
use thiserror::Error;

/// Direct totals are reconciled to the category sum; a model-stated total
/// further away than this is flagged.
pub const TOTAL_MISMATCH_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no structured response block found")]
    NoStructuredBlock,
    #[error("missing category `{0}`")]
    MissingCategory(String),
    #[error("score out of bounds for `{0}`")]
    ScoreOutOfBounds(String),
    #[error("unparseable number in `{0}`")]
    UnparseableNumber(String),
    #[error("unknown rubric category `{0}`")]
    UnknownCategory(String),
    #[error("negative deduction in `{0}`")]
    NegativeDeduction(String),
    #[error("missing corrected code")]
    MissingCorrectedCode,
    #[error("malformed field `{0}`")]
    MalformedField(String),
}

/// Fenced code blocks in the text, as `(info string, content)` pairs.
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut open: Option<String> = None;
    let mut content = String::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match open.take() {
                None => {
                    open = Some(rest.trim().to_lowercase());
                    content.clear();
                }
                Some(info) => blocks.push((info, std::mem::take(&mut content))),
            }
        } else if open.is_some() {
            content.push_str(line);
            content.push('\n');
        }
    }
    blocks
}

/// Pull the structured JSON object out of a model reply.
///
/// Preference order: the last parseable fenced JSON block (models often
/// restate their answer), then the whole reply as bare JSON, then the
/// outermost `{...}` span.
pub(crate) fn extract_structured_block(text: &str) -> Option<Value> {
    let mut found = None;
    for (info, content) in fenced_blocks(text) {
        if !(info.is_empty() || info.starts_with("json")) {
            continue;
        }
        if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(content.trim()) {
            found = Some(value);
        }
    }
    if found.is_some() {
        return found;
    }
    if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(text.trim()) {
        return Some(value);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]) {
        Ok(value @ Value::Object(_)) => Some(value),
        _ => None,
    }
}

/// Accepts JSON numbers and numeric strings; anything else (or a
/// non-finite value) is an [`ParseError::UnparseableNumber`].
fn number_field(value: Option<&Value>, label: &str) -> Result<f64, ParseError> {
    let parsed = match value {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    parsed
        .filter(|f| f.is_finite())
        .ok_or_else(|| ParseError::UnparseableNumber(label.to_string()))
}

fn string_field(value: Option<&Value>) -> String {
    value
        .and_then(Value::as_str)
        .map(str::trim)
        .unwrap_or_default()
        .to_string()
}

/// Parse a Direct-strategy reply: per-category scores, reconciled total.
///
/// The emitted total is always the category sum; a model-stated total is
/// advisory and only yields a [`GradeFlag::TotalMismatch`] when it
/// disagrees.
pub fn parse_direct_response(
    text: &str,
    rubric: &Rubric,
) -> Result<(DirectGrade, Vec<GradeFlag>), ParseError> {
    let block = extract_structured_block(text).ok_or(ParseError::NoStructuredBlock)?;

    let mut per_category: BTreeMap<String, CategoryScore> = BTreeMap::new();
    let mut record =
        |name: &str, score_value: Option<&Value>, rationale: String| -> Result<(), ParseError> {
            let Some(category) = rubric.category(name) else {
                return Ok(()); // categories outside the rubric are ignored
            };
            if per_category.contains_key(&category.name) {
                return Ok(()); // first occurrence wins
            }
            let score = number_field(score_value, &category.name)?;
            if score < 0.0 || score > category.max_points {
                return Err(ParseError::ScoreOutOfBounds(category.name.clone()));
            }
            per_category.insert(category.name.clone(), CategoryScore { score, rationale });
            Ok(())
        };

    match block.get("categories") {
        Some(Value::Array(entries)) => {
            for entry in entries {
                let Some(name) = entry.get("name").and_then(Value::as_str) else {
                    return Err(ParseError::MalformedField("categories[].name".into()));
                };
                record(
                    name,
                    entry.get("score"),
                    string_field(entry.get("rationale")),
                )?;
            }
        }
        Some(_) => return Err(ParseError::MalformedField("categories".into())),
        None => {
            // Fallback shape: category names as top-level keys, mapping to a
            // number or to an object with a `score` field.
            if let Some(object) = block.as_object() {
                for (key, value) in object {
                    match value {
                        Value::Object(inner) => record(
                            key,
                            inner.get("score"),
                            string_field(inner.get("rationale")),
                        )?,
                        Value::Number(_) | Value::String(_) => {
                            record(key, Some(value), String::new())?
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    for category in rubric.categories() {
        if !per_category.contains_key(&category.name) {
            return Err(ParseError::MissingCategory(category.name.clone()));
        }
    }

    let total: f64 = per_category.values().map(|c| c.score).sum();
    let mut flags = Vec::new();
    if let Some(claimed_value) = block.get("total") {
        let claimed = number_field(Some(claimed_value), "total")?;
        if (claimed - total).abs() > TOTAL_MISMATCH_EPSILON {
            flags.push(GradeFlag::TotalMismatch);
        }
    }

    let summary = string_field(block.get("summary"))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();

    Ok((
        DirectGrade {
            per_category,
            total,
            summary,
        },
        flags,
    ))
}

/// The Reverse scoring identity: perfect score minus all deductions,
/// clamped into `[0, scale_total]`.
pub fn compute_reverse_total(scale_total: f64, deductions: &[f64]) -> f64 {
    let total_deduction: f64 = deductions.iter().sum();
    (scale_total - total_deduction).clamp(0.0, scale_total)
}

/// Parse a Reverse-strategy reply: corrected code, fix list, and totals.
///
/// `computed_total` comes from the deduction arithmetic; the model's
/// claimed total is kept only to measure `consistency_delta`.
pub fn parse_reverse_response(text: &str, rubric: &Rubric) -> Result<ReverseGrade, ParseError> {
    let block = extract_structured_block(text).ok_or(ParseError::NoStructuredBlock)?;

    let corrected_source = block
        .get("corrected_code")
        .or_else(|| block.get("corrected_source"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .filter(|s| !s.trim().is_empty())
        .ok_or(ParseError::MissingCorrectedCode)?;

    let mut fixes = Vec::new();
    match block.get("fixes") {
        None | Some(Value::Null) => {}
        Some(Value::Array(entries)) => {
            for (i, entry) in entries.iter().enumerate() {
                let Some(obj) = entry.as_object() else {
                    return Err(ParseError::MalformedField(format!("fixes[{i}]")));
                };
                let description = string_field(obj.get("description"));
                let raw_category = obj
                    .get("category")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ParseError::MalformedField(format!("fixes[{i}].category")))?;
                let category = rubric
                    .category(raw_category)
                    .ok_or_else(|| ParseError::UnknownCategory(raw_category.to_string()))?;
                let severity = match obj.get("severity") {
                    None | Some(Value::Null) => Severity::Minor,
                    Some(Value::String(s)) => match s.trim().to_lowercase().as_str() {
                        "minor" => Severity::Minor,
                        "major" => Severity::Major,
                        _ => {
                            return Err(ParseError::MalformedField(format!("fixes[{i}].severity")))
                        }
                    },
                    Some(_) => {
                        return Err(ParseError::MalformedField(format!("fixes[{i}].severity")))
                    }
                };
                let deduction =
                    number_field(obj.get("deduction"), &format!("fixes[{i}].deduction"))?;
                if deduction < 0.0 {
                    return Err(ParseError::NegativeDeduction(category.name.clone()));
                }
                if deduction > category.max_points {
                    return Err(ParseError::ScoreOutOfBounds(category.name.clone()));
                }
                fixes.push(FixRecord {
                    description,
                    category: category.name.clone(),
                    severity,
                    deduction,
                });
            }
        }
        Some(_) => return Err(ParseError::MalformedField("fixes".into())),
    }

    let deductions: Vec<f64> = fixes.iter().map(|f| f.deduction).collect();
    let computed_total = compute_reverse_total(rubric.scale_total(), &deductions);
    let claimed_total = match block.get("claimed_total").or_else(|| block.get("total")) {
        None | Some(Value::Null) => computed_total,
        some => number_field(some, "claimed_total")?,
    };
    let consistency_delta = (claimed_total - computed_total).abs();

    Ok(ReverseGrade {
        corrected_source,
        fixes,
        claimed_total,
        computed_total,
        consistency_delta,
    })
}
