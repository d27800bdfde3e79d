//! Prompt construction for both grading strategies.
//!
//! Templates are versioned text files under `templates/` with named
//! placeholders (`{{rubric}}`, `{{source}}`, `{{scale_total}}`, ...). The
//! submission source is substituted last, so its bytes land in the prompt
//! verbatim regardless of what they contain. Both grading prompts end with
//! a strict fenced-JSON response contract; a parseable response format is
//! what keeps model output from drifting into prose.

use super::ParseError;
use crate::corpus::Submission;
use crate::gateway::{PromptKind, PromptRequest};
use crate::rubric::Rubric;

pub const DIRECT_TEMPLATE_VERSION: &str = "direct_v1";
pub const REVERSE_TEMPLATE_VERSION: &str = "reverse_v1";
pub const GENERATE_TEMPLATE_VERSION: &str = "generate_v1";

const DIRECT_TEMPLATE: &str = include_str!("../../templates/direct_v1.txt");
const DIRECT_CONTRACT: &str = include_str!("../../templates/direct_contract_v1.txt");
const REVERSE_TEMPLATE: &str = include_str!("../../templates/reverse_v1.txt");
const REVERSE_CONTRACT: &str = include_str!("../../templates/reverse_contract_v1.txt");

/// Whole points print bare ("10", "25"), fractional caps keep their
/// decimals ("2.5").
pub(crate) fn format_points(value: f64) -> String {
    if (value - value.round()).abs() < 1e-9 {
        format!("{}", value.round() as i64)
    } else {
        format!("{value}")
    }
}

/// One rubric line per category: name, cap, and descriptor.
pub fn render_rubric(rubric: &Rubric) -> String {
    rubric
        .categories()
        .iter()
        .map(|c| {
            format!(
                "- {} (max {} points): {}",
                c.name,
                format_points(c.max_points),
                c.descriptor
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn category_names(rubric: &Rubric) -> String {
    rubric
        .categories()
        .iter()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// The response-format contract appended to prompts of the given kind.
pub fn render_contract(kind: PromptKind, rubric: &Rubric) -> String {
    let template = match kind {
        PromptKind::Direct => DIRECT_CONTRACT,
        PromptKind::Reverse => REVERSE_CONTRACT,
        PromptKind::Generate => {
            return "Respond with exactly one fenced code block containing only the full \
                    program source."
                .to_string()
        }
    };
    template
        .replace("{{category_names}}", &category_names(rubric))
        .replace("{{scale_total}}", &format_points(rubric.scale_total()))
        .trim_end()
        .to_string()
}

fn render_grading_prompt(
    template: &str,
    kind: PromptKind,
    submission: &Submission,
    rubric: &Rubric,
) -> PromptRequest {
    let text = template
        .replace("{{scale_total}}", &format_points(rubric.scale_total()))
        .replace("{{rubric}}", &render_rubric(rubric))
        .replace("{{format_contract}}", &render_contract(kind, rubric))
        // Source goes in last: its bytes are never placeholder-substituted.
        .replace("{{source}}", &submission.source);
    PromptRequest::new(text, kind).expect("grading templates render nonempty prompts")
}

/// Prompt asking the model to apply the rubric point by point.
pub fn build_direct_prompt(submission: &Submission, rubric: &Rubric) -> PromptRequest {
    render_grading_prompt(DIRECT_TEMPLATE, PromptKind::Direct, submission, rubric)
}

/// Prompt asking the model to fix the code, classify the fixes, and deduct
/// their cost from a perfect score.
pub fn build_reverse_prompt(submission: &Submission, rubric: &Rubric) -> PromptRequest {
    render_grading_prompt(REVERSE_TEMPLATE, PromptKind::Reverse, submission, rubric)
}

/// Re-prompt after a parse failure: previous prompt plus the parser error
/// and the format contract, so the model knows exactly what to mend.
pub fn build_repair_prompt(
    previous: &PromptRequest,
    error: &ParseError,
    rubric: &Rubric,
) -> PromptRequest {
    let text = format!(
        "{}\n\nYour previous reply could not be parsed: {error}.\nReply again, \
         following the response format exactly.\n\n{}",
        previous.text,
        render_contract(previous.strategy, rubric)
    );
    PromptRequest::new(text, previous.strategy)
        .expect("repair prompt text is nonempty")
        .with_temperature(previous.temperature)
        .expect("temperature already validated")
        .with_max_output(previous.max_output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, QualityBand};
    use crate::rubric::default_rubric;

    fn submission(source: &str) -> Submission {
        Submission {
            id: "s1".into(),
            problem_id: "p1".into(),
            source: source.into(),
            band: QualityBand::Moderate,
            provenance: Provenance::Synthetic,
            error_notes: None,
        }
    }

    #[test]
    fn direct_prompt_contains_rubric_and_source_verbatim() {
        let source = "class Primes {\n  boolean isPrime(int n) { return n > 1 }\n}\n";
        let prompt = build_direct_prompt(&submission(source), &default_rubric());
        for name in ["Syntax", "Logic", "Output Correctness", "Style"] {
            assert!(prompt.text.contains(name), "missing category {name}");
        }
        assert!(
            prompt.text.contains(source),
            "source must be embedded verbatim"
        );
        assert!(prompt.text.contains("total 10 points"));
        assert_eq!(prompt.strategy, PromptKind::Direct);
        assert_eq!(prompt.temperature, 0.0);
    }

    #[test]
    fn hundred_point_prompt_states_caps_of_25() {
        let rubric = default_rubric().expand_scale(10);
        let prompt = build_direct_prompt(&submission("x"), &rubric);
        assert!(prompt.text.contains("max 25 points"));
        assert!(prompt.text.contains("total 100 points"));
    }

    #[test]
    fn reverse_prompt_lists_the_four_steps_and_budget() {
        let prompt = build_reverse_prompt(&submission("int x = 1;"), &default_rubric());
        for needle in [
            "1. Fix the student code",
            "2. Explain each change",
            "3. Classify each change as minor or major",
            "4. Use that analysis to assign a final score",
            "Subtract from a perfect score of 10.",
        ] {
            assert!(prompt.text.contains(needle), "missing: {needle}");
        }
        assert_eq!(prompt.strategy, PromptKind::Reverse);
    }

    #[test]
    fn reverse_prompt_on_100_scale_states_budget_of_100() {
        let rubric = default_rubric().expand_scale(10);
        let prompt = build_reverse_prompt(&submission("x"), &rubric);
        assert!(prompt
            .text
            .contains("Subtract from a perfect score of 100."));
    }

    #[test]
    fn source_bytes_survive_even_when_they_look_like_placeholders() {
        let tricky = "int a = 1; // {{rubric}} {{format_contract}}\n";
        let prompt = build_direct_prompt(&submission(tricky), &default_rubric());
        assert!(prompt.text.contains(tricky));
    }

    #[test]
    fn repair_prompt_appends_error_and_contract() {
        let rubric = default_rubric();
        let base = build_direct_prompt(&submission("x"), &rubric);
        let repaired = build_repair_prompt(&base, &ParseError::NoStructuredBlock, &rubric);
        assert!(repaired.text.starts_with(&base.text));
        assert!(repaired.text.contains("could not be parsed"));
        assert!(repaired.text.contains("no structured response block"));
        assert_ne!(repaired.transcript_key, base.transcript_key);
    }
}
