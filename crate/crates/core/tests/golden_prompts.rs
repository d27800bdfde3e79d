//! Rendered prompts must match the frozen golden files bit for bit.
//! Regenerate with `cargo test -p gradepipe --test regen -- --ignored`
//! after an intentional template change, and review the diff.

use gradepipe::graders::{build_direct_prompt, build_reverse_prompt};
use gradepipe::rubric::default_rubric;
use gradepipe::synthgen::{build_generation_prompt, ErrorProfile};
use gradepipe::testkit::{fixture_corpus, fixtures_dir};
use gradepipe::QualityBand;
use std::path::PathBuf;

fn golden_dir() -> PathBuf {
    fixtures_dir().parent().unwrap().join("golden")
}

fn golden(name: &str) -> String {
    let path = golden_dir().join(name);
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()))
}

#[test]
fn direct_prompt_matches_golden() {
    let corpus = fixture_corpus();
    let submission = corpus.submission("p01-moderate-01").unwrap();
    let prompt = build_direct_prompt(submission, &default_rubric());
    assert_eq!(prompt.text, golden("direct_prompt_p01_moderate.txt"));
}

#[test]
fn reverse_prompt_matches_golden() {
    let corpus = fixture_corpus();
    let submission = corpus.submission("p01-moderate-01").unwrap();
    let prompt = build_reverse_prompt(submission, &default_rubric());
    assert_eq!(prompt.text, golden("reverse_prompt_p01_moderate.txt"));
}

#[test]
fn generation_prompt_matches_golden() {
    let corpus = fixture_corpus();
    let problem = corpus.problem("p01").unwrap();
    let profile = ErrorProfile::for_band(QualityBand::Moderate);
    let prompt = build_generation_prompt(problem, &profile);
    assert_eq!(prompt.text, golden("generate_prompt_p01_moderate.txt"));
}
