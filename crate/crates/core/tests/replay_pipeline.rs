//! End-to-end pipeline runs over the checked-in replay fixtures: the
//! 15-submission corpus (5 problems x 3 bands, seed 7), the synthesized
//! transcript stores for both rubric scales, and the human baseline CSV.

use gradepipe::corpus::load_baseline;
use gradepipe::evaluation::{build_report, render_csv, render_text, METHOD_HUMAN};
use gradepipe::gateway::{CountingGateway, Gateway, TranscriptStore};
use gradepipe::graders::LlmStrategy;
use gradepipe::pipeline::{
    results_to_jsonl, run_batch, summarize, GradeConfig, ReferenceDiffRunner, ReviewReason, Route,
};
use gradepipe::rubric::default_rubric;
use gradepipe::testkit::{fixture_corpus, fixtures_dir, poison_transcripts};
use gradepipe::QualityBand;

fn replay_gateway(scale_dir: &str) -> Gateway {
    let store = TranscriptStore::open(&fixtures_dir().join("transcripts").join(scale_dir))
        .expect("fixture transcripts exist");
    Gateway::replay(store)
}

fn both_strategies() -> Vec<LlmStrategy> {
    vec![LlmStrategy::Direct, LlmStrategy::Reverse]
}

#[test]
fn fixture_counts_match_an_independent_tally_of_the_manifest() {
    // Count problems straight out of the manifest JSON, independent of the
    // corpus loader, and fixture submissions as problems x bands.
    let raw = std::fs::read_to_string(fixtures_dir().join("problems/manifest.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let problem_count = doc["problems"].as_array().unwrap().len();
    assert_eq!(problem_count, 5);

    let corpus = fixture_corpus();
    assert_eq!(corpus.problems().len(), problem_count);
    assert_eq!(corpus.submissions().len(), problem_count * 3);
    for band in QualityBand::LABELLED {
        assert_eq!(
            corpus.filter_by_band(band).submissions().len(),
            problem_count,
            "{band}"
        );
    }
}

#[test]
fn moderate_prime_fixture_carries_exactly_one_missing_semicolon() {
    use gradepipe::synthgen::{Mutation, MutationKind};

    let corpus = fixture_corpus();
    let submission = corpus.submission("p01-moderate-01").unwrap();
    let notes = submission.error_notes.as_ref().expect("moderate is mutated");
    assert_eq!(notes.len(), 1);
    let mutation = Mutation::from_note(&notes[0]).unwrap();
    assert_eq!(mutation.kind, MutationKind::RemoveSemicolon);
    assert_eq!(
        submission.source.matches(';').count(),
        corpus
            .problem("p01")
            .unwrap()
            .reference_solution
            .matches(';')
            .count()
            - 1
    );
}

#[test]
fn batch_over_fixture_corpus_routes_by_band() {
    let corpus = fixture_corpus();
    let config = GradeConfig::new(default_rubric(), both_strategies());
    let gateway = replay_gateway("scale10");
    let results = run_batch(&corpus, &config, &gateway, &ReferenceDiffRunner);

    assert_eq!(results.len(), 15);
    let ids: Vec<&str> = results.iter().map(|r| r.submission_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    for result in &results {
        let band = corpus.submission(&result.submission_id).unwrap().band;
        match band {
            QualityBand::Good => {
                assert_eq!(result.route, Route::AutoFull, "{}", result.submission_id);
                assert_eq!(result.results.len(), 1);
                assert_eq!(result.results[0].normalized_total, 10.0);
            }
            _ => {
                assert_eq!(result.route, Route::LlmGraded, "{}", result.submission_id);
                assert_eq!(result.results.len(), 2, "one grade per strategy");
            }
        }
    }

    let summary = summarize(&results);
    assert_eq!(summary.auto_full, 5);
    assert_eq!(summary.llm_graded, 10);
    assert_eq!(summary.needs_human, 0);
}

#[test]
fn replayed_batches_are_byte_identical() {
    let corpus = fixture_corpus();
    let config = GradeConfig::new(default_rubric(), both_strategies());

    let first = results_to_jsonl(&run_batch(
        &corpus,
        &config,
        &replay_gateway("scale10"),
        &ReferenceDiffRunner,
    ));
    let second = results_to_jsonl(&run_batch(
        &corpus,
        &config,
        &replay_gateway("scale10"),
        &ReferenceDiffRunner,
    ));
    assert_eq!(first.as_bytes(), second.as_bytes());

    // The 100-point store replays deterministically too.
    let expanded = GradeConfig::new(default_rubric().expand_scale(10), both_strategies());
    let a = results_to_jsonl(&run_batch(
        &corpus,
        &expanded,
        &replay_gateway("scale100"),
        &ReferenceDiffRunner,
    ));
    let b = results_to_jsonl(&run_batch(
        &corpus,
        &expanded,
        &replay_gateway("scale100"),
        &ReferenceDiffRunner,
    ));
    assert_eq!(a.as_bytes(), b.as_bytes());
}

#[test]
fn gate_exclusivity_no_gateway_traffic_for_passing_submissions() {
    let corpus = fixture_corpus();
    let config = GradeConfig::new(default_rubric(), both_strategies());
    let gateway = CountingGateway::new(replay_gateway("scale10"));
    let results = run_batch(&corpus, &config, &gateway, &ReferenceDiffRunner);
    assert_eq!(results.len(), 15);

    for submission in corpus.submissions() {
        let calls = gateway.calls_containing(&submission.source);
        if submission.band == QualityBand::Good {
            assert_eq!(calls, 0, "passing submission {} saw traffic", submission.id);
        } else {
            assert!(
                calls >= 1,
                "failing submission {} saw no traffic",
                submission.id
            );
        }
    }
}

#[test]
fn poisoned_transcript_isolates_one_submission() {
    let corpus = fixture_corpus();
    let config = GradeConfig::new(default_rubric(), both_strategies());

    // Copy the fixture store so the poison stays local to this test.
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures_dir().join("transcripts/scale10");
    for entry in std::fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), tmp.path().join(entry.file_name())).unwrap();
    }
    let store = TranscriptStore::open(tmp.path()).unwrap();
    let victim = corpus.submission("p02-moderate-01").unwrap();
    poison_transcripts(&store, victim, &default_rubric(), &both_strategies());

    let results = run_batch(
        &corpus,
        &config,
        &Gateway::replay(store),
        &ReferenceDiffRunner,
    );
    assert_eq!(results.len(), 15);
    let summary = summarize(&results);
    assert_eq!(summary.needs_human, 1);
    assert_eq!(summary.auto_full + summary.llm_graded, 14);

    let poisoned = results
        .iter()
        .find(|r| r.submission_id == "p02-moderate-01")
        .unwrap();
    assert_eq!(poisoned.route, Route::NeedsHuman);
    assert_eq!(
        poisoned.review_flag.as_ref().unwrap().reason,
        ReviewReason::ParseFailure
    );
}

#[test]
fn full_evaluation_over_both_scales_is_table_shaped_and_deterministic() {
    let corpus = fixture_corpus();
    let baseline = load_baseline(&fixtures_dir().join("baseline/human.csv")).unwrap();

    let mut results = run_batch(
        &corpus,
        &GradeConfig::new(default_rubric(), both_strategies()),
        &replay_gateway("scale10"),
        &ReferenceDiffRunner,
    );
    results.extend(run_batch(
        &corpus,
        &GradeConfig::new(default_rubric().expand_scale(10), both_strategies()),
        &replay_gateway("scale100"),
        &ReferenceDiffRunner,
    ));

    let report = build_report(&results, &baseline, &corpus).unwrap();
    assert_eq!(report.mad.len(), 4, "one MAD per AI method");
    assert!(report.mad.values().all(|v| *v >= 0.0));
    assert_eq!(report.distributions.len(), 5);
    assert!(report.band_means.contains_key(METHOD_HUMAN));

    let text = render_text(&report);
    let header_at = text.lines().position(|l| l.starts_with("Method")).unwrap();
    let grid: Vec<&str> = text.lines().skip(header_at + 1).take(5).collect();
    assert_eq!(grid.len(), 5, "five method rows");
    for row in &grid {
        // every row shows the three band columns with 2-decimal cells
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert!(cells.len() >= 4, "row too short: {row}");
    }

    let again = build_report(&results, &baseline, &corpus).unwrap();
    assert_eq!(render_text(&again), text);
    assert_eq!(render_csv(&again), render_csv(&report));
}
