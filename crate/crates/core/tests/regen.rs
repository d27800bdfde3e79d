//! Fixture regeneration. Ignored by default; run explicitly after changing
//! prompt templates, the scripted model, or the fixture problems:
//!
//! ```text
//! cargo test -p gradepipe --test regen -- --ignored
//! ```
//!
//! Rewrites `tests/fixtures/transcripts/{scale10,scale100}` and the golden
//! prompt files under `tests/golden/`, then prints what changed so the
//! diff can be reviewed and committed.

use gradepipe::gateway::TranscriptStore;
use gradepipe::graders::{build_direct_prompt, build_reverse_prompt, LlmStrategy};
use gradepipe::rubric::default_rubric;
use gradepipe::synthgen::{build_generation_prompt, ErrorProfile};
use gradepipe::testkit::{fixture_corpus, fixtures_dir, synthesize_transcripts};
use gradepipe::QualityBand;

#[test]
#[ignore = "regenerates checked-in fixtures; run on purpose, review the diff"]
fn regenerate_fixtures() {
    let corpus = fixture_corpus();
    let strategies = [LlmStrategy::Direct, LlmStrategy::Reverse];

    for (subdir, factor) in [("scale10", 1u32), ("scale100", 10u32)] {
        let rubric = default_rubric().expand_scale(factor);
        let dir = fixtures_dir().join("transcripts").join(subdir);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).expect("clear old transcripts");
        }
        let store = TranscriptStore::open(&dir).expect("open transcript dir");
        let written = synthesize_transcripts(&corpus, &rubric, &store, &strategies);
        println!("wrote {written} transcript entries under {}", dir.display());
    }

    // Golden prompts: the p01 moderate fixture submission, default rubric.
    let rubric = default_rubric();
    let submission = corpus
        .submission("p01-moderate-01")
        .expect("fixture submission exists");
    let problem = corpus.problem("p01").expect("fixture problem exists");
    let golden = fixtures_dir().parent().unwrap().join("golden");
    std::fs::create_dir_all(&golden).expect("golden dir");

    let direct = build_direct_prompt(submission, &rubric);
    std::fs::write(golden.join("direct_prompt_p01_moderate.txt"), &direct.text).unwrap();
    let reverse = build_reverse_prompt(submission, &rubric);
    std::fs::write(
        golden.join("reverse_prompt_p01_moderate.txt"),
        &reverse.text,
    )
    .unwrap();
    let generate = build_generation_prompt(problem, &ErrorProfile::for_band(QualityBand::Moderate));
    std::fs::write(
        golden.join("generate_prompt_p01_moderate.txt"),
        &generate.text,
    )
    .unwrap();
    println!("rewrote golden prompts under {}", golden.display());
}
