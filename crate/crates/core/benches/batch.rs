//! Data-parallel vs sequential throughput for the two batch loops: offline
//! corpus generation and replay-style batch grading.
//!
//! Requires the default `parallel` feature:
//! `cargo bench -p gradepipe`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gradepipe::corpus::{Problem, QualityBand};
use gradepipe::exec::Parallelism;
use gradepipe::graders::LlmStrategy;
use gradepipe::pipeline::{run_batch_with, GradeConfig, ReferenceDiffRunner};
use gradepipe::rubric::default_rubric;
use gradepipe::synthgen::{generate_batch_with, GenerationMode};
use gradepipe::testkit::{fixture_problems, ScriptedGateway};
use std::hint::black_box;

/// Clone the five fixture problems into a wider problem set so the batch
/// loops have enough cells to spread across workers.
fn widened_problems(copies: usize) -> Vec<Problem> {
    let base = fixture_problems();
    let mut problems = Vec::with_capacity(base.problems().len() * copies);
    for copy in 0..copies {
        for problem in base.problems() {
            let mut cloned = problem.clone();
            cloned.id = format!("{}-c{copy:02}", problem.id);
            cloned.test_suite_ref = Some(format!("suite:{}", cloned.id));
            problems.push(cloned);
        }
    }
    problems
}

fn modes() -> Vec<(&'static str, Parallelism)> {
    vec![
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Rayon),
    ]
}

fn bench_generation(c: &mut Criterion) {
    let problems = widened_problems(8);
    let mut group = c.benchmark_group("generate_batch_offline");
    for (label, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                let batch = generate_batch_with(
                    black_box(&problems),
                    &QualityBand::LABELLED,
                    2,
                    GenerationMode::Offline,
                    7,
                    None,
                    mode,
                )
                .expect("generation succeeds");
                black_box(batch.corpus.submissions().len())
            });
        });
    }
    group.finish();
}

fn bench_grading(c: &mut Criterion) {
    let problems = widened_problems(8);
    let corpus = generate_batch_with(
        &problems,
        &QualityBand::LABELLED,
        1,
        GenerationMode::Offline,
        7,
        None,
        Parallelism::Sequential,
    )
    .expect("generation succeeds")
    .corpus;
    let rubric = default_rubric();
    let gateway = ScriptedGateway::new(rubric.clone());
    let runner = ReferenceDiffRunner;
    let config = GradeConfig::new(rubric, vec![LlmStrategy::Direct, LlmStrategy::Reverse]);

    let mut group = c.benchmark_group("run_batch_replay");
    group.sample_size(20);
    for (label, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                let results = run_batch_with(black_box(&corpus), &config, &gateway, &runner, mode);
                black_box(results.len())
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generation, bench_grading);
criterion_main!(benches);
