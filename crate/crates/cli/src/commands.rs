//! The four subcommands. Each returns a process exit code: 0 success,
//! 1 fatal, 2 partial (some generation cells failed but the rest were
//! written).

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use gradepipe::corpus::{load_baseline, load_manifest, save_manifest};
use gradepipe::evaluation::{
    build_report, render_csv, render_distributions_json, render_text, EvalError, EvaluationReport,
};
use gradepipe::pipeline::{
    read_results_jsonl, results_to_jsonl, summarize, GradeConfig, PipelineResult, ReviewReason,
};
use gradepipe::synthgen::{generate_batch, GenerationMode};
use serde_json::json;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Generate a synthetic corpus and write it (manifest plus sources) under
/// `<out>/corpus`.
pub fn cmd_generate(config: &RunConfig) -> Result<i32> {
    let problems = load_manifest(config.corpus_path()?)
        .map_err(|e| anyhow!("cannot load problems manifest: {e}"))?;
    let generate = config.generate_config();

    let gateway;
    let gateway_ref: Option<&dyn gradepipe::gateway::CompletionGateway> =
        if generate.mode == GenerationMode::Live {
            gateway = config.gateway()?;
            Some(&gateway)
        } else {
            None
        };

    let batch = generate_batch(
        problems.problems(),
        &generate.bands,
        generate.count_per_cell,
        generate.mode,
        config.seed(),
        gateway_ref,
    )
    .map_err(|e| anyhow!("generation failed: {e}"))?;

    let out = config.out_dir().join("corpus");
    save_manifest(&batch.corpus, &out).map_err(|e| anyhow!("cannot write corpus: {e}"))?;
    log::info!(
        "wrote {} submissions across {} problems to {}",
        batch.corpus.submissions().len(),
        batch.corpus.problems().len(),
        out.display()
    );

    if batch.failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        for failure in &batch.failures {
            eprintln!(
                "{}",
                json!({
                    "error": "generation_cell_failed",
                    "problem_id": failure.problem_id,
                    "band": failure.band.slug(),
                    "index": failure.index,
                    "detail": failure.detail,
                })
            );
        }
        Ok(EXIT_PARTIAL)
    }
}

/// Grade a corpus and write `results.jsonl` plus `summary.json` under
/// `<out>`.
pub fn cmd_grade(config: &RunConfig) -> Result<i32> {
    let corpus =
        load_manifest(config.corpus_path()?).map_err(|e| anyhow!("cannot load corpus: {e}"))?;
    let rubric = config.rubric()?;
    let gateway = config.gateway()?;
    let runner = config.runner()?;

    let mut grade_config = GradeConfig::new(rubric, config.strategies());
    grade_config.review_threshold = config.review_threshold();
    grade_config.workers = config.file.workers;

    let results = gradepipe::pipeline::run_batch(&corpus, &grade_config, &gateway, runner.as_ref());

    let out = config.out_dir();
    write_text(&out.join("results.jsonl"), &results_to_jsonl(&results))?;
    let mut summary =
        serde_json::to_string_pretty(&summarize(&results)).context("summary serializes")?;
    summary.push('\n');
    write_text(&out.join("summary.json"), &summary)?;

    if config.overrides.replay_strict {
        let misses: Vec<&PipelineResult> = results
            .iter()
            .filter(|r| {
                r.review_flag
                    .as_ref()
                    .is_some_and(|f| f.reason == ReviewReason::ReplayMiss)
            })
            .collect();
        if !misses.is_empty() {
            for miss in &misses {
                eprintln!(
                    "{}",
                    json!({
                        "error": "replay_miss",
                        "submission_id": miss.submission_id,
                        "detail": miss.review_flag.as_ref().and_then(|f| f.detail.clone()),
                    })
                );
            }
            bail!(
                "{} submission(s) hit replay misses under --replay-strict",
                misses.len()
            );
        }
    }
    Ok(EXIT_OK)
}

fn collect_results(paths: &[PathBuf]) -> Result<Vec<PipelineResult>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("cannot list {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(path.clone());
        }
    }
    if files.is_empty() {
        bail!("no results files found");
    }
    let mut results = Vec::new();
    for file in files {
        results.extend(
            read_results_jsonl(&file)
                .map_err(|e| anyhow!("cannot read results {}: {e}", file.display()))?,
        );
    }
    Ok(results)
}

fn write_report_artifacts(report: &EvaluationReport, out: &Path) -> Result<()> {
    write_text(&out.join("report.txt"), &render_text(report))?;
    write_text(&out.join("report.csv"), &render_csv(report))?;
    write_text(
        &out.join("distributions.json"),
        &render_distributions_json(report),
    )?;
    let mut full = serde_json::to_string_pretty(report).context("report serializes")?;
    full.push('\n');
    write_text(&out.join("report.json"), &full)
}

/// Compare grading results against the human baseline and write the report
/// artifacts (text, CSV, distributions JSON, full JSON) under `<out>`.
pub fn cmd_evaluate(
    config: &RunConfig,
    results_paths: &[PathBuf],
    baseline_path: Option<&Path>,
) -> Result<i32> {
    let corpus =
        load_manifest(config.corpus_path()?).map_err(|e| anyhow!("cannot load corpus: {e}"))?;

    let mut paths: Vec<PathBuf> = results_paths.to_vec();
    if paths.is_empty() {
        if let Some(from_config) = &config.file.results {
            paths = from_config.clone();
        } else {
            paths = vec![config.out_dir().join("results.jsonl")];
        }
    }
    let results = collect_results(&paths)?;

    let baseline_path = baseline_path
        .map(Path::to_path_buf)
        .or_else(|| config.file.baseline.clone())
        .ok_or_else(|| anyhow!("no baseline path given (flag --baseline or config `baseline`)"))?;
    let baseline =
        load_baseline(&baseline_path).map_err(|e| anyhow!("cannot load baseline: {e}"))?;

    let report = match build_report(&results, &baseline, &corpus) {
        Ok(report) => report,
        Err(EvalError::EmptyIntersection) => {
            bail!("baseline and results share no submissions; nothing to evaluate")
        }
        Err(e) => return Err(anyhow!("evaluation failed: {e}")),
    };

    write_report_artifacts(&report, &config.out_dir())?;
    Ok(EXIT_OK)
}

/// Re-render the human-readable artifacts from a saved `report.json`.
pub fn cmd_report(config: &RunConfig, report_path: Option<&Path>) -> Result<i32> {
    let path = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir().join("report.json"));
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read report {}", path.display()))?;
    let report: EvaluationReport = serde_json::from_str(&text)
        .with_context(|| format!("malformed report {}", path.display()))?;
    write_report_artifacts(&report, &config.out_dir())?;
    Ok(EXIT_OK)
}
