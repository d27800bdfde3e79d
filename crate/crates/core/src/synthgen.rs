//! Synthetic student-like submissions per quality band.
//!
//! Two generation routes: live (ask the model for a student-like solution
//! with a controlled error budget) and offline (seeded error injection
//! into the reference solution). Offline is the default for CI; it is a
//! pure function of `(solution, profile, seed)`.
//!
//! The mutation catalog is line/token-regex based, not AST based: delete a
//! trailing semicolon, flip a comparison operator, off-by-one a loop
//! bound, blank out a return statement. Every applied mutation is recorded
//! as a JSON note on the submission and is individually reversible.

use crate::corpus::{Corpus, CorpusMetadata, Problem, Provenance, QualityBand, Submission};
use crate::exec::{self, Parallelism};
use crate::gateway::{CompletionGateway, GatewayError, PromptKind, PromptRequest};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::LazyLock;
use thiserror::Error;

const GENERATE_TEMPLATE: &str = include_str!("../templates/generate_v1.txt");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("not enough mutation sites: {0}")]
    InsufficientMutationSites(String),
    #[error("invalid error profile: {0}")]
    InvalidProfile(String),
    #[error("count_per_cell must be >= 1")]
    InvalidCount,
    #[error("live generation requires a gateway")]
    GatewayRequired,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model reply contains no fenced code block")]
    NoCodeBlock,
    #[error("malformed mutation note: {0}")]
    MalformedNote(String),
}

/// Error budget for one generated submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub band: QualityBand,
    pub syntax_errors: u32,
    pub logic_errors: u32,
    pub notes: String,
}

impl ErrorProfile {
    /// Stock profile per band: Good stays pristine, Moderate gets the
    /// classic missing semicolon, Poor piles on logic damage.
    pub fn for_band(band: QualityBand) -> ErrorProfile {
        let (syntax_errors, logic_errors, notes) = match band {
            QualityBand::Good => (0, 0, "clean solution"),
            QualityBand::Moderate => (1, 0, "one minor syntax slip"),
            QualityBand::Poor => (1, 2, "syntax slip plus compound logic damage"),
            QualityBand::Unknown => (0, 0, "unlabelled"),
        };
        ErrorProfile {
            band,
            syntax_errors,
            logic_errors,
            notes: notes.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        match self.band {
            QualityBand::Good => {
                if self.syntax_errors != 0 || self.logic_errors != 0 {
                    return Err(SynthError::InvalidProfile(
                        "Good band allows small perturbations only (zero error budget)".into(),
                    ));
                }
            }
            QualityBand::Poor => {
                if self.logic_errors == 0 {
                    return Err(SynthError::InvalidProfile(
                        "Poor band requires at least one major logic error".into(),
                    ));
                }
            }
            QualityBand::Moderate => {}
            QualityBand::Unknown => {
                return Err(SynthError::InvalidProfile(
                    "cannot generate for the Unknown band".into(),
                ));
            }
        }
        Ok(())
    }
}

fn band_guidance(band: QualityBand) -> &'static str {
    match band {
        QualityBand::Good => {
            "Do not introduce any semantic errors; the program must behave correctly."
        }
        QualityBand::Moderate => {
            "Keep the program close to working; the mistakes should be the kind a careful \
             student might miss."
        }
        QualityBand::Poor => {
            "Include at least one major logic error that visibly changes the program's behavior."
        }
        QualityBand::Unknown => "",
    }
}

/// Prompt asking the model for a student-like solution with exactly the
/// profiled error kinds.
pub fn build_generation_prompt(problem: &Problem, profile: &ErrorProfile) -> PromptRequest {
    let text = GENERATE_TEMPLATE
        .replace("{{title}}", &problem.title)
        .replace("{{statement}}", &problem.statement)
        .replace("{{language}}", &problem.language_tag)
        .replace("{{syntax_errors}}", &profile.syntax_errors.to_string())
        .replace("{{logic_errors}}", &profile.logic_errors.to_string())
        .replace("{{band_guidance}}", band_guidance(profile.band));
    PromptRequest::new(text, PromptKind::Generate).expect("generation template is nonempty")
}

// --- offline mutation catalog -------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    RemoveSemicolon,
    FlipComparison,
    OffByOneBound,
    RemoveReturn,
}

impl MutationKind {
    pub fn is_syntax(self) -> bool {
        matches!(self, MutationKind::RemoveSemicolon)
    }

    /// Major mutations visibly change behavior; the Poor band must carry
    /// at least one.
    pub fn is_major(self) -> bool {
        matches!(
            self,
            MutationKind::FlipComparison | MutationKind::RemoveReturn
        )
    }
}

/// One applied mutation: enough to display the diff and to revert it.
/// Lines are 1-based; `before`/`after` are whole-line snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub kind: MutationKind,
    pub line: usize,
    pub before: String,
    pub after: String,
}

impl Mutation {
    pub fn to_note(&self) -> String {
        serde_json::to_string(self).expect("mutation serializes")
    }

    pub fn from_note(note: &str) -> Result<Mutation, SynthError> {
        serde_json::from_str(note).map_err(|e| SynthError::MalformedNote(e.to_string()))
    }
}

static COMPARISON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<=|>=|==|!=|<|>").expect("static regex"));
static LOOP_BOUND_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(<=|>=|<|>|=)\s*(\d+)").expect("static regex"));

fn flip_comparison(op: &str) -> &'static str {
    match op {
        "<" => "<=",
        "<=" => "<",
        ">" => ">=",
        ">=" => ">",
        "==" => "!=",
        "!=" => "==",
        _ => unreachable!("regex only yields comparison operators"),
    }
}

/// True when the match at `start` is actually part of a shift, arrow, or
/// compound operator rather than a standalone comparison.
fn is_false_comparison(line: &str, start: usize, op: &str) -> bool {
    let bytes = line.as_bytes();
    let before = start.checked_sub(1).map(|i| bytes[i] as char);
    let after = bytes.get(start + op.len()).map(|&b| b as char);
    match op {
        "<" | ">" => {
            matches!(before, Some('<') | Some('>') | Some('-') | Some('='))
                || matches!(after, Some('<') | Some('>') | Some('='))
        }
        "==" | "!=" => matches!(after, Some('=')),
        _ => false,
    }
}

fn is_comment_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("//") || t.starts_with('*') || t.starts_with("/*")
}

/// Candidate sites per mutation kind, scanned line by line.
fn mutation_sites(lines: &[&str], kind: MutationKind) -> Vec<(usize, String)> {
    let mut sites = Vec::new();
    for (idx, &line) in lines.iter().enumerate() {
        if is_comment_line(line) {
            continue;
        }
        let mutated = match kind {
            MutationKind::RemoveSemicolon => {
                if line.trim_end().ends_with(';') {
                    let cut = line.rfind(';').expect("checked above");
                    let mut out = line.to_string();
                    out.remove(cut);
                    Some(out)
                } else {
                    None
                }
            }
            MutationKind::FlipComparison => COMPARISON_RE
                .find_iter(line)
                .find(|m| !is_false_comparison(line, m.start(), m.as_str()))
                .map(|m| {
                    let mut out = String::with_capacity(line.len() + 1);
                    out.push_str(&line[..m.start()]);
                    out.push_str(flip_comparison(m.as_str()));
                    out.push_str(&line[m.end()..]);
                    out
                }),
            MutationKind::OffByOneBound => {
                if !line.contains("for") {
                    None
                } else {
                    LOOP_BOUND_RE.captures(line).and_then(|caps| {
                        let digits = caps.get(2).expect("group 2 exists");
                        let bumped = digits.as_str().parse::<u64>().ok()?.checked_add(1)?;
                        let mut out = String::new();
                        out.push_str(&line[..digits.start()]);
                        out.push_str(&bumped.to_string());
                        out.push_str(&line[digits.end()..]);
                        Some(out)
                    })
                }
            }
            MutationKind::RemoveReturn => {
                let t = line.trim();
                if t.starts_with("return") && t.ends_with(';') {
                    Some(String::new())
                } else {
                    None
                }
            }
        };
        if let Some(after) = mutated {
            if after != line {
                sites.push((idx, after));
            }
        }
    }
    sites
}

const SYNTAX_KINDS: [MutationKind; 1] = [MutationKind::RemoveSemicolon];
const LOGIC_KINDS: [MutationKind; 3] = [
    MutationKind::FlipComparison,
    MutationKind::OffByOneBound,
    MutationKind::RemoveReturn,
];
const MAJOR_LOGIC_KINDS: [MutationKind; 2] =
    [MutationKind::FlipComparison, MutationKind::RemoveReturn];

fn pick_mutation(
    lines: &[&str],
    kinds: &[MutationKind],
    taken: &[usize],
    rng: &mut ChaCha8Rng,
    label: &str,
) -> Result<Mutation, SynthError> {
    let mut pool: Vec<(MutationKind, usize, String)> = Vec::new();
    for &kind in kinds {
        for (line, after) in mutation_sites(lines, kind) {
            if !taken.contains(&line) {
                pool.push((kind, line, after));
            }
        }
    }
    // Stable pool order, seeded choice.
    pool.sort_by_key(|a| (a.1, a.0 as u8));
    match pool.choose(rng) {
        Some((kind, line, after)) => Ok(Mutation {
            kind: *kind,
            line: line + 1,
            before: lines[*line].to_string(),
            after: after.clone(),
        }),
        None => Err(SynthError::InsufficientMutationSites(format!(
            "no remaining site for {label}"
        ))),
    }
}

/// Outcome of offline error injection, before it is wrapped in a
/// [`Submission`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutatedSource {
    pub source: String,
    pub mutations: Vec<Mutation>,
}

/// Apply seeded mutations matching the profile counts. Deterministic for a
/// fixed `(reference, profile, seed)` triple; a zero-budget profile
/// returns the reference byte for byte.
pub fn apply_profile(
    reference: &str,
    profile: &ErrorProfile,
    seed: u64,
) -> Result<MutatedSource, SynthError> {
    profile.validate()?;
    if reference.is_empty() {
        if profile.syntax_errors == 0 && profile.logic_errors == 0 {
            return Ok(MutatedSource {
                source: String::new(),
                mutations: Vec::new(),
            });
        }
        return Err(SynthError::InsufficientMutationSites(
            "reference solution is empty".into(),
        ));
    }

    let lines: Vec<&str> = reference.lines().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mutations: Vec<Mutation> = Vec::new();
    let mut taken: Vec<usize> = Vec::new();

    for _ in 0..profile.syntax_errors {
        let m = pick_mutation(&lines, &SYNTAX_KINDS, &taken, &mut rng, "syntax error")?;
        taken.push(m.line - 1);
        mutations.push(m);
    }
    for i in 0..profile.logic_errors {
        // The Poor band's first logic error must be a major one.
        let kinds: &[MutationKind] = if i == 0 && profile.band == QualityBand::Poor {
            &MAJOR_LOGIC_KINDS
        } else {
            &LOGIC_KINDS
        };
        let m = pick_mutation(&lines, kinds, &taken, &mut rng, "logic error")?;
        taken.push(m.line - 1);
        mutations.push(m);
    }

    mutations.sort_by_key(|m| m.line);
    let mut out_lines: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    for m in &mutations {
        out_lines[m.line - 1] = m.after.clone();
    }
    let mut source = out_lines.join("\n");
    if reference.ends_with('\n') {
        source.push('\n');
    }
    Ok(MutatedSource { source, mutations })
}

/// Offline analogue of live generation: inject the profiled errors into
/// the problem's reference solution.
pub fn inject_errors(
    submission_id: &str,
    problem: &Problem,
    profile: &ErrorProfile,
    seed: u64,
) -> Result<Submission, SynthError> {
    let mutated = apply_profile(&problem.reference_solution, profile, seed)?;
    let notes: Vec<String> = mutated.mutations.iter().map(Mutation::to_note).collect();
    Ok(Submission {
        id: submission_id.to_string(),
        problem_id: problem.id.clone(),
        source: mutated.source,
        band: profile.band,
        provenance: Provenance::Synthetic,
        error_notes: if notes.is_empty() { None } else { Some(notes) },
    })
}

/// Rebuild the original source from a mutated submission by undoing the
/// recorded notes. Every mutation is a whole-line swap, so reverting is a
/// line-for-line restore.
pub fn revert_mutations(source: &str, notes: &[String]) -> Result<String, SynthError> {
    let mut lines: Vec<String> = source.lines().map(str::to_string).collect();
    for note in notes {
        let m = Mutation::from_note(note)?;
        let idx = m
            .line
            .checked_sub(1)
            .filter(|&i| i < lines.len())
            .ok_or_else(|| SynthError::MalformedNote(format!("line {} out of range", m.line)))?;
        if lines[idx] != m.after {
            return Err(SynthError::MalformedNote(format!(
                "line {} does not match the recorded mutation",
                m.line
            )));
        }
        lines[idx] = m.before;
    }
    let mut out = lines.join("\n");
    if source.ends_with('\n') {
        out.push('\n');
    }
    Ok(out)
}

// --- batch generation ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Offline,
    Live,
}

/// A cell that failed to generate; the batch carries on without it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub problem_id: String,
    pub band: QualityBand,
    pub index: u32,
    pub detail: String,
}

#[derive(Debug)]
pub struct GeneratedBatch {
    pub corpus: Corpus,
    pub failures: Vec<CellFailure>,
}

/// Per-cell seed derived from the master seed; stable across runs and
/// independent of cell evaluation order.
pub fn cell_seed(master: u64, problem_id: &str, band: QualityBand, index: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(problem_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(band.slug().as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn submission_id(problem_id: &str, band: QualityBand, index: u32) -> String {
    format!("{problem_id}-{}-{:02}", band.slug(), index + 1)
}

/// Extract the first fenced code block from a generation reply.
fn code_from_reply(text: &str) -> Option<String> {
    let mut open = false;
    let mut content = String::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            if open {
                return Some(content);
            }
            open = true;
            continue;
        }
        if open {
            content.push_str(line);
            content.push('\n');
        }
    }
    None
}

fn generate_cell(
    problem: &Problem,
    band: QualityBand,
    index: u32,
    mode: GenerationMode,
    master_seed: u64,
    gateway: Option<&dyn CompletionGateway>,
) -> Result<Submission, SynthError> {
    let profile = ErrorProfile::for_band(band);
    let id = submission_id(&problem.id, band, index);
    match mode {
        GenerationMode::Offline => inject_errors(
            &id,
            problem,
            &profile,
            cell_seed(master_seed, &problem.id, band, index),
        ),
        GenerationMode::Live => {
            let gateway = gateway.ok_or(SynthError::GatewayRequired)?;
            let request = build_generation_prompt(problem, &profile);
            let response = gateway.complete(&request)?;
            let source = code_from_reply(&response.text).ok_or(SynthError::NoCodeBlock)?;
            Ok(Submission {
                id,
                problem_id: problem.id.clone(),
                source,
                band,
                provenance: Provenance::Synthetic,
                error_notes: None,
            })
        }
    }
}

/// Generate `count_per_cell` submissions per (problem, band) cell.
///
/// Cells are independent: a failed cell is recorded and skipped, never
/// fatal. Offline mode is fully deterministic for a fixed seed.
pub fn generate_batch(
    problems: &[Problem],
    bands: &[QualityBand],
    count_per_cell: u32,
    mode: GenerationMode,
    seed: u64,
    gateway: Option<&dyn CompletionGateway>,
) -> Result<GeneratedBatch, SynthError> {
    generate_batch_with(
        problems,
        bands,
        count_per_cell,
        mode,
        seed,
        gateway,
        Parallelism::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn generate_batch_with(
    problems: &[Problem],
    bands: &[QualityBand],
    count_per_cell: u32,
    mode: GenerationMode,
    seed: u64,
    gateway: Option<&dyn CompletionGateway>,
    parallelism: Parallelism,
) -> Result<GeneratedBatch, SynthError> {
    if count_per_cell == 0 {
        return Err(SynthError::InvalidCount);
    }
    for &band in bands {
        ErrorProfile::for_band(band).validate()?;
    }
    if mode == GenerationMode::Live && gateway.is_none() {
        return Err(SynthError::GatewayRequired);
    }

    let mut cells: Vec<(&Problem, QualityBand, u32)> = Vec::new();
    for problem in problems {
        for &band in bands {
            for index in 0..count_per_cell {
                cells.push((problem, band, index));
            }
        }
    }

    let outcomes = exec::map_slice(parallelism, &cells, |(problem, band, index)| {
        generate_cell(problem, *band, *index, mode, seed, gateway).map_err(|e| CellFailure {
            problem_id: problem.id.clone(),
            band: *band,
            index: *index,
            detail: e.to_string(),
        })
    });

    let mut submissions = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(submission) => submissions.push(submission),
            Err(failure) => failures.push(failure),
        }
    }

    let corpus = Corpus::new(
        problems.to_vec(),
        submissions,
        CorpusMetadata {
            seed: Some(seed),
            generator: Some(
                match mode {
                    GenerationMode::Offline => "offline",
                    GenerationMode::Live => "live",
                }
                .to_string(),
            ),
        },
    )
    .map_err(|e| SynthError::InvalidProfile(format!("generated corpus failed validation: {e}")))?;

    Ok(GeneratedBatch { corpus, failures })
}
