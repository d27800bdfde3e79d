//! Problems, submissions, and human baseline scores, loaded from on-disk
//! manifests.
//!
//! A corpus is described by a single human-editable JSON manifest that
//! references source files by relative path, keeping submissions diffable
//! in version control. Everything is validated and sorted
//! lexicographically by id at load time and is read-only afterwards, so a
//! corpus can be shared freely across grading workers.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file {path}: {detail}")]
    MissingFile { path: String, detail: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("submission `{submission}` references unknown problem `{problem}`")]
    DanglingReference { submission: String, problem: String },
    #[error("malformed baseline record (line {line}): {detail}")]
    MalformedRecord { line: u64, detail: String },
    #[error("baseline score {total} out of range [0, {scale}] for `{submission_id}`")]
    ScoreOutOfRange {
        submission_id: String,
        total: f64,
        scale: f64,
    },
    #[error("duplicate baseline record for ({submission_id}, {grader_id})")]
    DuplicateRecord {
        submission_id: String,
        grader_id: String,
    },
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
}

/// Coarse correctness label of a submission.
///
/// `Unknown` is reserved for ingested human submissions that arrive
/// without a label; synthetic submissions are always banded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityBand {
    Poor,
    Moderate,
    Good,
    Unknown,
}

impl QualityBand {
    /// The three labelled bands, in report column order.
    pub const LABELLED: [QualityBand; 3] =
        [QualityBand::Poor, QualityBand::Moderate, QualityBand::Good];

    pub fn slug(self) -> &'static str {
        match self {
            QualityBand::Poor => "poor",
            QualityBand::Moderate => "moderate",
            QualityBand::Good => "good",
            QualityBand::Unknown => "unknown",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QualityBand::Poor => "Poor",
            QualityBand::Moderate => "Moderate",
            QualityBand::Good => "Good",
            QualityBand::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for QualityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Human,
}

/// One assignment: statement, reference solution, and an opaque locator
/// for its unit-test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: String,
    pub title: String,
    pub statement: String,
    pub reference_solution: String,
    /// Opaque locator handed to the test runner; required when the
    /// pipeline's unit-test gate is enabled.
    pub test_suite_ref: Option<String>,
    pub language_tag: String,
}

/// One student-like program to grade.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub id: String,
    pub problem_id: String,
    pub source: String,
    pub band: QualityBand,
    pub provenance: Provenance,
    /// For synthetic submissions: one JSON-encoded mutation record per
    /// injected error (see the synthgen module).
    pub error_notes: Option<Vec<String>>,
}

/// Metadata block persisted in the manifest, e.g. the generation seed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

/// Validated, id-sorted set of problems and submissions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    problems: Vec<Problem>,
    submissions: Vec<Submission>,
    metadata: CorpusMetadata,
}

impl Corpus {
    /// Validates invariants (nonempty unique ids, nonempty texts, resolvable
    /// problem references) and sorts both lists by id.
    pub fn new(
        mut problems: Vec<Problem>,
        mut submissions: Vec<Submission>,
        metadata: CorpusMetadata,
    ) -> Result<Self, CorpusError> {
        let mut problem_ids = BTreeSet::new();
        for p in &problems {
            if p.id.trim().is_empty() {
                return Err(CorpusError::MalformedManifest("empty problem id".into()));
            }
            if p.statement.trim().is_empty() {
                return Err(CorpusError::MalformedManifest(format!(
                    "problem `{}` has an empty statement",
                    p.id
                )));
            }
            if !problem_ids.insert(p.id.clone()) {
                return Err(CorpusError::MalformedManifest(format!(
                    "duplicate problem id `{}`",
                    p.id
                )));
            }
        }
        let mut submission_ids = BTreeSet::new();
        for s in &submissions {
            if s.id.trim().is_empty() {
                return Err(CorpusError::MalformedManifest("empty submission id".into()));
            }
            if !submission_ids.insert(s.id.clone()) {
                return Err(CorpusError::MalformedManifest(format!(
                    "duplicate submission id `{}`",
                    s.id
                )));
            }
            if s.source.is_empty() {
                return Err(CorpusError::MalformedManifest(format!(
                    "submission `{}` has empty source",
                    s.id
                )));
            }
            if !problem_ids.contains(&s.problem_id) {
                return Err(CorpusError::DanglingReference {
                    submission: s.id.clone(),
                    problem: s.problem_id.clone(),
                });
            }
        }
        problems.sort_by(|a, b| a.id.cmp(&b.id));
        submissions.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Corpus {
            problems,
            submissions,
            metadata,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn metadata(&self) -> &CorpusMetadata {
        &self.metadata
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.problems[i])
    }

    pub fn submission(&self, id: &str) -> Option<&Submission> {
        self.submissions
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.submissions[i])
    }

    /// Submissions in the given band, with problems retained only when
    /// still referenced. Empty results are fine.
    pub fn filter_by_band(&self, band: QualityBand) -> Corpus {
        let submissions: Vec<Submission> = self
            .submissions
            .iter()
            .filter(|s| s.band == band)
            .cloned()
            .collect();
        let referenced: BTreeSet<&str> =
            submissions.iter().map(|s| s.problem_id.as_str()).collect();
        let problems = self
            .problems
            .iter()
            .filter(|p| referenced.contains(p.id.as_str()))
            .cloned()
            .collect();
        Corpus {
            problems,
            submissions,
            metadata: self.metadata.clone(),
        }
    }
}

// --- manifest I/O -----------------------------------------------------

/// Manifest document shape. Paths are relative to the manifest file.
#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<CorpusMetadata>,
    problems: Vec<ManifestProblem>,
    submissions: Vec<ManifestSubmission>,
}

#[derive(Serialize, Deserialize)]
struct ManifestProblem {
    id: String,
    title: String,
    statement: String,
    solution_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tests_path: Option<String>,
    #[serde(default = "default_language")]
    language: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestSubmission {
    id: String,
    problem_id: String,
    source_path: String,
    /// Absent band means an unlabelled human submission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    band: Option<QualityBand>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_notes: Option<Vec<String>>,
}

fn default_language() -> String {
    "java".into()
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::MissingFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Accepts either the manifest file itself or a directory containing
/// `manifest.json`.
fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

/// Load and validate a corpus from a manifest file (or a directory
/// containing `manifest.json`). Referenced source files are read eagerly.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let manifest_path = resolve_manifest_path(path);
    let text = read_file(&manifest_path)?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let problems = doc
        .problems
        .into_iter()
        .map(|p| {
            let reference_solution = read_file(&base.join(&p.solution_path))?;
            Ok(Problem {
                id: p.id,
                title: p.title,
                statement: p.statement,
                reference_solution,
                test_suite_ref: p.tests_path,
                language_tag: p.language,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;

    let submissions = doc
        .submissions
        .into_iter()
        .map(|s| {
            let source = read_file(&base.join(&s.source_path))?;
            Ok(Submission {
                id: s.id,
                problem_id: s.problem_id,
                source,
                band: s.band.unwrap_or(QualityBand::Unknown),
                provenance: s.provenance,
                error_notes: s.error_notes,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;

    Corpus::new(problems, submissions, doc.metadata.unwrap_or_default())
}

fn file_extension(language_tag: &str) -> &'static str {
    match language_tag {
        "java" => "java",
        "python" | "py" => "py",
        "c" => "c",
        "cpp" | "c++" => "cpp",
        _ => "txt",
    }
}

/// Ids double as file names when a corpus is written out; squash anything
/// the filesystem would object to.
fn sanitize_for_filename(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn unique_relative_path(dir: &str, id: &str, ext: &str, used: &mut BTreeSet<String>) -> String {
    let stem = sanitize_for_filename(id);
    let mut candidate = format!("{dir}/{stem}.{ext}");
    let mut n = 2;
    while !used.insert(candidate.clone()) {
        candidate = format!("{dir}/{stem}-{n}.{ext}");
        n += 1;
    }
    candidate
}

fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CorpusError::Io {
            path: parent.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Write `manifest.json` plus `solutions/` and `submissions/` source files
/// under `dir`. Output bytes are deterministic, and
/// `load_manifest(save_manifest(c)) == c`.
pub fn save_manifest(corpus: &Corpus, dir: &Path) -> Result<PathBuf, CorpusError> {
    let mut used = BTreeSet::new();
    let mut problems = Vec::with_capacity(corpus.problems.len());
    for p in &corpus.problems {
        let rel = unique_relative_path(
            "solutions",
            &p.id,
            file_extension(&p.language_tag),
            &mut used,
        );
        write_file(&dir.join(&rel), &p.reference_solution)?;
        problems.push(ManifestProblem {
            id: p.id.clone(),
            title: p.title.clone(),
            statement: p.statement.clone(),
            solution_path: rel,
            tests_path: p.test_suite_ref.clone(),
            language: p.language_tag.clone(),
        });
    }
    let mut submissions = Vec::with_capacity(corpus.submissions.len());
    for s in &corpus.submissions {
        let ext = corpus
            .problem(&s.problem_id)
            .map(|p| file_extension(&p.language_tag))
            .unwrap_or("txt");
        let rel = unique_relative_path("submissions", &s.id, ext, &mut used);
        write_file(&dir.join(&rel), &s.source)?;
        submissions.push(ManifestSubmission {
            id: s.id.clone(),
            problem_id: s.problem_id.clone(),
            source_path: rel,
            band: Some(s.band),
            provenance: s.provenance,
            error_notes: s.error_notes.clone(),
        });
    }
    let doc = ManifestDoc {
        metadata: if corpus.metadata == CorpusMetadata::default() {
            None
        } else {
            Some(corpus.metadata.clone())
        },
        problems,
        submissions,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    text.push('\n');
    let manifest_path = dir.join("manifest.json");
    write_file(&manifest_path, &text)?;
    Ok(manifest_path)
}

// --- human baseline scores --------------------------------------------

/// One human grader's score for one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub submission_id: String,
    pub grader_id: String,
    pub scale: f64,
    pub total: f64,
    pub per_category: Option<BTreeMap<String, f64>>,
}

/// All baseline records from one file, sorted by (submission, grader).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineScores {
    records: Vec<BaselineScore>,
}

impl BaselineScores {
    pub fn records(&self) -> &[BaselineScore] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const CATEGORY_COLUMN_PREFIX: &str = "category:";
const CATEGORY_SUM_EPSILON: f64 = 1e-6;

/// Load baseline scores from a CSV file with header
/// `submission_id,grader_id,scale,total[,category:<name>...]`.
///
/// Category columns are all-or-nothing per row: either every category cell
/// is filled (and must sum to the total) or every cell is empty.
pub fn load_baseline(path: &Path) -> Result<BaselineScores, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::MissingFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRecord {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();

    let mut category_columns: Vec<(usize, String)> = Vec::new();
    let mut fixed: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, name) in headers.iter().enumerate() {
        if let Some(cat) = name.strip_prefix(CATEGORY_COLUMN_PREFIX) {
            category_columns.push((idx, cat.trim().to_string()));
        } else {
            fixed.insert(name, idx);
        }
    }
    let col = |name: &str| -> Result<usize, CorpusError> {
        fixed
            .get(name)
            .copied()
            .ok_or_else(|| CorpusError::MalformedRecord {
                line: 1,
                detail: format!("missing column `{name}`"),
            })
    };
    let (c_sub, c_grader, c_scale, c_total) = (
        col("submission_id")?,
        col("grader_id")?,
        col("scale")?,
        col("total")?,
    );

    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = (i + 2) as u64; // header is line 1
        let row = row.map_err(|e| CorpusError::MalformedRecord {
            line,
            detail: e.to_string(),
        })?;
        let field = |idx: usize| row.get(idx).unwrap_or("").to_string();
        let submission_id = field(c_sub);
        let grader_id = field(c_grader);
        if submission_id.is_empty() || grader_id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                detail: "empty submission_id or grader_id".into(),
            });
        }
        let scale: f64 = field(c_scale)
            .parse()
            .map_err(|_| CorpusError::MalformedRecord {
                line,
                detail: format!("unparseable scale `{}`", field(c_scale)),
            })?;
        if scale != 10.0 && scale != 100.0 {
            return Err(CorpusError::MalformedRecord {
                line,
                detail: format!("scale must be 10 or 100, got {scale}"),
            });
        }
        let total: f64 = field(c_total)
            .parse()
            .map_err(|_| CorpusError::MalformedRecord {
                line,
                detail: format!("unparseable total `{}`", field(c_total)),
            })?;
        if !total.is_finite() || total < 0.0 || total > scale {
            return Err(CorpusError::ScoreOutOfRange {
                submission_id,
                total,
                scale,
            });
        }
        if !seen.insert((submission_id.clone(), grader_id.clone())) {
            return Err(CorpusError::DuplicateRecord {
                submission_id,
                grader_id,
            });
        }

        let filled: Vec<(&String, String)> = category_columns
            .iter()
            .map(|(idx, name)| (name, field(*idx)))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let per_category = if filled.is_empty() {
            None
        } else if filled.len() != category_columns.len() {
            return Err(CorpusError::MalformedRecord {
                line,
                detail: "partially filled category columns".into(),
            });
        } else {
            let mut map = BTreeMap::new();
            for (name, value) in filled {
                let v: f64 = value.parse().map_err(|_| CorpusError::MalformedRecord {
                    line,
                    detail: format!("unparseable category score `{value}`"),
                })?;
                map.insert(name.clone(), v);
            }
            let sum: f64 = map.values().sum();
            if (sum - total).abs() > CATEGORY_SUM_EPSILON {
                return Err(CorpusError::MalformedRecord {
                    line,
                    detail: format!("category scores sum to {sum}, total is {total}"),
                });
            }
            Some(map)
        };

        records.push(BaselineScore {
            submission_id,
            grader_id,
            scale,
            total,
            per_category,
        });
    }
    records.sort_by(|a, b| {
        (a.submission_id.as_str(), a.grader_id.as_str())
            .cmp(&(b.submission_id.as_str(), b.grader_id.as_str()))
    });
    Ok(BaselineScores { records })
}
