//! Unit-test runners: the pipeline's gate.
//!
//! Three implementations cover production and test needs:
//!
//! * [`CommandRunner`] spawns a configurable command in a sandboxed
//!   working directory with a wall-clock timeout, and parses the
//!   `tests: passed=N failed=M` line protocol (see `docs/formats.md`).
//! * [`ReferenceDiffRunner`] is an in-process suite for synthetic corpora:
//!   a submission passes iff it matches the problem's reference solution
//!   after comments and whitespace are normalized away.
//! * [`ScriptedRunner`] serves fully scripted outcomes keyed by submission id.

use crate::corpus::{Problem, Submission};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::LazyLock;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Pass,
    Fail,
    RunnerError,
}

/// Parsed result of one unit-test run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub status: TestStatus,
    pub passed: u32,
    pub failed: u32,
    pub log: String,
}

impl TestOutcome {
    pub fn pass(passed: u32, log: impl Into<String>) -> TestOutcome {
        TestOutcome {
            status: TestStatus::Pass,
            passed,
            failed: 0,
            log: log.into(),
        }
    }

    pub fn fail(passed: u32, failed: u32, log: impl Into<String>) -> TestOutcome {
        TestOutcome {
            status: TestStatus::Fail,
            passed,
            failed,
            log: log.into(),
        }
    }

    /// Infrastructure fault: toolchain missing, protocol violation, and
    /// the like. Distinct from a test failure and never turned into a
    /// grade.
    pub fn runner_error(log: impl Into<String>) -> TestOutcome {
        TestOutcome {
            status: TestStatus::RunnerError,
            passed: 0,
            failed: 0,
            log: log.into(),
        }
    }
}

/// Executes a problem's test suite against a submission.
pub trait TestRunner: Send + Sync {
    fn run_tests(&self, problem: &Problem, submission: &Submission) -> TestOutcome;
}

/// Run the gate for one submission, enforcing the outcome invariants
/// (a missing suite locator or a `Pass` with failures is a runner fault).
pub fn run_unit_tests(
    submission: &Submission,
    problem: &Problem,
    runner: &dyn TestRunner,
) -> TestOutcome {
    if problem.test_suite_ref.is_none() {
        return TestOutcome::runner_error(format!(
            "problem `{}` has no test suite reference",
            problem.id
        ));
    }
    let outcome = runner.run_tests(problem, submission);
    if outcome.status == TestStatus::Pass && outcome.failed > 0 {
        return TestOutcome::runner_error(format!(
            "runner protocol violation: status pass with {} failed test(s)",
            outcome.failed
        ));
    }
    outcome
}

/// Scripted outcomes by submission id; unknown ids become runner errors.
#[derive(Default)]
pub struct ScriptedRunner {
    outcomes: std::collections::BTreeMap<String, TestOutcome>,
}

impl ScriptedRunner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_outcome(mut self, submission_id: &str, outcome: TestOutcome) -> Self {
        self.outcomes.insert(submission_id.to_string(), outcome);
        self
    }
}

impl TestRunner for ScriptedRunner {
    fn run_tests(&self, _problem: &Problem, submission: &Submission) -> TestOutcome {
        match self.outcomes.get(&submission.id) {
            Some(outcome) => outcome.clone(),
            None => TestOutcome::runner_error(format!(
                "no scripted outcome for submission `{}`",
                submission.id
            )),
        }
    }
}

static BLOCK_COMMENT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)/\*.*?\*/").expect("static regex"));
static LINE_COMMENT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"//[^\n]*").expect("static regex"));
static WHITESPACE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").expect("static regex"));

fn normalize_source(text: &str) -> String {
    let text = BLOCK_COMMENT_RE.replace_all(text, " ");
    let text = LINE_COMMENT_RE.replace_all(&text, " ");
    WHITESPACE_RE.replace_all(&text, " ").trim().to_string()
}

/// Mock test suite for synthetic corpora: equality with the reference
/// solution modulo comments and whitespace. Any injected syntax or logic
/// error fails it; cosmetic edits do not.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceDiffRunner;

impl TestRunner for ReferenceDiffRunner {
    fn run_tests(&self, problem: &Problem, submission: &Submission) -> TestOutcome {
        if normalize_source(&submission.source) == normalize_source(&problem.reference_solution) {
            TestOutcome::pass(1, "normalized source matches the reference solution")
        } else {
            TestOutcome::fail(
                0,
                1,
                "normalized source differs from the reference solution",
            )
        }
    }
}

static SUMMARY_LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^\s*tests:\s*passed=(\d+)\s+failed=(\d+)\s*$").expect("static regex")
});

const LOG_CAP_BYTES: usize = 16 * 1024;
pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_secs(30);

/// Spawns the configured command to run a problem's suite against a
/// submission.
///
/// The argv template is substituted per token: `{{workdir}}` (the sandbox
/// directory), `{{source}}` (absolute path of the submission source
/// written into the sandbox), and `{{tests}}` (the problem's
/// `test_suite_ref`, verbatim). Exit code 0 means all tests passed, 1
/// means some failed, anything else is a runner fault; pass/fail counts
/// come from the last `tests: passed=N failed=M` stdout line, which must
/// be present on exit codes 0 and 1. A submission that outlives the
/// wall-clock timeout is classified as failing (infinite loops are a
/// student bug, not an infrastructure fault), with the timeout recorded in
/// the log.
pub struct CommandRunner {
    argv_template: Vec<String>,
    timeout: Duration,
}

impl CommandRunner {
    pub fn new(argv_template: Vec<String>) -> Self {
        CommandRunner {
            argv_template,
            timeout: DEFAULT_TEST_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn source_file_name(problem: &Problem, submission: &Submission) -> String {
        let ext = match problem.language_tag.as_str() {
            "java" => "java",
            "python" | "py" => "py",
            other => {
                if other.chars().all(|c| c.is_ascii_alphanumeric()) && !other.is_empty() {
                    return format!("{}.{}", sanitize(&submission.id), other);
                }
                "txt"
            }
        };
        format!("{}.{ext}", sanitize(&submission.id))
    }
}

fn sanitize(id: &str) -> String {
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

fn truncate_log(mut text: String) -> String {
    if text.len() > LOG_CAP_BYTES {
        let mut cut = LOG_CAP_BYTES;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
        text.push_str("\n[log truncated]");
    }
    text
}

fn reader_thread<R: Read + Send + 'static>(mut reader: R) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = reader.read_to_end(&mut buf);
        buf
    })
}

impl TestRunner for CommandRunner {
    fn run_tests(&self, problem: &Problem, submission: &Submission) -> TestOutcome {
        if self.argv_template.is_empty() {
            return TestOutcome::runner_error("empty runner command template");
        }
        let workdir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(e) => return TestOutcome::runner_error(format!("cannot create sandbox dir: {e}")),
        };
        let source_path = workdir
            .path()
            .join(Self::source_file_name(problem, submission));
        if let Err(e) = std::fs::write(&source_path, &submission.source) {
            return TestOutcome::runner_error(format!("cannot write submission source: {e}"));
        }

        let tests_ref = problem.test_suite_ref.clone().unwrap_or_default();
        let argv: Vec<String> = self
            .argv_template
            .iter()
            .map(|token| {
                token
                    .replace("{{workdir}}", &workdir.path().display().to_string())
                    .replace("{{source}}", &source_path.display().to_string())
                    .replace("{{tests}}", &tests_ref)
            })
            .collect();

        let mut child = match Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(workdir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(child) => child,
            Err(e) => return TestOutcome::runner_error(format!("cannot spawn `{}`: {e}", argv[0])),
        };

        let stdout_handle = reader_thread(child.stdout.take().expect("stdout piped"));
        let stderr_handle = reader_thread(child.stderr.take().expect("stderr piped"));

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return TestOutcome::runner_error(format!("wait failed: {e}"));
                }
            }
        };

        let stdout =
            String::from_utf8_lossy(&stdout_handle.join().unwrap_or_default()).into_owned();
        let stderr =
            String::from_utf8_lossy(&stderr_handle.join().unwrap_or_default()).into_owned();
        let mut log = stdout.clone();
        if !stderr.trim().is_empty() {
            log.push_str("\nstderr:\n");
            log.push_str(&stderr);
        }

        let Some(status) = status else {
            return TestOutcome::fail(
                0,
                0,
                truncate_log(format!(
                    "wall-clock timeout after {}s; treating the run as failing\n{log}",
                    self.timeout.as_secs()
                )),
            );
        };

        let code = status.code();
        if !matches!(code, Some(0) | Some(1)) {
            return TestOutcome::runner_error(truncate_log(format!(
                "runner exited with {:?} (protocol allows 0 or 1)\n{log}",
                code
            )));
        }

        let Some(caps) = SUMMARY_LINE_RE.captures_iter(&stdout).last() else {
            return TestOutcome::runner_error(truncate_log(format!(
                "runner output is missing the `tests: passed=N failed=M` summary line\n{log}"
            )));
        };
        let passed: u32 = caps[1].parse().unwrap_or(u32::MAX);
        let failed: u32 = caps[2].parse().unwrap_or(u32::MAX);
        if passed == u32::MAX || failed == u32::MAX {
            return TestOutcome::runner_error(truncate_log(format!(
                "unparseable test counts in summary line\n{log}"
            )));
        }

        let log = truncate_log(log);
        if failed == 0 {
            TestOutcome::pass(passed, log)
        } else {
            TestOutcome::fail(passed, failed, log)
        }
    }
}
