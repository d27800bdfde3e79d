//! Deterministic test doubles and fixture plumbing shared by the test
//! suites, the acceptance gate, and the benches.
//!
//! The centerpiece is a scripted model: responses are pure functions of
//! the transcript key (and rubric), so anything built on top of it
//! (in-memory gateways, synthesized transcript stores, whole fixture
//! corpora) is reproducible byte for byte.

use crate::corpus::{Corpus, QualityBand};
use crate::gateway::{
    CompletionGateway, GatewayError, ModelResponse, PromptKind, PromptRequest, ResponseSource,
    TranscriptEntry, TranscriptStore,
};
use crate::graders::{
    build_direct_prompt, build_repair_prompt, build_reverse_prompt, parse_direct_response,
    parse_reverse_response, LlmStrategy, ParseError,
};
use crate::rubric::Rubric;
use crate::synthgen::{generate_batch, GenerationMode};
use serde_json::json;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

/// Seed the checked-in fixtures were generated with.
pub const FIXTURE_SEED: u64 = 7;

/// `tests/fixtures` inside this crate, reachable from any workspace test.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The five-problem fixture manifest (problems only, no submissions).
pub fn fixture_problems() -> Corpus {
    crate::corpus::load_manifest(&fixtures_dir().join("problems"))
        .expect("fixture problems manifest loads")
}

/// The 15-submission fixture corpus: five problems × three bands,
/// generated offline with [`FIXTURE_SEED`].
pub fn fixture_corpus() -> Corpus {
    let problems = fixture_problems();
    let batch = generate_batch(
        problems.problems(),
        &QualityBand::LABELLED,
        1,
        GenerationMode::Offline,
        FIXTURE_SEED,
        None,
    )
    .expect("fixture generation succeeds");
    assert!(batch.failures.is_empty(), "fixture cells must all generate");
    batch.corpus
}

fn key_bytes(key: &str) -> Vec<u8> {
    let mut bytes: Vec<u8> = key
        .as_bytes()
        .chunks(2)
        .filter_map(|pair| std::str::from_utf8(pair).ok())
        .filter_map(|hex| u8::from_str_radix(hex, 16).ok())
        .collect();
    if bytes.is_empty() {
        bytes.push(0);
    }
    bytes
}

fn byte(bytes: &[u8], index: usize) -> u8 {
    bytes[index % bytes.len()]
}

/// The fenced source block inside a grading prompt (the first fence is
/// always the student code).
pub fn source_from_prompt(prompt: &str) -> Option<String> {
    let mut open = false;
    let mut content = String::new();
    for line in prompt.lines() {
        if line.trim_start().starts_with("```") {
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

/// Deterministic Direct reply: per-category scores derived from the
/// transcript key, quantized to twentieths of each cap. Roughly one in
/// five replies claims a total one point short, exercising the
/// total-mismatch reconciliation.
pub fn scripted_direct_response(request: &PromptRequest, rubric: &Rubric) -> String {
    let bytes = key_bytes(&request.transcript_key);
    let mut categories = Vec::new();
    let mut total = 0.0;
    for (i, category) in rubric.categories().iter().enumerate() {
        let step = f64::from(byte(&bytes, i) % 21);
        let score = category.max_points * step / 20.0;
        total += score;
        categories.push(json!({
            "name": category.name,
            "score": score,
            "rationale": format!("scripted rationale ({step}/20 of the cap)"),
        }));
    }
    let claimed = if byte(&bytes, 7).is_multiple_of(5) {
        (total - 1.0).max(0.0)
    } else {
        total
    };
    let body = json!({
        "categories": categories,
        "total": claimed,
        "summary": "scripted grading summary",
    });
    format!(
        "Scored each rubric category.\n\n```json\n{}\n```\n",
        serde_json::to_string_pretty(&body).expect("scripted body serializes")
    )
}

/// Deterministic Reverse reply: zero to three fixes with deductions in
/// tenths of each cap. Roughly one in seven replies claims a total 15% of
/// the scale away from the arithmetic, exercising the consistency flag.
pub fn scripted_reverse_response(request: &PromptRequest, rubric: &Rubric) -> String {
    let bytes = key_bytes(&request.transcript_key);
    let corrected =
        source_from_prompt(&request.text).unwrap_or_else(|| "// corrected program\n".to_string());
    let categories = rubric.categories();
    let fix_count = (byte(&bytes, 0) % 4) as usize;
    let mut fixes = Vec::new();
    let mut deductions = 0.0;
    for i in 0..fix_count {
        let category = &categories[byte(&bytes, i + 1) as usize % categories.len()];
        let step = f64::from(byte(&bytes, i + 4) % 11);
        let deduction = category.max_points * step / 10.0;
        deductions += deduction;
        let severity = if byte(&bytes, i + 8).is_multiple_of(2) {
            "minor"
        } else {
            "major"
        };
        fixes.push(json!({
            "description": format!("scripted fix {i}"),
            "category": category.name,
            "severity": severity,
            "deduction": deduction,
        }));
    }
    let computed = (rubric.scale_total() - deductions).clamp(0.0, rubric.scale_total());
    let claimed = if byte(&bytes, 9).is_multiple_of(7) {
        (computed - rubric.scale_total() * 0.15).max(0.0)
    } else {
        computed
    };
    let body = json!({
        "corrected_code": corrected,
        "fixes": fixes,
        "claimed_total": claimed,
        "reason": "scripted deduction reasoning",
    });
    format!(
        "Repaired the submission and graded it.\n\n```json\n{}\n```\n",
        serde_json::to_string_pretty(&body).expect("scripted body serializes")
    )
}

/// Deterministic generation reply: a tiny fenced program.
pub fn scripted_generate_response(request: &PromptRequest) -> String {
    let bytes = key_bytes(&request.transcript_key);
    format!(
        "```java\nclass Generated_{:02x}{:02x} {{\n    int variant() {{\n        return {};\n    }}\n}}\n```\n",
        byte(&bytes, 0),
        byte(&bytes, 1),
        byte(&bytes, 2) % 100
    )
}

/// A response for any prompt, valid per the matching contract.
pub fn scripted_response(request: &PromptRequest, rubric: &Rubric) -> String {
    match request.strategy {
        PromptKind::Direct => scripted_direct_response(request, rubric),
        PromptKind::Reverse => scripted_reverse_response(request, rubric),
        PromptKind::Generate => scripted_generate_response(request),
    }
}

/// In-memory gateway backed by the scripted model: deterministic, always
/// well-formed, no disk or network.
pub struct ScriptedGateway {
    rubric: Rubric,
}

impl ScriptedGateway {
    pub fn new(rubric: Rubric) -> Self {
        ScriptedGateway { rubric }
    }
}

impl CompletionGateway for ScriptedGateway {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        Ok(ModelResponse {
            text: scripted_response(request, &self.rubric),
            latency_ms: 0,
            attempt: 1,
            source: ResponseSource::Replay,
        })
    }
}

/// A reply with no structured block; parsers must reject it.
pub const MALFORMED_RESPONSE: &str =
    "The submission looks mostly reasonable, though the loop bound needs care.";

fn parse_error_for(strategy: LlmStrategy, text: &str, rubric: &Rubric) -> ParseError {
    match strategy {
        LlmStrategy::Direct => {
            parse_direct_response(text, rubric).expect_err("malformed fixture text must not parse")
        }
        LlmStrategy::Reverse => {
            parse_reverse_response(text, rubric).expect_err("malformed fixture text must not parse")
        }
    }
}

fn put(store: &TranscriptStore, request: &PromptRequest, response: String) {
    store
        .put(&TranscriptEntry {
            key: request.transcript_key.clone(),
            strategy: request.strategy,
            response,
        })
        .expect("fixture transcript writes succeed");
}

/// Write scripted transcripts for every (submission, strategy) pair in the
/// corpus. Keys whose third byte is divisible by six get a malformed first
/// reply plus a valid repair-round reply, so replayed runs exercise the
/// repair loop. Returns the number of entries written.
pub fn synthesize_transcripts(
    corpus: &Corpus,
    rubric: &Rubric,
    store: &TranscriptStore,
    strategies: &[LlmStrategy],
) -> usize {
    let mut written = 0;
    for submission in corpus.submissions() {
        for &strategy in strategies {
            let request = match strategy {
                LlmStrategy::Direct => build_direct_prompt(submission, rubric),
                LlmStrategy::Reverse => build_reverse_prompt(submission, rubric),
            };
            let malformed_first = byte(&key_bytes(&request.transcript_key), 2).is_multiple_of(6);
            if malformed_first {
                put(store, &request, MALFORMED_RESPONSE.to_string());
                let error = parse_error_for(strategy, MALFORMED_RESPONSE, rubric);
                let repair = build_repair_prompt(&request, &error, rubric);
                put(store, &repair, scripted_response(&repair, rubric));
                written += 2;
            } else {
                put(store, &request, scripted_response(&request, rubric));
                written += 1;
            }
        }
    }
    written
}

/// Overwrite one submission's transcripts with malformed replies for the
/// initial prompt and both repair rounds, so grading it fails with a parse
/// error even after all repairs.
pub fn poison_transcripts(
    store: &TranscriptStore,
    submission: &crate::corpus::Submission,
    rubric: &Rubric,
    strategies: &[LlmStrategy],
) {
    for &strategy in strategies {
        let mut request = match strategy {
            LlmStrategy::Direct => build_direct_prompt(submission, rubric),
            LlmStrategy::Reverse => build_reverse_prompt(submission, rubric),
        };
        for _ in 0..3 {
            put(store, &request, MALFORMED_RESPONSE.to_string());
            let error = parse_error_for(strategy, MALFORMED_RESPONSE, rubric);
            request = build_repair_prompt(&request, &error, rubric);
        }
    }
}

// --- scripted HTTP endpoint ----------------------------------------------

/// Minimal scripted HTTP/1.1 server for transport tests: serves the given
/// `(status, body)` script in order and records request bodies.
pub struct StubServer {
    addr: SocketAddr,
    bodies: Arc<Mutex<Vec<String>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<(u16, String)>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().expect("stub server address");
        let bodies: Arc<Mutex<Vec<String>>> = Arc::default();
        let shutdown: Arc<AtomicBool> = Arc::default();
        let script = Arc::new(Mutex::new(std::collections::VecDeque::from(script)));

        let bodies_in = bodies.clone();
        let shutdown_in = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown_in.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (status, body) = script
                    .lock()
                    .unwrap()
                    .pop_front()
                    .unwrap_or((500, "stub script exhausted".to_string()));
                if let Some(request_body) = Self::handle(stream, status, &body) {
                    bodies_in.lock().unwrap().push(request_body);
                }
            }
        });

        StubServer {
            addr,
            bodies,
            shutdown,
            handle: Some(handle),
        }
    }

    fn handle(mut stream: TcpStream, status: u16, body: &str) -> Option<String> {
        use std::io::{Read, Write};
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        let header_end = loop {
            match stream.read(&mut chunk) {
                Ok(0) => return None,
                Ok(n) => {
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = find_header_end(&buf) {
                        break pos;
                    }
                    if buf.len() > 1 << 20 {
                        return None;
                    }
                }
                Err(_) => return None,
            }
        };
        let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
        let content_length = headers
            .lines()
            .find_map(|line| {
                let (name, value) = line.split_once(':')?;
                name.trim()
                    .eq_ignore_ascii_case("content-length")
                    .then(|| value.trim().parse::<usize>().ok())?
            })
            .unwrap_or(0);
        let mut request_body = buf[header_end + 4..].to_vec();
        while request_body.len() < content_length {
            match stream.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => request_body.extend_from_slice(&chunk[..n]),
                Err(_) => break,
            }
        }
        let response = format!(
            "HTTP/1.1 {status} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let _ = stream.write_all(response.as_bytes());
        Some(String::from_utf8_lossy(&request_body).to_string())
    }

    /// Endpoint URL to point a transport at.
    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Request bodies received so far, in arrival order.
    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().unwrap().clone()
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Poke the listener so the accept loop observes the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
