//! Run configuration: a single JSON document, with a handful of global
//! flags layered on top (flags win). The auth token is the one thing that
//! never lives in the file; it comes from the environment variable named
//! in the endpoint config.

use anyhow::{anyhow, bail, Context, Result};
use gradepipe::corpus::QualityBand;
use gradepipe::gateway::{
    EndpointConfig, Gateway, HttpTransport, RetryPolicy, DEFAULT_MAX_IN_FLIGHT,
};
use gradepipe::graders::LlmStrategy;
use gradepipe::pipeline::{
    CommandRunner, ReferenceDiffRunner, ScriptedRunner, TestOutcome, TestRunner,
    DEFAULT_REVIEW_THRESHOLD, DEFAULT_TEST_TIMEOUT,
};
use gradepipe::rubric::{default_rubric, Rubric};
use gradepipe::synthgen::GenerationMode;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    /// Transcript store directory (record and replay modes).
    #[serde(default)]
    pub transcripts: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub request_budget: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunnerConfig {
    /// Compare against the reference solution (mock suite for synthetic
    /// corpora).
    ReferenceDiff,
    /// Spawn the given argv template; see docs/formats.md for the
    /// placeholders and the line protocol.
    Command {
        argv: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    /// Scripted outcomes; `pass` lists submission ids that pass, everything
    /// else fails. Intended for tests and demos.
    Scripted {
        #[serde(default)]
        pass: Vec<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default = "default_bands")]
    pub bands: Vec<QualityBand>,
    #[serde(default = "default_count")]
    pub count_per_cell: u32,
    #[serde(default = "default_mode")]
    pub mode: GenerationMode,
}

fn default_bands() -> Vec<QualityBand> {
    QualityBand::LABELLED.to_vec()
}

fn default_count() -> u32 {
    1
}

fn default_mode() -> GenerationMode {
    GenerationMode::Offline
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            bands: default_bands(),
            count_per_cell: default_count(),
            mode: default_mode(),
        }
    }
}

/// The config file. Every field has a default except `corpus`, which the
/// generate/grade/evaluate commands require.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub rubric: Option<PathBuf>,
    #[serde(default)]
    pub scale: Option<u32>,
    #[serde(default)]
    pub strategies: Option<Vec<LlmStrategy>>,
    #[serde(default)]
    pub gateway: Option<GatewayConfig>,
    #[serde(default)]
    pub runner: Option<RunnerConfig>,
    #[serde(default)]
    pub review_threshold: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub results: Option<Vec<PathBuf>>,
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub replay: Option<PathBuf>,
    pub replay_strict: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// The merged, validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    pub overrides: Overrides,
}

impl RunConfig {
    pub fn load(config_path: Option<&Path>, overrides: Overrides) -> Result<RunConfig> {
        let file = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("malformed config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let config = RunConfig { file, overrides };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if let Some(scale) = self.file.scale {
            if scale != 10 && scale != 100 {
                bail!("scale must be 10 or 100, got {scale}");
            }
        }
        if let Some(strategies) = &self.file.strategies {
            if strategies.is_empty() {
                bail!("strategies must be nonempty");
            }
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.file
            .corpus
            .as_deref()
            .ok_or_else(|| anyhow!("config is missing `corpus`"))
    }

    pub fn scale(&self) -> u32 {
        self.file.scale.unwrap_or(10)
    }

    pub fn seed(&self) -> u64 {
        self.overrides.seed.or(self.file.seed).unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.overrides
            .out
            .clone()
            .or_else(|| self.file.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn strategies(&self) -> Vec<LlmStrategy> {
        self.file
            .strategies
            .clone()
            .unwrap_or_else(|| vec![LlmStrategy::Direct, LlmStrategy::Reverse])
    }

    pub fn review_threshold(&self) -> f64 {
        self.file
            .review_threshold
            .unwrap_or(DEFAULT_REVIEW_THRESHOLD)
    }

    /// The grading rubric at the configured scale: the rubric file (or the
    /// stock rubric) expanded when the target scale is larger.
    pub fn rubric(&self) -> Result<Rubric> {
        let base = match &self.file.rubric {
            Some(path) => {
                Rubric::from_json_file(path).map_err(|e| anyhow!("cannot load rubric: {e}"))?
            }
            None => default_rubric(),
        };
        let target = f64::from(self.scale());
        let current = base.scale_total();
        if (current - target).abs() < 1e-9 {
            return Ok(base);
        }
        let factor = target / current;
        if factor.fract().abs() > 1e-9 || factor < 1.0 {
            bail!(
                "rubric scale {current} cannot be expanded to configured scale {target} \
                 (factor must be a positive integer)"
            );
        }
        Ok(base.expand_scale(factor as u32))
    }

    /// Build the completion gateway. `--replay PATH` forces replay mode
    /// from that store regardless of the file config.
    pub fn gateway(&self) -> Result<Gateway> {
        if let Some(dir) = &self.overrides.replay {
            let store = gradepipe::gateway::TranscriptStore::open(dir)
                .map_err(|e| anyhow!("cannot open transcript store: {e}"))?;
            return Ok(Gateway::replay(store));
        }
        let Some(config) = &self.file.gateway else {
            bail!("config is missing `gateway` (or pass --replay PATH)");
        };
        let store = |label: &str| -> Result<gradepipe::gateway::TranscriptStore> {
            let dir = config
                .transcripts
                .as_deref()
                .ok_or_else(|| anyhow!("gateway mode {label} needs `transcripts`"))?;
            gradepipe::gateway::TranscriptStore::open(dir)
                .map_err(|e| anyhow!("cannot open transcript store: {e}"))
        };
        let transport = || -> Result<HttpTransport> {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| anyhow!("live/record gateway needs `endpoint`"))?;
            Ok(HttpTransport::new(endpoint))
        };
        let mut gateway = match config.mode {
            GatewayMode::Replay => Gateway::replay(store("replay")?),
            GatewayMode::Record => Gateway::record(transport()?, store("record")?),
            GatewayMode::Live => Gateway::live(transport()?),
        };
        if let Some(retry) = config.retry {
            gateway = gateway
                .with_retry(retry)
                .map_err(|e| anyhow!("invalid retry policy: {e}"))?;
        }
        gateway =
            gateway.with_in_flight_limit(config.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT));
        if let Some(budget) = config.request_budget {
            gateway = gateway.with_request_budget(budget);
        }
        Ok(gateway)
    }

    pub fn runner(&self) -> Result<Box<dyn TestRunner>> {
        match self
            .file
            .runner
            .clone()
            .unwrap_or(RunnerConfig::ReferenceDiff)
        {
            RunnerConfig::ReferenceDiff => Ok(Box::new(ReferenceDiffRunner)),
            RunnerConfig::Command { argv, timeout_secs } => {
                if argv.is_empty() {
                    bail!("runner.argv must be nonempty");
                }
                let timeout = timeout_secs
                    .map(Duration::from_secs)
                    .unwrap_or(DEFAULT_TEST_TIMEOUT);
                Ok(Box::new(CommandRunner::new(argv).with_timeout(timeout)))
            }
            RunnerConfig::Scripted { pass } => {
                let mut runner = ScriptedRunner::new();
                let corpus = gradepipe::corpus::load_manifest(self.corpus_path()?)
                    .map_err(|e| anyhow!("cannot load corpus for scripted runner: {e}"))?;
                for submission in corpus.submissions() {
                    let outcome = if pass.contains(&submission.id) {
                        TestOutcome::pass(1, "scripted pass")
                    } else {
                        TestOutcome::fail(0, 1, "scripted fail")
                    };
                    runner = runner.with_outcome(&submission.id, outcome);
                }
                Ok(Box::new(runner))
            }
        }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        self.file.generate.clone().unwrap_or_default()
    }
}
