//! Experiment configuration: a TOML-backed schema with defaults, validation,
//! and dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{DecodingParams, GatewayMode, RetryPolicy};
use crate::label::{LabelSpace, LabelSpaceError};
use crate::promptgen::{PromptError, PromptMode, PromptTemplate};

/// Error raised while loading, overriding, or validating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// Reading the configuration file failed.
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    /// The file is not valid TOML or does not match the schema.
    #[error("failed to parse config: {0}")]
    Parse(String),
    /// An override referenced a key that is not part of the documented schema.
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    /// An override was not of the form `key=value`.
    #[error("malformed override `{arg}`; expected key=value")]
    MalformedOverride { arg: String },
    /// The configuration is structurally valid but semantically inconsistent.
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
}

/// Full description of one experiment: corpus, prompting, provider, gateway,
/// scoring, and output settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Path to the corpus JSONL file.
    pub corpus_path: String,
    /// Path to a label-space JSON file; empty string selects the built-in
    /// four-emotion space.
    pub label_space_path: String,
    /// Prompting mode: `zero_shot` or `few_shot`.
    pub mode: PromptMode,
    /// Include the textualized speech-feature segment for the target.
    pub include_speech: bool,
    /// Context window sizes to sweep, in utterances of preceding dialogue.
    pub context_windows: Vec<usize>,
    /// Number of few-shot examples when the corpus has no dialogue structure.
    pub shots: usize,
    /// Draw few-shot examples from before the context window instead of
    /// reusing the window utterances themselves.
    pub disjoint_examples: bool,
    /// Scene-setting sentence placed at the top of every prompt.
    pub background_text: String,
    /// Path to a prompt template TOML; empty string selects the built-in one.
    pub template_path: String,
    /// Provider identifier; `mock` routes requests to the scripted transport.
    pub provider_id: String,
    /// Model identifier substituted into the endpoint template.
    pub model_id: String,
    /// Endpoint URL template containing a `{model}` placeholder.
    pub endpoint: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is read from the environment and is never written to disk or logs.
    pub api_key_env: String,
    /// Sampling parameters sent with every request.
    pub decoding: DecodingParams,
    /// Gateway mode: `live`, `record`, `replay`, or `mock`.
    pub gateway_mode: GatewayMode,
    /// Path of the append-only response cache used by record/replay modes.
    pub cache_path: String,
    /// Retry policy for transient provider failures.
    pub retry: RetryPolicy,
    /// Maximum sustained request rate against network transports; zero or
    /// negative disables rate limiting.
    pub rate_limit_rps: f64,
    /// Per-request timeout in seconds for network transports.
    pub request_timeout_secs: u64,
    /// Root seed for all stochastic choices (sampling, example selection).
    pub seed: u64,
    /// Optional weighted subsample size; zero runs the full corpus.
    pub sample: usize,
    /// Minimum members for a standalone entropy stratum; smaller groups pool
    /// into a `minor` bucket.
    pub min_stratum_count: usize,
    /// Tolerance on the raw probability sum before a response is rejected.
    pub parse_epsilon: f64,
    /// Worker threads used to process utterances within one sweep point.
    pub workers: usize,
    /// Number of equal-width confidence bins for calibration error.
    pub ece_bins: usize,
    /// Directory under which run directories are created.
    pub out_dir: String,
    /// Path to a mock-transport script JSON file; empty string means none.
    pub mock_script_path: String,
    /// Fail on unscripted mock requests instead of synthesizing a response.
    pub mock_strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_path: String::new(),
            label_space_path: String::new(),
            mode: PromptMode::ZeroShot,
            include_speech: false,
            context_windows: vec![0, 1, 3, 5, 10, 20, 30],
            shots: 5,
            disjoint_examples: false,
            background_text: "Two speakers are talking.".to_string(),
            template_path: String::new(),
            provider_id: "mock".to_string(),
            model_id: "mock-model".to_string(),
            endpoint:
                "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent"
                    .to_string(),
            api_key_env: "EMODIST_API_KEY".to_string(),
            decoding: DecodingParams::default(),
            gateway_mode: GatewayMode::Mock,
            cache_path: "cache.jsonl".to_string(),
            retry: RetryPolicy::default(),
            rate_limit_rps: 1.0,
            request_timeout_secs: 60,
            seed: 7,
            sample: 0,
            min_stratum_count: 100,
            parse_epsilon: 0.05,
            workers: 4,
            ece_bins: 10,
            out_dir: "runs".to_string(),
            mock_script_path: String::new(),
            mock_strict: false,
        }
    }
}

/// Documented configuration keys with one-line descriptions; `--help` and the
/// override mechanism both treat this table as the authoritative schema.
pub const CONFIG_DOCS: &[(&str, &str)] = &[
    ("corpus_path", "path to the corpus JSONL file"),
    (
        "label_space_path",
        "label-space JSON path; empty = built-in four emotions",
    ),
    ("mode", "prompting mode: zero_shot or few_shot"),
    (
        "include_speech",
        "include the textualized speech-feature segment",
    ),
    (
        "context_windows",
        "context window sizes to sweep, e.g. [0, 3, 5]",
    ),
    (
        "shots",
        "few-shot example count for corpora without dialogues",
    ),
    (
        "disjoint_examples",
        "draw examples from before the context window",
    ),
    (
        "background_text",
        "scene-setting sentence at the top of every prompt",
    ),
    (
        "template_path",
        "prompt template TOML path; empty = built-in",
    ),
    (
        "provider_id",
        "provider identifier; `mock` uses the scripted transport",
    ),
    ("model_id", "model identifier substituted into the endpoint"),
    (
        "endpoint",
        "endpoint URL template with a {model} placeholder",
    ),
    ("api_key_env", "environment variable that holds the API key"),
    (
        "decoding.temperature",
        "sampling temperature sent with every request",
    ),
    (
        "decoding.top_p",
        "nucleus sampling cutoff sent with every request",
    ),
    (
        "decoding.max_output_tokens",
        "response length cap sent with every request",
    ),
    (
        "gateway_mode",
        "gateway mode: live, record, replay, or mock",
    ),
    (
        "cache_path",
        "append-only response cache used by record/replay",
    ),
    (
        "retry.base_delay_ms",
        "initial backoff delay in milliseconds",
    ),
    (
        "retry.factor",
        "multiplicative backoff factor between attempts",
    ),
    ("retry.max_attempts", "maximum attempts per request"),
    ("retry.jitter", "randomize each backoff delay by 0.5x-1.5x"),
    (
        "rate_limit_rps",
        "request rate cap for network transports; <=0 disables",
    ),
    (
        "request_timeout_secs",
        "per-request timeout for network transports",
    ),
    ("seed", "root seed for sampling and example selection"),
    ("sample", "weighted subsample size; 0 runs the full corpus"),
    (
        "min_stratum_count",
        "minimum members for a standalone entropy stratum",
    ),
    ("parse_epsilon", "tolerance on the raw probability sum"),
    ("workers", "worker threads per sweep point"),
    (
        "ece_bins",
        "equal-width confidence bins for calibration error",
    ),
    (
        "out_dir",
        "directory under which run directories are created",
    ),
    (
        "mock_script_path",
        "mock-transport script JSON path; empty = none",
    ),
    ("mock_strict", "fail on unscripted mock requests"),
];

impl ExperimentConfig {
    /// Loads a configuration from a TOML file and validates it.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Parses a configuration from TOML text and validates it.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Serializes the configuration as TOML for the run-directory snapshot.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Applies `key=value` overrides on top of this configuration.
    ///
    /// Keys are dotted paths from [`CONFIG_DOCS`]; values are parsed as TOML
    /// and fall back to plain strings, so `model_id=gemini-2.0` works without
    /// quoting.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree =
            toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for arg in overrides {
            let (key, raw) = arg
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedOverride { arg: arg.clone() })?;
            let key = key.trim();
            if !CONFIG_DOCS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                });
            }
            set_dotted(&mut tree, key, parse_override_value(raw));
        }
        let config: ExperimentConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks cross-field consistency; called by every loading path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.context_windows.is_empty() {
            return Err(invalid("context_windows must list at least one window"));
        }
        if self.context_windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "context_windows must be strictly increasing without duplicates",
            ));
        }
        if self.mode == PromptMode::FewShot && self.shots == 0 {
            return Err(invalid("few_shot mode requires shots >= 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.ece_bins == 0 {
            return Err(invalid("ece_bins must be at least 1"));
        }
        if self.parse_epsilon.is_nan() || self.parse_epsilon < 0.0 {
            return Err(invalid("parse_epsilon must be non-negative"));
        }
        if self.retry.max_attempts == 0 {
            return Err(invalid("retry.max_attempts must be at least 1"));
        }
        if matches!(self.gateway_mode, GatewayMode::Record | GatewayMode::Replay)
            && self.cache_path.is_empty()
        {
            return Err(invalid("record/replay modes require cache_path"));
        }
        if self.provider_id == "mock" && self.gateway_mode == GatewayMode::Live {
            return Err(invalid(
                "gateway_mode = live requires a network provider, not `mock`",
            ));
        }
        Ok(())
    }

    /// Loads the configured label space, or the built-in four-emotion one.
    pub fn resolve_label_space(&self) -> Result<LabelSpace, LabelSpaceError> {
        if self.label_space_path.is_empty() {
            Ok(LabelSpace::basic_four())
        } else {
            LabelSpace::from_file(&self.label_space_path)
        }
    }

    /// Loads the configured prompt template, or the built-in one.
    pub fn resolve_template(&self) -> Result<PromptTemplate, PromptError> {
        if self.template_path.is_empty() {
            Ok(PromptTemplate::builtin())
        } else {
            PromptTemplate::from_file(&self.template_path)
        }
    }

    /// Renders the documented key table for command-line help output.
    pub fn key_reference() -> String {
        let width = CONFIG_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::from("Configuration keys (config file or --set key=value):\n");
        for (key, doc) in CONFIG_DOCS {
            out.push_str(&format!("  {key:width$}  {doc}\n"));
        }
        out
    }
}

fn invalid(reason: &str) -> ConfigError {
    ConfigError::Invalid {
        reason: reason.to_string(),
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {}", raw.trim());
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut table) => table.remove("v").expect("wrapped key present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    }
}

/// Sets a dotted-path key in a TOML table, creating intermediate tables.
fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts = key.split('.').peekable();
    let mut node = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            node.insert(part.to_string(), value);
            return;
        }
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("intermediate config nodes are tables");
    }
}
