//! Config-driven orchestration: iterate a corpus, build prompts, query the
//! gateway, parse, and score; sweep context windows; persist everything
//! needed to re-derive any reported number.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{Corpus, CorpusError, Utterance};
use crate::distribution::EmotionDistribution;
use crate::gateway::{
    Cache, Gateway, GatewayError, GatewayMode, HttpTransport, MockTransport, ProviderRequest,
    RequestTag, Transport,
};
use crate::label::{LabelSpace, LabelSpaceError};
use crate::metrics::ScoredUtterance;
use crate::parser::parse_with_epsilon;
use crate::promptgen::{
    assemble_prompt, select_examples, textualize_speech, FewShotExample, PromptError, PromptMode,
    PromptSpec, PromptTemplate,
};
use crate::report::{self, MetricReport, PointSummary, ReportError, RunRecord};

/// Error that aborts a run before or between sweep points. Per-utterance
/// problems never surface here; they are recorded in [`RunRecord`]s.
#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("failed to load mock script {path}: {reason}")]
    Script { path: String, reason: String },
}

/// A sweep's full output: the report plus the records backing every number.
#[derive(Debug)]
pub struct SweepOutcome {
    pub report: MetricReport,
    /// One record set per sweep point, parallel to `report.points`.
    pub records_by_window: Vec<Vec<RunRecord>>,
}

/// Loads a mock-transport script: a JSON object mapping lookup keys
/// (`utterance_id@window`, `utterance_id`, or cache key) to raw responses.
pub fn load_mock_script(path: &str) -> Result<HashMap<String, String>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::Script {
        path: path.to_string(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Script {
        path: path.to_string(),
        reason: e.to_string(),
    })
}

/// Builds the transport selected by the config: `mock` routes to the
/// scripted in-process transport, anything else to HTTP.
pub fn build_transport(
    config: &ExperimentConfig,
    space: &LabelSpace,
) -> Result<Box<dyn Transport>, RunnerError> {
    if config.provider_id == "mock" {
        let script = if config.mock_script_path.is_empty() {
            HashMap::new()
        } else {
            load_mock_script(&config.mock_script_path)?
        };
        Ok(Box::new(MockTransport::scripted(
            space.clone(),
            script,
            config.mock_strict,
        )))
    } else {
        Ok(Box::new(HttpTransport::new(
            config.endpoint.clone(),
            &config.api_key_env,
            Duration::from_secs(config.request_timeout_secs),
        )?))
    }
}

/// One configured experiment, ready to run sweep points.
pub struct Runner {
    config: ExperimentConfig,
    corpus: Corpus,
    space: LabelSpace,
    template: PromptTemplate,
    gateway: Gateway,
    /// Gold distribution per corpus index, validated at construction.
    golds: Vec<EmotionDistribution>,
}

impl Runner {
    /// Builds the runner with the transport implied by the config.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self, RunnerError> {
        let space = config.resolve_label_space()?;
        let transport = build_transport(config, &space)?;
        Self::with_transport(config, transport)
    }

    /// Builds the runner around an externally supplied transport (used by
    /// tests to count or fault-inject provider calls).
    pub fn with_transport(
        config: &ExperimentConfig,
        transport: Box<dyn Transport>,
    ) -> Result<Self, RunnerError> {
        config.validate()?;
        let space = config.resolve_label_space()?;
        let template = config.resolve_template()?;
        let mut corpus = Corpus::load(&config.corpus_path, space.clone())?.filter_by_label_space();
        if config.sample > 0 && config.sample < corpus.len() {
            corpus = corpus.sample_log_inverse_frequency(config.sample, config.seed)?;
        }
        let golds = corpus
            .utterances()
            .iter()
            .map(|u| corpus.gold(&u.utterance_id))
            .collect::<Result<Vec<_>, _>>()?;
        let cache = match config.gateway_mode {
            GatewayMode::Record | GatewayMode::Replay => {
                Some(Cache::open(&config.cache_path).map_err(GatewayError::from)?)
            }
            GatewayMode::Live | GatewayMode::Mock => None,
        };
        let gateway = Gateway::new(
            config.gateway_mode,
            transport,
            cache,
            config.retry,
            config.rate_limit_rps,
        )?;
        Ok(Self {
            config: config.clone(),
            corpus,
            space,
            template,
            gateway,
            golds,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    /// Runs one sweep point over the whole corpus with the configured worker
    /// pool. Records come back in corpus order regardless of completion
    /// order; per-utterance failures are recorded, never fatal.
    pub fn run_point(
        &self,
        window_m: usize,
    ) -> Result<(Vec<RunRecord>, PointSummary), RunnerError> {
        let records = self.run_point_records(window_m);
        let summary = report::summarize_point(
            &records,
            &self.space,
            window_m,
            self.config.min_stratum_count,
            self.config.ece_bins,
        )?;
        Ok((records, summary))
    }

    /// Runs every configured sweep point and assembles the report.
    pub fn run_sweep(&self) -> Result<SweepOutcome, RunnerError> {
        let mut records_by_window = Vec::new();
        for &m in &self.config.context_windows {
            records_by_window.push(self.run_point_records(m));
        }
        let report = report::build_report(&self.config, &self.space, &records_by_window)?;
        Ok(SweepOutcome {
            report,
            records_by_window,
        })
    }

    fn run_point_records(&self, window_m: usize) -> Vec<RunRecord> {
        let n = self.corpus.len();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, RunRecord)>> = Mutex::new(Vec::with_capacity(n));
        let workers = self.config.workers.min(n.max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let record = self.process_utterance(i, window_m);
                    results
                        .lock()
                        .expect("worker poisoned results")
                        .push((i, record));
                });
            }
        });
        let mut pairs = results.into_inner().expect("workers joined");
        pairs.sort_by_key(|&(i, _)| i);
        pairs.into_iter().map(|(_, r)| r).collect()
    }

    /// Seed for example sampling: stable per utterance, independent of
    /// corpus order and worker scheduling.
    fn example_seed(&self, utterance_id: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(utterance_id.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        self.config.seed ^ u64::from_le_bytes(bytes)
    }

    fn prompt_spec(&self, window_m: usize, mode: PromptMode, shots: usize) -> PromptSpec {
        PromptSpec {
            mode,
            context_m: window_m,
            include_speech: self.config.include_speech,
            shots: match mode {
                PromptMode::ZeroShot => 0,
                PromptMode::FewShot => shots,
            },
            background_text: self.config.background_text.clone(),
            disjoint_examples: self.config.disjoint_examples,
            label_space: self.space.clone(),
            template: self.template.clone(),
        }
    }

    /// A record with gold-side fields filled and everything else empty;
    /// every exit path of `process_utterance` completes and seals it.
    fn base_record(&self, idx: usize, window_m: usize) -> RunRecord {
        let utt = &self.corpus.utterances()[idx];
        let gold = self.golds[idx].clone();
        let scored = ScoredUtterance::new(utt.utterance_id.clone(), gold.clone(), None)
            .expect("gold-only scoring cannot mismatch spaces");
        RunRecord {
            utterance_id: utt.utterance_id.clone(),
            window_m,
            prompt_sha256: String::new(),
            cache_key: String::new(),
            from_cache: false,
            attempt_count: 0,
            examples_used: 0,
            examples_degenerate: false,
            gold,
            predicted: None,
            raw_sum: 0.0,
            repairs: Vec::new(),
            parse_failure: None,
            skipped_reason: None,
            gold_entropy: scored.gold_entropy,
            majority_gold: scored.majority_gold,
            majority_pred: None,
            pred_tie_broken: false,
            js_divergence: None,
            bhattacharyya: None,
            confidence: None,
            majority_correct: None,
            digest: String::new(),
        }
    }

    fn process_utterance(&self, idx: usize, window_m: usize) -> RunRecord {
        let utt = &self.corpus.utterances()[idx];
        let mut record = self.base_record(idx, window_m);

        let skip = |mut record: RunRecord, reason: String| {
            record.skipped_reason = Some(reason);
            record.seal()
        };

        // Target speech segment (context and example utterances never carry one).
        let speech_text = if self.config.include_speech {
            match &utt.speech_features {
                None => return skip(record, "speech features missing".into()),
                Some(f) => match textualize_speech(&f.names, &f.values, &self.template) {
                    Ok(t) => Some(t),
                    Err(e) => return skip(record, format!("speech features invalid: {e}")),
                },
            }
        } else {
            None
        };

        let context = match self.corpus.context_window(&utt.utterance_id, window_m) {
            Ok(c) => c,
            Err(e) => return skip(record, format!("context window failed: {e}")),
        };

        // Few-shot examples; an utterance with nothing to draw from falls
        // back to a zero-shot prompt and is flagged, not skipped.
        let mut mode = self.config.mode;
        let mut examples: Vec<FewShotExample> = Vec::new();
        if mode == PromptMode::FewShot {
            let selection_spec = self.prompt_spec(window_m, mode, self.config.shots);
            match select_examples(
                &self.corpus,
                &utt.utterance_id,
                &selection_spec,
                self.example_seed(&utt.utterance_id),
            ) {
                Ok(ex) if ex.is_empty() => {
                    mode = PromptMode::ZeroShot;
                    record.examples_degenerate = true;
                }
                Ok(ex) => examples = ex,
                Err(PromptError::NoCandidates) => {
                    mode = PromptMode::ZeroShot;
                    record.examples_degenerate = true;
                }
                Err(e) => return skip(record, format!("example selection failed: {e}")),
            }
        }
        record.examples_used = examples.len();

        let spec = self.prompt_spec(window_m, mode, examples.len());
        let prompt = match assemble_prompt(&spec, utt, &context, &examples, speech_text.as_deref())
        {
            Ok(p) => p,
            Err(e) => return skip(record, format!("prompt assembly failed: {e}")),
        };
        record.prompt_sha256 = hex::encode(Sha256::digest(prompt.full_text.as_bytes()));

        let request = ProviderRequest {
            provider_id: self.config.provider_id.clone(),
            model_id: self.config.model_id.clone(),
            prompt_text: prompt.full_text,
            decoding: self.config.decoding,
            tag: Some(RequestTag {
                utterance_id: utt.utterance_id.clone(),
                window_m,
            }),
        };
        record.cache_key = request.cache_key();

        let exchange = match self.gateway.send(&request) {
            Ok(x) => x,
            Err(e) => return skip(record, format!("provider error: {e}")),
        };
        record.from_cache = exchange.from_cache;
        record.attempt_count = exchange.attempt_count;

        let outcome = parse_with_epsilon(
            &exchange.raw_response,
            &self.space,
            self.config.parse_epsilon,
        );
        record.raw_sum = outcome.raw_sum;
        record.repairs = outcome.repairs;
        record.parse_failure = outcome.failure;

        let scored = ScoredUtterance::new(
            utt.utterance_id.clone(),
            record.gold.clone(),
            outcome.distribution,
        )
        .expect("parser output is over the corpus label space");
        record.predicted = scored.predicted.clone();
        record.majority_pred = scored.majority_pred.clone();
        record.pred_tie_broken = scored.pred_tie_broken;
        record.js_divergence = scored.js();
        record.bhattacharyya = scored.bc();
        record.confidence = scored.confidence();
        record.majority_correct = scored.correct();
        record.seal()
    }
}

/// Runs the configured sweep, writes the run directory, and self-audits the
/// emitted report against its own records.
pub fn execute_sweep(
    config: &ExperimentConfig,
    run_dir: &Path,
) -> Result<MetricReport, RunnerError> {
    let runner = Runner::from_config(config)?;
    let outcome = runner.run_sweep()?;
    report::emit_run_dir(run_dir, &outcome.report, &outcome.records_by_window)?;
    report::self_audit(&outcome.report, &outcome.records_by_window)?;
    Ok(outcome.report)
}

/// Corpus-derived diagnostics for the `validate` subcommand.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CorpusDiagnostics {
    pub utterances: usize,
    pub dialogues: usize,
    /// Gold-supported label counts in label-space order.
    pub label_histogram: Vec<(String, usize)>,
    /// Fraction of utterances where any annotator chose multiple labels.
    pub multi_label_fraction: f64,
    /// Gold-entropy histogram keyed like entropy strata.
    pub entropy_histogram: Vec<(String, usize)>,
    pub with_speech_features: usize,
}

/// Summarizes a loaded corpus for validation output.
pub fn corpus_diagnostics(corpus: &Corpus) -> Result<CorpusDiagnostics, CorpusError> {
    let space = corpus.label_space();
    let mut label_counts: Vec<(String, usize)> =
        space.labels().map(|l| (l.to_string(), 0)).collect();
    let mut entropy_counts: std::collections::BTreeMap<String, usize> =
        std::collections::BTreeMap::new();
    let mut multi = 0usize;
    let mut with_speech = 0usize;
    for utt in corpus.utterances() {
        let gold = corpus.gold(&utt.utterance_id)?;
        for (i, (_, p)) in gold.entries().iter().enumerate() {
            if *p > 0.0 {
                label_counts[i].1 += 1;
            }
        }
        let entropy = crate::metrics::shannon_entropy(&gold);
        *entropy_counts
            .entry(crate::metrics::entropy_key(entropy))
            .or_default() += 1;
        if utt.annotations.iter().any(|a| a.labels.len() > 1) {
            multi += 1;
        }
        if utt.speech_features.is_some() {
            with_speech += 1;
        }
    }
    let n = corpus.len();
    Ok(CorpusDiagnostics {
        utterances: n,
        dialogues: corpus.dialogues().len(),
        label_histogram: label_counts,
        multi_label_fraction: if n == 0 { 0.0 } else { multi as f64 / n as f64 },
        entropy_histogram: entropy_counts.into_iter().collect(),
        with_speech_features: with_speech,
    })
}

/// The utterance type re-exported for integration tests building corpora.
pub type CorpusUtterance = Utterance;
