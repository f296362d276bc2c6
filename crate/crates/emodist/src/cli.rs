//! Command-line surface: corpus validation, runs, sweeps, report
//! re-emission, and cache inspection.
//!
//! Exit codes: 0 success, 2 invalid input (config, corpus, overrides,
//! tampered records), 1 internal or provider failure. User errors print an
//! actionable message, never a stack trace.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{scan_jsonl_errors, Corpus};
use crate::gateway::{cache_key, Cache};
use crate::report::{self, MetricReport, ReportError};
use crate::runner::{self, corpus_diagnostics, RunnerError};

/// Exit code for invalid user input (bad config, corpus, or records).
pub const EXIT_USER: i32 = 2;
/// Exit code for internal or provider failures.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "emodist",
    version,
    about = "Evaluate LLM emotion-distribution predictions against multi-annotator gold labels",
    after_long_help = ExperimentConfig::key_reference()
)]
pub struct Cli {
    /// Path to a TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a documented config key (repeatable), e.g. --set workers=8.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus file and print structural diagnostics.
    Validate {
        /// Corpus JSONL path; defaults to the config's corpus_path.
        #[arg(long, value_name = "PATH")]
        corpus: Option<String>,
        /// Label-space JSON path; defaults to the config's label_space_path.
        #[arg(long, value_name = "PATH")]
        label_space: Option<String>,
    },
    /// Execute a single sweep point at one context-window size.
    Run {
        /// Context window size for this point.
        #[arg(long, value_name = "M")]
        window: usize,
        /// Run directory; defaults to a timestamped directory under out_dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Execute the configured context-window sweep.
    Sweep {
        /// Run directory; defaults to a timestamped directory under out_dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Re-emit a run directory's derived files from its persisted records.
    Report {
        /// Run directory containing config.toml and records/.
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
    /// Inspect the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    /// List cached entries.
    List {
        /// Cache file path; defaults to the config's cache_path.
        #[arg(long, value_name = "PATH")]
        path: Option<String>,
    },
    /// Recompute every entry's content address and compare with its key.
    Verify {
        /// Cache file path; defaults to the config's cache_path.
        #[arg(long, value_name = "PATH")]
        path: Option<String>,
    },
}

/// Runs a parsed invocation to completion and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliFailure { message, code }) => {
            eprintln!("error: {message}");
            code
        }
    }
}

struct CliFailure {
    message: String,
    code: i32,
}

fn user(message: impl Into<String>) -> CliFailure {
    CliFailure {
        message: message.into(),
        code: EXIT_USER,
    }
}

fn internal(message: impl Into<String>) -> CliFailure {
    CliFailure {
        message: message.into(),
        code: EXIT_INTERNAL,
    }
}

impl From<ConfigError> for CliFailure {
    fn from(e: ConfigError) -> Self {
        user(e.to_string())
    }
}

impl From<RunnerError> for CliFailure {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Config(_)
            | RunnerError::Corpus(_)
            | RunnerError::LabelSpace(_)
            | RunnerError::Prompt(_)
            | RunnerError::Script { .. } => user(e.to_string()),
            RunnerError::Report(ref r) => report_failure_code(r, e.to_string()),
            RunnerError::Gateway(_) => internal(e.to_string()),
        }
    }
}

impl From<ReportError> for CliFailure {
    fn from(e: ReportError) -> Self {
        let message = e.to_string();
        report_failure_code(&e, message)
    }
}

fn report_failure_code(e: &ReportError, message: String) -> CliFailure {
    match e {
        ReportError::Audit(_) | ReportError::BadRecord { .. } => internal(message),
        _ => user(message),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliFailure> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Validate {
            corpus,
            label_space,
        } => validate(&config, corpus, label_space),
        Command::Run { window, out } => {
            let mut config = config;
            config.context_windows = vec![window];
            config.validate()?;
            execute(&config, out)
        }
        Command::Sweep { out } => execute(&config, out),
        Command::Report { dir } => reemit(&dir),
        Command::Cache { action } => match action {
            CacheAction::List { path } => cache_list(&config, path),
            CacheAction::Verify { path } => cache_verify(&config, path),
        },
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliFailure> {
    let base = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.with_overrides(overrides)?)
}

fn validate(
    config: &ExperimentConfig,
    corpus: Option<String>,
    label_space: Option<String>,
) -> Result<(), CliFailure> {
    let corpus_path = corpus.unwrap_or_else(|| config.corpus_path.clone());
    if corpus_path.is_empty() {
        return Err(user("no corpus given; pass --corpus or set corpus_path"));
    }
    let mut space_config = config.clone();
    if let Some(path) = label_space {
        space_config.label_space_path = path;
    }
    let space = space_config
        .resolve_label_space()
        .map_err(|e| user(e.to_string()))?;

    let text =
        std::fs::read_to_string(&corpus_path).map_err(|e| user(format!("{corpus_path}: {e}")))?;
    let mut errors: Vec<String> = scan_jsonl_errors(&text, 20)
        .into_iter()
        .map(|e| e.to_string())
        .collect();
    if errors.is_empty() {
        match Corpus::from_jsonl(&text, space) {
            Err(e) => errors.push(e.to_string()),
            Ok(corpus) => {
                for utt in corpus.utterances() {
                    if errors.len() >= 20 {
                        break;
                    }
                    if let Err(e) = corpus.gold(&utt.utterance_id) {
                        errors.push(format!("utterance `{}`: {e}", utt.utterance_id));
                    }
                }
                if errors.is_empty() {
                    let diag = corpus_diagnostics(&corpus).map_err(|e| user(e.to_string()))?;
                    print_diagnostics(&diag);
                    return Ok(());
                }
            }
        }
    }
    Err(user(format!(
        "corpus failed validation with {} error(s):\n  {}",
        errors.len(),
        errors.join("\n  ")
    )))
}

fn print_diagnostics(diag: &runner::CorpusDiagnostics) {
    println!(
        "{} utterances, {} dialogues",
        diag.utterances, diag.dialogues
    );
    let labels: Vec<String> = diag
        .label_histogram
        .iter()
        .map(|(l, n)| format!("{l}={n}"))
        .collect();
    println!("label support: {}", labels.join(", "));
    println!("multi-label fraction: {:.2}", diag.multi_label_fraction);
    let entropy: Vec<String> = diag
        .entropy_histogram
        .iter()
        .map(|(k, n)| format!("{k}={n}"))
        .collect();
    println!("entropy histogram: {}", entropy.join(", "));
    println!(
        "speech features: {}/{}",
        diag.with_speech_features, diag.utterances
    );
}

fn execute(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), CliFailure> {
    let run_dir = match out {
        Some(dir) => dir,
        None => fresh_run_dir(Path::new(&config.out_dir))?,
    };
    let report = runner::execute_sweep(config, &run_dir)?;
    print_report(&report);
    println!("run directory: {}", run_dir.display());
    Ok(())
}

/// A new timestamped directory under `base` (contents stay timestamp-free).
fn fresh_run_dir(base: &Path) -> Result<PathBuf, CliFailure> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_err(|e| internal(e.to_string()))?
        .as_secs();
    for suffix in 0..1000 {
        let name = if suffix == 0 {
            format!("run-{stamp}")
        } else {
            format!("run-{stamp}-{suffix}")
        };
        let candidate = base.join(name);
        if !candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(internal("could not allocate a fresh run directory"))
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn print_report(report: &MetricReport) {
    println!(
        "{:>8} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "window", "scored", "skip", "fail%", "JS", "BC", "R2", "ECE", "ACC", "W-F1", "UAR"
    );
    for p in &report.points {
        println!(
            "{:>8} {:>7} {:>7} {:>7.2} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            p.window_m,
            p.scored,
            p.skipped,
            100.0 * p.failure_rate,
            fmt_cell(p.js_mean),
            fmt_cell(p.bc_mean),
            fmt_cell(p.r_squared),
            fmt_cell(p.ece),
            fmt_cell(p.accuracy),
            fmt_cell(p.weighted_f1),
            fmt_cell(p.uar),
        );
    }
    if !report.improvements.is_empty() {
        let base = report.points[0].window_m;
        println!("relative improvement vs window {base} (positive = better):");
        for row in &report.improvements {
            println!(
                "{:>8} JS {} BC {} R2 {} ECE {}",
                row.window_m,
                fmt_cell(row.js_improvement),
                fmt_cell(row.bc_improvement),
                fmt_cell(row.r_squared_improvement),
                fmt_cell(row.ece_improvement),
            );
        }
    }
}

fn reemit(dir: &Path) -> Result<(), CliFailure> {
    let report = report::reemit(dir)?;
    let records: usize = report.points.iter().map(|p| p.utterances).sum();
    println!(
        "re-emitted {} window(s), {} record(s); integrity and self-audit ok",
        report.points.len(),
        records
    );
    Ok(())
}

fn open_cache(config: &ExperimentConfig, path: Option<String>) -> Result<Cache, CliFailure> {
    let path = path.unwrap_or_else(|| config.cache_path.clone());
    if path.is_empty() {
        return Err(user("no cache path given; pass --path or set cache_path"));
    }
    Cache::open(&path).map_err(|e| user(e.to_string()))
}

fn cache_list(config: &ExperimentConfig, path: Option<String>) -> Result<(), CliFailure> {
    let cache = open_cache(config, path)?;
    let records = cache.records();
    for r in &records {
        println!(
            "{}  model={}  response_bytes={}",
            r.cache_key,
            r.request.model_id,
            r.raw_response.len()
        );
    }
    println!(
        "{} entr{} in {}",
        records.len(),
        if records.len() == 1 { "y" } else { "ies" },
        cache.path().display()
    );
    Ok(())
}

fn cache_verify(config: &ExperimentConfig, path: Option<String>) -> Result<(), CliFailure> {
    let cache = open_cache(config, path)?;
    let records = cache.records();
    let mut bad = Vec::new();
    for r in &records {
        let expected = cache_key(
            &r.request.provider_id,
            &r.request.model_id,
            &r.request.prompt_text,
            &r.request.decoding,
        );
        if expected != r.cache_key {
            bad.push(r.cache_key.clone());
        }
    }
    if bad.is_empty() {
        println!(
            "{} entr{} verified",
            records.len(),
            if records.len() == 1 { "y" } else { "ies" }
        );
        Ok(())
    } else {
        Err(user(format!(
            "{} entr{} failed digest verification:\n  {}",
            bad.len(),
            if bad.len() == 1 { "y" } else { "ies" },
            bad.join("\n  ")
        )))
    }
}
