//! Persistent run records and report emission.
//!
//! Every number in a report is recomputable from the per-utterance records
//! persisted alongside it; [`self_audit`] checks exactly that, and
//! [`reemit`] rebuilds a report directory from its records byte-for-byte.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::distribution::EmotionDistribution;
use crate::label::{LabelSpace, LabelSpaceError};
use crate::metrics::{
    classification_metrics, classwise_ece, ece, r_squared, stratify_by_entropy, stratum_members,
    ConfusionMatrix, EntropyStratum, ScoredUtterance,
};
use crate::parser::{ParseFailure, Repair};

/// Error raised while emitting or reloading a run directory.
#[derive(Debug, Error)]
pub enum ReportError {
    /// A file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The embedded config snapshot failed to load.
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The label space referenced by the config snapshot failed to load.
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
    /// A record file does not parse as one JSON record per line.
    #[error("{file} line {line}: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    /// A record's content does not match its stored digest.
    #[error("integrity failure in {file} line {line}: record `{utterance_id}` (window {window_m}) does not match its digest")]
    Integrity {
        file: PathBuf,
        line: usize,
        utterance_id: String,
        window_m: usize,
    },
    /// A scored record could not be reconstructed for aggregation.
    #[error("record `{utterance_id}` is inconsistent: {reason}")]
    BadRecord {
        utterance_id: String,
        reason: String,
    },
    /// Recomputed aggregates disagree with the report.
    #[error("self-audit failed: {0}")]
    Audit(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything persisted about one utterance at one sweep point.
///
/// The `digest` seals all other fields; tampering is detected on reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub utterance_id: String,
    pub window_m: usize,
    /// SHA-256 of the full prompt text; empty when no prompt was built.
    pub prompt_sha256: String,
    /// Content address of the provider request; empty when no request was sent.
    pub cache_key: String,
    pub from_cache: bool,
    /// Transport attempts consumed; 0 when served from cache or skipped.
    pub attempt_count: u32,
    pub examples_used: usize,
    /// Few-shot was requested but no examples existed, so the prompt fell
    /// back to zero-shot form.
    pub examples_degenerate: bool,
    pub gold: EmotionDistribution,
    pub predicted: Option<EmotionDistribution>,
    /// Sum of extracted probabilities before any repair.
    pub raw_sum: f64,
    pub repairs: Vec<Repair>,
    pub parse_failure: Option<ParseFailure>,
    /// Present when no response was scored (missing features, provider
    /// error, cache miss); such records carry no prediction.
    pub skipped_reason: Option<String>,
    pub gold_entropy: f64,
    pub majority_gold: Option<String>,
    pub majority_pred: Option<String>,
    pub pred_tie_broken: bool,
    pub js_divergence: Option<f64>,
    pub bhattacharyya: Option<f64>,
    pub confidence: Option<f64>,
    pub majority_correct: Option<bool>,
    /// SHA-256 over the canonical JSON form of this record with `digest`
    /// itself blanked.
    pub digest: String,
}

impl RunRecord {
    /// Digest of the record content (excluding the digest field itself).
    pub fn compute_digest(&self) -> String {
        let mut blank = self.clone();
        blank.digest = String::new();
        let canonical = serde_json::to_string(&blank).expect("record serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Stamps the digest field.
    pub fn seal(mut self) -> Self {
        self.digest = self.compute_digest();
        self
    }

    /// True when the stored digest matches the content.
    pub fn verify(&self) -> bool {
        self.digest == self.compute_digest()
    }

    /// Rebuilds the scored view used by every aggregate.
    pub fn to_scored(&self) -> Result<ScoredUtterance, ReportError> {
        ScoredUtterance::new(
            self.utterance_id.clone(),
            self.gold.clone(),
            self.predicted.clone(),
        )
        .map_err(|e| ReportError::BadRecord {
            utterance_id: self.utterance_id.clone(),
            reason: e.to_string(),
        })
    }
}

/// Aggregates for one sweep point (one context-window size).
#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub window_m: usize,
    pub utterances: usize,
    /// Records with a parsed prediction.
    pub scored: usize,
    pub parse_failures: usize,
    pub skipped: usize,
    /// Parse failures over non-skipped records.
    pub failure_rate: f64,
    pub degenerate_examples: usize,
    /// Majority-vote pairs that entered the confusion matrix.
    pub classified: usize,
    pub js_mean: Option<f64>,
    pub bc_mean: Option<f64>,
    pub r_squared: Option<f64>,
    pub ece: Option<f64>,
    pub classwise_ece: Option<f64>,
    pub accuracy: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub uar: Option<f64>,
    pub strata: Vec<EntropyStratum>,
}

/// Relative change of each aggregate against the first sweep point, signed
/// so that positive always means improvement (divergence and calibration
/// error fall, coefficient and determination rise).
#[derive(Debug, Clone, Serialize)]
pub struct ImprovementRow {
    pub window_m: usize,
    pub js_improvement: Option<f64>,
    pub bc_improvement: Option<f64>,
    pub r_squared_improvement: Option<f64>,
    pub ece_improvement: Option<f64>,
}

/// Full sweep output: config snapshot, one summary per window, and
/// improvement rows relative to the first window.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub config: ExperimentConfig,
    pub points: Vec<PointSummary>,
    /// Empty when the sweep has fewer than two points.
    pub improvements: Vec<ImprovementRow>,
}

/// Mean of the values produced by `f`, or `None` when no record yields one.
fn mean_of(scored: &[ScoredUtterance], f: impl Fn(&ScoredUtterance) -> Option<f64>) -> Option<f64> {
    let values: Vec<f64> = scored.iter().filter_map(f).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Recomputes every aggregate for one sweep point from its records.
pub fn summarize_point(
    records: &[RunRecord],
    space: &LabelSpace,
    window_m: usize,
    min_stratum_count: usize,
    ece_bins: usize,
) -> Result<PointSummary, ReportError> {
    let mut scored = Vec::new();
    for record in records.iter().filter(|r| r.skipped_reason.is_none()) {
        scored.push(record.to_scored()?);
    }
    let utterances = records.len();
    let skipped = utterances - scored.len();
    let parse_failures = records.iter().filter(|r| r.parse_failure.is_some()).count();
    let attempted = scored.len();
    let failure_rate = if attempted == 0 {
        0.0
    } else {
        parse_failures as f64 / attempted as f64
    };
    let cm = ConfusionMatrix::from_scored(&scored, space);
    let classification = classification_metrics(&cm).ok();
    Ok(PointSummary {
        window_m,
        utterances,
        scored: scored.iter().filter(|s| s.predicted.is_some()).count(),
        parse_failures,
        skipped,
        failure_rate,
        degenerate_examples: records.iter().filter(|r| r.examples_degenerate).count(),
        classified: cm.total() as usize,
        js_mean: mean_of(&scored, |s| s.js()),
        bc_mean: mean_of(&scored, |s| s.bc()),
        r_squared: r_squared(&scored).ok(),
        ece: ece(&scored, ece_bins).ok(),
        classwise_ece: classwise_ece(&scored, ece_bins).ok(),
        accuracy: classification.as_ref().map(|c| c.accuracy),
        weighted_f1: classification.as_ref().map(|c| c.weighted_f1),
        uar: classification.as_ref().map(|c| c.uar),
        strata: stratify_by_entropy(&scored, min_stratum_count),
    })
}

/// Relative improvement for a metric where larger values are better.
fn rel_increase(base: Option<f64>, value: Option<f64>) -> Option<f64> {
    let (b, v) = (base?, value?);
    if b == 0.0 {
        None
    } else {
        Some((v - b) / b.abs())
    }
}

/// Relative improvement for a metric where smaller values are better.
fn rel_decrease(base: Option<f64>, value: Option<f64>) -> Option<f64> {
    let (b, v) = (base?, value?);
    if b == 0.0 {
        None
    } else {
        Some((b - v) / b.abs())
    }
}

/// Improvement rows for every point after the first, relative to the first.
pub fn compute_improvements(points: &[PointSummary]) -> Vec<ImprovementRow> {
    let Some(base) = points.first() else {
        return Vec::new();
    };
    points[1..]
        .iter()
        .map(|p| ImprovementRow {
            window_m: p.window_m,
            js_improvement: rel_decrease(base.js_mean, p.js_mean),
            bc_improvement: rel_increase(base.bc_mean, p.bc_mean),
            r_squared_improvement: rel_increase(base.r_squared, p.r_squared),
            ece_improvement: rel_decrease(base.ece, p.ece),
        })
        .collect()
}

/// Builds the full report for a sweep's records, in window order.
pub fn build_report(
    config: &ExperimentConfig,
    space: &LabelSpace,
    records_by_window: &[Vec<RunRecord>],
) -> Result<MetricReport, ReportError> {
    let mut points = Vec::new();
    for (i, records) in records_by_window.iter().enumerate() {
        let window_m = config.context_windows[i];
        points.push(summarize_point(
            records,
            space,
            window_m,
            config.min_stratum_count,
            config.ece_bins,
        )?);
    }
    let improvements = compute_improvements(&points);
    Ok(MetricReport {
        config: config.clone(),
        points,
        improvements,
    })
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_bool(v: Option<bool>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| ReportError::Malformed {
                file: path.to_path_buf(),
                line: 0,
                reason: e.to_string(),
            })?;
    }
    let bytes = writer.into_inner().expect("csv buffer");
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// One row per record, across all windows, for spreadsheet inspection.
fn per_utterance_rows(records_by_window: &[Vec<RunRecord>]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "window_m".into(),
        "utterance_id".into(),
        "skipped_reason".into(),
        "parse_failure".into(),
        "repairs".into(),
        "raw_sum".into(),
        "gold_entropy".into(),
        "majority_gold".into(),
        "majority_pred".into(),
        "pred_tie_broken".into(),
        "js_divergence".into(),
        "bhattacharyya".into(),
        "confidence".into(),
        "majority_correct".into(),
        "examples_used".into(),
        "examples_degenerate".into(),
        "from_cache".into(),
        "prompt_sha256".into(),
        "cache_key".into(),
    ]];
    for records in records_by_window {
        for r in records {
            let repairs: Vec<&str> = r.repairs.iter().map(|rep| rep.kind()).collect();
            rows.push(vec![
                r.window_m.to_string(),
                r.utterance_id.clone(),
                r.skipped_reason.clone().unwrap_or_default(),
                r.parse_failure
                    .as_ref()
                    .map(|f| f.kind().to_string())
                    .unwrap_or_default(),
                repairs.join("|"),
                r.raw_sum.to_string(),
                r.gold_entropy.to_string(),
                r.majority_gold.clone().unwrap_or_default(),
                r.majority_pred.clone().unwrap_or_default(),
                r.pred_tie_broken.to_string(),
                fmt_opt_f64(r.js_divergence),
                fmt_opt_f64(r.bhattacharyya),
                fmt_opt_f64(r.confidence),
                fmt_opt_bool(r.majority_correct),
                r.examples_used.to_string(),
                r.examples_degenerate.to_string(),
                r.from_cache.to_string(),
                r.prompt_sha256.clone(),
                r.cache_key.clone(),
            ]);
        }
    }
    rows
}

/// Metric-versus-window series backing the sweep line plot.
fn metric_vs_window_rows(points: &[PointSummary]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "window_m".into(),
        "utterances".into(),
        "scored".into(),
        "skipped".into(),
        "parse_failures".into(),
        "failure_rate".into(),
        "js_mean".into(),
        "bc_mean".into(),
        "r_squared".into(),
        "ece".into(),
        "classwise_ece".into(),
        "accuracy".into(),
        "weighted_f1".into(),
        "uar".into(),
    ]];
    for p in points {
        rows.push(vec![
            p.window_m.to_string(),
            p.utterances.to_string(),
            p.scored.to_string(),
            p.skipped.to_string(),
            p.parse_failures.to_string(),
            p.failure_rate.to_string(),
            fmt_opt_f64(p.js_mean),
            fmt_opt_f64(p.bc_mean),
            fmt_opt_f64(p.r_squared),
            fmt_opt_f64(p.ece),
            fmt_opt_f64(p.classwise_ece),
            fmt_opt_f64(p.accuracy),
            fmt_opt_f64(p.weighted_f1),
            fmt_opt_f64(p.uar),
        ]);
    }
    rows
}

/// Box-plot data: five-number summaries per entropy stratum and metric,
/// plus the pooled determination coefficient per stratum.
fn strata_box_rows(points: &[PointSummary]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "window_m".into(),
        "stratum".into(),
        "entropy".into(),
        "members".into(),
        "metric".into(),
        "mean".into(),
        "min".into(),
        "q1".into(),
        "median".into(),
        "q3".into(),
        "max".into(),
    ]];
    for p in points {
        if p.strata.is_empty() {
            let mut row = vec![
                p.window_m.to_string(),
                "(empty)".into(),
                String::new(),
                "0".into(),
                "none".into(),
            ];
            row.extend(std::iter::repeat_n(String::new(), 6));
            rows.push(row);
            continue;
        }
        for stratum in &p.strata {
            let base = |metric: &str| {
                vec![
                    p.window_m.to_string(),
                    stratum.key.clone(),
                    fmt_opt_f64(stratum.entropy_value),
                    stratum.members.to_string(),
                    metric.to_string(),
                ]
            };
            for (metric, stats) in [
                ("js_divergence", &stratum.js),
                ("bhattacharyya", &stratum.bc),
            ] {
                let mut row = base(metric);
                match stats {
                    Some(s) => row.extend([
                        s.mean.to_string(),
                        s.min.to_string(),
                        s.q1.to_string(),
                        s.median.to_string(),
                        s.q3.to_string(),
                        s.max.to_string(),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 6)),
                }
                rows.push(row);
            }
            let mut row = base("r_squared");
            row.push(fmt_opt_f64(stratum.r_squared));
            row.extend(std::iter::repeat_n(String::new(), 5));
            rows.push(row);
        }
    }
    rows
}

/// Grouped-bar data: majority-vote weighted F1 per entropy stratum, for the
/// first and last sweep window.
fn wf1_by_stratum_rows(
    config: &ExperimentConfig,
    space: &LabelSpace,
    records_by_window: &[Vec<RunRecord>],
) -> Result<Vec<Vec<String>>, ReportError> {
    let mut rows = vec![vec![
        "stratum".into(),
        "entropy".into(),
        "window_m".into(),
        "members".into(),
        "weighted_f1".into(),
    ]];
    let mut picks: Vec<usize> = Vec::new();
    if !records_by_window.is_empty() {
        picks.push(0);
        if records_by_window.len() > 1 {
            picks.push(records_by_window.len() - 1);
        }
    }
    let mut wrote = false;
    for i in picks {
        let window_m = config.context_windows[i];
        let mut scored = Vec::new();
        for record in records_by_window[i]
            .iter()
            .filter(|r| r.skipped_reason.is_none())
        {
            scored.push(record.to_scored()?);
        }
        for (key, entropy_value, indices) in stratum_members(&scored, config.min_stratum_count) {
            let members: Vec<ScoredUtterance> =
                indices.iter().map(|&j| scored[j].clone()).collect();
            let cm = ConfusionMatrix::from_scored(&members, space);
            let wf1 = classification_metrics(&cm).ok().map(|c| c.weighted_f1);
            rows.push(vec![
                key,
                fmt_opt_f64(entropy_value),
                window_m.to_string(),
                members.len().to_string(),
                fmt_opt_f64(wf1),
            ]);
            wrote = true;
        }
    }
    if !wrote {
        rows.push(vec![
            "(empty)".into(),
            String::new(),
            String::new(),
            "0".into(),
            String::new(),
        ]);
    }
    Ok(rows)
}

/// Writes a complete run directory: config snapshot, per-window record
/// files, per-utterance CSV, summary JSON, and the three plot-data files.
/// Contents carry no timestamps; emission is deterministic.
pub fn emit_run_dir(
    dir: &Path,
    report: &MetricReport,
    records_by_window: &[Vec<RunRecord>],
) -> Result<(), ReportError> {
    assert_eq!(
        records_by_window.len(),
        report.points.len(),
        "one record set per sweep point"
    );
    let records_dir = dir.join("records");
    let plots_dir = dir.join("plots");
    std::fs::create_dir_all(&records_dir).map_err(io_err(&records_dir))?;
    std::fs::create_dir_all(&plots_dir).map_err(io_err(&plots_dir))?;

    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, report.config.to_toml_string()).map_err(io_err(&config_path))?;

    for (point, records) in report.points.iter().zip(records_by_window) {
        let path = records_dir.join(format!("point_m{}.jsonl", point.window_m));
        let mut text = String::new();
        for record in records {
            text.push_str(&serde_json::to_string(record).expect("record serializes"));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }

    write_csv(
        &dir.join("per_utterance.csv"),
        &per_utterance_rows(records_by_window),
    )?;

    let summary_path = dir.join("summary.json");
    let mut summary = serde_json::to_string_pretty(report).expect("report serializes");
    summary.push('\n');
    std::fs::write(&summary_path, summary).map_err(io_err(&summary_path))?;

    let space = report.config.resolve_label_space()?;
    write_csv(
        &plots_dir.join("metric_vs_window.csv"),
        &metric_vs_window_rows(&report.points),
    )?;
    write_csv(
        &plots_dir.join("strata_boxes.csv"),
        &strata_box_rows(&report.points),
    )?;
    write_csv(
        &plots_dir.join("wf1_by_stratum.csv"),
        &wf1_by_stratum_rows(&report.config, &space, records_by_window)?,
    )?;
    Ok(())
}

/// Reads one per-window record file, verifying every record digest.
pub fn load_records(path: &Path, window_m: usize) -> Result<Vec<RunRecord>, ReportError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(&line).map_err(|e| ReportError::Malformed {
                file: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        if !record.verify() {
            return Err(ReportError::Integrity {
                file: path.to_path_buf(),
                line: i + 1,
                utterance_id: record.utterance_id,
                window_m: record.window_m,
            });
        }
        if record.window_m != window_m {
            return Err(ReportError::Malformed {
                file: path.to_path_buf(),
                line: i + 1,
                reason: format!(
                    "record window {} does not match file window {window_m}",
                    record.window_m
                ),
            });
        }
        if !seen.insert(record.utterance_id.clone()) {
            return Err(ReportError::Malformed {
                file: path.to_path_buf(),
                line: i + 1,
                reason: format!("duplicate record for utterance `{}`", record.utterance_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Loads the config snapshot and all record files from a run directory.
pub fn load_run_dir(dir: &Path) -> Result<(ExperimentConfig, Vec<Vec<RunRecord>>), ReportError> {
    let config = ExperimentConfig::from_file(dir.join("config.toml"))?;
    let mut records_by_window = Vec::new();
    for &m in &config.context_windows {
        let path = dir.join("records").join(format!("point_m{m}.jsonl"));
        records_by_window.push(load_records(&path, m)?);
    }
    Ok((config, records_by_window))
}

/// Rebuilds every derived file in a run directory from its persisted
/// records; the result is byte-identical to the original emission.
pub fn reemit(dir: &Path) -> Result<MetricReport, ReportError> {
    let (config, records_by_window) = load_run_dir(dir)?;
    let space = config.resolve_label_space()?;
    let report = build_report(&config, &space, &records_by_window)?;
    emit_run_dir(dir, &report, &records_by_window)?;
    Ok(report)
}

/// Checks that the report's aggregates equal aggregates recomputed from the
/// records; any divergence is a bug in persistence or aggregation.
pub fn self_audit(
    report: &MetricReport,
    records_by_window: &[Vec<RunRecord>],
) -> Result<(), ReportError> {
    let space = report.config.resolve_label_space()?;
    let rebuilt = build_report(&report.config, &space, records_by_window)?;
    let original = serde_json::to_string(report).expect("report serializes");
    let recomputed = serde_json::to_string(&rebuilt).expect("report serializes");
    if original != recomputed {
        return Err(ReportError::Audit(
            "aggregates recomputed from records differ from the report".into(),
        ));
    }
    Ok(())
}
