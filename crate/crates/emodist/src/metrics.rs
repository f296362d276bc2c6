//! Distribution- and majority-vote metrics, plus ambiguity (entropy)
//! stratification for box-plot style reporting.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::distribution::EmotionDistribution;
use crate::label::LabelSpace;

/// Two probabilities closer than this are considered tied for argmax.
pub const MAJORITY_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("distributions are over different label spaces")]
    LabelSpaceMismatch,
    #[error("not enough scored data for this metric")]
    InsufficientData,
    #[error("gold probabilities have zero variance; R^2 is undefined")]
    ZeroVariance,
    #[error("confusion matrix has no entries")]
    EmptyMatrix,
}

/// One utterance with its gold distribution and (possibly absent) prediction.
#[derive(Debug, Clone)]
pub struct ScoredUtterance {
    pub utterance_id: String,
    pub gold: EmotionDistribution,
    pub predicted: Option<EmotionDistribution>,
    pub gold_entropy: f64,
    /// Gold argmax; `None` when the top probabilities tie.
    pub majority_gold: Option<String>,
    /// Predicted argmax; ties are broken by label-space order.
    pub majority_pred: Option<String>,
    pub pred_tie_broken: bool,
}

impl ScoredUtterance {
    pub fn new(
        utterance_id: impl Into<String>,
        gold: EmotionDistribution,
        predicted: Option<EmotionDistribution>,
    ) -> Result<Self, MetricError> {
        if let Some(p) = &predicted {
            if !gold.same_space(p) {
                return Err(MetricError::LabelSpaceMismatch);
            }
        }
        let gold_entropy = shannon_entropy(&gold);
        let majority_gold = majority_label(&gold);
        let (majority_pred, pred_tie_broken) = match &predicted {
            Some(p) => {
                let (label, tie) = predicted_majority(p);
                (Some(label), tie)
            }
            None => (None, false),
        };
        Ok(Self {
            utterance_id: utterance_id.into(),
            gold,
            predicted,
            gold_entropy,
            majority_gold,
            majority_pred,
            pred_tie_broken,
        })
    }

    pub fn js(&self) -> Option<f64> {
        self.predicted
            .as_ref()
            .map(|p| js_divergence(&self.gold, p).expect("spaces checked at construction"))
    }

    pub fn bc(&self) -> Option<f64> {
        self.predicted
            .as_ref()
            .map(|p| bhattacharyya(&self.gold, p).expect("spaces checked at construction"))
    }

    /// Top-label confidence of the prediction.
    pub fn confidence(&self) -> Option<f64> {
        self.predicted
            .as_ref()
            .map(|p| p.values().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Whether the predicted majority matches the gold majority. `None` when
    /// either side is undefined.
    pub fn correct(&self) -> Option<bool> {
        match (&self.majority_gold, &self.majority_pred) {
            (Some(g), Some(p)) => Some(g == p),
            _ => None,
        }
    }
}

/// Shannon entropy in bits, with 0 log 0 taken as 0.
pub fn shannon_entropy(p: &EmotionDistribution) -> f64 {
    p.values()
        .filter(|&v| v > 0.0)
        .map(|v| v * v.log2())
        .fold(0.0, |acc, t| acc - t)
}

/// Jensen-Shannon divergence with base-2 logs, so the result lies in [0, 1].
pub fn js_divergence(p: &EmotionDistribution, q: &EmotionDistribution) -> Result<f64, MetricError> {
    if !p.same_space(q) {
        return Err(MetricError::LabelSpaceMismatch);
    }
    let mut acc = 0.0;
    for (pi, qi) in p.values().zip(q.values()) {
        let mid = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / mid).log2();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / mid).log2();
        }
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Bhattacharyya coefficient: 1 for identical distributions, 0 for disjoint
/// supports.
pub fn bhattacharyya(p: &EmotionDistribution, q: &EmotionDistribution) -> Result<f64, MetricError> {
    if !p.same_space(q) {
        return Err(MetricError::LabelSpaceMismatch);
    }
    let sum: f64 = p
        .values()
        .zip(q.values())
        .map(|(pi, qi)| (pi * qi).sqrt())
        .sum();
    Ok(sum.clamp(0.0, 1.0))
}

/// Coefficient of determination over raw (gold, predicted) probability cells.
pub fn r_squared_pooled(cells: &[(f64, f64)]) -> Result<f64, MetricError> {
    if cells.len() < 2 {
        return Err(MetricError::InsufficientData);
    }
    let first = cells[0].0;
    if cells.iter().all(|(g, _)| *g == first) {
        return Err(MetricError::ZeroVariance);
    }
    let mean = cells.iter().map(|(g, _)| g).sum::<f64>() / cells.len() as f64;
    let (ss_res, ss_tot) = cells.iter().fold((0.0, 0.0), |(res, tot), (g, p)| {
        (res + (g - p).powi(2), tot + (g - mean).powi(2))
    });
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Pooled R^2: every (utterance, label) probability is one regression cell.
/// Requires at least two utterances with predictions.
pub fn r_squared(scored: &[ScoredUtterance]) -> Result<f64, MetricError> {
    let with_pred: Vec<&ScoredUtterance> =
        scored.iter().filter(|s| s.predicted.is_some()).collect();
    if with_pred.len() < 2 {
        return Err(MetricError::InsufficientData);
    }
    let cells: Vec<(f64, f64)> = with_pred
        .iter()
        .flat_map(|s| {
            s.gold
                .values()
                .zip(s.predicted.as_ref().unwrap().values())
                .collect::<Vec<_>>()
        })
        .collect();
    r_squared_pooled(&cells)
}

/// Mean per-utterance R^2 against the pool-wide mean gold probability.
/// Exposed as an alternative aggregation for sensitivity analysis.
pub fn r_squared_per_utterance_mean(scored: &[ScoredUtterance]) -> Result<f64, MetricError> {
    let with_pred: Vec<&ScoredUtterance> =
        scored.iter().filter(|s| s.predicted.is_some()).collect();
    if with_pred.len() < 2 {
        return Err(MetricError::InsufficientData);
    }
    let all_gold: Vec<f64> = with_pred.iter().flat_map(|s| s.gold.values()).collect();
    let mean = all_gold.iter().sum::<f64>() / all_gold.len() as f64;
    let values: Vec<f64> = with_pred
        .iter()
        .map(|s| r_squared_vs_mean(s, mean))
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Single-utterance R^2 against an externally supplied mean (so per-utterance
/// values stay comparable across one run).
pub fn r_squared_vs_mean(s: &ScoredUtterance, mean: f64) -> f64 {
    let pred = s.predicted.as_ref().expect("prediction required");
    let (ss_res, ss_tot) = s
        .gold
        .values()
        .zip(pred.values())
        .fold((0.0, 0.0), |(res, tot), (g, p)| {
            (res + (g - p).powi(2), tot + (g - mean).powi(2))
        });
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn bin_index(confidence: f64, bins: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    ((confidence * bins as f64).ceil() as usize).clamp(1, bins) - 1
}

/// Top-label expected calibration error with `bins` equal-width bins over
/// (0, 1]. The pool is every utterance with both a prediction and a defined
/// gold majority; gold ties fall out of the pool.
pub fn ece(scored: &[ScoredUtterance], bins: usize) -> Result<f64, MetricError> {
    let pool: Vec<(f64, bool)> = scored
        .iter()
        .filter_map(|s| match (s.confidence(), s.correct()) {
            (Some(c), Some(ok)) => Some((c, ok)),
            _ => None,
        })
        .collect();
    if pool.is_empty() {
        return Err(MetricError::InsufficientData);
    }
    #[derive(Default, Clone, Copy)]
    struct Bin {
        conf: f64,
        hits: f64,
        n: f64,
    }
    let mut table = vec![Bin::default(); bins];
    for (c, ok) in &pool {
        let b = &mut table[bin_index(*c, bins)];
        b.conf += c;
        b.hits += f64::from(*ok);
        b.n += 1.0;
    }
    let n = pool.len() as f64;
    Ok(table
        .iter()
        .filter(|b| b.n > 0.0)
        .map(|b| b.n / n * (b.hits / b.n - b.conf / b.n).abs())
        .sum())
}

/// Classwise calibration error: for each label, bin the pool by that label's
/// predicted probability and compare against the empirical gold-majority
/// frequency; the result is the unweighted mean over labels. Zero
/// probabilities land in the lowest bin.
pub fn classwise_ece(scored: &[ScoredUtterance], bins: usize) -> Result<f64, MetricError> {
    let pool: Vec<&ScoredUtterance> = scored
        .iter()
        .filter(|s| s.predicted.is_some() && s.majority_gold.is_some())
        .collect();
    if pool.is_empty() {
        return Err(MetricError::InsufficientData);
    }
    let labels: Vec<String> = pool[0].gold.labels().map(str::to_string).collect();
    let n = pool.len() as f64;
    let mut total = 0.0;
    for label in &labels {
        let mut conf = vec![0.0; bins];
        let mut hits = vec![0.0; bins];
        let mut count = vec![0.0; bins];
        for s in &pool {
            let p = s.predicted.as_ref().unwrap().prob(label);
            let b = bin_index(p, bins);
            conf[b] += p;
            hits[b] += f64::from(s.majority_gold.as_deref() == Some(label.as_str()));
            count[b] += 1.0;
        }
        total += (0..bins)
            .filter(|&b| count[b] > 0.0)
            .map(|b| count[b] / n * (hits[b] / count[b] - conf[b] / count[b]).abs())
            .sum::<f64>();
    }
    Ok(total / labels.len() as f64)
}

/// Gold majority rule: argmax, or `None` when the top probabilities tie
/// within [`MAJORITY_TIE_EPSILON`].
pub fn majority_label(p: &EmotionDistribution) -> Option<String> {
    let max = p.values().fold(f64::NEG_INFINITY, f64::max);
    let mut at_max = p
        .entries()
        .iter()
        .filter(|(_, v)| *v >= max - MAJORITY_TIE_EPSILON);
    let first = at_max.next()?.0.clone();
    match at_max.next() {
        Some(_) => None,
        None => Some(first),
    }
}

/// Prediction majority rule: argmax with ties broken by label-space order.
/// The flag reports whether a tie was broken.
pub fn predicted_majority(p: &EmotionDistribution) -> (String, bool) {
    let max = p.values().fold(f64::NEG_INFINITY, f64::max);
    let at_max: Vec<&str> = p
        .entries()
        .iter()
        .filter(|(_, v)| *v >= max - MAJORITY_TIE_EPSILON)
        .map(|(l, _)| l.as_str())
        .collect();
    (at_max[0].to_string(), at_max.len() > 1)
}

/// Gold-by-predicted majority counts (rows = gold, cols = predicted).
#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Count majority pairs over every utterance where both majorities are
    /// defined (gold ties and parse failures drop out).
    pub fn from_scored(scored: &[ScoredUtterance], space: &LabelSpace) -> Self {
        let k = space.len();
        let mut counts = vec![vec![0u64; k]; k];
        for s in scored {
            if let (Some(g), Some(p)) = (&s.majority_gold, &s.majority_pred) {
                let gi = space.index_of(g).expect("gold majority in space");
                let pi = space.index_of(p).expect("predicted majority in space");
                counts[gi][pi] += 1;
            }
        }
        Self {
            labels: space.labels().map(str::to_string).collect(),
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub uar: f64,
}

/// Accuracy, support-weighted F1, and unweighted average recall. Per-class
/// F1 treats 0/0 as 0; UAR averages recall over classes with gold support.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics, MetricError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricError::EmptyMatrix);
    }
    let k = cm.labels.len();
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let accuracy = trace as f64 / total as f64;

    let mut weighted_f1 = 0.0;
    let mut recalls = Vec::new();
    for c in 0..k {
        let support: u64 = cm.counts[c].iter().sum();
        let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
        let tp = cm.counts[c][c] as f64;
        let precision = if predicted > 0 {
            tp / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += f1 * support as f64 / total as f64;
        if support > 0 {
            recalls.push(recall);
        }
    }
    let uar = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(ClassificationMetrics {
        accuracy,
        weighted_f1,
        uar,
    })
}

/// Five-number-plus-mean summary for box plots.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        Some(Self {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Quantile by linear interpolation at rank `(n-1) * q` over sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// One ambiguity level: all utterances whose gold entropy rounds to the same
/// 4-decimal key, with per-stratum metric summaries.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyStratum {
    /// `"0.7219"`-style entropy key, or `"minor"` for the pooled small strata.
    pub key: String,
    pub entropy_value: Option<f64>,
    pub members: usize,
    pub js: Option<SummaryStats>,
    pub bc: Option<SummaryStats>,
    pub r_squared: Option<f64>,
}

/// Group key for an entropy value: fixed 4-decimal rendering.
pub fn entropy_key(entropy: f64) -> String {
    // normalize -0.0 so the unanimous stratum always reads "0.0000"
    let e = if entropy == 0.0 { 0.0 } else { entropy };
    format!("{e:.4}")
}

/// Entropy-stratum membership: `(key, entropy value, member indices)` in
/// reporting order. Strata with fewer than `min_count` members pool into a
/// trailing `"minor"` group.
pub fn stratum_members(
    scored: &[ScoredUtterance],
    min_count: usize,
) -> Vec<(String, Option<f64>, Vec<usize>)> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in scored.iter().enumerate() {
        groups
            .entry(entropy_key(s.gold_entropy))
            .or_default()
            .push(i);
    }
    let mut strata: Vec<(String, Option<f64>, Vec<usize>)> = Vec::new();
    let mut minor: Vec<usize> = Vec::new();
    for (key, members) in groups {
        if members.len() >= min_count {
            let value: Option<f64> = key.parse().ok();
            strata.push((key, value, members));
        } else {
            minor.extend(members);
        }
    }
    strata.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("stratum keys are finite"));
    if !minor.is_empty() {
        minor.sort_unstable();
        strata.push(("minor".to_string(), None, minor));
    }
    strata
}

/// Group scored utterances by gold-entropy level. Strata with fewer than
/// `min_count` members are pooled into a trailing `"minor"` stratum.
pub fn stratify_by_entropy(scored: &[ScoredUtterance], min_count: usize) -> Vec<EntropyStratum> {
    stratum_members(scored, min_count)
        .into_iter()
        .map(|(key, entropy_value, indices)| {
            let members: Vec<&ScoredUtterance> = indices.iter().map(|&i| &scored[i]).collect();
            build_stratum(key, entropy_value, &members)
        })
        .collect()
}

fn build_stratum(
    key: String,
    entropy_value: Option<f64>,
    members: &[&ScoredUtterance],
) -> EntropyStratum {
    let js: Vec<f64> = members.iter().filter_map(|s| s.js()).collect();
    let bc: Vec<f64> = members.iter().filter_map(|s| s.bc()).collect();
    let cells: Vec<(f64, f64)> = members
        .iter()
        .filter_map(|s| s.predicted.as_ref().map(|p| (&s.gold, p)))
        .flat_map(|(g, p)| g.values().zip(p.values()).collect::<Vec<_>>())
        .collect();
    EntropyStratum {
        key,
        entropy_value,
        members: members.len(),
        js: SummaryStats::from_values(&js),
        bc: SummaryStats::from_values(&bc),
        r_squared: r_squared_pooled(&cells).ok(),
    }
}
