//! Probability distributions over a label space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::LabelSpace;

/// Tolerance on the sum-to-one invariant.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("label `{0}` is not in the label space")]
    UnknownLabel(String),
    #[error("probability for `{label}` is negative ({value})")]
    Negative { label: String, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    SumNotOne(f64),
    #[error("distribution has no entries")]
    Empty,
}

/// A probability distribution over the canonical labels of one
/// [`LabelSpace`], stored complete (every label present, zeros explicit) and
/// in space order.
///
/// Values are non-negative and sum to 1 within [`SUM_TOLERANCE`]. Both gold
/// distributions p(x) and predictions p̂(x) use this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionDistribution {
    entries: Vec<(String, f64)>,
}

impl EmotionDistribution {
    /// Build from `(canonical label, probability)` pairs. Labels absent from
    /// `pairs` are zero-filled; duplicate labels are rejected implicitly by
    /// summing (callers canonicalize first). Validates non-negativity and
    /// the sum-to-one invariant; does not renormalize.
    pub fn from_pairs<I, S>(pairs: I, space: &LabelSpace) -> Result<Self, DistributionError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut values = vec![0.0f64; space.len()];
        let mut any = false;
        for (label, p) in pairs {
            let label = label.as_ref();
            let idx = space
                .index_of(label)
                .ok_or_else(|| DistributionError::UnknownLabel(label.to_string()))?;
            if p < 0.0 || !p.is_finite() {
                return Err(DistributionError::Negative {
                    label: label.to_string(),
                    value: p,
                });
            }
            values[idx] += p;
            any = true;
        }
        if !any {
            return Err(DistributionError::Empty);
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::SumNotOne(sum));
        }
        let entries = space
            .labels()
            .zip(values)
            .map(|(l, v)| (l.to_string(), v))
            .collect();
        Ok(Self { entries })
    }

    /// All mass on a single label.
    pub fn point_mass(label: &str, space: &LabelSpace) -> Result<Self, DistributionError> {
        Self::from_pairs([(label, 1.0)], space)
    }

    /// Equal mass on every label.
    pub fn uniform(space: &LabelSpace) -> Self {
        let p = 1.0 / space.len() as f64;
        let entries = space.labels().map(|l| (l.to_string(), p)).collect();
        Self { entries }
    }

    /// Probability of a canonical label (0 if the label is absent, which for
    /// a well-formed distribution only happens for labels outside its space).
    pub fn prob(&self, label: &str) -> f64 {
        self.entries
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// `(label, probability)` pairs in label-space order.
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, p)| p)
    }

    /// Non-zero entries in label-space order.
    pub fn support(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(ref l, p)| (l.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when both distributions are over the same ordered label set.
    pub fn same_space(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, _), (b, _))| a == b)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.same_space(other)
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::basic_four()
    }

    #[test]
    fn zero_fills_missing_labels_in_space_order() {
        let d = EmotionDistribution::from_pairs([("sad", 1.0)], &space()).unwrap();
        let labels: Vec<_> = d.labels().collect();
        assert_eq!(labels, ["neutral", "happy", "angry", "sad"]);
        assert_eq!(d.prob("sad"), 1.0);
        assert_eq!(d.prob("neutral"), 0.0);
        assert_eq!(d.support().count(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = space();
        assert_eq!(
            EmotionDistribution::from_pairs([("bored", 1.0)], &s),
            Err(DistributionError::UnknownLabel("bored".into()))
        );
        assert!(matches!(
            EmotionDistribution::from_pairs([("sad", -0.1), ("happy", 1.1)], &s),
            Err(DistributionError::Negative { .. })
        ));
        assert!(matches!(
            EmotionDistribution::from_pairs([("sad", 0.5)], &s),
            Err(DistributionError::SumNotOne(_))
        ));
        assert!(matches!(
            EmotionDistribution::from_pairs(Vec::<(&str, f64)>::new(), &s),
            Err(DistributionError::Empty)
        ));
    }

    #[test]
    fn uniform_sums_to_one() {
        let d = EmotionDistribution::uniform(&space());
        let sum: f64 = d.values().sum();
        assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
    }
}
