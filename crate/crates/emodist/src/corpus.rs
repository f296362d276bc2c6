//! Utterance corpora: line-record ingestion, dialogue reconstruction, gold
//! distribution building, label-space filtering, and weighted subsampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use num_rational::Ratio;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::EmotionDistribution;
use crate::label::LabelSpace;

/// Expected dimensionality of the acoustic feature vectors.
pub const SPEECH_FEATURE_DIM: usize = 88;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate position {position} in dialogue `{dialogue_id}` at line {line}")]
    DuplicatePosition {
        line: usize,
        dialogue_id: String,
        position: u32,
    },
    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),
    #[error("requested sample of {k} from a corpus of {size}")]
    KTooLarge { k: usize, size: usize },
    #[error(transparent)]
    Gold(#[from] GoldError),
}

#[derive(Debug, Error, PartialEq)]
pub enum GoldError {
    #[error("annotator `{annotator_id}` used label `{surface}` outside the label space")]
    UnknownLabel {
        annotator_id: String,
        surface: String,
    },
    #[error("no annotations to build a distribution from")]
    EmptyAnnotations,
}

/// The label set one annotator assigned to one utterance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatorLabeling {
    pub annotator_id: String,
    pub labels: Vec<String>,
}

/// Precomputed acoustic features with their human-readable names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeechFeatures {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// One dialogue turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub dialogue_id: String,
    pub speaker_id: String,
    pub position: u32,
    pub text: String,
    pub annotations: Vec<AnnotatorLabeling>,
    pub speech_features: Option<SpeechFeatures>,
}

/// An immutable utterance collection with reconstructed dialogues.
#[derive(Debug, Clone)]
pub struct Corpus {
    label_space: LabelSpace,
    utterances: Vec<Utterance>,
    // dialogue_id -> utterance ids in strictly increasing position order
    dialogues: BTreeMap<String, Vec<String>>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    utterance_id: Option<String>,
    dialogue_id: Option<String>,
    speaker_id: Option<String>,
    position: Option<u32>,
    text: Option<String>,
    annotations: Option<Vec<AnnotatorLabeling>>,
    speech_features: Option<SpeechFeatures>,
}

impl Corpus {
    /// Load a corpus from a UTF-8 file with one JSON record per line.
    ///
    /// Dialogues are reconstructed by sorting member utterances on
    /// `(dialogue_id, position)`; duplicate positions within a dialogue are
    /// rejected. Annotation labels are kept as-is (surface forms); label
    /// resolution happens in [`build_gold_distribution`] and
    /// [`Corpus::filter_by_label_space`].
    pub fn load(path: impl AsRef<Path>, label_space: LabelSpace) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text, label_space)
    }

    /// Parse corpus records from in-memory JSONL text. Blank lines are skipped.
    pub fn from_jsonl(text: &str, label_space: LabelSpace) -> Result<Self, CorpusError> {
        let mut utterances = Vec::new();
        for (line_idx, line) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            utterances.push(validate_record(raw, line_no)?);
        }
        Self::from_utterances(utterances, label_space)
    }

    /// Assemble a corpus from already-validated utterances.
    pub fn from_utterances(
        utterances: Vec<Utterance>,
        label_space: LabelSpace,
    ) -> Result<Self, CorpusError> {
        let mut seen_ids: HashSet<&str> = HashSet::new();
        let mut seen_positions: HashSet<(&str, u32)> = HashSet::new();
        for (i, u) in utterances.iter().enumerate() {
            let line = i + 1;
            if !seen_ids.insert(&u.utterance_id) {
                return Err(CorpusError::MalformedRecord {
                    line,
                    reason: format!("duplicate utterance_id `{}`", u.utterance_id),
                });
            }
            if !seen_positions.insert((&u.dialogue_id, u.position)) {
                return Err(CorpusError::DuplicatePosition {
                    line,
                    dialogue_id: u.dialogue_id.clone(),
                    position: u.position,
                });
            }
        }

        let mut dialogues: BTreeMap<String, Vec<(u32, String)>> = BTreeMap::new();
        for u in &utterances {
            dialogues
                .entry(u.dialogue_id.clone())
                .or_default()
                .push((u.position, u.utterance_id.clone()));
        }
        let dialogues = dialogues
            .into_iter()
            .map(|(d, mut members)| {
                members.sort_by_key(|&(pos, _)| pos);
                (d, members.into_iter().map(|(_, id)| id).collect())
            })
            .collect();

        let index = utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.utterance_id.clone(), i))
            .collect();

        Ok(Self {
            label_space,
            utterances,
            dialogues,
            index,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Dialogue membership, ordered by position.
    pub fn dialogues(&self) -> &BTreeMap<String, Vec<String>> {
        &self.dialogues
    }

    pub fn get(&self, utterance_id: &str) -> Option<&Utterance> {
        self.index.get(utterance_id).map(|&i| &self.utterances[i])
    }

    /// Gold distribution for one utterance.
    pub fn gold(&self, utterance_id: &str) -> Result<EmotionDistribution, CorpusError> {
        let u = self
            .get(utterance_id)
            .ok_or_else(|| CorpusError::UnknownUtterance(utterance_id.to_string()))?;
        Ok(build_gold_distribution(&u.annotations, &self.label_space)?)
    }

    /// Drop every utterance with at least one annotator label that does not
    /// resolve to the label space. Dialogue orderings are re-derived from the
    /// survivors; original positions are preserved (gaps allowed).
    pub fn filter_by_label_space(&self) -> Corpus {
        let survivors: Vec<Utterance> = self
            .utterances
            .iter()
            .filter(|u| {
                u.annotations.iter().all(|a| {
                    a.labels
                        .iter()
                        .all(|l| self.label_space.resolve(l).is_some())
                })
            })
            .cloned()
            .collect();
        Self::from_utterances(survivors, self.label_space.clone())
            .expect("filtering preserves corpus invariants")
    }

    /// The last `min(m, available)` utterances of the target's dialogue with
    /// position strictly below the target's, in position order. Never bridges
    /// across dialogues.
    pub fn context_window(
        &self,
        target_id: &str,
        m: usize,
    ) -> Result<Vec<&Utterance>, CorpusError> {
        let target = self
            .get(target_id)
            .ok_or_else(|| CorpusError::UnknownUtterance(target_id.to_string()))?;
        let members = &self.dialogues[&target.dialogue_id];
        let preceding: Vec<&Utterance> = members
            .iter()
            .map(|id| &self.utterances[self.index[id]])
            .filter(|u| u.position < target.position)
            .collect();
        let start = preceding.len().saturating_sub(m);
        Ok(preceding[start..].to_vec())
    }

    /// Sample `k` utterances without replacement, weighted by
    /// [`log_inverse_frequency_weights`], deterministically for a fixed seed.
    /// The sampled corpus preserves original utterance order.
    pub fn sample_log_inverse_frequency(&self, k: usize, seed: u64) -> Result<Corpus, CorpusError> {
        if k > self.len() {
            return Err(CorpusError::KTooLarge {
                k,
                size: self.len(),
            });
        }
        let weights = log_inverse_frequency_weights(self)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut remaining: Vec<usize> = (0..self.len()).collect();
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
            let pick = if total > 0.0 {
                let x = rng.gen_range(0.0..total);
                let mut acc = 0.0;
                let mut pick = remaining.len() - 1;
                for (j, &i) in remaining.iter().enumerate() {
                    acc += weights[i];
                    if x < acc {
                        pick = j;
                        break;
                    }
                }
                pick
            } else {
                // all remaining weights zero: fall back to uniform
                rng.gen_range(0..remaining.len())
            };
            chosen.push(remaining.swap_remove(pick));
        }
        chosen.sort_unstable();
        let sampled = chosen
            .into_iter()
            .map(|i| self.utterances[i].clone())
            .collect();
        Self::from_utterances(sampled, self.label_space.clone())
    }
}

/// Collect up to `limit` per-record schema errors from JSONL text instead of
/// failing on the first, for diagnostic output. Cross-record problems
/// (duplicate ids or positions) are reported by [`Corpus::from_jsonl`].
pub fn scan_jsonl_errors(text: &str, limit: usize) -> Vec<CorpusError> {
    let mut errors = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        if errors.len() >= limit {
            break;
        }
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(line) {
            Err(e) => errors.push(CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            }),
            Ok(raw) => {
                if let Err(e) = validate_record(raw, line_no) {
                    errors.push(e);
                }
            }
        }
    }
    errors
}

fn validate_record(raw: RawRecord, line: usize) -> Result<Utterance, CorpusError> {
    let missing = |field: &'static str| CorpusError::MissingField { line, field };
    let utterance_id = raw.utterance_id.ok_or_else(|| missing("utterance_id"))?;
    let dialogue_id = raw.dialogue_id.ok_or_else(|| missing("dialogue_id"))?;
    let speaker_id = raw.speaker_id.ok_or_else(|| missing("speaker_id"))?;
    let position = raw.position.ok_or_else(|| missing("position"))?;
    let text = raw.text.ok_or_else(|| missing("text"))?;
    let annotations = raw.annotations.ok_or_else(|| missing("annotations"))?;

    if annotations.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line,
            reason: "annotations list is empty".into(),
        });
    }
    for a in &annotations {
        if a.labels.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: format!("annotator `{}` has an empty label set", a.annotator_id),
            });
        }
    }
    if let Some(f) = &raw.speech_features {
        if f.names.len() != SPEECH_FEATURE_DIM || f.values.len() != SPEECH_FEATURE_DIM {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: format!(
                    "speech_features must have {} names and values, got {} and {}",
                    SPEECH_FEATURE_DIM,
                    f.names.len(),
                    f.values.len()
                ),
            });
        }
    }

    Ok(Utterance {
        utterance_id,
        dialogue_id,
        speaker_id,
        position,
        text,
        annotations,
        speech_features: raw.speech_features,
    })
}

/// Aggregate annotator label sets into a gold distribution.
///
/// Each annotator contributes total mass `1/N`, split equally among that
/// annotator's chosen labels (duplicates within one annotator collapse).
/// Accumulation uses exact rational arithmetic; the result is converted to
/// floats once, at the end.
pub fn build_gold_distribution(
    annotations: &[AnnotatorLabeling],
    space: &LabelSpace,
) -> Result<EmotionDistribution, GoldError> {
    if annotations.is_empty() {
        return Err(GoldError::EmptyAnnotations);
    }
    let n = annotations.len() as u64;
    let mut mass: BTreeMap<&str, Ratio<u64>> = BTreeMap::new();
    for a in annotations {
        let mut chosen: Vec<&str> = Vec::new();
        for surface in &a.labels {
            let canonical = space
                .resolve(surface)
                .ok_or_else(|| GoldError::UnknownLabel {
                    annotator_id: a.annotator_id.clone(),
                    surface: surface.clone(),
                })?;
            if !chosen.contains(&canonical) {
                chosen.push(canonical);
            }
        }
        if chosen.is_empty() {
            return Err(GoldError::EmptyAnnotations);
        }
        let share = Ratio::new(1, n * chosen.len() as u64);
        for label in chosen {
            *mass.entry(label).or_insert_with(|| Ratio::new(0, 1)) += share;
        }
    }
    let total: Ratio<u64> = mass.values().sum();
    debug_assert_eq!(total, Ratio::new(1, 1));
    let pairs = mass
        .into_iter()
        .map(|(l, r)| (l, *r.numer() as f64 / *r.denom() as f64));
    Ok(EmotionDistribution::from_pairs(pairs, space).expect("rational masses form a distribution"))
}

/// Per-utterance sampling weights: the mean over the utterance's gold-support
/// labels of `ln(T / f_label)`, where `f_label` counts utterances whose gold
/// support contains the label and `T` is the sum of all such counts.
pub fn log_inverse_frequency_weights(corpus: &Corpus) -> Result<Vec<f64>, CorpusError> {
    let supports: Vec<Vec<String>> = corpus
        .utterances()
        .iter()
        .map(|u| {
            build_gold_distribution(&u.annotations, corpus.label_space()).map(|g| {
                g.support()
                    .map(|(l, _)| l.to_string())
                    .collect::<Vec<String>>()
            })
        })
        .collect::<Result<_, _>>()?;

    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for support in &supports {
        for label in support {
            *freq.entry(label).or_insert(0) += 1;
        }
    }
    let total: u64 = freq.values().sum();

    Ok(supports
        .iter()
        .map(|support| {
            let sum: f64 = support
                .iter()
                .map(|l| (total as f64 / freq[l.as_str()] as f64).ln())
                .sum();
            sum / support.len() as f64
        })
        .collect())
}
