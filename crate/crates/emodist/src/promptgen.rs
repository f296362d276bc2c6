//! Deterministic prompt assembly from tagged segments: background, dialogue
//! context, target utterance, textualized speech features, few-shot examples,
//! task statement, and output constraints. Identical inputs always produce
//! byte-identical prompts.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Utterance, SPEECH_FEATURE_DIM};
use crate::distribution::EmotionDistribution;
use crate::label::LabelSpace;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("expected {expected} parallel feature names and values, got {names} and {values}")]
    LengthMismatch {
        expected: usize,
        names: usize,
        values: usize,
    },
    #[error("prompt inputs are inconsistent: {0}")]
    SpecMismatch(String),
    #[error("no candidate utterances to draw examples from")]
    NoCandidates,
    #[error("failed to read template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse template {path}: {source}")]
    TemplateParse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The literal scaffolding text around the variable parts of a prompt.
/// Ships with a built-in English version; overridable from a TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub context_header: String,
    pub context_line: String,
    pub target_line: String,
    pub task: String,
    pub oc_header: String,
    pub rule1: String,
    pub rule2: String,
    pub rule3: String,
    pub oc_footer: String,
    pub examples_header: String,
    pub example_line: String,
    pub speech_header: String,
}

const BUILTIN_TEMPLATE: &str = include_str!("../templates/prompt_en.toml");

impl PromptTemplate {
    pub fn builtin() -> Self {
        toml::from_str(BUILTIN_TEMPLATE).expect("built-in template is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| PromptError::TemplateParse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Substitute `{name}` tokens in a single left-to-right pass, so substituted
/// values can never be re-expanded.
fn subst(template: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        if let Some(close_rel) = rest[open..].find('}') {
            let name = &rest[open + 1..open + close_rel];
            for (key, value) in bindings {
                if *key == name {
                    out.push_str(&rest[..open]);
                    out.push_str(value);
                    rest = &rest[open + close_rel + 1..];
                    continue 'outer;
                }
            }
        }
        // not a known placeholder: emit the brace literally and move on
        out.push_str(&rest[..=open]);
        rest = &rest[open + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

/// Everything fixed about a prompt shape, independent of the target.
#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub mode: PromptMode,
    /// Maximum number of past utterances included as context (M).
    pub context_m: usize,
    pub include_speech: bool,
    /// Few-shot example count for corpora without dialogue structure.
    pub shots: usize,
    pub background_text: String,
    /// Draw dialogue-mode examples from before the context window instead of
    /// reusing the window itself (avoids label leakage into the context).
    pub disjoint_examples: bool,
    pub label_space: LabelSpace,
    pub template: PromptTemplate,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self.mode {
            PromptMode::FewShot if self.shots == 0 => Err(PromptError::SpecMismatch(
                "few-shot mode requires shots >= 1".into(),
            )),
            PromptMode::ZeroShot if self.shots != 0 => Err(PromptError::SpecMismatch(
                "zero-shot mode requires shots = 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// One worked example shown to the model.
#[derive(Debug, Clone)]
pub struct FewShotExample {
    pub speaker_id: String,
    pub text: String,
    pub gold: EmotionDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SegmentTag {
    Background,
    Context,
    TargetUtterance,
    Speech,
    Examples,
    Task,
    OutputConstraints,
}

/// A finished prompt plus the byte range each segment occupies. The ranges
/// tile `full_text` contiguously, in the order the governing prompt shape
/// prescribes.
#[derive(Debug, Clone)]
pub struct PromptText {
    pub full_text: String,
    pub segments: Vec<(SegmentTag, Range<usize>)>,
}

impl PromptText {
    pub fn segment(&self, tag: SegmentTag) -> Option<&str> {
        self.segments
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, r)| &self.full_text[r.clone()])
    }
}

/// Render the 88 named acoustic features as one text block: header followed
/// by comma-separated `Name: value` pairs at six decimals.
pub fn textualize_speech(
    names: &[String],
    values: &[f64],
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    if names.len() != SPEECH_FEATURE_DIM || values.len() != SPEECH_FEATURE_DIM {
        return Err(PromptError::LengthMismatch {
            expected: SPEECH_FEATURE_DIM,
            names: names.len(),
            values: values.len(),
        });
    }
    let pairs: Vec<String> = names
        .iter()
        .zip(values)
        .map(|(name, value)| format!("{name}: {value:.6}"))
        .collect();
    Ok(format!("{}{}", template.speech_header, pairs.join(", ")))
}

/// Render a probability map for display inside an example: display names,
/// two decimals, zero-probability labels omitted, entries ordered by
/// descending probability (ties: later label-space entries first).
pub fn probability_map_2dp(gold: &EmotionDistribution, space: &LabelSpace) -> String {
    let mut indexed: Vec<(usize, &str, f64)> = gold
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| *v > 0.0)
        .map(|(i, (l, v))| (i, l.as_str(), *v))
        .collect();
    indexed.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("probabilities are finite")
            .then(b.0.cmp(&a.0))
    });
    let inner: Vec<String> = indexed
        .iter()
        .map(|(_, label, v)| format!("'{}': {v:.2}", space.display(label)))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

/// Render numbered example lines in input order.
pub fn render_examples(
    examples: &[FewShotExample],
    space: &LabelSpace,
    template: &PromptTemplate,
) -> String {
    let mut lines = vec![template.examples_header.clone()];
    for (i, ex) in examples.iter().enumerate() {
        let k = (i + 1).to_string();
        let map = probability_map_2dp(&ex.gold, space);
        lines.push(subst(
            &template.example_line,
            &[
                ("k", k.as_str()),
                ("speaker", ex.speaker_id.as_str()),
                ("text", ex.text.as_str()),
                ("map", map.as_str()),
            ],
        ));
    }
    lines.join("\n")
}

/// The illustrative map inside Rule 1, generalized over the label space:
/// even-indexed labels get 0.1, odd-indexed get 0.0, and the final label
/// absorbs the remainder so the example itself obeys Rule 2.
fn rule1_example_map(space: &LabelSpace) -> String {
    let k = space.len();
    let mut values = vec![0.0; k];
    let mut allocated = 0.0;
    for (i, v) in values.iter_mut().enumerate().take(k - 1) {
        if i % 2 == 0 {
            *v = 0.1;
            allocated += 0.1;
        }
    }
    if allocated <= 1.0 {
        values[k - 1] = 1.0 - allocated;
    } else {
        // enormous label spaces: fall back to a point-mass example
        values = vec![0.0; k];
        values[0] = 1.0;
    }
    let inner: Vec<String> = space
        .labels()
        .zip(&values)
        .map(|(label, v)| format!("'{label}':{v:.1}"))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

/// Concatenate prompt segments in the order the prompt shape prescribes:
/// zero-shot is BG,C,TU,Task,OC; few-shot inserts Exps before Task; speech
/// prompts insert Speech after TU, and the speech few-shot shape places Exps
/// after Task instead. Empty context elides the context segment entirely.
pub fn assemble_prompt(
    spec: &PromptSpec,
    target: &Utterance,
    context: &[&Utterance],
    examples: &[FewShotExample],
    speech_segment: Option<&str>,
) -> Result<PromptText, PromptError> {
    spec.validate()?;
    if context.len() > spec.context_m {
        return Err(PromptError::SpecMismatch(format!(
            "context has {} utterances but context_m allows at most {}",
            context.len(),
            spec.context_m
        )));
    }
    match spec.mode {
        PromptMode::ZeroShot if !examples.is_empty() => {
            return Err(PromptError::SpecMismatch(
                "zero-shot prompts take no examples".into(),
            ))
        }
        PromptMode::FewShot if examples.is_empty() => {
            return Err(PromptError::SpecMismatch(
                "few-shot prompts require at least one example".into(),
            ))
        }
        _ => {}
    }
    if spec.include_speech != speech_segment.is_some() {
        return Err(PromptError::SpecMismatch(
            "speech segment presence must match include_speech".into(),
        ));
    }

    let template = &spec.template;
    let mut full_text = String::new();
    let mut segments = Vec::new();
    let push = |tag: SegmentTag,
                body: &str,
                full: &mut String,
                segs: &mut Vec<(SegmentTag, Range<usize>)>| {
        let start = full.len();
        full.push_str(body);
        full.push('\n');
        segs.push((tag, start..full.len()));
    };

    push(
        SegmentTag::Background,
        &spec.background_text,
        &mut full_text,
        &mut segments,
    );

    if !context.is_empty() {
        let mut lines = vec![template.context_header.clone()];
        for u in context {
            lines.push(subst(
                &template.context_line,
                &[
                    ("speaker", u.speaker_id.as_str()),
                    ("text", u.text.as_str()),
                ],
            ));
        }
        push(
            SegmentTag::Context,
            &lines.join("\n"),
            &mut full_text,
            &mut segments,
        );
    }

    push(
        SegmentTag::TargetUtterance,
        &subst(
            &template.target_line,
            &[
                ("speaker", target.speaker_id.as_str()),
                ("text", target.text.as_str()),
            ],
        ),
        &mut full_text,
        &mut segments,
    );

    if let Some(speech) = speech_segment {
        push(SegmentTag::Speech, speech, &mut full_text, &mut segments);
    }

    let examples_body = if examples.is_empty() {
        None
    } else {
        Some(render_examples(examples, &spec.label_space, template))
    };
    // the text-only few-shot shape puts examples before the task; the
    // speech few-shot shape puts them after it
    if !spec.include_speech {
        if let Some(body) = &examples_body {
            push(SegmentTag::Examples, body, &mut full_text, &mut segments);
        }
    }

    let options = spec.label_space.options_list();
    push(
        SegmentTag::Task,
        &subst(&template.task, &[("options", options.as_str())]),
        &mut full_text,
        &mut segments,
    );

    if spec.include_speech {
        if let Some(body) = &examples_body {
            push(SegmentTag::Examples, body, &mut full_text, &mut segments);
        }
    }

    let example_map = rule1_example_map(&spec.label_space);
    let oc = [
        template.oc_header.clone(),
        subst(&template.rule1, &[("example_map", example_map.as_str())]),
        template.rule2.clone(),
        template.rule3.clone(),
        template.oc_footer.clone(),
    ]
    .join("\n");
    push(
        SegmentTag::OutputConstraints,
        &oc,
        &mut full_text,
        &mut segments,
    );

    Ok(PromptText {
        full_text,
        segments,
    })
}

/// Choose few-shot examples for a target. Corpora with real dialogues reuse
/// the context-window utterances (or, with `disjoint_examples`, the
/// utterances just before the window); corpora of isolated utterances draw a
/// seeded sample of `shots` other utterances.
pub fn select_examples(
    corpus: &Corpus,
    target_id: &str,
    spec: &PromptSpec,
    seed: u64,
) -> Result<Vec<FewShotExample>, PromptError> {
    let single_utterance_corpus = corpus
        .dialogues()
        .values()
        .all(|members| members.len() == 1);

    let picked: Vec<&Utterance> = if single_utterance_corpus {
        let candidates: Vec<&Utterance> = corpus
            .utterances()
            .iter()
            .filter(|u| u.utterance_id != target_id)
            .collect();
        if candidates.is_empty() {
            return Err(PromptError::NoCandidates);
        }
        sample_without_replacement(&candidates, spec.shots.min(candidates.len()), seed)
    } else if spec.disjoint_examples {
        let window = corpus.context_window(target_id, spec.context_m)?;
        let window_ids: HashSet<&str> = window.iter().map(|u| u.utterance_id.as_str()).collect();
        let target = corpus
            .get(target_id)
            .expect("context_window checked the id");
        let mut earlier: Vec<&Utterance> = corpus.dialogues()[&target.dialogue_id]
            .iter()
            .map(|id| corpus.get(id).unwrap())
            .filter(|u| {
                u.position < target.position && !window_ids.contains(u.utterance_id.as_str())
            })
            .collect();
        let keep_from = earlier.len().saturating_sub(spec.context_m);
        earlier.drain(..keep_from);
        earlier
    } else {
        corpus.context_window(target_id, spec.context_m)?
    };

    picked
        .into_iter()
        .map(|u| {
            Ok(FewShotExample {
                speaker_id: u.speaker_id.clone(),
                text: u.text.clone(),
                gold: corpus.gold(&u.utterance_id)?,
            })
        })
        .collect()
}

fn sample_without_replacement<'a>(
    candidates: &[&'a Utterance],
    k: usize,
    seed: u64,
) -> Vec<&'a Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&Utterance> = candidates.to_vec();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = rng.gen_range(0..pool.len());
        picked.push(pool.swap_remove(idx));
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatorLabeling, Corpus};
    use crate::label::LabelSpace;

    fn space() -> LabelSpace {
        LabelSpace::basic_four()
    }

    fn spec(mode: PromptMode, m: usize, speech: bool, shots: usize) -> PromptSpec {
        PromptSpec {
            mode,
            context_m: m,
            include_speech: speech,
            shots,
            background_text: "Two speakers are talking.".into(),
            disjoint_examples: false,
            label_space: space(),
            template: PromptTemplate::builtin(),
        }
    }

    fn utt(
        id: &str,
        dlg: &str,
        speaker: &str,
        pos: u32,
        text: &str,
        votes: &[&[&str]],
    ) -> Utterance {
        Utterance {
            utterance_id: id.into(),
            dialogue_id: dlg.into(),
            speaker_id: speaker.into(),
            position: pos,
            text: text.into(),
            annotations: votes
                .iter()
                .enumerate()
                .map(|(i, labels)| AnnotatorLabeling {
                    annotator_id: format!("a{}", i + 1),
                    labels: labels.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            speech_features: None,
        }
    }

    /// The running dialogue used across the template tests.
    fn reference_corpus() -> Corpus {
        let utts = vec![
            utt(
                "d1_u0",
                "d1",
                "Ses01_F",
                0,
                "We could hide away.",
                &[&["sad"], &["happy"], &["neutral"]],
            ),
            utt(
                "d1_u1",
                "d1",
                "Ses01_M",
                1,
                "Run away?",
                &[&["sad"], &["sad"], &["neutral"]],
            ),
            utt(
                "d1_u2",
                "d1",
                "Ses01_F",
                2,
                "Mm hmm. We'll build a bunker and never come out.",
                &[&["sad"], &["sad"], &["happy"]],
            ),
            utt(
                "d1_u3",
                "d1",
                "Ses01_M",
                3,
                "I really don't want to go, I don't want to go...",
                &[&["sad"], &["sad"], &["sad"]],
            ),
        ];
        Corpus::from_utterances(utts, space()).unwrap()
    }

    #[test]
    fn speech_textualization_matches_reference_format() {
        let mut names: Vec<String> = (0..88).map(|i| format!("Feature {i}")).collect();
        names[0] = "Average Fundamental Frequency in Semitones from 27.5 Hz".into();
        let mut values = vec![0.0; 88];
        values[0] = 37.0395048;
        let segment = textualize_speech(&names, &values, &PromptTemplate::builtin()).unwrap();
        assert!(segment.starts_with(
            "Here are 88 speech features of the current speaker's sentence. The features are: "
        ));
        assert!(
            segment.contains("Average Fundamental Frequency in Semitones from 27.5 Hz: 37.039505")
        );
        assert!(segment.contains("Feature 1: 0.000000"));

        let short = textualize_speech(&names[..87], &values[..87], &PromptTemplate::builtin());
        assert!(matches!(short, Err(PromptError::LengthMismatch { .. })));
    }

    #[test]
    fn example_maps_use_display_names_two_decimals_and_omit_zeros() {
        let corpus = reference_corpus();
        let sp = space();
        assert_eq!(
            probability_map_2dp(&corpus.gold("d1_u1").unwrap(), &sp),
            "{'Sadness': 0.67, 'Neutral state': 0.33}"
        );
        // equal thirds: later space entries render first
        assert_eq!(
            probability_map_2dp(&corpus.gold("d1_u0").unwrap(), &sp),
            "{'Sadness': 0.33, 'Happiness': 0.33, 'Neutral state': 0.33}"
        );
        assert_eq!(
            probability_map_2dp(&corpus.gold("d1_u3").unwrap(), &sp),
            "{'Sadness': 1.00}"
        );
    }

    #[test]
    fn examples_are_numbered_in_order() {
        let corpus = reference_corpus();
        let sp = spec(PromptMode::FewShot, 3, false, 3);
        let examples = select_examples(&corpus, "d1_u3", &sp, 0).unwrap();
        assert_eq!(examples.len(), 3);
        let body = render_examples(&examples, &space(), &sp.template);
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[0], "Examples:");
        assert_eq!(
            lines[1],
            "Sentence 1: Ses01_F: \"We could hide away.\" Emotion probabilities: {'Sadness': 0.33, 'Happiness': 0.33, 'Neutral state': 0.33}"
        );
        assert!(lines[2].starts_with("Sentence 2: Ses01_M: \"Run away?\""));
        assert!(lines[3].starts_with("Sentence 3: Ses01_F:"));
    }

    #[test]
    fn zero_shot_prompt_has_expected_shape() {
        let corpus = reference_corpus();
        let sp = spec(PromptMode::ZeroShot, 3, false, 0);
        let target = corpus.get("d1_u3").unwrap();
        let context = corpus.context_window("d1_u3", 3).unwrap();
        let prompt = assemble_prompt(&sp, target, &context, &[], None).unwrap();

        let tags: Vec<SegmentTag> = prompt.segments.iter().map(|(t, _)| *t).collect();
        assert_eq!(
            tags,
            vec![
                SegmentTag::Background,
                SegmentTag::Context,
                SegmentTag::TargetUtterance,
                SegmentTag::Task,
                SegmentTag::OutputConstraints
            ]
        );
        assert!(prompt.full_text.starts_with("Two speakers are talking.\n"));
        assert!(prompt
            .full_text
            .contains("The conversation is:\nSes01_F: \"We could hide away.\"\n"));
        assert!(prompt
            .full_text
            .contains("Now Ses01_M says: \"I really don't want to go, I don't want to go...\""));
        assert!(prompt.full_text.contains(
            "from the options [neutral, happy, angry, sad], consider the conversation context."
        ));
        assert!(prompt
            .full_text
            .contains("in format of {'neutral':0.1, 'happy':0.0, 'angry':0.1, 'sad':0.8}."));
        assert!(prompt
            .full_text
            .ends_with("Please check again whether your output follows the three rules.\n"));

        // byte determinism
        let again = assemble_prompt(&sp, target, &context, &[], None).unwrap();
        assert_eq!(prompt.full_text, again.full_text);
    }

    #[test]
    fn segment_order_follows_each_prompt_shape() {
        let corpus = reference_corpus();
        let target = corpus.get("d1_u3").unwrap();
        let context = corpus.context_window("d1_u3", 3).unwrap();
        let fs = spec(PromptMode::FewShot, 3, false, 3);
        let examples = select_examples(&corpus, "d1_u3", &fs, 0).unwrap();

        let p2 = assemble_prompt(&fs, target, &context, &examples, None).unwrap();
        let tags2: Vec<SegmentTag> = p2.segments.iter().map(|(t, _)| *t).collect();
        assert_eq!(
            tags2,
            vec![
                SegmentTag::Background,
                SegmentTag::Context,
                SegmentTag::TargetUtterance,
                SegmentTag::Examples,
                SegmentTag::Task,
                SegmentTag::OutputConstraints
            ]
        );

        let speech = "Here are 88 speech features of the current speaker's sentence. The features are: x: 1.000000";
        let zs_speech = spec(PromptMode::ZeroShot, 3, true, 0);
        let p3 = assemble_prompt(&zs_speech, target, &context, &[], Some(speech)).unwrap();
        let tags3: Vec<SegmentTag> = p3.segments.iter().map(|(t, _)| *t).collect();
        assert_eq!(
            tags3,
            vec![
                SegmentTag::Background,
                SegmentTag::Context,
                SegmentTag::TargetUtterance,
                SegmentTag::Speech,
                SegmentTag::Task,
                SegmentTag::OutputConstraints
            ]
        );

        let fs_speech = spec(PromptMode::FewShot, 3, true, 3);
        let p4 = assemble_prompt(&fs_speech, target, &context, &examples, Some(speech)).unwrap();
        let tags4: Vec<SegmentTag> = p4.segments.iter().map(|(t, _)| *t).collect();
        assert_eq!(
            tags4,
            vec![
                SegmentTag::Background,
                SegmentTag::Context,
                SegmentTag::TargetUtterance,
                SegmentTag::Speech,
                SegmentTag::Task,
                SegmentTag::Examples,
                SegmentTag::OutputConstraints
            ]
        );

        // segments tile the full text contiguously in every shape
        for prompt in [&p2, &p3, &p4] {
            let mut cursor = 0usize;
            for (_, range) in &prompt.segments {
                assert_eq!(range.start, cursor);
                cursor = range.end;
            }
            assert_eq!(cursor, prompt.full_text.len());
        }
    }

    #[test]
    fn empty_context_is_elided() {
        let corpus = reference_corpus();
        let sp = spec(PromptMode::ZeroShot, 0, false, 0);
        let target = corpus.get("d1_u3").unwrap();
        let prompt = assemble_prompt(&sp, target, &[], &[], None).unwrap();
        assert!(!prompt.full_text.contains("The conversation is:"));
        assert!(prompt.segment(SegmentTag::Context).is_none());
    }

    #[test]
    fn spec_mismatches_are_rejected() {
        let corpus = reference_corpus();
        let target = corpus.get("d1_u3").unwrap();
        let context = corpus.context_window("d1_u3", 3).unwrap();

        let zs = spec(PromptMode::ZeroShot, 1, false, 0);
        assert!(matches!(
            assemble_prompt(&zs, target, &context, &[], None),
            Err(PromptError::SpecMismatch(_))
        ));

        let fs = spec(PromptMode::FewShot, 3, false, 3);
        assert!(matches!(
            assemble_prompt(&fs, target, &context, &[], None),
            Err(PromptError::SpecMismatch(_))
        ));

        let speechless = spec(PromptMode::ZeroShot, 3, true, 0);
        assert!(matches!(
            assemble_prompt(&speechless, target, &context, &[], None),
            Err(PromptError::SpecMismatch(_))
        ));
    }

    #[test]
    fn dialogue_examples_reuse_the_context_window() {
        let corpus = reference_corpus();
        let sp = spec(PromptMode::FewShot, 2, false, 2);
        let examples = select_examples(&corpus, "d1_u3", &sp, 9).unwrap();
        let context = corpus.context_window("d1_u3", 2).unwrap();
        assert_eq!(examples.len(), context.len());
        for (e, c) in examples.iter().zip(&context) {
            assert_eq!(e.text, c.text);
        }
        // dialogue-initial target: no candidates, empty result
        let initial = select_examples(&corpus, "d1_u0", &sp, 9).unwrap();
        assert!(initial.is_empty());
    }

    #[test]
    fn disjoint_examples_avoid_the_window() {
        let corpus = reference_corpus();
        let mut sp = spec(PromptMode::FewShot, 2, false, 2);
        sp.disjoint_examples = true;
        let examples = select_examples(&corpus, "d1_u3", &sp, 9).unwrap();
        // window covers u1,u2; only u0 remains before it
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].text, "We could hide away.");
    }

    #[test]
    fn isolated_utterance_corpora_sample_by_seed() {
        let utts: Vec<Utterance> = (0..12)
            .map(|i| {
                utt(
                    &format!("u{i}"),
                    &format!("d{i}"),
                    "spk",
                    0,
                    &format!("text {i}"),
                    &[&["sad"]],
                )
            })
            .collect();
        let corpus = Corpus::from_utterances(utts, space()).unwrap();
        let sp = spec(PromptMode::FewShot, 0, false, 5);
        let a = select_examples(&corpus, "u0", &sp, 42).unwrap();
        let b = select_examples(&corpus, "u0", &sp, 42).unwrap();
        let c = select_examples(&corpus, "u0", &sp, 43).unwrap();
        assert_eq!(a.len(), 5);
        let texts = |v: &[FewShotExample]| v.iter().map(|e| e.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&a), texts(&b));
        assert_ne!(texts(&a), texts(&c));
        assert!(texts(&a).iter().all(|t| t != "text 0"));

        let lonely = Corpus::from_utterances(
            vec![utt("u0", "d0", "spk", 0, "alone", &[&["sad"]])],
            space(),
        )
        .unwrap();
        assert!(matches!(
            select_examples(&lonely, "u0", &sp, 1),
            Err(PromptError::NoCandidates)
        ));
    }

    #[test]
    fn rule1_example_map_generalizes_to_other_spaces() {
        use crate::label::LabelDef;
        let defs = [
            "admiration",
            "gratitude",
            "approval",
            "amusement",
            "neutral",
        ]
        .iter()
        .map(|n| LabelDef {
            name: n.to_string(),
            display: None,
            synonyms: vec![],
        })
        .collect();
        let five = LabelSpace::new(defs).unwrap();
        assert_eq!(
            rule1_example_map(&five),
            "{'admiration':0.1, 'gratitude':0.0, 'approval':0.1, 'amusement':0.0, 'neutral':0.8}"
        );
        assert_eq!(
            rule1_example_map(&space()),
            "{'neutral':0.1, 'happy':0.0, 'angry':0.1, 'sad':0.8}"
        );
    }

    #[test]
    fn placeholder_substitution_is_single_pass() {
        assert_eq!(
            subst(
                "{speaker}: \"{text}\"",
                &[("speaker", "A"), ("text", "b {speaker} c")]
            ),
            "A: \"b {speaker} c\""
        );
        // unknown placeholders and stray braces pass through
        assert_eq!(
            subst("keep {unknown} and {", &[("known", "x")]),
            "keep {unknown} and {"
        );
    }
}
