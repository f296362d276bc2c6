//! Tolerant extraction of probability maps from model responses: find the
//! first balanced `{...}` region, canonicalize label surfaces, then validate
//! and repair the numbers into a proper distribution. Every deviation from
//! the constrained output format is either a logged repair or a typed
//! failure; nothing is silently fixed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::EmotionDistribution;
use crate::label::LabelSpace;

/// How far the raw probability sum may drift from 1 before the response is
/// rejected instead of renormalized.
pub const SUM_EPSILON: f64 = 0.05;

/// A recoverable deviation from the constrained output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Repair {
    /// The map was wrapped in markdown code fences.
    CodeFenceStripped,
    /// Non-whitespace text surrounded the map.
    ProseStripped,
    /// Keys or values used double quotes, no quotes, or quoted numbers.
    QuoteNormalized,
    /// A label surface resolved through a synonym or display name.
    SynonymMapped { from: String, to: String },
    /// An in-space label was absent and filled with probability zero.
    MissingLabelZeroFilled { label: String },
    /// A label outside the space was removed (its mass participates in the
    /// raw sum check but not in the final distribution).
    OutOfSpaceDropped { label: String },
    /// Values were multiplied by this factor so the distribution sums to 1.
    Renormalized { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ParseFailure {
    #[error("no probability map found in the response")]
    NoMapFound,
    #[error("braces never balance in the response")]
    UnbalancedBraces,
    #[error("value for `{key}` is not a finite number")]
    NonNumericValue { key: String },
    #[error("negative probability for `{label}`")]
    NegativeProbability { label: String },
    #[error("probabilities sum to {raw_sum} which is outside tolerance")]
    SumOutOfRange { raw_sum: f64 },
    #[error("no usable in-space probability mass")]
    EmptyMap,
}

/// Result of parsing one response: either a valid distribution or a typed
/// failure, never both, plus the audit trail of repairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub distribution: Option<EmotionDistribution>,
    /// Sum of all extracted values, including later-dropped labels.
    /// Zero when no map was extracted at all.
    pub raw_sum: f64,
    pub repairs: Vec<Repair>,
    pub failure: Option<ParseFailure>,
}

impl ParseOutcome {
    fn success(distribution: EmotionDistribution, raw_sum: f64, repairs: Vec<Repair>) -> Self {
        Self {
            distribution: Some(distribution),
            raw_sum,
            repairs,
            failure: None,
        }
    }

    fn failed(failure: ParseFailure, raw_sum: f64, repairs: Vec<Repair>) -> Self {
        Self {
            distribution: None,
            raw_sum,
            repairs,
            failure: Some(failure),
        }
    }

    pub fn is_success(&self) -> bool {
        self.distribution.is_some()
    }
}

impl Repair {
    /// Stable short name for tabular output.
    pub fn kind(&self) -> &'static str {
        match self {
            Repair::CodeFenceStripped => "code_fence_stripped",
            Repair::ProseStripped => "prose_stripped",
            Repair::QuoteNormalized => "quote_normalized",
            Repair::SynonymMapped { .. } => "synonym_mapped",
            Repair::MissingLabelZeroFilled { .. } => "missing_label_zero_filled",
            Repair::OutOfSpaceDropped { .. } => "out_of_space_dropped",
            Repair::Renormalized { .. } => "renormalized",
        }
    }
}

impl ParseFailure {
    /// Stable short name for tabular output.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseFailure::NoMapFound => "no_map_found",
            ParseFailure::UnbalancedBraces => "unbalanced_braces",
            ParseFailure::NonNumericValue { .. } => "non_numeric_value",
            ParseFailure::NegativeProbability { .. } => "negative_probability",
            ParseFailure::SumOutOfRange { .. } => "sum_out_of_range",
            ParseFailure::EmptyMap => "empty_map",
        }
    }
}

/// Surface entries extracted from the response text, before any label
/// resolution. Duplicate surfaces are preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedMap {
    pub entries: Vec<(String, f64)>,
    pub repairs: Vec<Repair>,
}

/// Pull the first balanced `{...}` region out of free-form text and parse it
/// as a label-to-number map. Code fences and surrounding prose are tolerated
/// (and logged); single quotes, double quotes, and bare keys all work;
/// values may be any finite decimal literal including `.8` and `1`.
pub fn extract_map(raw: &str) -> Result<ExtractedMap, ParseFailure> {
    let mut repairs = Vec::new();
    let defenced = strip_code_fences(raw);
    let text: &str = match &defenced {
        Some(stripped) => {
            repairs.push(Repair::CodeFenceStripped);
            stripped
        }
        None => raw,
    };

    let Some(region) = find_balanced_region(text) else {
        return Err(if text.contains('{') {
            ParseFailure::UnbalancedBraces
        } else {
            ParseFailure::NoMapFound
        });
    };

    let before = &text[..region.start];
    let after = &text[region.end..];
    if !before.trim().is_empty() || !after.trim().is_empty() {
        repairs.push(Repair::ProseStripped);
    }

    let body = &text[region.start + 1..region.end - 1];
    let mut entries = Vec::new();
    let mut quote_normalized = false;
    for piece in split_top_level(body) {
        if piece.trim().is_empty() {
            continue;
        }
        let (key_raw, value_raw) = match split_key_value(piece) {
            Some(kv) => kv,
            None => {
                return Err(ParseFailure::NonNumericValue {
                    key: piece.trim().to_string(),
                })
            }
        };
        let key = unquote(key_raw.trim(), &mut quote_normalized);
        let value_text = unquote(value_raw.trim(), &mut quote_normalized);
        let value: f64 = value_text
            .parse()
            .map_err(|_| ParseFailure::NonNumericValue { key: key.clone() })?;
        if !value.is_finite() {
            return Err(ParseFailure::NonNumericValue { key });
        }
        entries.push((key, value));
    }
    if quote_normalized {
        repairs.push(Repair::QuoteNormalized);
    }
    Ok(ExtractedMap { entries, repairs })
}

/// Byte range of the first `{` that scans to a matching `}` (quote- and
/// escape-aware). Candidates that never close are skipped, so a balanced
/// inner map inside unbalanced outer braces is still salvaged.
fn find_balanced_region(text: &str) -> Option<std::ops::Range<usize>> {
    for (start, _) in text.char_indices().filter(|&(_, c)| c == '{') {
        let mut depth = 0usize;
        let mut in_quote: Option<char> = None;
        let mut escaped = false;
        for (i, c) in text[start..].char_indices() {
            if escaped {
                escaped = false;
                continue;
            }
            match in_quote {
                Some(q) => match c {
                    '\\' => escaped = true,
                    _ if c == q => in_quote = None,
                    _ => {}
                },
                None => match c {
                    '\'' | '"' => in_quote = Some(c),
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(start..start + i + c.len_utf8());
                        }
                    }
                    _ => {}
                },
            }
        }
    }
    None
}

/// Remove markdown code fences when they wrap content; `None` when the text
/// has no fence markers.
fn strip_code_fences(raw: &str) -> Option<String> {
    if !raw.contains("```") {
        return None;
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find("```") {
        out.push_str(&rest[..pos]);
        rest = &rest[pos + 3..];
        // drop an immediate language tag like `json`
        let tag_end = rest
            .find(|c: char| !c.is_ascii_alphanumeric())
            .unwrap_or(rest.len());
        rest = &rest[tag_end..];
    }
    out.push_str(rest);
    Some(out)
}

/// Split on commas that sit outside quotes and nested braces/brackets.
fn split_top_level(body: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut depth = 0usize;
    let mut in_quote: Option<char> = None;
    let mut escaped = false;
    let mut piece_start = 0usize;
    for (i, c) in body.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match in_quote {
            Some(q) => match c {
                '\\' => escaped = true,
                _ if c == q => in_quote = None,
                _ => {}
            },
            None => match c {
                '\'' | '"' => in_quote = Some(c),
                '{' | '[' => depth += 1,
                '}' | ']' => depth = depth.saturating_sub(1),
                ',' if depth == 0 => {
                    pieces.push(&body[piece_start..i]);
                    piece_start = i + 1;
                }
                _ => {}
            },
        }
    }
    pieces.push(&body[piece_start..]);
    pieces
}

/// Split one `key: value` entry at the first colon outside quotes.
fn split_key_value(piece: &str) -> Option<(&str, &str)> {
    let mut in_quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in piece.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match in_quote {
            Some(q) => match c {
                '\\' => escaped = true,
                _ if c == q => in_quote = None,
                _ => {}
            },
            None => match c {
                '\'' | '"' => in_quote = Some(c),
                ':' => return Some((&piece[..i], &piece[i + 1..])),
                _ => {}
            },
        }
    }
    None
}

/// Strip one layer of quotes; anything other than the single-quote reference
/// format flips the normalization flag.
fn unquote(s: &str, quote_normalized: &mut bool) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() >= 2 {
        let (first, last) = (chars[0], chars[chars.len() - 1]);
        if first == last && (first == '\'' || first == '"') {
            if first == '"' {
                *quote_normalized = true;
            }
            return chars[1..chars.len() - 1].iter().collect();
        }
    }
    // bare token (numbers are expected to be bare; keys are not)
    if !s.is_empty()
        && !s.chars().next().unwrap().is_ascii_digit()
        && !s.starts_with('.')
        && !s.starts_with('-')
    {
        *quote_normalized = true;
    }
    s.to_string()
}

/// Resolve surface labels against the space. Unresolvable surfaces are
/// dropped (logged), resolvable non-canonical surfaces are mapped (logged),
/// and duplicate canonical labels are summed.
pub fn canonicalize(
    entries: &[(String, f64)],
    space: &LabelSpace,
) -> (Vec<(String, f64)>, Vec<Repair>) {
    let mut repairs = Vec::new();
    let mut canonical: Vec<(String, f64)> = Vec::new();
    for (surface, value) in entries {
        match space.resolve(surface) {
            Some(label) => {
                if surface.trim() != label {
                    repairs.push(Repair::SynonymMapped {
                        from: surface.clone(),
                        to: label.to_string(),
                    });
                }
                match canonical.iter_mut().find(|(l, _)| l == label) {
                    Some((_, v)) => *v += value,
                    None => canonical.push((label.to_string(), *value)),
                }
            }
            None => repairs.push(Repair::OutOfSpaceDropped {
                label: surface.clone(),
            }),
        }
    }
    (canonical, repairs)
}

/// Validate a canonical map and normalize it into a distribution: negatives
/// fail, missing labels zero-fill, and a sum within `epsilon` of 1 is divided
/// through. Keys must already be canonical.
pub fn validate_and_normalize(
    canonical: &[(String, f64)],
    space: &LabelSpace,
    epsilon: f64,
) -> ParseOutcome {
    let raw_sum = canonical.iter().map(|(_, v)| v).sum();
    finalize(canonical.to_vec(), space, epsilon, raw_sum, Vec::new())
}

fn finalize(
    mut canonical: Vec<(String, f64)>,
    space: &LabelSpace,
    epsilon: f64,
    raw_sum: f64,
    mut repairs: Vec<Repair>,
) -> ParseOutcome {
    if canonical.is_empty() {
        return ParseOutcome::failed(ParseFailure::EmptyMap, raw_sum, repairs);
    }
    for (label, value) in &canonical {
        if *value < 0.0 {
            return ParseOutcome::failed(
                ParseFailure::NegativeProbability {
                    label: label.clone(),
                },
                raw_sum,
                repairs,
            );
        }
    }
    // The tolerance judges the model's own arithmetic, so it looks at the raw
    // sum; dropped out-of-space mass still counts here.
    if (raw_sum - 1.0).abs() > epsilon {
        return ParseOutcome::failed(ParseFailure::SumOutOfRange { raw_sum }, raw_sum, repairs);
    }
    let kept_sum: f64 = canonical.iter().map(|(_, v)| v).sum();
    if kept_sum <= 0.0 {
        return ParseOutcome::failed(ParseFailure::EmptyMap, raw_sum, repairs);
    }
    for label in space.labels() {
        if !canonical.iter().any(|(l, _)| l == label) {
            canonical.push((label.to_string(), 0.0));
            repairs.push(Repair::MissingLabelZeroFilled {
                label: label.to_string(),
            });
        }
    }
    if kept_sum != 1.0 {
        let factor = 1.0 / kept_sum;
        for (_, v) in &mut canonical {
            *v *= factor;
        }
        repairs.push(Repair::Renormalized { factor });
    }
    let distribution = EmotionDistribution::from_pairs(canonical, space)
        .expect("validated map forms a distribution");
    ParseOutcome::success(distribution, raw_sum, repairs)
}

/// Full pipeline: extract, canonicalize, validate, with the default sum
/// tolerance. Never panics, whatever the input text.
pub fn parse(raw: &str, space: &LabelSpace) -> ParseOutcome {
    parse_with_epsilon(raw, space, SUM_EPSILON)
}

/// [`parse`] with an explicit sum tolerance.
pub fn parse_with_epsilon(raw: &str, space: &LabelSpace, epsilon: f64) -> ParseOutcome {
    let extracted = match extract_map(raw) {
        Ok(e) => e,
        Err(failure) => return ParseOutcome::failed(failure, 0.0, Vec::new()),
    };
    let raw_sum = extracted.entries.iter().map(|(_, v)| v).sum();
    let mut repairs = extracted.repairs;
    let (canonical, canon_repairs) = canonicalize(&extracted.entries, space);
    repairs.extend(canon_repairs);
    finalize(canonical, space, epsilon, raw_sum, repairs)
}

/// Render a distribution in the constrained single-quoted dictionary format
/// with full-precision values, e.g. `{'neutral':0.1, 'happy':0.9}`.
pub fn render_rule1(dist: &EmotionDistribution) -> String {
    let inner: Vec<String> = dist
        .entries()
        .iter()
        .map(|(label, value)| format!("'{label}':{value}"))
        .collect();
    format!("{{{}}}", inner.join(", "))
}
