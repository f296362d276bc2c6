//! Canonical emotion label spaces with synonym resolution.
//!
//! A [`LabelSpace`] fixes the ordered set of canonical labels an experiment
//! scores against (e.g. `[neutral, happy, angry, sad]`) and maps surface
//! forms seen in annotations or model output ("Sadness", "NEUTRAL STATE")
//! back to canonical names, case-insensitively.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelSpaceError {
    #[error("label space has no labels")]
    Empty,
    #[error("duplicate canonical label `{0}`")]
    DuplicateLabel(String),
    #[error("synonym `{surface}` maps to both `{first}` and `{second}`")]
    AmbiguousSynonym {
        surface: String,
        first: String,
        second: String,
    },
    #[error("failed to read label space file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse label space file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One canonical label plus the surface forms that resolve to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelDef {
    /// Canonical name used in metrics and the Task option list.
    pub name: String,
    /// Display name used when rendering example probability maps.
    #[serde(default)]
    pub display: Option<String>,
    /// Additional surface forms (case-insensitive).
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSpaceFile {
    labels: Vec<LabelDef>,
}

/// Ordered canonical labels with a case-insensitive synonym table.
///
/// Canonical names and display names are always synonyms of themselves.
#[derive(Debug, Clone)]
pub struct LabelSpace {
    defs: Vec<LabelDef>,
    // lowercase surface form -> index into defs
    synonym_index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(defs: Vec<LabelDef>) -> Result<Self, LabelSpaceError> {
        if defs.is_empty() {
            return Err(LabelSpaceError::Empty);
        }
        let mut synonym_index = HashMap::new();
        for (idx, def) in defs.iter().enumerate() {
            let mut surfaces = vec![def.name.clone()];
            if let Some(d) = &def.display {
                surfaces.push(d.clone());
            }
            surfaces.extend(def.synonyms.iter().cloned());
            for surface in surfaces {
                let key = normalize(&surface);
                match synonym_index.get(&key) {
                    None => {
                        synonym_index.insert(key, idx);
                    }
                    Some(&prev) if prev == idx => {}
                    Some(&prev) => {
                        // The canonical name itself colliding is a duplicate
                        // label; anything else is an ambiguous synonym.
                        if key == normalize(&def.name) {
                            return Err(LabelSpaceError::DuplicateLabel(def.name.clone()));
                        }
                        return Err(LabelSpaceError::AmbiguousSynonym {
                            surface,
                            first: defs[prev].name.clone(),
                            second: def.name.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            defs,
            synonym_index,
        })
    }

    /// Load from a JSON file: `{"labels": [{"name", "display"?, "synonyms"?}]}`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LabelSpaceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LabelSpaceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: LabelSpaceFile =
            serde_json::from_str(&text).map_err(|source| LabelSpaceError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        Self::new(file.labels)
    }

    /// Resolve a surface form to its canonical label.
    pub fn resolve(&self, surface: &str) -> Option<&str> {
        self.synonym_index
            .get(&normalize(surface))
            .map(|&idx| self.defs[idx].name.as_str())
    }

    /// Canonical labels in space order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Position of a canonical label in space order.
    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.defs.iter().position(|d| d.name == canonical)
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.index_of(canonical).is_some()
    }

    /// Display name for a canonical label (falls back to the canonical name).
    pub fn display<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.defs
            .iter()
            .find(|d| d.name == canonical)
            .and_then(|d| d.display.as_deref())
            .unwrap_or(canonical)
    }

    /// Canonical names joined for the Task option list, e.g.
    /// `neutral, happy, angry, sad`.
    pub fn options_list(&self) -> String {
        self.labels().collect::<Vec<_>>().join(", ")
    }

    /// The four-class conversational space used by the dialogue corpora.
    pub fn basic_four() -> Self {
        let defs = vec![
            LabelDef {
                name: "neutral".into(),
                display: Some("Neutral state".into()),
                synonyms: vec!["neutrality".into(), "no emotion".into(), "calm".into()],
            },
            LabelDef {
                name: "happy".into(),
                display: Some("Happiness".into()),
                synonyms: vec!["joy".into(), "joyful".into(), "excited".into()],
            },
            LabelDef {
                name: "angry".into(),
                display: Some("Anger".into()),
                synonyms: vec!["mad".into(), "frustrated".into(), "frustration".into()],
            },
            LabelDef {
                name: "sad".into(),
                display: Some("Sadness".into()),
                synonyms: vec!["sorrow".into(), "sorrowful".into(), "unhappy".into()],
            },
        ];
        Self::new(defs).expect("builtin label space is valid")
    }
}

fn normalize(surface: &str) -> String {
    surface.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_synonyms_case_insensitively() {
        let space = LabelSpace::basic_four();
        assert_eq!(space.resolve("sad"), Some("sad"));
        assert_eq!(space.resolve("Sadness"), Some("sad"));
        assert_eq!(space.resolve("NEUTRAL STATE"), Some("neutral"));
        assert_eq!(space.resolve("  joy "), Some("happy"));
        assert_eq!(space.resolve("bored"), None);
    }

    #[test]
    fn canonical_names_resolve_to_themselves() {
        let space = LabelSpace::basic_four();
        for label in space.labels() {
            assert_eq!(space.resolve(label), Some(label));
        }
    }

    #[test]
    fn options_list_uses_space_order() {
        let space = LabelSpace::basic_four();
        assert_eq!(space.options_list(), "neutral, happy, angry, sad");
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(matches!(
            LabelSpace::new(vec![]),
            Err(LabelSpaceError::Empty)
        ));
        let dup = vec![
            LabelDef {
                name: "sad".into(),
                display: None,
                synonyms: vec![],
            },
            LabelDef {
                name: "sad".into(),
                display: None,
                synonyms: vec![],
            },
        ];
        assert!(matches!(
            LabelSpace::new(dup),
            Err(LabelSpaceError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn rejects_cross_label_synonym() {
        let defs = vec![
            LabelDef {
                name: "happy".into(),
                display: None,
                synonyms: vec!["upbeat".into()],
            },
            LabelDef {
                name: "excited".into(),
                display: None,
                synonyms: vec!["Upbeat".into()],
            },
        ];
        assert!(matches!(
            LabelSpace::new(defs),
            Err(LabelSpaceError::AmbiguousSynonym { .. })
        ));
    }
}
