use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{normalize, TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceForms {
    pub singular: String,
    pub plural: String,
}

/// Object names with their singular and plural surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectVocabulary {
    names: BTreeMap<String, SurfaceForms>,
}

impl ObjectVocabulary {
    pub fn new(entries: impl IntoIterator<Item = (String, SurfaceForms)>) -> Result<Self> {
        let mut names = BTreeMap::new();
        for (name, forms) in entries {
            let name = normalize(&name).join(" ");
            if name.is_empty() {
                return Err(Error::Config("empty object name".into()));
            }
            let sing = normalize(&forms.singular);
            let plur = normalize(&forms.plural);
            for (form, kind) in [(&sing, "singular"), (&plur, "plural")] {
                if form.is_empty() || form.len() > 3 {
                    return Err(Error::Config(format!(
                        "object {name}: {kind} form must have 1-3 tokens"
                    )));
                }
            }
            if sing == plur {
                return Err(Error::Config(format!(
                    "object {name}: singular and plural forms coincide"
                )));
            }
            let forms = SurfaceForms {
                singular: sing.join(" "),
                plural: plur.join(" "),
            };
            if names.insert(name.clone(), forms).is_some() {
                return Err(Error::Config(format!("duplicate object {name}")));
            }
        }
        if names.is_empty() {
            return Err(Error::Config("object vocabulary is empty".into()));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains_key(name)
    }

    /// Position of `name` in sorted order.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.keys().position(|n| n == name)
    }

    pub fn forms(&self, name: &str) -> Option<&SurfaceForms> {
        self.names.get(name)
    }

    pub fn surface(&self, name: &str, plural: bool) -> Option<&str> {
        self.names
            .get(name)
            .map(|f| if plural { f.plural.as_str() } else { f.singular.as_str() })
    }

    /// Every surface form string, singular and plural.
    pub fn all_surfaces(&self) -> impl Iterator<Item = &str> {
        self.names
            .values()
            .flat_map(|f| [f.singular.as_str(), f.plural.as_str()])
    }

    /// Single vocabulary token for the surface form of `name`.
    pub fn surface_token(&self, vocab: &Vocabulary, name: &str, plural: bool) -> Result<TokenId> {
        let s = self
            .surface(name, plural)
            .ok_or_else(|| Error::Unknown(format!("object {name}")))?;
        vocab
            .id(s)
            .ok_or_else(|| Error::Unknown(format!("surface form {s:?} not in vocabulary")))
    }

    /// True when `text` (normalized words) mentions any surface form of `name`.
    pub fn mentions(&self, words: &[String], name: &str) -> bool {
        let Some(f) = self.names.get(name) else {
            return false;
        };
        [&f.singular, &f.plural].iter().any(|form| {
            let form: Vec<&str> = form.split(' ').collect();
            words
                .windows(form.len())
                .any(|w| w.iter().zip(&form).all(|(a, b)| a == b))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.names)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: BTreeMap<String, SurfaceForms> = serde_json::from_str(&s).map_err(|e| {
            Error::parse(path, e.line(), e.to_string())
        })?;
        Self::new(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forms(s: &str, p: &str) -> SurfaceForms {
        SurfaceForms {
            singular: s.into(),
            plural: p.into(),
        }
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(ObjectVocabulary::new([("x".into(), forms("x", "x"))]).is_err());
        assert!(ObjectVocabulary::new([("x".into(), forms("a b c d", "xs"))]).is_err());
        assert!(ObjectVocabulary::new(Vec::new()).is_err());
    }

    #[test]
    fn mentions_multi_word_forms() {
        let ov = ObjectVocabulary::new([("fire hydrant".into(), forms("fire hydrant", "fire hydrants"))])
            .unwrap();
        let w: Vec<String> = normalize("two fire hydrants on a street");
        assert!(ov.mentions(&w, "fire hydrant"));
        let w: Vec<String> = normalize("a hydrant");
        assert!(!ov.mentions(&w, "fire hydrant"));
    }

    #[test]
    fn json_round_trip() {
        let ov = ObjectVocabulary::new([
            ("person".into(), forms("person", "people")),
            ("kite".into(), forms("kite", "kites")),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("objects.json");
        ov.save(&p).unwrap();
        assert_eq!(ObjectVocabulary::load(&p).unwrap(), ov);
    }
}
