use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const PLACEHOLDER: TokenId = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<s>"];

/// Token table. Special tokens occupy ids `0..5`; remaining tokens are sorted.
///
/// Multi-word object surface forms (e.g. `"fire hydrant"`) are single entries
/// so that an object mention always occupies one model timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !w.is_empty() && !SPECIALS.contains(&w.as_str()))
            .collect();
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set)
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Space-joined text for a token sequence; compound tokens expand to
    /// their words.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Word list for a token sequence, splitting compound tokens.
    pub fn words(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .flat_map(|&i| self.token(i).split(' '))
            .map(str::to_string)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = s.lines().map(str::to_string).collect();
        for (i, sp) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*sp) {
                return Err(Error::parse(path, i + 1, format!("expected special token {sp}")));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if !seen.insert(t) {
                return Err(Error::parse(path, i + 1, format!("duplicate token {t:?}")));
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Lowercases, drops apostrophes and turns other punctuation into spaces.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'')
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// A caption as word ids. The framed form adds BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Caption {
    words: Vec<TokenId>,
}

impl Caption {
    pub fn new(words: Vec<TokenId>) -> Result<Self> {
        if let Some(p) = words.iter().position(|&w| w == PAD || w == BOS || w == EOS) {
            return Err(Error::Domain(format!("framing token inside caption at {p}")));
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[TokenId] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn framed(&self) -> Vec<TokenId> {
        let mut v = Vec::with_capacity(self.words.len() + 2);
        v.push(BOS);
        v.extend_from_slice(&self.words);
        v.push(EOS);
        v
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.words.truncate(max_len);
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Caption> {
    let words = normalize(text);
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    Caption::new(words.iter().map(|w| vocab.id_or_unk(w)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["a", "cat", "sitting"])
    }

    #[test]
    fn tokenize_frames_and_strips() {
        let v = vocab();
        let c = tokenize("A cat sitting.", &v).unwrap();
        let ids: Vec<_> = ["a", "cat", "sitting"].iter().map(|w| v.id(w).unwrap()).collect();
        let mut expect = vec![BOS];
        expect.extend(ids);
        expect.push(EOS);
        assert_eq!(c.framed(), expect);
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = vocab();
        let c = tokenize("a zzqx", &v).unwrap();
        assert_eq!(c.framed(), vec![BOS, v.id("a").unwrap(), UNK, EOS]);
    }

    #[test]
    fn empty_text_errors() {
        assert!(matches!(tokenize("", &vocab()), Err(Error::EmptyText)));
        assert!(matches!(tokenize(" ?! ", &vocab()), Err(Error::EmptyText)));
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocabulary::build(["zebra", "<s>", "a"]);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as TokenId));
        }
        assert_eq!(v.len(), SPECIALS.len() + 2);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as TokenId));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::build(["fire hydrant", "a", "dog"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
