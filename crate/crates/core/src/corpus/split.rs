//! Context-object splitting of captions and its inverse.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::objects::ObjectVocabulary;
use crate::corpus::vocab::{Caption, TokenId, Vocabulary, PLACEHOLDER, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectMention {
    pub name: String,
    pub plural: bool,
}

/// A caption factored into its context (objects replaced by `<s>`) and the
/// ordered object mentions.
///
/// Positions are 0-based indices into `context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextObjectSplit {
    pub context: Vec<TokenId>,
    pub objects: Vec<ObjectMention>,
    pub t_prime: Vec<usize>,
    pub t_dprime: Vec<usize>,
}

/// A context description without its objects. Placeholder slots keep the
/// grammatical number they had in the source caption.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Context {
    pub tokens: Vec<TokenId>,
    pub plural: Vec<bool>,
}

impl Context {
    pub fn placeholder_positions(&self) -> Vec<usize> {
        placeholder_positions(&self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn placeholder_positions(tokens: &[TokenId]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == PLACEHOLDER)
        .map(|(i, _)| i)
        .collect()
}

impl ContextObjectSplit {
    pub fn len(&self) -> usize {
        self.context.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context.is_empty()
    }

    pub fn to_context(&self) -> Context {
        Context {
            tokens: self.context.clone(),
            plural: self.objects.iter().map(|o| o.plural).collect(),
        }
    }

    /// The model-level sequence: context tokens with each placeholder
    /// replaced by the single surface-form token of its object.
    pub fn model_sequence(&self, vocab: &Vocabulary, ov: &ObjectVocabulary) -> Result<Vec<TokenId>> {
        let names: Vec<&str> = self.objects.iter().map(|o| o.name.as_str()).collect();
        fill_sequence(&self.to_context(), &names, vocab, ov)
    }
}

/// Replaces the placeholders of `ctx` with surface tokens of `fills`.
pub fn fill_sequence(
    ctx: &Context,
    fills: &[&str],
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
) -> Result<Vec<TokenId>> {
    let slots = ctx.placeholder_positions();
    if slots.len() != fills.len() || ctx.plural.len() != slots.len() {
        return Err(Error::FillArity {
            expected: slots.len(),
            got: fills.len(),
        });
    }
    let mut out = ctx.tokens.clone();
    for (k, &p) in slots.iter().enumerate() {
        out[p] = ov.surface_token(vocab, fills[k], ctx.plural[k])?;
    }
    Ok(out)
}

/// Longest-match object matcher over token ids.
#[derive(Debug, Clone)]
pub struct Splitter {
    // first token -> candidate forms, longest first
    table: HashMap<TokenId, Vec<(Vec<TokenId>, ObjectMention)>>,
}

impl Splitter {
    pub fn new(ov: &ObjectVocabulary, vocab: &Vocabulary) -> Self {
        let mut table: HashMap<TokenId, Vec<(Vec<TokenId>, ObjectMention)>> = HashMap::new();
        for name in ov.names() {
            for plural in [false, true] {
                let form = ov.surface(name, plural).expect("name exists");
                let mention = ObjectMention {
                    name: name.to_string(),
                    plural,
                };
                if form.contains(' ') {
                    if let Some(id) = vocab.id(form) {
                        table.entry(id).or_default().push((vec![id], mention.clone()));
                    }
                }
                let ids: Vec<TokenId> = form.split(' ').map(|w| vocab.id_or_unk(w)).collect();
                if ids.contains(&UNK) {
                    continue;
                }
                table.entry(ids[0]).or_default().push((ids, mention));
            }
        }
        for v in table.values_mut() {
            v.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.name.cmp(&b.1.name)));
        }
        Self { table }
    }

    /// Splits a word-level caption. Also accepts sequences that already hold
    /// compound surface tokens.
    pub fn split(&self, caption: &Caption) -> ContextObjectSplit {
        self.split_tokens(caption.words())
    }

    pub fn split_tokens(&self, words: &[TokenId]) -> ContextObjectSplit {
        let mut context = Vec::with_capacity(words.len());
        let mut objects = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = self.table.get(&words[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|(form, _)| words[i..].starts_with(form))
            });
            match hit {
                Some((form, m)) => {
                    context.push(PLACEHOLDER);
                    objects.push(m.clone());
                    i += form.len();
                }
                None => {
                    context.push(words[i]);
                    i += 1;
                }
            }
        }
        let t_dprime = placeholder_positions(&context);
        let t_prime = (0..context.len()).filter(|p| !t_dprime.contains(p)).collect();
        ContextObjectSplit {
            context,
            objects,
            t_prime,
            t_dprime,
        }
    }
}

/// Reassembles a word-level caption from a split and object fills.
pub fn merge_split(
    split: &ContextObjectSplit,
    fills: &[&str],
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
) -> Result<Caption> {
    if fills.len() != split.t_dprime.len() {
        return Err(Error::FillArity {
            expected: split.t_dprime.len(),
            got: fills.len(),
        });
    }
    merge_context(&split.to_context(), fills, vocab, ov)
}

pub fn merge_context(
    ctx: &Context,
    fills: &[&str],
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
) -> Result<Caption> {
    let seq = fill_sequence(ctx, fills, vocab, ov)?;
    Caption::new(expand_compounds(&seq, vocab)?)
}

/// Expands compound surface tokens into word tokens.
pub fn expand_compounds(seq: &[TokenId], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    let mut words = Vec::with_capacity(seq.len());
    for &t in seq {
        let s = vocab.token(t);
        if s.contains(' ') {
            for w in s.split(' ') {
                words.push(
                    vocab
                        .id(w)
                        .ok_or_else(|| Error::Unknown(format!("word {w:?} not in vocabulary")))?,
                );
            }
        } else {
            words.push(t);
        }
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::objects::SurfaceForms;
    use crate::corpus::vocab::{normalize, tokenize};

    fn setup() -> (ObjectVocabulary, Vocabulary) {
        let ov = ObjectVocabulary::new(
            [
                ("person", "person", "people"),
                ("kite", "kite", "kites"),
                ("fire hydrant", "fire hydrant", "fire hydrants"),
                ("hydrant", "hydrant", "hydrants"),
            ]
            .into_iter()
            .map(|(n, s, p)| {
                (
                    n.to_string(),
                    SurfaceForms {
                        singular: s.into(),
                        plural: p.into(),
                    },
                )
            }),
        )
        .unwrap();
        let text = "a person flying a kite in the blue cloud filled sky several octopus kites are \
                    being flown two people near fire hydrants";
        let words: Vec<String> = normalize(text)
            .into_iter()
            .chain(ov.all_surfaces().flat_map(|s| s.split(' ').map(str::to_string)))
            .chain(ov.all_surfaces().map(str::to_string))
            .collect();
        (ov.clone(), Vocabulary::build(words))
    }

    fn ctx_text(s: &ContextObjectSplit, v: &Vocabulary) -> String {
        v.decode(&s.context)
    }

    #[test]
    fn splits_table_examples() {
        let (ov, v) = setup();
        let sp = Splitter::new(&ov, &v);
        let c = tokenize("a person flying a kite in the blue cloud filled sky", &v).unwrap();
        let s = sp.split(&c);
        assert_eq!(ctx_text(&s, &v), "a <s> flying a <s> in the blue cloud filled sky");
        let names: Vec<_> = s.objects.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["person", "kite"]);
        assert_eq!(s.t_dprime, vec![1, 4]);

        let c = tokenize("several octopus kites are being flown in a blue sky", &v).unwrap();
        let s = sp.split(&c);
        assert_eq!(ctx_text(&s, &v), "several octopus <s> are being flown in a blue sky");
        assert_eq!(s.objects, vec![ObjectMention { name: "kite".into(), plural: true }]);
    }

    #[test]
    fn longest_match_wins() {
        let (ov, v) = setup();
        let sp = Splitter::new(&ov, &v);
        let c = tokenize("two people near fire hydrants", &v).unwrap();
        let s = sp.split(&c);
        assert_eq!(ctx_text(&s, &v), "two <s> near <s>");
        assert_eq!(s.objects[1].name, "fire hydrant");
        assert!(s.objects[1].plural);
        let back = merge_split(&s, &["person", "fire hydrant"], &v, &ov).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn no_objects_is_identity() {
        let (ov, v) = setup();
        let sp = Splitter::new(&ov, &v);
        let c = tokenize("in the blue sky", &v).unwrap();
        let s = sp.split(&c);
        assert_eq!(s.context, c.words());
        assert!(s.objects.is_empty() && s.t_dprime.is_empty());
        assert_eq!(s.t_prime, (0..c.len()).collect::<Vec<_>>());
    }

    #[test]
    fn merge_fills_placeholders() {
        let (ov, v) = setup();
        let sp = Splitter::new(&ov, &v);
        let c = tokenize("a person flying a kite in the blue cloud filled sky", &v).unwrap();
        let s = sp.split(&c);
        let m = merge_split(&s, &["person", "kite"], &v, &ov).unwrap();
        assert_eq!(
            v.decode(m.words()),
            "a person flying a kite in the blue cloud filled sky"
        );
        assert!(matches!(
            merge_split(&s, &["person"], &v, &ov),
            Err(Error::FillArity { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn model_sequence_uses_compound_tokens() {
        let (ov, v) = setup();
        let sp = Splitter::new(&ov, &v);
        let c = tokenize("two people near fire hydrants", &v).unwrap();
        let s = sp.split(&c);
        let seq = s.model_sequence(&v, &ov).unwrap();
        assert_eq!(seq.len(), s.context.len());
        assert_eq!(v.token(seq[3]), "fire hydrants");
        assert_eq!(expand_compounds(&seq, &v).unwrap(), c.words());
    }
}
