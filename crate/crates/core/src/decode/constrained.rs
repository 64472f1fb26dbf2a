//! Constrained beam search over a finite-state machine whose states are the
//! subsets of satisfied constraints.

use std::collections::BTreeMap;

use rand::SeedableRng;

use super::{gen_step, GenState};
use crate::autograd::Graph;
use crate::corpus::vocab::{TokenId, Vocabulary, EOS};
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::model::{CosModel, ImageVars};
use crate::rng::{normal_vec, Rng};

/// Required token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstraintSet {
    pub phrases: Vec<Vec<TokenId>>,
}

impl ConstraintSet {
    /// Maps each phrase to tokens. A phrase that is itself a vocabulary entry
    /// (such as a compound object form) becomes one token.
    pub fn from_words(words: &[&str], vocab: &Vocabulary) -> Result<Self> {
        let mut phrases = Vec::with_capacity(words.len());
        for w in words {
            let w = w.trim();
            let ids = match vocab.id(w) {
                Some(id) => vec![id],
                None => w
                    .split_whitespace()
                    .map(|t| vocab.id(t).ok_or_else(|| Error::Unknown(format!("constraint word {t:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            };
            if ids.is_empty() {
                return Err(Error::Config("empty constraint".into()));
            }
            phrases.push(ids);
        }
        Ok(Self { phrases })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.phrases.len()) - 1
    }

    /// Mask of constraints completed by the suffix of `seq`.
    fn completed_by_suffix(&self, seq: &[TokenId]) -> u32 {
        let mut m = 0;
        for (i, p) in self.phrases.iter().enumerate() {
            if seq.ends_with(p) {
                m |= 1 << i;
            }
        }
        m
    }

    /// True when every phrase occurs contiguously in `seq`.
    pub fn satisfied_by(&self, seq: &[TokenId]) -> bool {
        self.phrases.iter().all(|p| seq.windows(p.len()).any(|w| w == p.as_slice()))
    }
}

/// Next-token log-probabilities as a function of a decoding state.
pub trait StepScorer {
    type State: Clone;
    fn init(&mut self) -> Self::State;
    /// Consumes `prev` at step `t` and returns log-probabilities for the
    /// token at that step plus the advanced state.
    fn step(&mut self, state: &Self::State, t: usize, prev: TokenId) -> (Vec<f64>, Self::State);
}

/// Fixed bigram log-probability table: `table[prev][next]`.
#[derive(Debug, Clone)]
pub struct TableScorer {
    pub table: Vec<Vec<f64>>,
    pub start: TokenId,
}

impl StepScorer for TableScorer {
    type State = ();
    fn init(&mut self) {}
    fn step(&mut self, _: &(), _t: usize, prev: TokenId) -> (Vec<f64>, ()) {
        (self.table[prev as usize].clone(), ())
    }
}

/// The latent model as a scorer. All hypotheses share one latent noise draw
/// per step, so their token distributions come from the same latent sample.
pub struct ModelScorer<'m> {
    model: &'m CosModel,
    graph: Graph<'m>,
    img: ImageVars,
    eps: Vec<(Vec<f64>, Vec<f64>)>,
    temperature: f64,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m CosModel, img: &ImageRecord, seed: u64, max_len: usize, temperature: f64) -> Result<Self> {
        let mut graph = Graph::new(&model.params);
        let iv = model.image_vars(&mut graph, img)?;
        let mut rng = Rng::seed_from_u64(seed);
        let z = model.z_dim();
        let eps = (0..=max_len)
            .map(|_| (normal_vec(&mut rng, z), normal_vec(&mut rng, z)))
            .collect();
        Ok(Self {
            model,
            graph,
            img: iv,
            eps,
            temperature,
        })
    }
}

impl<'m> StepScorer for ModelScorer<'m> {
    type State = GenState;
    fn init(&mut self) -> GenState {
        GenState::init(self.model, &mut self.graph)
    }
    fn step(&mut self, state: &GenState, t: usize, prev: TokenId) -> (Vec<f64>, GenState) {
        let (em, eo) = &self.eps[t];
        gen_step(self.model, &mut self.graph, &self.img, *state, prev, em, eo, self.temperature)
    }
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<TokenId>,
    score: f64,
    mask: u32,
    state: S,
}

fn better(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Beam search keeping `max(1, beam / 2^|C|)` hypotheses in every
/// constraint-subset state. Returns the best finished sequence (without
/// EOS) whose state satisfies all constraints, with its log-probability.
/// Sequences hold at most `max_len` tokens before EOS.
pub fn constrained_decode<S: StepScorer>(
    scorer: &mut S,
    start: TokenId,
    constraints: &ConstraintSet,
    beam: usize,
    max_len: usize,
) -> Result<(Vec<TokenId>, f64)> {
    let n_states = 1usize << constraints.len();
    if beam < n_states {
        return Err(Error::Config(format!(
            "beam {beam} smaller than the {n_states} constraint states"
        )));
    }
    let per_state = (beam / n_states).max(1);
    let full = constraints.full_mask();
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        mask: 0,
        state: scorer.init(),
    }];
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for t in 0..=max_len {
        let mut groups: BTreeMap<u32, Vec<Hyp<S::State>>> = BTreeMap::new();
        for h in &alive {
            let prev = h.tokens.last().copied().unwrap_or(start);
            let (lp, next_state) = scorer.step(&h.state, t, prev);
            for (tok, &l) in lp.iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let score = h.score + l;
                let tok = tok as TokenId;
                if tok == EOS {
                    if h.mask == full && best.as_ref().map_or(true, |b| better((score, &h.tokens), (b.1, &b.0))) {
                        best = Some((h.tokens.clone(), score));
                    }
                    continue;
                }
                if t == max_len {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                let mask = h.mask | constraints.completed_by_suffix(&tokens);
                groups.entry(mask).or_default().push(Hyp {
                    tokens,
                    score,
                    mask,
                    state: next_state.clone(),
                });
            }
        }
        alive.clear();
        for (_, mut g) in groups {
            g.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .expect("finite scores")
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            g.truncate(per_state);
            alive.extend(g);
        }
        if alive.is_empty() {
            break;
        }
    }
    best.ok_or(Error::ConstraintUnsat { max_len })
}

/// Exhaustive search over every sequence of at most `max_len` tokens
/// followed by EOS. Tokens the scorer gives -inf are skipped. Only
/// practical for tiny vocabularies.
pub fn brute_force_best<S: StepScorer>(
    scorer: &mut S,
    start: TokenId,
    constraints: &ConstraintSet,
    max_len: usize,
) -> Option<(Vec<TokenId>, f64)> {
    fn rec<S: StepScorer>(
        scorer: &mut S,
        state: &S::State,
        prefix: &mut Vec<TokenId>,
        score: f64,
        start: TokenId,
        c: &ConstraintSet,
        max_len: usize,
        best: &mut Option<(Vec<TokenId>, f64)>,
    ) {
        let prev = prefix.last().copied().unwrap_or(start);
        let (lp, next) = scorer.step(state, prefix.len(), prev);
        for (tok, &l) in lp.iter().enumerate() {
            if !l.is_finite() {
                continue;
            }
            let s = score + l;
            if tok as TokenId == EOS {
                if c.satisfied_by(prefix) && best.as_ref().map_or(true, |b| better((s, prefix), (b.1, &b.0))) {
                    *best = Some((prefix.clone(), s));
                }
            } else if prefix.len() < max_len {
                prefix.push(tok as TokenId);
                rec(scorer, &next, prefix, s, start, c, max_len, best);
                prefix.pop();
            }
        }
    }
    let init = scorer.init();
    let mut best = None;
    rec(scorer, &init, &mut Vec::new(), 0.0, start, constraints, max_len, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scorer() -> TableScorer {
        let ninf = f64::NEG_INFINITY;
        // tokens: 2 = EOS, 5 = "a", 6 = "b"; everything else impossible
        let row = |eos: f64, a: f64, b: f64| {
            let mut r = vec![ninf; 7];
            r[2] = eos;
            r[5] = a;
            r[6] = b;
            r
        };
        let mut table = vec![row(-0.1, -3.0, -3.0); 7];
        table[1] = row(-5.0, -0.2, -2.0);
        table[5] = row(-0.3, -1.0, -4.0);
        table[6] = row(-0.5, -1.5, -1.5);
        TableScorer { table, start: 1 }
    }

    #[test]
    fn unconstrained_matches_brute_force() {
        let c = ConstraintSet::default();
        let got = constrained_decode(&mut scorer(), 1, &c, 8, 3).unwrap();
        let want = brute_force_best(&mut scorer(), 1, &c, 3).unwrap();
        assert_eq!(got.0, want.0);
        assert_eq!(got.0, vec![5]);
    }

    #[test]
    fn forces_constraint_word() {
        let c = ConstraintSet { phrases: vec![vec![6]] };
        let (toks, lp) = constrained_decode(&mut scorer(), 1, &c, 8, 3).unwrap();
        assert!(c.satisfied_by(&toks));
        let want = brute_force_best(&mut scorer(), 1, &c, 3).unwrap();
        assert_eq!(toks, want.0);
        assert_eq!(lp, want.1);
    }

    #[test]
    fn small_beam_and_unsat() {
        let c = ConstraintSet { phrases: vec![vec![5], vec![6]] };
        assert!(matches!(constrained_decode(&mut scorer(), 1, &c, 3, 3), Err(Error::Config(_))));
        let c = ConstraintSet { phrases: vec![vec![5, 6, 5, 6]] };
        assert!(matches!(
            constrained_decode(&mut scorer(), 1, &c, 4, 3),
            Err(Error::ConstraintUnsat { .. })
        ));
    }
}
