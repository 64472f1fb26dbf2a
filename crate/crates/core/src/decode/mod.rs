//! Caption generation: ancestral sampling through the conditional priors,
//! per-image diverse sampling and lexically constrained beam search.

mod constrained;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autograd::{log_softmax, Graph, Var};
use crate::corpus::split::expand_compounds;
use crate::corpus::vocab::{Caption, TokenId, Vocabulary, BOS, EOS, PAD, PLACEHOLDER, UNK};
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::model::{CosModel, DecoderVars, ImageVars, PriorVars};
use crate::rng::{normal_vec, sample_seed, Rng};

pub use constrained::{brute_force_best, constrained_decode, ConstraintSet, ModelScorer, StepScorer, TableScorer};


/// Token emission rule given the sampled latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emission {
    Greedy,
    Multinomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Maximum number of model tokens before EOS.
    pub max_len: usize,
    /// Scale applied to the prior standard deviations.
    pub temperature: f64,
    pub emission: Emission,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            max_len: 20,
            temperature: 1.0,
            emission: Emission::Greedy,
        }
    }
}

/// Tokens the decoder may never emit.
pub(crate) fn banned(t: usize) -> bool {
    t == PAD as usize || t == BOS as usize || t == UNK as usize || t == PLACEHOLDER as usize
}

/// Per-step recurrent state of generation: both priors, the decoder and the
/// previous latents.
#[derive(Clone, Copy)]
pub struct GenState {
    prior: PriorVars,
    dec: DecoderVars,
    z_m: Var,
    z_o: Var,
}

impl GenState {
    pub(crate) fn init(model: &CosModel, g: &mut Graph) -> Self {
        let z = g.zeros(model.z_dim());
        Self {
            prior: model.prior_init(g),
            dec: model.decoder_init(g),
            z_m: z,
            z_o: z,
        }
    }
}

/// Draws `z^m_t` then `z^o_t` from the priors and runs the decoder; returns
/// log-probabilities over the vocabulary with banned tokens at -inf.
pub(crate) fn gen_step(
    model: &CosModel,
    g: &mut Graph,
    img: &ImageVars,
    s: GenState,
    x_prev: TokenId,
    eps_m: &[f64],
    eps_o: &[f64],
    temperature: f64,
) -> (Vec<f64>, GenState) {
    let e = model.embed(g, x_prev);
    let (pm, p1) = model.prior_context_step(g, s.prior, e, s.z_m, img.vbar);
    let scaled = |eps: &[f64]| eps.iter().map(|x| x * temperature).collect::<Vec<_>>();
    let z_m = g.reparam(pm.mu, pm.lv, scaled(eps_m));
    let (po, p2) = model.prior_object_step(g, p1, e, z_m, s.z_o, img.vbar);
    let z_o = g.reparam(po.mu, po.lv, scaled(eps_o));
    let zt = g.concat(&[z_m, z_o]);
    let out = model.decode_step_vars(g, s.dec, e, zt, img);
    let mut lp = log_softmax(g.value(out.logits));
    for (t, v) in lp.iter_mut().enumerate() {
        if banned(t) {
            *v = f64::NEG_INFINITY;
        }
    }
    (
        lp,
        GenState {
            prior: p2,
            dec: out.state,
            z_m,
            z_o,
        },
    )
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Generates model-level tokens (compound object tokens, no EOS).
pub fn sample_tokens(model: &CosModel, img: &ImageRecord, seed: u64, opts: &SampleOptions) -> Result<Vec<TokenId>> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut g = Graph::new(&model.params);
    let iv = model.image_vars(&mut g, img)?;
    let mut s = GenState::init(model, &mut g);
    let mut prev = BOS;
    let mut out = Vec::new();
    let z = model.z_dim();
    while out.len() < opts.max_len {
        let eps_m = normal_vec(&mut rng, z);
        let eps_o = normal_vec(&mut rng, z);
        let (lp, s2) = gen_step(model, &mut g, &iv, s, prev, &eps_m, &eps_o, opts.temperature);
        s = s2;
        let tok = match opts.emission {
            Emission::Greedy => argmax(&lp),
            Emission::Multinomial => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = argmax(&lp);
                for (i, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        } as TokenId;
        if tok == EOS {
            break;
        }
        out.push(tok);
        prev = tok;
    }
    Ok(out)
}

/// One caption sampled through the priors. The word-level result is capped
/// at `opts.max_len` words.
pub fn sample_caption(
    model: &CosModel,
    vocab: &Vocabulary,
    img: &ImageRecord,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Caption> {
    let toks = sample_tokens(model, img, seed, opts)?;
    let mut c = Caption::new(expand_compounds(&toks, vocab)?)?;
    c.truncate(opts.max_len);
    Ok(c)
}

/// `n` captions; sample `i` uses the seed derived from
/// `(base_seed, image_id, i)` and is independent of the others.
pub fn sample_diverse(
    model: &CosModel,
    vocab: &Vocabulary,
    img: &ImageRecord,
    n: usize,
    base_seed: u64,
    opts: &SampleOptions,
) -> Result<Vec<Caption>> {
    if n == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    (0..n)
        .map(|i| sample_caption(model, vocab, img, sample_seed(base_seed, &img.image_id, i), opts))
        .collect()
}

/// One line of a samples file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_id: String,
    pub samples: Vec<String>,
    pub seed: u64,
}
