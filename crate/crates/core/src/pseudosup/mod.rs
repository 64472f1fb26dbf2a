//! Pseudo captions: retrieved contexts whose placeholders are filled with
//! the object class of the region the decoder attends to.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::corpus::io::{read_jsonl, write_jsonl};
use crate::corpus::split::Context;
use crate::corpus::vocab::{TokenId, Vocabulary, BOS, EOS, PLACEHOLDER};
use crate::corpus::{Dataset, ImageRecord, ObjectVocabulary};
use crate::error::{Error, Result};
use crate::model::{CosModel, ObjectPosteriorKind};
use crate::objective::{PseudoExample, SeqExample};
use crate::retrieval::{neighbors, JointEmbedder, NeighborIndex};
use crate::rng::{derive_seed, normal_vec, Rng};

use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoMode {
    /// Fills from C(I); the object latent comes from the object prior.
    Standard,
    /// Fills from C_k(I); the object latent comes from the weak posterior.
    Novel,
}

impl std::str::FromStr for PseudoMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "novel" => Ok(Self::Novel),
            _ => Err(Error::Config(format!("unknown pseudo mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoCaption {
    pub y_m: Context,
    /// Object name for each placeholder, in order.
    pub fills: Vec<String>,
    pub image_id: String,
    pub source_image_id: String,
    pub neighbor_rank: usize,
    pub mode: PseudoMode,
}

/// One line of a pseudo dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoRecord {
    pub image_id: String,
    /// Context tokens; placeholders appear as `<s>`.
    pub context: Vec<String>,
    pub plural: Vec<bool>,
    pub fills: Vec<String>,
    pub mode: PseudoMode,
    pub neighbor_rank: usize,
    pub source_image_id: String,
}

impl PseudoCaption {
    pub fn to_record(&self, vocab: &Vocabulary) -> PseudoRecord {
        PseudoRecord {
            image_id: self.image_id.clone(),
            context: self.y_m.tokens.iter().map(|&t| vocab.token(t).to_string()).collect(),
            plural: self.y_m.plural.clone(),
            fills: self.fills.clone(),
            mode: self.mode,
            neighbor_rank: self.neighbor_rank,
            source_image_id: self.source_image_id.clone(),
        }
    }

    pub fn from_record(r: &PseudoRecord, vocab: &Vocabulary) -> Result<Self> {
        let tokens = r
            .context
            .iter()
            .map(|w| vocab.id(w).ok_or_else(|| Error::Unknown(format!("context token {w:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let y_m = Context {
            tokens,
            plural: r.plural.clone(),
        };
        let slots = y_m.placeholder_positions().len();
        if r.fills.len() != slots || r.plural.len() != slots {
            return Err(Error::FillArity {
                expected: slots,
                got: r.fills.len(),
            });
        }
        Ok(Self {
            y_m,
            fills: r.fills.clone(),
            image_id: r.image_id.clone(),
            source_image_id: r.source_image_id.clone(),
            neighbor_rank: r.neighbor_rank,
            mode: r.mode,
        })
    }

    /// Model-level training sequence.
    pub fn to_seq(&self, vocab: &Vocabulary, ov: &ObjectVocabulary) -> Result<SeqExample> {
        let f: Vec<&str> = self.fills.iter().map(String::as_str).collect();
        SeqExample::from_context(&self.y_m, &f, vocab, ov)
    }

    /// Word-level text of the filled caption.
    pub fn text(&self, vocab: &Vocabulary, ov: &ObjectVocabulary) -> Result<String> {
        let s = self.to_seq(vocab, ov)?;
        Ok(vocab.decode(&s.tokens))
    }
}

pub fn write_pseudo(path: &Path, caps: &[PseudoCaption], vocab: &Vocabulary) -> Result<()> {
    let recs: Vec<PseudoRecord> = caps.iter().map(|c| c.to_record(vocab)).collect();
    write_jsonl(path, &recs)
}

pub fn read_pseudo(path: &Path, vocab: &Vocabulary) -> Result<Vec<PseudoCaption>> {
    read_jsonl::<PseudoRecord>(path)?
        .iter()
        .map(|r| PseudoCaption::from_record(r, vocab))
        .collect()
}

/// Object classes a fill may use for `img`, restricted to known objects.
pub fn allowed_objects<'a>(img: &'a ImageRecord, ov: &ObjectVocabulary, mode: PseudoMode, k: usize) -> Vec<&'a str> {
    let c = match mode {
        PseudoMode::Standard => img.classes(),
        PseudoMode::Novel => img.top_k_classes(k),
    };
    c.into_iter().filter(|n| ov.contains(n)).collect()
}

/// The highest-attention region whose class is allowed and whose surface
/// form (in the requested number) is a vocabulary token. Ties go to the
/// lower region index.
pub fn pick_region(
    attention: &[f64],
    img: &ImageRecord,
    allowed: &[&str],
    plural: bool,
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
) -> Option<usize> {
    let mut order: Vec<usize> = (0..attention.len().min(img.num_regions())).collect();
    order.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
    order.into_iter().find(|&r| {
        let c = img.region_classes()[r].as_str();
        allowed.contains(&c) && ov.surface_token(vocab, c, plural).is_ok()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoConfig {
    pub mode: PseudoMode,
    /// Retrieved contexts per image.
    pub neighbors_k: usize,
    /// k of C_k(I) in novel mode.
    pub top_k: usize,
    pub exclude_self: bool,
    pub seed: u64,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self {
            mode: PseudoMode::Standard,
            neighbors_k: 5,
            top_k: 5,
            exclude_self: true,
            seed: 0,
        }
    }
}

/// Fills every placeholder of `y_m` for `img`.
///
/// The context latent is drawn from the context posterior on `y_m`, the
/// object latent from the object prior (standard) or the weak posterior on
/// C_k(I) (novel). The decoder runs teacher-forced on `y_m`, with each fill
/// fed back as the next input; at a placeholder the region ranking comes
/// from that step's attention weights.
#[allow(clippy::too_many_arguments)]
pub fn fill_objects(
    y_m: &Context,
    img: &ImageRecord,
    model: &CosModel,
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
    mode: PseudoMode,
    k: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<TokenId>)> {
    let slots = y_m.placeholder_positions();
    if y_m.plural.len() != slots.len() {
        return Err(Error::FillArity {
            expected: slots.len(),
            got: y_m.plural.len(),
        });
    }
    if slots.is_empty() {
        return Ok((Vec::new(), y_m.tokens.clone()));
    }
    let allowed = allowed_objects(img, ov, mode, k);
    let mut g = Graph::new(&model.params);
    let iv = model.image_vars(&mut g, img)?;
    let z = model.z_dim();
    let mut rng = Rng::seed_from_u64(seed);

    let ctx_steps: Vec<TokenId> = y_m.tokens.iter().copied().chain([EOS]).collect();
    let enc = model.encode_context(&mut g, &ctx_steps);
    let weak = match mode {
        PseudoMode::Novel => {
            let idx: Vec<usize> = allowed.iter().filter_map(|c| ov.index_of(c)).collect();
            Some(model.object_evidence_weak(&mut g, &idx)?)
        }
        PseudoMode::Standard => None,
    };
    let mut qm = model.posterior_context_init(&mut g);
    let mut qw = model.posterior_object_init(&mut g);
    let mut prior = model.prior_init(&mut g);
    let mut dec = model.decoder_init(&mut g);
    let mut z_m_prev = g.zeros(z);
    let mut z_o_prev = z_m_prev;
    let mut filled = y_m.tokens.clone();
    let mut fills = Vec::with_capacity(slots.len());
    let last = *slots.last().expect("non-empty");
    for t in 0..=last {
        let x_prev = if t == 0 { BOS } else { filled[t - 1] };
        let e = model.embed(&mut g, x_prev);
        let (q, s) = model.posterior_context_step(&mut g, qm, enc[t], z_m_prev, iv.vbar);
        qm = s;
        let z_m = g.reparam(q.mu, q.lv, normal_vec(&mut rng, z));
        let (_, p1) = model.prior_context_step(&mut g, prior, e, z_m_prev, iv.vbar);
        let (po, p2) = model.prior_object_step(&mut g, p1, e, z_m, z_o_prev, iv.vbar);
        prior = p2;
        let eps_o = normal_vec(&mut rng, z);
        let z_o = match weak {
            Some(w) => {
                let (qo, s) =
                    model.posterior_object_step(&mut g, ObjectPosteriorKind::Weak, qw, w, z_m, z_o_prev, iv.vbar);
                qw = s;
                g.reparam(qo.mu, qo.lv, eps_o)
            }
            None => g.reparam(po.mu, po.lv, eps_o),
        };
        let zt = g.concat(&[z_m, z_o]);
        let out = model.decode_step_vars(&mut g, dec, e, zt, &iv);
        dec = out.state;
        if y_m.tokens[t] == PLACEHOLDER {
            let k_slot = fills.len();
            let plural = y_m.plural[k_slot];
            let r = pick_region(g.value(out.attention), img, &allowed, plural, vocab, ov)
                .ok_or(Error::PseudoReject { position: t })?;
            let name = img.region_classes()[r].clone();
            filled[t] = ov.surface_token(vocab, &name, plural)?;
            fills.push(name);
        }
        z_m_prev = z_m;
        z_o_prev = z_o;
    }
    Ok((fills, filled))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoBuild {
    pub captions: Vec<PseudoCaption>,
    pub attempted: usize,
    pub rejected: usize,
    /// Images for which the index offered fewer than K contexts.
    pub short_queries: usize,
}

impl PseudoBuild {
    pub fn rejection_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.rejected as f64 / self.attempted as f64
        }
    }
}

/// Builds pseudo captions for every training image.
pub fn build_pseudo_pairs(
    ds: &Dataset,
    index: &NeighborIndex,
    embedder: &JointEmbedder,
    model: &CosModel,
    cfg: &PseudoConfig,
) -> Result<PseudoBuild> {
    let mut out = PseudoBuild::default();
    if index.is_empty() {
        log::warn!("empty neighbor index: no pseudo captions built");
        return Ok(out);
    }
    for p in &ds.train.pairs {
        let img = &p.image;
        let q = neighbors(img, index, cfg.neighbors_k, embedder, cfg.exclude_self)?;
        out.short_queries += q.short as usize;
        for (rank, n) in q.neighbors.iter().enumerate() {
            out.attempted += 1;
            let seed = derive_seed(cfg.seed, &["pseudo", &img.image_id, &rank.to_string()]);
            match fill_objects(&n.context, img, model, &ds.vocab, &ds.objects, cfg.mode, cfg.top_k, seed) {
                Ok((fills, _)) => out.captions.push(PseudoCaption {
                    y_m: n.context.clone(),
                    fills,
                    image_id: img.image_id.clone(),
                    source_image_id: n.image_id.clone(),
                    neighbor_rank: rank,
                    mode: cfg.mode,
                }),
                Err(Error::PseudoReject { .. }) => out.rejected += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if out.attempted > 0 {
        log::info!(
            "pseudo captions: {} accepted, {} rejected ({:.1}%)",
            out.captions.len(),
            out.rejected,
            100.0 * out.rejection_rate()
        );
    }
    Ok(out)
}

/// Trainer inputs for pseudo captions; `images` must list the images the
/// captions refer to and the returned examples index into it.
pub fn pseudo_examples(
    caps: &[PseudoCaption],
    images: &[ImageRecord],
    vocab: &Vocabulary,
    ov: &ObjectVocabulary,
    top_k: usize,
) -> Result<Vec<PseudoExample>> {
    caps.iter()
        .map(|c| {
            let i = images
                .iter()
                .position(|im| im.image_id == c.image_id)
                .ok_or_else(|| Error::Unknown(format!("image {}", c.image_id)))?;
            let weak_classes = match c.mode {
                PseudoMode::Standard => None,
                PseudoMode::Novel => Some(
                    allowed_objects(&images[i], ov, PseudoMode::Novel, top_k)
                        .iter()
                        .filter_map(|n| ov.index_of(n))
                        .collect::<Vec<_>>(),
                ),
            };
            Ok(PseudoExample {
                image: i,
                seq: c.to_seq(vocab, ov)?,
                weak_classes,
            })
        })
        .collect()
}

/// Names filled anywhere in `caps`.
pub fn filled_names(caps: &[PseudoCaption]) -> BTreeSet<&str> {
    caps.iter().flat_map(|c| c.fills.iter().map(String::as_str)).collect()
}
