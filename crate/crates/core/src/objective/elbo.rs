use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::split::{fill_sequence, Context, ContextObjectSplit};
use crate::corpus::vocab::{TokenId, Vocabulary, BOS, EOS, PLACEHOLDER, UNK};
use crate::corpus::{ImageRecord, ObjectVocabulary};
use crate::error::{Error, Result};
use crate::model::{CosModel, GaussVar, ImageVars, ObjectPosteriorKind};
use crate::rng::{normal_vec, Rng};

/// A training sequence at model level: compound object tokens, the aligned
/// context (placeholders at object positions) and the object index at each
/// placeholder position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqExample {
    pub tokens: Vec<TokenId>,
    pub context: Vec<TokenId>,
    pub objects: Vec<Option<usize>>,
}

impl SeqExample {
    pub fn from_split(split: &ContextObjectSplit, vocab: &Vocabulary, ov: &ObjectVocabulary) -> Result<Self> {
        let tokens = split.model_sequence(vocab, ov)?;
        let mut objects = vec![None; tokens.len()];
        for (k, &p) in split.t_dprime.iter().enumerate() {
            let name = &split.objects[k].name;
            objects[p] = Some(ov.index_of(name).ok_or_else(|| Error::Unknown(format!("object {name}")))?);
        }
        Ok(Self {
            tokens,
            context: split.context.clone(),
            objects,
        })
    }

    /// Fills `ctx` with `fills`; every placeholder must receive a fill.
    pub fn from_context(ctx: &Context, fills: &[&str], vocab: &Vocabulary, ov: &ObjectVocabulary) -> Result<Self> {
        let slots = ctx.placeholder_positions();
        if fills.len() < slots.len() {
            return Err(Error::UnfilledPlaceholder(slots[fills.len()]));
        }
        let tokens = fill_sequence(ctx, fills, vocab, ov)?;
        let mut objects = vec![None; tokens.len()];
        for (k, &p) in slots.iter().enumerate() {
            objects[p] = Some(ov.index_of(fills[k]).ok_or_else(|| Error::Unknown(format!("object {}", fills[k])))?);
        }
        Ok(Self {
            tokens,
            context: ctx.tokens.clone(),
            objects,
        })
    }

    /// Number of model steps, `T + 1` (the last step emits EOS).
    pub fn steps(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn inputs(&self) -> Vec<TokenId> {
        std::iter::once(BOS).chain(self.tokens.iter().copied()).collect()
    }

    pub fn targets(&self) -> Vec<TokenId> {
        self.tokens.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    /// Sequence read by the context posterior: `x^m` followed by EOS.
    pub fn context_steps(&self) -> Vec<TokenId> {
        self.context.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.context.len() || self.objects.len() != self.tokens.len() {
            return Err(Error::Shape(format!(
                "sequence length {} but context length {} and {} object slots",
                self.tokens.len(),
                self.context.len(),
                self.objects.len()
            )));
        }
        for (t, (&c, o)) in self.context.iter().zip(&self.objects).enumerate() {
            if (c == PLACEHOLDER) != o.is_some() {
                return Err(Error::UnfilledPlaceholder(t));
            }
        }
        Ok(())
    }
}

/// Standard-normal noise for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub eps_m: Vec<Vec<f64>>,
    pub eps_o: Vec<Vec<f64>>,
    /// Steps whose decoder input word is replaced by UNK (word dropout).
    pub dropped: Vec<bool>,
}

impl ElboNoise {
    pub fn draw(rng: &mut Rng, steps: usize, z_dim: usize) -> Self {
        let eps_m = (0..steps).map(|_| normal_vec(rng, z_dim)).collect();
        let eps_o = (0..steps).map(|_| normal_vec(rng, z_dim)).collect();
        Self {
            eps_m,
            eps_o,
            dropped: vec![false; steps],
        }
    }

    /// Marks each step after the first for decoder word dropout with
    /// probability `p`.
    pub fn with_word_dropout(mut self, rng: &mut Rng, p: f64) -> Self {
        if p > 0.0 {
            for (t, d) in self.dropped.iter_mut().enumerate() {
                *d = t > 0 && rng.gen_bool(p);
            }
        }
        self
    }

    pub fn zeros(steps: usize, z_dim: usize) -> Self {
        Self {
            eps_m: vec![vec![0.0; z_dim]; steps],
            eps_o: vec![vec![0.0; z_dim]; steps],
            dropped: vec![false; steps],
        }
    }
}

/// Source of the object latent `z^o`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectLatent {
    /// Paired posterior on `x^o`, KL against the object prior.
    Posterior,
    /// Weak posterior on the class indices of C_k(I), KL against the prior.
    Weak(Vec<usize>),
    /// Drawn from the object prior; no object KL.
    Prior,
}

/// Graph handles of the ELBO terms for one sequence.
#[derive(Debug, Clone)]
pub struct ElboVars {
    pub recon_context: Var,
    pub recon_object: Var,
    pub kl_context: Var,
    pub kl_object: Option<Var>,
    /// Per-step (posterior, prior, KL), context steps then object steps.
    pub kl_steps: Vec<(GaussVar, GaussVar, Var)>,
}

impl ElboVars {
    /// `recon + beta * KL`. With `free_bits > 0`, a step whose KL is at
    /// most `free_bits` nats contributes the KL against a detached copy of
    /// its posterior: the prior still moves toward the posterior, the
    /// posterior is not pulled back. 0 gives the exact bound.
    pub fn total(&self, g: &mut Graph, beta: f64, free_bits: f64) -> Var {
        let kl = if free_bits > 0.0 {
            let terms: Vec<Var> = self
                .kl_steps
                .iter()
                .map(|&(q, p, k)| {
                    if g.scalar(k) > free_bits {
                        k
                    } else {
                        let mu = g.constant(g.value(q.mu).to_vec());
                        let lv = g.constant(g.value(q.lv).to_vec());
                        g.kl_diag(mu, lv, p.mu, p.lv)
                    }
                })
                .collect();
            g.add_n(&terms)
        } else {
            let mut kls = vec![self.kl_context];
            kls.extend(self.kl_object);
            g.add_n(&kls)
        };
        let kl = g.scale(kl, beta);
        g.add_n(&[self.recon_context, self.recon_object, kl])
    }

    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let rc = g.scalar(self.recon_context);
        let ro = g.scalar(self.recon_object);
        let km = g.scalar(self.kl_context);
        let ko = self.kl_object.map(|v| g.scalar(v)).unwrap_or(0.0);
        LossBreakdown {
            recon: rc + ro,
            recon_context: rc,
            recon_object: ro,
            kl_context: km,
            kl_object: ko,
            total: rc + ro + km + ko,
        }
    }
}

/// Negative ELBO split into its terms (nats).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    /// Reconstruction over context steps, including the final EOS step.
    pub recon_context: f64,
    /// Reconstruction over object (placeholder) steps.
    pub recon_object: f64,
    pub kl_context: f64,
    pub kl_object: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("recon", self.recon),
            ("kl_context", self.kl_context),
            ("kl_object", self.kl_object),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn kl(g: &mut Graph, q: GaussVar, p: GaussVar) -> Var {
    g.kl_diag(q.mu, q.lv, p.mu, p.lv)
}

/// Unrolls posterior, priors and decoder over one sequence with teacher
/// forcing and a single reparameterized latent draw.
pub fn unroll(
    model: &CosModel,
    g: &mut Graph,
    ex: &SeqExample,
    img: &ImageVars,
    noise: &ElboNoise,
    object_latent: &ObjectLatent,
) -> Result<ElboVars> {
    ex.validate()?;
    let steps = ex.steps();
    let z = model.z_dim();
    if noise.eps_m.len() != steps || noise.eps_o.len() != steps || noise.dropped.len() != steps {
        return Err(Error::Shape(format!("noise for {} steps, sequence has {steps}", noise.eps_m.len())));
    }
    let inputs = ex.inputs();
    let targets = ex.targets();
    let enc = model.encode_context(g, &ex.context_steps());
    let weak = match object_latent {
        ObjectLatent::Weak(classes) => Some(model.object_evidence_weak(g, classes)?),
        _ => None,
    };

    let mut qm_state = model.posterior_context_init(g);
    let mut qo_state = model.posterior_object_init(g);
    let mut prior = model.prior_init(g);
    let mut dec = model.decoder_init(g);
    let mut z_m_prev = g.zeros(z);
    let mut z_o_prev = z_m_prev;
    let (mut rc, mut ro, mut km, mut ko) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut klm_steps, mut klo_steps) = (Vec::new(), Vec::new());

    for t in 0..steps {
        let e_prev = model.embed(g, inputs[t]);
        let (qm, s) = model.posterior_context_step(g, qm_state, enc[t], z_m_prev, img.vbar);
        qm_state = s;
        let z_m = g.reparam(qm.mu, qm.lv, noise.eps_m[t].clone());
        let (pm, p1) = model.prior_context_step(g, prior, e_prev, z_m_prev, img.vbar);
        let (po, p2) = model.prior_object_step(g, p1, e_prev, z_m, z_o_prev, img.vbar);
        prior = p2;
        let k = kl(g, qm, pm);
        km.push(k);
        klm_steps.push((qm, pm, k));

        let obj_t = ex.objects.get(t).copied().flatten();
        let z_o = match object_latent {
            ObjectLatent::Prior => g.reparam(po.mu, po.lv, noise.eps_o[t].clone()),
            ObjectLatent::Posterior | ObjectLatent::Weak(_) => {
                let (kind, ev) = match weak {
                    Some(w) => (ObjectPosteriorKind::Weak, w),
                    None => (ObjectPosteriorKind::Paired, model.object_evidence_paired(g, obj_t)),
                };
                let (qo, s) = model.posterior_object_step(g, kind, qo_state, ev, z_m, z_o_prev, img.vbar);
                qo_state = s;
                let k = kl(g, qo, po);
                ko.push(k);
                klo_steps.push((qo, po, k));
                g.reparam(qo.mu, qo.lv, noise.eps_o[t].clone())
            }
        };

        let zt = g.concat(&[z_m, z_o]);
        let e_dec = if noise.dropped[t] { model.embed(g, UNK) } else { e_prev };
        let out = model.decode_step_vars(g, dec, e_dec, zt, img);
        dec = out.state;
        let nll = g.nll_softmax(out.logits, targets[t] as usize);
        if obj_t.is_some() {
            ro.push(nll);
        } else {
            rc.push(nll);
        }
        z_m_prev = z_m;
        z_o_prev = z_o;
    }
    let zero = g.zeros(1);
    let sum = |g: &mut Graph, v: &[Var]| if v.is_empty() { zero } else { g.add_n(v) };
    klm_steps.extend(klo_steps);
    let kl_steps = klm_steps;
    Ok(ElboVars {
        kl_steps,
        recon_context: sum(g, &rc),
        recon_object: sum(g, &ro),
        kl_context: sum(g, &km),
        kl_object: if ko.is_empty() { None } else { Some(g.add_n(&ko)) },
    })
}

/// Negative ELBO of a paired caption.
pub fn elbo_paired(model: &CosModel, ex: &SeqExample, img: &ImageRecord, noise: &ElboNoise) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let iv = model.image_vars(&mut g, img)?;
    let v = unroll(model, &mut g, ex, &iv, noise, &ObjectLatent::Posterior)?;
    Ok(v.breakdown(&g))
}

/// Pseudo-caption negative ELBO. With `weak_classes = None` the object
/// latent comes from the object prior and `kl_object` is 0; otherwise the
/// weak posterior on those classes is used and scored against the prior.
pub fn elbo_pseudo(
    model: &CosModel,
    ex: &SeqExample,
    img: &ImageRecord,
    noise: &ElboNoise,
    weak_classes: Option<&[usize]>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let iv = model.image_vars(&mut g, img)?;
    let src = match weak_classes {
        Some(c) => ObjectLatent::Weak(c.to_vec()),
        None => ObjectLatent::Prior,
    };
    let v = unroll(model, &mut g, ex, &iv, noise, &src)?;
    Ok(v.breakdown(&g))
}

/// `(1 - alpha) * l + alpha * l_hat`.
pub fn combined_loss(l: f64, l_hat: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok((1.0 - alpha) * l + alpha * l_hat)
}
