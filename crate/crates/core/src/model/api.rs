//! Value-level entry points over the graph blocks.

use serde::{Deserialize, Serialize};

use super::{CosModel, GaussVar, ObjectPosteriorKind, PriorVars};
use crate::autograd::{softmax_in_place, Graph};
use crate::corpus::vocab::TokenId;
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};

/// Diagonal Gaussian with strictly positive scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Gaussian {
    pub(crate) fn from_vars(g: &Graph, v: GaussVar) -> Self {
        Self {
            mu: g.value(v.mu).to_vec(),
            sigma: g.value(v.lv).iter().map(|h| (0.5 * h).exp()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Per-step Gaussian parameters of a latent sequence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianSeqParams {
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl GaussianSeqParams {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn step(&self, t: usize) -> Gaussian {
        Gaussian {
            mu: self.mu[t].clone(),
            sigma: self.sigma[t].clone(),
        }
    }

    fn push(&mut self, g: Gaussian) {
        self.mu.push(g.mu);
        self.sigma.push(g.sigma);
    }
}

/// Sampled latents; the decoder input at step t is `[z_m[t], z_o[t]]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatentPath {
    pub z_m: Vec<Vec<f64>>,
    pub z_o: Vec<Vec<f64>>,
}

impl LatentPath {
    pub fn z(&self, t: usize) -> Vec<f64> {
        let mut v = self.z_m[t].clone();
        v.extend_from_slice(&self.z_o[t]);
        v
    }
}

/// Evidence for an object posterior: per-step object indices (paired) or
/// the class indices of C_k(I) (weak).
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectEvidence {
    Paired(Vec<Option<usize>>),
    Weak(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorState {
    pub hm: Vec<f64>,
    pub cm: Vec<f64>,
    pub ho: Vec<f64>,
    pub co: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h_att: Vec<f64>,
    pub c_att: Vec<f64>,
    pub h_lang: Vec<f64>,
    pub c_lang: Vec<f64>,
}

/// `mu + sigma * noise`.
pub fn reparameterize(g: &Gaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.mu.len() {
        return Err(Error::Shape(format!(
            "noise has {} entries, Gaussian has {}",
            noise.len(),
            g.mu.len()
        )));
    }
    Ok(g.mu.iter().zip(&g.sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

impl CosModel {
    fn check_vbar(&self, vbar: &[f64]) -> Result<()> {
        if vbar.len() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "pooled feature has {} entries, model expects {}",
                vbar.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    fn check_noise(&self, noise: &[Vec<f64>], steps: usize) -> Result<()> {
        if noise.len() != steps || noise.iter().any(|n| n.len() != self.z_dim()) {
            return Err(Error::Shape(format!(
                "noise must be {steps} x {}",
                self.z_dim()
            )));
        }
        Ok(())
    }

    /// Context posterior over the step sequence `context` (one step per
    /// token). Returns the per-step Gaussians and the sampled `z^m`.
    pub fn posterior_context(
        &self,
        context: &[TokenId],
        vbar: &[f64],
        noise: &[Vec<f64>],
    ) -> Result<(GaussianSeqParams, Vec<Vec<f64>>)> {
        self.check_vbar(vbar)?;
        self.check_noise(noise, context.len())?;
        if context.iter().any(|&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Shape("token id outside vocabulary".into()));
        }
        let mut g = Graph::new(&self.params);
        let vb = g.constant(vbar.to_vec());
        let enc = self.encode_context(&mut g, context);
        let mut state = self.posterior_context_init(&mut g);
        let mut z_prev = g.zeros(self.z_dim());
        let mut out = GaussianSeqParams::default();
        let mut zs = Vec::with_capacity(context.len());
        for (t, &e) in enc.iter().enumerate() {
            let (q, s) = self.posterior_context_step(&mut g, state, e, z_prev, vb);
            state = s;
            z_prev = g.reparam(q.mu, q.lv, noise[t].clone());
            out.push(Gaussian::from_vars(&g, q));
            zs.push(g.value(z_prev).to_vec());
        }
        Ok((out, zs))
    }

    pub fn posterior_object(
        &self,
        evidence: &ObjectEvidence,
        z_m: &[Vec<f64>],
        vbar: &[f64],
        noise: &[Vec<f64>],
    ) -> Result<GaussianSeqParams> {
        self.check_vbar(vbar)?;
        self.check_noise(noise, z_m.len())?;
        let mut g = Graph::new(&self.params);
        let vb = g.constant(vbar.to_vec());
        let (kind, weak) = match evidence {
            ObjectEvidence::Paired(objs) => {
                if objs.len() != z_m.len() {
                    return Err(Error::Shape("object evidence length differs from z^m".into()));
                }
                (ObjectPosteriorKind::Paired, None)
            }
            ObjectEvidence::Weak(classes) => {
                (ObjectPosteriorKind::Weak, Some(self.object_evidence_weak(&mut g, classes)?))
            }
        };
        let mut state = self.posterior_object_init(&mut g);
        let mut z_prev = g.zeros(self.z_dim());
        let mut out = GaussianSeqParams::default();
        for (t, zm) in z_m.iter().enumerate() {
            let zm = g.constant(zm.clone());
            let ev = match (evidence, weak) {
                (ObjectEvidence::Paired(objs), _) => self.object_evidence_paired(&mut g, objs[t]),
                (_, Some(w)) => w,
                _ => unreachable!(),
            };
            let (q, s) = self.posterior_object_step(&mut g, kind, state, ev, zm, z_prev, vb);
            state = s;
            z_prev = g.reparam(q.mu, q.lv, noise[t].clone());
            out.push(Gaussian::from_vars(&g, q));
        }
        Ok(out)
    }

    pub fn prior_zero_state(&self) -> PriorState {
        let d = &self.config.dims;
        PriorState {
            hm: vec![0.0; d.prior_m_hidden],
            cm: vec![0.0; d.prior_m_hidden],
            ho: vec![0.0; d.prior_o_hidden],
            co: vec![0.0; d.prior_o_hidden],
        }
    }

    fn prior_vars(g: &mut Graph, s: &PriorState) -> PriorVars {
        PriorVars {
            hm: g.constant(s.hm.clone()),
            cm: g.constant(s.cm.clone()),
            ho: g.constant(s.ho.clone()),
            co: g.constant(s.co.clone()),
        }
    }

    fn prior_state(g: &Graph, v: PriorVars) -> PriorState {
        PriorState {
            hm: g.value(v.hm).to_vec(),
            cm: g.value(v.cm).to_vec(),
            ho: g.value(v.ho).to_vec(),
            co: g.value(v.co).to_vec(),
        }
    }

    pub fn prior_step_context(
        &self,
        state: &PriorState,
        x_prev: TokenId,
        z_m_prev: &[f64],
        vbar: &[f64],
    ) -> Result<(Gaussian, PriorState)> {
        self.check_vbar(vbar)?;
        let mut g = Graph::new(&self.params);
        let s = Self::prior_vars(&mut g, state);
        let vb = g.constant(vbar.to_vec());
        let e = self.embed(&mut g, x_prev);
        let z = g.constant(z_m_prev.to_vec());
        let (p, s2) = self.prior_context_step(&mut g, s, e, z, vb);
        Ok((Gaussian::from_vars(&g, p), Self::prior_state(&g, s2)))
    }

    pub fn prior_step_object(
        &self,
        state: &PriorState,
        x_prev: TokenId,
        z_m_t: &[f64],
        z_o_prev: &[f64],
        vbar: &[f64],
    ) -> Result<(Gaussian, PriorState)> {
        self.check_vbar(vbar)?;
        let mut g = Graph::new(&self.params);
        let s = Self::prior_vars(&mut g, state);
        let vb = g.constant(vbar.to_vec());
        let e = self.embed(&mut g, x_prev);
        let zm = g.constant(z_m_t.to_vec());
        let zo = g.constant(z_o_prev.to_vec());
        let (p, s2) = self.prior_object_step(&mut g, s, e, zm, zo, vb);
        Ok((Gaussian::from_vars(&g, p), Self::prior_state(&g, s2)))
    }

    pub fn decoder_zero_state(&self) -> DecoderState {
        let d = &self.config.dims;
        DecoderState {
            h_att: vec![0.0; d.att_hidden],
            c_att: vec![0.0; d.att_hidden],
            h_lang: vec![0.0; d.lang_hidden],
            c_lang: vec![0.0; d.lang_hidden],
        }
    }

    /// One decoder step: token distribution, attention weights over the
    /// image regions, and the advanced state.
    pub fn decode_step(
        &self,
        state: &DecoderState,
        x_prev: TokenId,
        z_t: &[f64],
        img: &ImageRecord,
    ) -> Result<(Vec<f64>, Vec<f64>, DecoderState)> {
        if z_t.len() != 2 * self.z_dim() {
            return Err(Error::Shape("decoder latent must be [z^m, z^o]".into()));
        }
        let mut g = Graph::new(&self.params);
        let iv = self.image_vars(&mut g, img)?;
        let s = super::DecoderVars {
            h_att: g.constant(state.h_att.clone()),
            c_att: g.constant(state.c_att.clone()),
            h_lang: g.constant(state.h_lang.clone()),
            c_lang: g.constant(state.c_lang.clone()),
        };
        let e = self.embed(&mut g, x_prev);
        let z = g.constant(z_t.to_vec());
        let out = self.decode_step_vars(&mut g, s, e, z, &iv);
        let mut probs = g.value(out.logits).to_vec();
        softmax_in_place(&mut probs);
        let st = DecoderState {
            h_att: g.value(out.state.h_att).to_vec(),
            c_att: g.value(out.state.c_att).to_vec(),
            h_lang: g.value(out.state.h_lang).to_vec(),
            c_lang: g.value(out.state.c_lang).to_vec(),
        };
        Ok((probs, g.value(out.attention).to_vec(), st))
    }
}
