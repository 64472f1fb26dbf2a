//! The context-object split latent model: context and object posteriors,
//! their sequential conditional priors and the two-layer attention decoder.
//!
//! Every network is expressed as graph-building blocks over [`Graph`] so the
//! same code serves training (with back-propagation) and inference.

mod api;
mod config;

use std::path::Path;

use crate::autograd::{Graph, Var};
use crate::corpus::vocab::TokenId;
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::params::{read_checkpoint, write_checkpoint, Init, ParamId, ParamStore};
use crate::rng::rng_for;

pub use api::{
    reparameterize, DecoderState, Gaussian, GaussianSeqParams, LatentPath, ObjectEvidence, PriorState,
};
pub use config::{ModelConfig, ModelDims};

/// Log-variance head outputs are clamped to this range.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Lstm {
    w: ParamId,
    b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut crate::rng::Rng) -> Self {
        let w = store.add(&format!("{name}.w"), 4 * hidden, input + hidden, Init::Uniform, rng);
        let b = store.add(&format!("{name}.b"), 1, 4 * hidden, Init::Zeros, rng);
        Self { w, b, input, hidden }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let xh = g.concat(&[x, h]);
        let gates = g.affine(self.w, Some(self.b), xh);
        let hc = g.lstm_gates(gates, c);
        (g.slice(hc, 0, self.hidden), g.slice(hc, self.hidden, self.hidden))
    }

    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        (g.zeros(self.hidden), g.zeros(self.hidden))
    }
}

/// Affine head emitting a diagonal Gaussian as (mean, clamped log-variance).
#[derive(Debug, Clone)]
pub struct Head {
    w: ParamId,
    b: ParamId,
    z: usize,
}

/// Graph handles of one diagonal Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct GaussVar {
    pub mu: Var,
    pub lv: Var,
}

impl Head {
    fn new(store: &mut ParamStore, name: &str, input: usize, z: usize, rng: &mut crate::rng::Rng) -> Self {
        let w = store.add(&format!("{name}.w"), 2 * z, input, Init::Uniform, rng);
        let b = store.add(&format!("{name}.b"), 1, 2 * z, Init::Zeros, rng);
        Self { w, b, z }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> GaussVar {
        let out = g.affine(self.w, Some(self.b), x);
        let mu = g.slice(out, 0, self.z);
        let h = g.slice(out, self.z, self.z);
        let lv = g.clamp(h, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        GaussVar { mu, lv }
    }
}

#[derive(Debug, Clone)]
struct Attention {
    wv: ParamId,
    wh: ParamId,
    bh: ParamId,
    score: ParamId,
}

#[derive(Debug, Clone)]
struct Nets {
    emb: ParamId,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    qm_rnn: Lstm,
    qm_head: Head,
    qo_emb: ParamId,
    qo_rnn: Lstm,
    qo_head: Head,
    qw_emb: ParamId,
    qw_rnn: Lstm,
    qw_head: Head,
    pm_rnn: Lstm,
    pm_head: Head,
    po_rnn: Lstm,
    po_head: Head,
    att_rnn: Lstm,
    att: Attention,
    lang_rnn: Lstm,
    out_w: ParamId,
    out_b: ParamId,
}

/// Image features lifted into a graph.
#[derive(Debug, Clone)]
pub struct ImageVars {
    pub vbar: Var,
    pub regions: Vec<Var>,
    keys: Vec<Var>,
}

/// Recurrent state of both priors for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct PriorVars {
    pub hm: Var,
    pub cm: Var,
    pub ho: Var,
    pub co: Var,
}

/// Recurrent state of the decoder for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub h_att: Var,
    pub c_att: Var,
    pub h_lang: Var,
    pub c_lang: Var,
}

/// Output of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct DecodeOut {
    pub logits: Var,
    pub attention: Var,
    pub state: DecoderVars,
}

/// Object evidence consumed by an object posterior, per step.
#[derive(Debug, Clone, Copy)]
pub enum ObjectPosteriorKind {
    Paired,
    Weak,
}

#[derive(Debug, Clone)]
pub struct CosModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    nets: Nets,
}

impl CosModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dims.clone();
        let (v, f, z) = (config.vocab_size, config.feature_dim, d.z_dim);
        let mut rng = rng_for(config.init_seed, &["model-init"]);
        let mut s = ParamStore::new();
        let r = &mut rng;
        let emb = s.add("emb", v, d.word_dim, Init::UniformScaled(0.1), r);
        let enc_fwd = Lstm::new(&mut s, "qm.fwd", d.word_dim, d.enc_hidden, r);
        let enc_bwd = Lstm::new(&mut s, "qm.bwd", d.word_dim, d.enc_hidden, r);
        let qm_rnn = Lstm::new(&mut s, "qm.rnn", f + 2 * d.enc_hidden + z, d.enc_hidden, r);
        let qm_head = Head::new(&mut s, "qm.head", d.enc_hidden, z, r);
        let qo_emb = s.add("qo.emb", config.n_objects, d.word_dim, Init::UniformScaled(0.1), r);
        let qo_rnn = Lstm::new(&mut s, "qo.rnn", f + z + d.word_dim, d.obj_hidden, r);
        let qo_head = Head::new(&mut s, "qo.head", d.obj_hidden + 2 * z, z, r);
        let qw_emb = s.add("qw.emb", config.n_objects, d.word_dim, Init::UniformScaled(0.1), r);
        let qw_rnn = Lstm::new(&mut s, "qw.rnn", f + z + d.word_dim, d.obj_hidden, r);
        let qw_head = Head::new(&mut s, "qw.head", d.obj_hidden + 2 * z, z, r);
        let pm_rnn = Lstm::new(&mut s, "pm.rnn", f + d.word_dim + z, d.prior_m_hidden, r);
        let pm_head = Head::new(&mut s, "pm.head", d.prior_m_hidden, z, r);
        let po_rnn = Lstm::new(&mut s, "po.rnn", f + d.word_dim + 2 * z, d.prior_o_hidden, r);
        let po_head = Head::new(&mut s, "po.head", d.prior_o_hidden, z, r);
        let att_rnn = Lstm::new(&mut s, "dec.att", d.lang_hidden + 2 * z + f + d.word_dim, d.att_hidden, r);
        let att = Attention {
            wv: s.add("dec.att.wv", d.att_dim, f, Init::Uniform, r),
            wh: s.add("dec.att.wh", d.att_dim, d.att_hidden, Init::Uniform, r),
            bh: s.add("dec.att.bh", 1, d.att_dim, Init::Zeros, r),
            score: s.add("dec.att.score", 1, d.att_dim, Init::Uniform, r),
        };
        let lang_rnn = Lstm::new(&mut s, "dec.lang", f + d.att_hidden, d.lang_hidden, r);
        let out_w = s.add("dec.out.w", v, d.lang_hidden, Init::Uniform, r);
        let out_b = s.add("dec.out.b", 1, v, Init::Zeros, r);
        let nets = Nets {
            emb,
            enc_fwd,
            enc_bwd,
            qm_rnn,
            qm_head,
            qo_emb,
            qo_rnn,
            qo_head,
            qw_emb,
            qw_rnn,
            qw_head,
            pm_rnn,
            pm_head,
            po_rnn,
            po_head,
            att_rnn,
            att,
            lang_rnn,
            out_w,
            out_b,
        };
        Ok(Self {
            config,
            params: s,
            nets,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.config.dims.z_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Parameter ids owned by the paired object posterior.
    pub fn paired_object_posterior_ids(&self) -> Vec<ParamId> {
        let n = &self.nets;
        vec![n.qo_emb, n.qo_rnn.w, n.qo_rnn.b, n.qo_head.w, n.qo_head.b]
    }

    /// Parameter ids owned by the weak object posterior.
    pub fn weak_object_posterior_ids(&self) -> Vec<ParamId> {
        let n = &self.nets;
        vec![n.qw_emb, n.qw_rnn.w, n.qw_rnn.b, n.qw_head.w, n.qw_head.b]
    }

    /// Makes every posterior emit exactly the Gaussian of its prior: head
    /// weights are zeroed and the prior biases are copied into the posterior
    /// heads. Used to check that both KL terms vanish.
    pub fn tie_posteriors_to_priors(&mut self) {
        let n = self.nets.clone();
        for h in [&n.qm_head, &n.qo_head, &n.qw_head, &n.pm_head, &n.po_head] {
            self.params.get_mut(h.w).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let pm = self.params.get(n.pm_head.b).data.clone();
        let po = self.params.get(n.po_head.b).data.clone();
        self.params.get_mut(n.qm_head.b).data.copy_from_slice(&pm);
        self.params.get_mut(n.qo_head.b).data.copy_from_slice(&po);
        self.params.get_mut(n.qw_head.b).data.copy_from_slice(&po);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_string(&self.config)?;
        write_checkpoint(path, &self.params, &cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, cfg) = read_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_str(&cfg)
            .map_err(|e| Error::Checkpoint(format!("{}: bad config echo: {e}", path.display())))?;
        let mut model = Self::new(config)?;
        if store.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} tensors, model expects {}",
                path.display(),
                store.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            if store.id_of(model.params.name(id)).is_none() {
                return Err(Error::Checkpoint(format!(
                    "{}: missing tensor {}",
                    path.display(),
                    model.params.name(id)
                )));
            }
        }
        model.params.load_matching(&store)?;
        Ok(model)
    }

    // ---- graph blocks -------------------------------------------------

    pub fn image_vars(&self, g: &mut Graph, img: &ImageRecord) -> Result<ImageVars> {
        if img.num_regions() == 0 {
            return Err(Error::NoRegions);
        }
        if img.dim() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "image {} has feature dim {}, model expects {}",
                img.image_id,
                img.dim(),
                self.config.feature_dim
            )));
        }
        let vbar = g.constant(img.pooled().to_vec());
        let regions: Vec<Var> = img.regions_f64().into_iter().map(|r| g.constant(r)).collect();
        let keys = regions.iter().map(|&r| g.affine(self.nets.att.wv, None, r)).collect();
        Ok(ImageVars { vbar, regions, keys })
    }

    pub fn embed(&self, g: &mut Graph, token: TokenId) -> Var {
        g.row(self.nets.emb, token as usize)
    }

    /// Bidirectional encoding of the context sequence. Returns per-position
    /// `[fwd_t, bwd_t]`.
    pub fn encode_context(&self, g: &mut Graph, context: &[TokenId]) -> Vec<Var> {
        let n = &self.nets;
        let embs: Vec<Var> = context.iter().map(|&t| self.embed(g, t)).collect();
        let (mut h, mut c) = n.enc_fwd.zero_state(g);
        let mut fwd = Vec::with_capacity(embs.len());
        for &e in &embs {
            (h, c) = n.enc_fwd.step(g, e, h, c);
            fwd.push(h);
        }
        let (mut h, mut c) = n.enc_bwd.zero_state(g);
        let mut bwd = vec![h; embs.len()];
        for (i, &e) in embs.iter().enumerate().rev() {
            (h, c) = n.enc_bwd.step(g, e, h, c);
            bwd[i] = h;
        }
        fwd.into_iter().zip(bwd).map(|(f, b)| g.concat(&[f, b])).collect()
    }

    /// One step of the context posterior recurrence.
    pub fn posterior_context_step(
        &self,
        g: &mut Graph,
        state: (Var, Var),
        enc_t: Var,
        z_m_prev: Var,
        vbar: Var,
    ) -> (GaussVar, (Var, Var)) {
        let n = &self.nets;
        let x = g.concat(&[vbar, enc_t, z_m_prev]);
        let (h, c) = n.qm_rnn.step(g, x, state.0, state.1);
        (n.qm_head.apply(g, h), (h, c))
    }

    pub fn posterior_context_init(&self, g: &mut Graph) -> (Var, Var) {
        self.nets.qm_rnn.zero_state(g)
    }

    pub fn posterior_object_init(&self, g: &mut Graph) -> (Var, Var) {
        self.nets.qo_rnn.zero_state(g)
    }

    /// Embedding of the paired object evidence at one step: the object's
    /// vector at placeholder positions, zeros elsewhere.
    pub fn object_evidence_paired(&self, g: &mut Graph, object: Option<usize>) -> Var {
        match object {
            Some(o) => g.row(self.nets.qo_emb, o),
            None => g.zeros(self.config.dims.word_dim),
        }
    }

    /// Mean-pooled class embedding of C_k(I) for the weak posterior.
    pub fn object_evidence_weak(&self, g: &mut Graph, classes: &[usize]) -> Result<Var> {
        if classes.is_empty() {
            return Err(Error::EmptyEvidence);
        }
        let rows: Vec<Var> = classes.iter().map(|&c| g.row(self.nets.qw_emb, c)).collect();
        let s = g.add_n(&rows);
        Ok(g.scale(s, 1.0 / classes.len() as f64))
    }

    pub fn posterior_object_step(
        &self,
        g: &mut Graph,
        kind: ObjectPosteriorKind,
        state: (Var, Var),
        evidence: Var,
        z_m_t: Var,
        z_o_prev: Var,
        vbar: Var,
    ) -> (GaussVar, (Var, Var)) {
        let n = &self.nets;
        let (rnn, head) = match kind {
            ObjectPosteriorKind::Paired => (&n.qo_rnn, &n.qo_head),
            ObjectPosteriorKind::Weak => (&n.qw_rnn, &n.qw_head),
        };
        let x = g.concat(&[vbar, z_m_t, evidence]);
        let (h, c) = rnn.step(g, x, state.0, state.1);
        let hx = g.concat(&[h, z_m_t, z_o_prev]);
        (head.apply(g, hx), (h, c))
    }

    pub fn prior_init(&self, g: &mut Graph) -> PriorVars {
        let (hm, cm) = self.nets.pm_rnn.zero_state(g);
        let (ho, co) = self.nets.po_rnn.zero_state(g);
        PriorVars { hm, cm, ho, co }
    }

    /// Context prior step on `[v̄, emb(x_{t-1}), z^m_{t-1}]`. Takes no object
    /// latent.
    pub fn prior_context_step(
        &self,
        g: &mut Graph,
        state: PriorVars,
        x_prev_emb: Var,
        z_m_prev: Var,
        vbar: Var,
    ) -> (GaussVar, PriorVars) {
        let n = &self.nets;
        let x = g.concat(&[vbar, x_prev_emb, z_m_prev]);
        let (hm, cm) = n.pm_rnn.step(g, x, state.hm, state.cm);
        (n.pm_head.apply(g, hm), PriorVars { hm, cm, ..state })
    }

    /// Object prior step on `[v̄, emb(x_{t-1}), z^m_t, z^o_{t-1}]`.
    pub fn prior_object_step(
        &self,
        g: &mut Graph,
        state: PriorVars,
        x_prev_emb: Var,
        z_m_t: Var,
        z_o_prev: Var,
        vbar: Var,
    ) -> (GaussVar, PriorVars) {
        let n = &self.nets;
        let x = g.concat(&[vbar, x_prev_emb, z_m_t, z_o_prev]);
        let (ho, co) = n.po_rnn.step(g, x, state.ho, state.co);
        (n.po_head.apply(g, ho), PriorVars { ho, co, ..state })
    }

    pub fn decoder_init(&self, g: &mut Graph) -> DecoderVars {
        let (h_att, c_att) = self.nets.att_rnn.zero_state(g);
        let (h_lang, c_lang) = self.nets.lang_rnn.zero_state(g);
        DecoderVars {
            h_att,
            c_att,
            h_lang,
            c_lang,
        }
    }

    /// One decoder step. The attention layer consumes
    /// `[h_lang_{t-1}, z_t, v̄, emb(x_{t-1})]`; attention scores
    /// `w · tanh(W_v v_i + W_h h_att + b)` weight the regions; the language
    /// layer consumes `[v̂, h_att]` and emits token logits.
    pub fn decode_step_vars(
        &self,
        g: &mut Graph,
        state: DecoderVars,
        x_prev_emb: Var,
        z_t: Var,
        img: &ImageVars,
    ) -> DecodeOut {
        let n = &self.nets;
        let x = g.concat(&[state.h_lang, z_t, img.vbar, x_prev_emb]);
        let (h_att, c_att) = n.att_rnn.step(g, x, state.h_att, state.c_att);
        let q = g.affine(n.att.wh, Some(n.att.bh), h_att);
        let scores: Vec<Var> = img
            .keys
            .iter()
            .map(|&k| {
                let a = g.add(k, q);
                let t = g.tanh(a);
                g.affine(n.att.score, None, t)
            })
            .collect();
        let s = g.concat(&scores);
        let attention = g.softmax(s);
        let vhat = g.weighted_sum(attention, &img.regions);
        let lx = g.concat(&[vhat, h_att]);
        let (h_lang, c_lang) = n.lang_rnn.step(g, lx, state.h_lang, state.c_lang);
        let logits = g.affine(n.out_w, Some(n.out_b), h_lang);
        DecodeOut {
            logits,
            attention,
            state: DecoderVars {
                h_att,
                c_att,
                h_lang,
                c_lang,
            },
        }
    }
}
