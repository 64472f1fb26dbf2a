use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::vocab::TokenId;
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::model::Lstm;
use crate::optim::Adam;
use crate::params::{read_checkpoint, write_checkpoint, Grads, Init, ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub hidden: usize,
    /// Joint embedding dimension `e`.
    pub dim: usize,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTrainConfig {
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lr: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Recurrent context encoder and affine image projector into a shared unit
/// sphere.
#[derive(Debug, Clone)]
pub struct JointEmbedder {
    pub config: EmbedderConfig,
    pub params: ParamStore,
    emb: ParamId,
    rnn: Lstm,
    ctx_w: ParamId,
    ctx_b: ParamId,
    img_w: ParamId,
    img_b: ParamId,
}

impl JointEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        let c = &config;
        if c.vocab_size == 0 || c.feature_dim == 0 || c.word_dim == 0 || c.hidden == 0 || c.dim == 0 {
            return Err(Error::Config("embedder dimensions must be positive".into()));
        }
        let mut rng = rng_for(c.init_seed, &["embedder-init"]);
        let r = &mut rng;
        let mut s = ParamStore::new();
        let emb = s.add("je.emb", c.vocab_size, c.word_dim, Init::UniformScaled(0.1), r);
        let rnn = Lstm::new(&mut s, "je.rnn", c.word_dim, c.hidden, r);
        let ctx_w = s.add("je.ctx.w", c.dim, c.hidden, Init::Uniform, r);
        let ctx_b = s.add("je.ctx.b", 1, c.dim, Init::Zeros, r);
        let img_w = s.add("je.img.w", c.dim, c.feature_dim, Init::Uniform, r);
        let img_b = s.add("je.img.b", 1, c.dim, Init::Zeros, r);
        Ok(Self {
            config,
            params: s,
            emb,
            rnn,
            ctx_w,
            ctx_b,
            img_w,
            img_b,
        })
    }

    /// Final hidden state of the context LSTM, projected and normalized.
    pub fn context_var(&self, g: &mut Graph, context: &[TokenId]) -> Var {
        let (mut h, mut c) = self.rnn.zero_state(g);
        for &t in context {
            let e = g.row(self.emb, t as usize);
            (h, c) = self.rnn.step(g, e, h, c);
        }
        let p = g.affine(self.ctx_w, Some(self.ctx_b), h);
        g.l2_normalize(p)
    }

    pub fn image_var(&self, g: &mut Graph, img: &ImageRecord) -> Result<Var> {
        if img.dim() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "image {} has feature dim {}, embedder expects {}",
                img.image_id,
                img.dim(),
                self.config.feature_dim
            )));
        }
        let v = g.constant(img.pooled().to_vec());
        let p = g.affine(self.img_w, Some(self.img_b), v);
        Ok(g.l2_normalize(p))
    }

    pub fn embed_context(&self, context: &[TokenId]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let v = self.context_var(&mut g, context);
        g.value(v).to_vec()
    }

    pub fn embed_image(&self, img: &ImageRecord) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.image_var(&mut g, img)?;
        Ok(g.value(v).to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.params, &serde_json::to_string(&self.config)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, cfg) = read_checkpoint(path)?;
        let config: EmbedderConfig = serde_json::from_str(&cfg)
            .map_err(|e| Error::Checkpoint(format!("{}: bad config echo: {e}", path.display())))?;
        let mut m = Self::new(config)?;
        if store.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} tensors, embedder expects {}",
                path.display(),
                store.len(),
                m.params.len()
            )));
        }
        m.params.load_matching(&store)?;
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hinge triplet loss over one batch with the hardest in-batch negative in
/// each direction. Negatives whose context equals the positive's are not
/// negatives. Returns `None` when no pair in the batch has a negative.
fn batch_loss(
    m: &JointEmbedder,
    g: &mut Graph,
    batch: &[(&[TokenId], &ImageRecord)],
    margin: f64,
) -> Result<Option<Var>> {
    let cs: Vec<Var> = batch.iter().map(|(c, _)| m.context_var(g, c)).collect();
    let is: Vec<Var> = batch.iter().map(|(_, i)| m.image_var(g, i)).collect::<Result<_>>()?;
    let n = batch.len();
    let sim = |g: &Graph, a: usize, b: usize| dot(g.value(is[a]), g.value(cs[b]));
    let mut terms = Vec::new();
    for a in 0..n {
        let negs: Vec<usize> = (0..n).filter(|&b| batch[b].0 != batch[a].0).collect();
        if negs.is_empty() {
            continue;
        }
        let pick = |f: &dyn Fn(usize) -> f64| {
            negs.iter()
                .copied()
                .fold((usize::MAX, f64::NEG_INFINITY), |best, b| {
                    let s = f(b);
                    if s > best.1 {
                        (b, s)
                    } else {
                        best
                    }
                })
                .0
        };
        let c_neg = pick(&|b| sim(g, a, b));
        let i_neg = pick(&|b| sim(g, b, a));
        let pos = g.dot(is[a], cs[a]);
        for (x, y) in [(is[a], cs[c_neg]), (is[i_neg], cs[a])] {
            let s = g.dot(x, y);
            let d = g.sub(s, pos);
            let m_ = g.constant(vec![margin]);
            let h = g.add(d, m_);
            terms.push(g.relu(h));
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.add_n(&terms)))
}

/// Trains the joint embedding on `(context, image)` pairs with Adam.
pub fn train_joint_embedding(
    pairs: &[(Vec<TokenId>, &ImageRecord)],
    config: EmbedderConfig,
    tc: &EmbedTrainConfig,
) -> Result<JointEmbedder> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs {
            need: 2,
            got: pairs.len(),
        });
    }
    if tc.batch_size < 2 || !(tc.lr > 0.0) || tc.margin < 0.0 {
        return Err(Error::Config("embedding training needs batch >= 2, lr > 0, margin >= 0".into()));
    }
    let mut m = JointEmbedder::new(config)?;
    let mut opt = Adam::new(&m.params, tc.lr);
    let mut rng = rng_for(tc.seed, &["embed", "shuffle"]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&[TokenId], &ImageRecord)> =
                chunk.iter().map(|&k| (pairs[k].0.as_slice(), pairs[k].1)).collect();
            let mut grads = Grads::zeros_like(&m.params);
            {
                let mut g = Graph::new(&m.params);
                match batch_loss(&m, &mut g, &batch, tc.margin)? {
                    Some(l) => g.backward(l, 1.0 / batch.len() as f64, &mut grads),
                    None => {
                        log::warn!("epoch {epoch}: degenerate batch of identical contexts skipped");
                        continue;
                    }
                }
            }
            opt.step(&mut m.params, &grads);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, v: Vec<f32>) -> ImageRecord {
        ImageRecord::new(id, vec![v], vec!["cat".into()]).unwrap()
    }

    fn cfg() -> EmbedderConfig {
        EmbedderConfig {
            vocab_size: 10,
            feature_dim: 3,
            word_dim: 4,
            hidden: 6,
            dim: 5,
            init_seed: 3,
        }
    }

    #[test]
    fn outputs_are_unit_norm() {
        let m = JointEmbedder::new(cfg()).unwrap();
        let c = m.embed_context(&[5, 6, 7]);
        let i = m.embed_image(&img("a", vec![0.3, -1.0, 2.0])).unwrap();
        for v in [c, i] {
            assert!((dot(&v, &v).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn separates_two_pairs_by_the_margin() {
        let (a, b) = (img("a", vec![1.0, 0.0, 0.0]), img("b", vec![0.0, 1.0, 0.0]));
        let pairs = vec![(vec![5, 6], &a), (vec![7, 8], &b)];
        let tc = EmbedTrainConfig {
            epochs: 400,
            batch_size: 2,
            ..Default::default()
        };
        let m = train_joint_embedding(&pairs, cfg(), &tc).unwrap();
        let ia = m.embed_image(&a).unwrap();
        let s_pos = dot(&ia, &m.embed_context(&[5, 6]));
        let s_neg = dot(&ia, &m.embed_context(&[7, 8]));
        assert!(s_pos - s_neg >= 0.2 - 1e-3, "{s_pos} {s_neg}");
    }

    #[test]
    fn shared_context_pulls_both_images() {
        let (a, b, c) = (
            img("a", vec![1.0, 0.2, 0.0]),
            img("b", vec![0.8, 0.0, 0.3]),
            img("c", vec![0.0, 0.0, -1.0]),
        );
        let pairs = vec![(vec![5, 6], &a), (vec![5, 6], &b), (vec![8, 9], &c)];
        let tc = EmbedTrainConfig {
            epochs: 400,
            batch_size: 3,
            ..Default::default()
        };
        let m = train_joint_embedding(&pairs, cfg(), &tc).unwrap();
        let (shared, other) = (m.embed_context(&[5, 6]), m.embed_context(&[8, 9]));
        for i in [&a, &b] {
            let v = m.embed_image(i).unwrap();
            assert!(dot(&v, &shared) > dot(&v, &other));
        }
    }

    #[test]
    fn too_few_pairs() {
        let a = img("a", vec![1.0, 0.0, 0.0]);
        let r = train_joint_embedding(&[(vec![5], &a)], cfg(), &EmbedTrainConfig::default());
        assert!(matches!(r, Err(Error::TooFewPairs { .. })));
        assert!(train_joint_embedding(&[], cfg(), &EmbedTrainConfig::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = JointEmbedder::new(cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ckpt");
        m.save(&p).unwrap();
        let l = JointEmbedder::load(&p).unwrap();
        assert_eq!(l.params, m.params);
        assert_eq!(l.config, m.config);
    }
}
