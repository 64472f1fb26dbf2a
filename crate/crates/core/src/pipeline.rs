//! Glue between the modules: training inputs from a dataset, the two-stage
//! paired then pseudo-supervised schedule, and sampling for evaluation.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::TokenId;
use crate::corpus::{Dataset, ImageRecord};
use crate::decode::{sample_diverse, SampleOptions};
use crate::error::Result;
use crate::evalkit::Words;
use crate::model::{CosModel, ModelConfig, ModelDims};
use crate::objective::{PairedExample, SeqExample, TrainConfig, Trainer};
use crate::pseudosup::{build_pseudo_pairs, pseudo_examples, PseudoBuild, PseudoConfig};
use crate::retrieval::{train_joint_embedding, EmbedTrainConfig, EmbedderConfig, JointEmbedder, NeighborIndex};

/// Training images (all of them, captioned or not) and one example per
/// paired caption, indexing into that image list.
pub fn paired_examples(ds: &Dataset) -> Result<(Vec<ImageRecord>, Vec<PairedExample>)> {
    let sp = ds.splitter();
    let images: Vec<ImageRecord> = ds.train.images().cloned().collect();
    let mut out = Vec::new();
    for (i, p) in ds.train.pairs.iter().enumerate() {
        for c in &p.captions {
            out.push(PairedExample {
                image: i,
                seq: SeqExample::from_split(&sp.split(c), &ds.vocab, &ds.objects)?,
            });
        }
    }
    Ok((images, out))
}

/// `(context, image)` pairs of every training caption.
pub fn embedding_pairs(ds: &Dataset) -> Vec<(Vec<TokenId>, &ImageRecord)> {
    let sp = ds.splitter();
    ds.train
        .pairs
        .iter()
        .flat_map(|p| p.captions.iter().map(move |c| (c, &p.image)))
        .map(|(c, img)| (sp.split(c).context, img))
        .collect()
}

pub fn model_config(ds: &Dataset, dims: ModelDims, init_seed: u64) -> ModelConfig {
    ModelConfig {
        dims,
        vocab_size: ds.vocab.len(),
        n_objects: ds.objects.len(),
        feature_dim: ds.train.pairs.first().map_or(0, |p| p.image.dim()),
        init_seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedDims {
    pub word_dim: usize,
    pub hidden: usize,
    pub dim: usize,
}

impl EmbedDims {
    pub fn toy() -> Self {
        Self {
            word_dim: 16,
            hidden: 24,
            dim: 16,
        }
    }

    pub fn full() -> Self {
        Self {
            word_dim: 300,
            hidden: 1024,
            dim: 1024,
        }
    }
}

pub fn train_embedder(ds: &Dataset, dims: &EmbedDims, tc: &EmbedTrainConfig) -> Result<(JointEmbedder, NeighborIndex)> {
    let cfg = EmbedderConfig {
        vocab_size: ds.vocab.len(),
        feature_dim: ds.train.pairs.first().map_or(0, |p| p.image.dim()),
        word_dim: dims.word_dim,
        hidden: dims.hidden,
        dim: dims.dim,
        init_seed: tc.seed,
    };
    let e = train_joint_embedding(&embedding_pairs(ds), cfg, tc)?;
    let idx = NeighborIndex::build(ds, &e)?;
    Ok((e, idx))
}

/// Paired-only training for `iterations` steps.
pub fn train_paired(ds: &Dataset, model: CosModel, tc: &TrainConfig, iterations: usize) -> Result<Trainer> {
    let (images, paired) = paired_examples(ds)?;
    let mut t = Trainer::new(model, tc.clone())?;
    t.run(&images, &paired, &[], iterations)?;
    Ok(t)
}

/// Builds pseudo captions with the current model and continues training on
/// the combined objective for `iterations` steps.
pub fn continue_with_pseudo(
    ds: &Dataset,
    trainer: &mut Trainer,
    embedder: &JointEmbedder,
    index: &NeighborIndex,
    pc: &PseudoConfig,
    iterations: usize,
) -> Result<PseudoBuild> {
    let (images, paired) = paired_examples(ds)?;
    let build = build_pseudo_pairs(ds, index, embedder, &trainer.model, pc)?;
    let pseudo = pseudo_examples(&build.captions, &images, &ds.vocab, &ds.objects, pc.top_k)?;
    trainer.run(&images, &paired, &pseudo, iterations)?;
    Ok(build)
}

/// `n` samples for each image, as word lists.
pub fn sample_images(
    model: &CosModel,
    ds: &Dataset,
    images: &[&ImageRecord],
    n: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Vec<Vec<Words>>> {
    images
        .iter()
        .map(|img| {
            Ok(sample_diverse(model, &ds.vocab, img, n, seed, opts)?
                .iter()
                .map(|c| ds.vocab.words(c.words()))
                .collect())
        })
        .collect()
}
