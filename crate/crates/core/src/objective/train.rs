use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::elbo::{unroll, ElboNoise, LossBreakdown, ObjectLatent, SeqExample};
use crate::autograd::Graph;
use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::model::CosModel;
use crate::optim::{clip_global_norm, Sgd};
use crate::params::Grads;
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kl_warmup_steps: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Probability of replacing a decoder input word by UNK.
    pub word_dropout: f64,
    /// Per-step KL floor in nats; 0 trains the exact bound.
    pub free_bits: f64,
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            alpha: 0.2,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.001,
            iterations: 6000,
            batch_size: 8,
            seed: 0,
            kl_warmup_steps: 0,
            clip_norm: 5.0,
            word_dropout: 0.0,
            free_bits: 0.0,
        }
    }

    pub fn full() -> Self {
        Self {
            alpha: 0.2,
            lr: 0.015,
            momentum: 0.9,
            weight_decay: 0.001,
            iterations: 70000,
            batch_size: 100,
            seed: 0,
            kl_warmup_steps: 0,
            clip_norm: 0.0,
            word_dropout: 0.0,
            free_bits: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.lr > 0.0) || self.momentum < 0.0 || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return Err(Error::Config("optimizer scalars out of range".into()));
        }
        if !(self.free_bits >= 0.0) {
            return Err(Error::Config("free_bits must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::Config("word_dropout must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    fn beta(&self, iteration: usize) -> f64 {
        if self.kl_warmup_steps == 0 {
            1.0
        } else {
            ((iteration + 1) as f64 / self.kl_warmup_steps as f64).min(1.0)
        }
    }
}

/// A paired caption of image `image` (index into the image list).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub image: usize,
    pub seq: SeqExample,
}

/// A pseudo caption. `weak_classes` selects novel mode (weak posterior on
/// those classes); `None` draws the object latent from the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoExample {
    pub image: usize,
    pub seq: SeqExample,
    pub weak_classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub recon: f64,
    pub kl_context: f64,
    pub kl_object: f64,
    pub total: f64,
    pub mode: String,
}

pub fn write_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Owns the model and optimizer state across training stages.
pub struct Trainer {
    pub model: CosModel,
    pub cfg: TrainConfig,
    opt: Sgd,
    iteration: usize,
    rng_paired: Rng,
    rng_pseudo: Rng,
    pub log: Vec<LossRow>,
}

fn mean_row(iteration: usize, rows: &[LossBreakdown], mode: &str) -> LossRow {
    let n = rows.len().max(1) as f64;
    let s = |f: fn(&LossBreakdown) -> f64| rows.iter().map(f).sum::<f64>() / n;
    LossRow {
        iteration,
        recon: s(|r| r.recon),
        kl_context: s(|r| r.kl_context),
        kl_object: s(|r| r.kl_object),
        total: s(|r| r.total),
        mode: mode.to_string(),
    }
}

impl Trainer {
    pub fn new(model: CosModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Sgd::new(&model.params, cfg.lr, cfg.momentum, cfg.weight_decay);
        Ok(Self {
            rng_paired: rng_for(cfg.seed, &["train", "paired"]),
            rng_pseudo: rng_for(cfg.seed, &["train", "pseudo"]),
            model,
            cfg,
            opt,
            iteration: 0,
            log: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Accumulates `weight / batch` times the gradient of each example's
    /// loss into `grads`.
    #[allow(clippy::too_many_arguments)]
    fn stream(
        &self,
        images: &[ImageRecord],
        batch: &[(usize, &SeqExample, ObjectLatent, ElboNoise)],
        weight: f64,
        beta: f64,
        grads: &mut Grads,
        term: &str,
    ) -> Result<Vec<LossBreakdown>> {
        let scale = weight / batch.len() as f64;
        let mut rows = Vec::with_capacity(batch.len());
        for (img, seq, src, noise) in batch {
            let mut g = Graph::new(&self.model.params);
            let iv = self.model.image_vars(&mut g, &images[*img])?;
            let v = unroll(&self.model, &mut g, seq, &iv, noise, src)?;
            let b = v.breakdown(&g);
            if let Some(t) = b.first_non_finite() {
                return Err(Error::NonFiniteLoss {
                    term: format!("{term}.{t}"),
                    iteration: self.iteration,
                });
            }
            let total = v.total(&mut g, beta, self.cfg.free_bits);
            g.backward(total, scale, grads);
            rows.push(b);
        }
        Ok(rows)
    }

    /// Runs `iterations` updates of the combined objective
    /// `(1 - alpha) L + alpha L̂`. An empty pseudo set or `alpha == 0` trains
    /// on the paired objective alone.
    pub fn run(
        &mut self,
        images: &[ImageRecord],
        paired: &[PairedExample],
        pseudo: &[PseudoExample],
        iterations: usize,
    ) -> Result<()> {
        if paired.is_empty() && pseudo.is_empty() {
            return Err(Error::TooFewPairs { need: 1, got: 0 });
        }
        let z = self.model.z_dim();
        let use_pseudo = !pseudo.is_empty() && self.cfg.alpha > 0.0;
        let alpha = if use_pseudo { self.cfg.alpha } else { 0.0 };
        for _ in 0..iterations {
            let beta = self.cfg.beta(self.iteration);
            let mut grads = Grads::zeros_like(&self.model.params);
            if !paired.is_empty() && alpha < 1.0 {
                let batch: Vec<_> = (0..self.cfg.batch_size)
                    .map(|_| {
                        let ex = &paired[self.rng_paired.gen_range(0..paired.len())];
                        let noise = ElboNoise::draw(&mut self.rng_paired, ex.seq.steps(), z)
                            .with_word_dropout(&mut self.rng_paired, self.cfg.word_dropout);
                        (ex.image, &ex.seq, ObjectLatent::Posterior, noise)
                    })
                    .collect();
                let rows = self.stream(images, &batch, 1.0 - alpha, beta, &mut grads, "paired")?;
                self.log.push(mean_row(self.iteration, &rows, "paired"));
            }
            if use_pseudo {
                let batch: Vec<_> = (0..self.cfg.batch_size)
                    .map(|_| {
                        let ex = &pseudo[self.rng_pseudo.gen_range(0..pseudo.len())];
                        let noise = ElboNoise::draw(&mut self.rng_pseudo, ex.seq.steps(), z)
                            .with_word_dropout(&mut self.rng_pseudo, self.cfg.word_dropout);
                        let src = match &ex.weak_classes {
                            Some(c) => ObjectLatent::Weak(c.clone()),
                            None => ObjectLatent::Prior,
                        };
                        (ex.image, &ex.seq, src, noise)
                    })
                    .collect();
                let rows = self.stream(images, &batch, alpha, beta, &mut grads, "pseudo")?;
                self.log.push(mean_row(self.iteration, &rows, "pseudo"));
            }
            if !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "gradient".into(),
                    iteration: self.iteration,
                });
            }
            if self.cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, self.cfg.clip_norm);
            }
            self.opt.step(&mut self.model.params, &grads);
            self.iteration += 1;
        }
        Ok(())
    }

    pub fn into_model(self) -> CosModel {
        self.model
    }
}
