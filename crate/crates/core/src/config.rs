//! Run configuration: a profile of defaults overridden by flat `key = value`
//! lines. Every seed used by a run derives from the single `seed` key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{Emission, SampleOptions};
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::objective::TrainConfig;
use crate::pipeline::EmbedDims;
use crate::pseudosup::{PseudoConfig, PseudoMode};
use crate::retrieval::EmbedTrainConfig;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Full,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected toy or full)"))),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Toy => "toy",
            Profile::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub n_images: usize,
    pub max_len: usize,
    pub held_out: BTreeSet<String>,
    pub model: ModelDims,
    pub train: TrainConfig,
    /// Steps of the combined paired + pseudo objective.
    pub pseudo_iterations: usize,
    pub embed: EmbedDims,
    pub embed_train: EmbedTrainConfig,
    pub pseudo: PseudoConfig,
    pub samples_n: usize,
    pub sample: SampleOptions,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Toy => Self {
                profile,
                seed: 0,
                n_images: 600,
                max_len: 20,
                held_out: BTreeSet::new(),
                model: ModelDims::toy(),
                train: TrainConfig::toy(),
                pseudo_iterations: 6000,
                embed: EmbedDims::toy(),
                embed_train: EmbedTrainConfig::default(),
                pseudo: PseudoConfig::default(),
                samples_n: 10,
                sample: SampleOptions::default(),
            },
            Profile::Full => Self {
                profile,
                seed: 0,
                n_images: 600,
                max_len: 20,
                held_out: BTreeSet::new(),
                model: ModelDims::full(),
                train: TrainConfig::full(),
                pseudo_iterations: 70000,
                embed: EmbedDims::full(),
                embed_train: EmbedTrainConfig::default(),
                pseudo: PseudoConfig::default(),
                samples_n: 100,
                sample: SampleOptions::default(),
            },
        }
    }

    /// Applies one override. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = p(key, v)?,
            "n_images" => self.n_images = p(key, v)?,
            "max_len" => self.max_len = p(key, v)?,
            "held_out" => {
                self.held_out = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "word_dim" => self.model.word_dim = p(key, v)?,
            "z_dim" => self.model.z_dim = p(key, v)?,
            "enc_hidden" => self.model.enc_hidden = p(key, v)?,
            "obj_hidden" => self.model.obj_hidden = p(key, v)?,
            "prior_m_hidden" => self.model.prior_m_hidden = p(key, v)?,
            "prior_o_hidden" => self.model.prior_o_hidden = p(key, v)?,
            "att_hidden" => self.model.att_hidden = p(key, v)?,
            "lang_hidden" => self.model.lang_hidden = p(key, v)?,
            "att_dim" => self.model.att_dim = p(key, v)?,
            "alpha" => self.train.alpha = p(key, v)?,
            "lr" => self.train.lr = p(key, v)?,
            "momentum" => self.train.momentum = p(key, v)?,
            "weight_decay" => self.train.weight_decay = p(key, v)?,
            "iterations" => self.train.iterations = p(key, v)?,
            "pseudo_iterations" => self.pseudo_iterations = p(key, v)?,
            "batch_size" => self.train.batch_size = p(key, v)?,
            "kl_warmup_steps" => self.train.kl_warmup_steps = p(key, v)?,
            "clip_norm" => self.train.clip_norm = p(key, v)?,
            "word_dropout" => self.train.word_dropout = p(key, v)?,
            "free_bits" => self.train.free_bits = p(key, v)?,
            "embed_word_dim" => self.embed.word_dim = p(key, v)?,
            "embed_hidden" => self.embed.hidden = p(key, v)?,
            "embed_dim" => self.embed.dim = p(key, v)?,
            "embed_margin" => self.embed_train.margin = p(key, v)?,
            "embed_lr" => self.embed_train.lr = p(key, v)?,
            "embed_epochs" => self.embed_train.epochs = p(key, v)?,
            "embed_batch_size" => self.embed_train.batch_size = p(key, v)?,
            "mode" => self.pseudo.mode = p(key, v)?,
            "neighbors_k" => self.pseudo.neighbors_k = p(key, v)?,
            "top_k" => self.pseudo.top_k = p(key, v)?,
            "exclude_self" => self.pseudo.exclude_self = p(key, v)?,
            "samples_n" => self.samples_n = p(key, v)?,
            "sample_max_len" => self.sample.max_len = p(key, v)?,
            "temperature" => self.sample.temperature = p(key, v)?,
            "emission" => {
                self.sample.emission = match v {
                    "greedy" => Emission::Greedy,
                    "multinomial" => Emission::Multinomial,
                    _ => return Err(Error::Config(format!("bad value {v:?} for emission"))),
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key = value"))?;
            self.set(k, v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Every key with its current value, in the config file syntax.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let m = &self.model;
        let t = &self.train;
        let mode = match self.pseudo.mode {
            PseudoMode::Standard => "standard",
            PseudoMode::Novel => "novel",
        };
        let emission = match self.sample.emission {
            Emission::Greedy => "greedy",
            Emission::Multinomial => "multinomial",
        };
        let held: Vec<&str> = self.held_out.iter().map(String::as_str).collect();
        [
            ("profile", self.profile.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("n_images", self.n_images.to_string()),
            ("max_len", self.max_len.to_string()),
            ("held_out", held.join(",")),
            ("word_dim", m.word_dim.to_string()),
            ("z_dim", m.z_dim.to_string()),
            ("enc_hidden", m.enc_hidden.to_string()),
            ("obj_hidden", m.obj_hidden.to_string()),
            ("prior_m_hidden", m.prior_m_hidden.to_string()),
            ("prior_o_hidden", m.prior_o_hidden.to_string()),
            ("att_hidden", m.att_hidden.to_string()),
            ("lang_hidden", m.lang_hidden.to_string()),
            ("att_dim", m.att_dim.to_string()),
            ("alpha", t.alpha.to_string()),
            ("lr", t.lr.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("iterations", t.iterations.to_string()),
            ("pseudo_iterations", self.pseudo_iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("kl_warmup_steps", t.kl_warmup_steps.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("word_dropout", t.word_dropout.to_string()),
            ("free_bits", t.free_bits.to_string()),
            ("embed_word_dim", self.embed.word_dim.to_string()),
            ("embed_hidden", self.embed.hidden.to_string()),
            ("embed_dim", self.embed.dim.to_string()),
            ("embed_margin", self.embed_train.margin.to_string()),
            ("embed_lr", self.embed_train.lr.to_string()),
            ("embed_epochs", self.embed_train.epochs.to_string()),
            ("embed_batch_size", self.embed_train.batch_size.to_string()),
            ("mode", mode.to_string()),
            ("neighbors_k", self.pseudo.neighbors_k.to_string()),
            ("top_k", self.pseudo.top_k.to_string()),
            ("exclude_self", self.pseudo.exclude_self.to_string()),
            ("samples_n", self.samples_n.to_string()),
            ("sample_max_len", self.sample.max_len.to_string()),
            ("temperature", self.sample.temperature.to_string()),
            ("emission", emission.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.samples_n == 0 {
            return Err(Error::Config("samples_n must be at least 1".into()));
        }
        if self.pseudo.neighbors_k == 0 || self.pseudo.top_k == 0 {
            return Err(Error::Config("neighbors_k and top_k must be positive".into()));
        }
        if self.max_len == 0 || self.sample.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if !(self.sample.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Seed for one named consumer of randomness.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, &[label])
    }

    /// Training config with its seed derived from the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed_for("train"),
            ..self.train.clone()
        }
    }

    pub fn embed_train_config(&self) -> EmbedTrainConfig {
        EmbedTrainConfig {
            seed: self.seed_for("embed"),
            ..self.embed_train.clone()
        }
    }

    pub fn pseudo_config(&self) -> PseudoConfig {
        PseudoConfig {
            seed: self.seed_for("pseudo"),
            ..self.pseudo.clone()
        }
    }
}
