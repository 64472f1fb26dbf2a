use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes. Context and object latents share `z_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub word_dim: usize,
    pub z_dim: usize,
    pub enc_hidden: usize,
    pub obj_hidden: usize,
    pub prior_m_hidden: usize,
    pub prior_o_hidden: usize,
    pub att_hidden: usize,
    pub lang_hidden: usize,
    pub att_dim: usize,
}

impl ModelDims {
    pub fn toy() -> Self {
        Self {
            word_dim: 16,
            z_dim: 6,
            enc_hidden: 16,
            obj_hidden: 12,
            prior_m_hidden: 24,
            prior_o_hidden: 12,
            att_hidden: 32,
            lang_hidden: 32,
            att_dim: 16,
        }
    }

    pub fn full() -> Self {
        Self {
            word_dim: 300,
            z_dim: 64,
            enc_hidden: 1024,
            obj_hidden: 1024,
            prior_m_hidden: 1024,
            prior_o_hidden: 256,
            att_hidden: 1024,
            lang_hidden: 1024,
            att_dim: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub vocab_size: usize,
    pub n_objects: usize,
    pub feature_dim: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let sizes = [
            d.word_dim,
            d.z_dim,
            d.enc_hidden,
            d.obj_hidden,
            d.prior_m_hidden,
            d.prior_o_hidden,
            d.att_hidden,
            d.lang_hidden,
            d.att_dim,
            self.vocab_size,
            self.n_objects,
            self.feature_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}
