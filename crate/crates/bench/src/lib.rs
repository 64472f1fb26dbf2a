//! Shared fixtures for the kernel benchmarks.

use cos_cvae::corpus::{generate_toy_world, Dataset, ToyConfig};
use cos_cvae::evalkit::{words, Words};
use cos_cvae::model::{CosModel, ModelDims};
use cos_cvae::pipeline::model_config;

pub fn toy_dataset(n_images: usize) -> Dataset {
    generate_toy_world(7, n_images, &ToyConfig::default())
        .and_then(|w| w.dataset(20))
        .expect("toy world")
}

pub fn toy_model(ds: &Dataset) -> CosModel {
    CosModel::new(model_config(ds, ModelDims::toy(), 7)).expect("model")
}

/// Reference sets of every test image as word lists.
pub fn references(ds: &Dataset) -> Vec<Vec<Words>> {
    ds.test
        .pairs
        .iter()
        .map(|p| p.captions.iter().map(|c| words(&ds.vocab.decode(c.words()))).collect())
        .collect()
}
