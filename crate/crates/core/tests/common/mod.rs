#![allow(dead_code)]

use std::collections::BTreeSet;

use cos_cvae::corpus::{CaptionRecord, Dataset, ImageRecord, ObjectVocabulary, RawSplit, SurfaceForms};
use cos_cvae::model::{CosModel, ModelDims};
use cos_cvae::pipeline::model_config;

pub fn micro_objects() -> ObjectVocabulary {
    ObjectVocabulary::new([
        (
            "dog".to_string(),
            SurfaceForms {
                singular: "dog".into(),
                plural: "dogs".into(),
            },
        ),
        (
            "cat".to_string(),
            SurfaceForms {
                singular: "cat".into(),
                plural: "cats".into(),
            },
        ),
    ])
    .unwrap()
}

/// Three images over two objects with a handful of short captions; small
/// enough that a model on it stays under 500 parameters.
pub fn micro_dataset() -> Dataset {
    let img = |id: &str, regions: Vec<Vec<f32>>, classes: &[&str]| {
        ImageRecord::new(id, regions, classes.iter().map(|s| s.to_string()).collect()).unwrap()
    };
    let images = vec![
        img("a", vec![vec![0.5, -0.2], vec![0.1, 0.9]], &["dog", "cat"]),
        img("b", vec![vec![-0.7, 0.3]], &["cat"]),
        img("c", vec![vec![0.2, 0.4], vec![0.6, -0.5]], &["dog", "dog"]),
    ];
    let cap = |id: &str, c: &[&str]| CaptionRecord {
        image_id: id.into(),
        captions: c.iter().map(|s| s.to_string()).collect(),
    };
    let train = RawSplit {
        images,
        captions: vec![
            cap("a", &["a dog and a cat", "a cat on grass"]),
            cap("b", &["two cats on grass"]),
            cap("c", &["a dog and a dog", "two dogs"]),
        ],
    };
    let empty = RawSplit {
        images: vec![],
        captions: vec![],
    };
    Dataset::assemble(micro_objects(), train, empty.clone(), empty, &BTreeSet::new(), 20).unwrap()
}

pub fn micro_dims() -> ModelDims {
    ModelDims {
        word_dim: 2,
        z_dim: 1,
        enc_hidden: 1,
        obj_hidden: 1,
        prior_m_hidden: 1,
        prior_o_hidden: 1,
        att_hidden: 1,
        lang_hidden: 2,
        att_dim: 1,
    }
}

pub fn micro_model(ds: &Dataset, seed: u64) -> CosModel {
    CosModel::new(model_config(ds, micro_dims(), seed)).unwrap()
}

pub fn w(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}
