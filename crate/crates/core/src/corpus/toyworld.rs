//! Synthetic caption world for desk-scale experiments.
//!
//! Each image belongs to a scene and a style and shows one or two objects.
//! Region features are the object prototype shifted by scene and style
//! offsets plus bounded noise. Paired captions only use the templates of the
//! image's own style; the full set of plausible captions covers every style
//! of its scene.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::dataset::{Dataset, ImageRecord, RawSplit};
use crate::corpus::io::CaptionRecord;
use crate::corpus::objects::{ObjectVocabulary, SurfaceForms};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, rng_for};

pub const TOY_OBJECTS: [(&str, &str, &str); 10] = [
    ("person", "person", "people"),
    ("dog", "dog", "dogs"),
    ("cat", "cat", "cats"),
    ("horse", "horse", "horses"),
    ("bird", "bird", "birds"),
    ("car", "car", "cars"),
    ("kite", "kite", "kites"),
    ("bench", "bench", "benches"),
    ("zebra", "zebra", "zebras"),
    ("fire hydrant", "fire hydrant", "fire hydrants"),
];

pub const SCENES: [&str; 3] = ["park", "street", "beach"];

/// `TEMPLATES[scene][style]` holds (one-object, two-object) template pairs.
/// Slots: `{a}`/`{as}` first object singular/plural, `{b}`/`{bs}` second.
pub const TEMPLATES: [[[(&str, &str); 2]; 3]; 3] = [
    [
        [
            ("a {a} running across the grassy park", "a {a} and a {b} running across the grassy park"),
            ("a {a} playing on the green lawn", "a {a} playing with a {b} on the green lawn"),
        ],
        [
            ("a {a} resting under a large tree", "a {a} resting next to a {b} under a large tree"),
            ("a quiet park with a {a} near the trees", "a quiet park with a {a} and a {b} near the trees"),
        ],
        [
            ("two {as} in a sunny park", "two {as} and a {b} in a sunny park"),
            ("some {as} gathered on the park grass", "some {as} and {bs} gathered on the park grass"),
        ],
    ],
    [
        [
            ("a {a} moving down a busy city street", "a {a} passing a {b} on a busy city street"),
            ("a {a} crossing the road in traffic", "a {a} and a {b} crossing the road in traffic"),
        ],
        [
            ("a {a} standing on the sidewalk at night", "a {a} standing beside a {b} on the sidewalk at night"),
            ("a lonely street corner with a {a}", "a lonely street corner with a {a} and a {b}"),
        ],
        [
            ("several {as} lined up along the street", "several {as} and a {b} lined up along the street"),
            ("many {as} near the old brick buildings", "many {as} and {bs} near the old brick buildings"),
        ],
    ],
    [
        [
            ("a {a} jumping in the ocean waves", "a {a} and a {b} jumping in the ocean waves"),
            ("a {a} racing along the sandy shore", "a {a} racing a {b} along the sandy shore"),
        ],
        [
            ("a {a} sitting on the sand at sunset", "a {a} sitting with a {b} on the sand at sunset"),
            ("a calm beach with a {a} by the water", "a calm beach with a {a} and a {b} by the water"),
        ],
        [
            ("three {as} on a crowded beach", "three {as} and a {b} on a crowded beach"),
            ("a group of {as} near the blue water", "a group of {as} and {bs} near the blue water"),
        ],
    ],
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub feature_dim: usize,
    pub captions_per_image: usize,
    pub scene_scale: f64,
    pub style_scale: f64,
    pub noise: f64,
    pub two_object_prob: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub held_out: BTreeSet<String>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            captions_per_image: 3,
            scene_scale: 0.6,
            style_scale: 0.4,
            noise: 0.05,
            two_object_prob: 0.4,
            val_fraction: 0.1,
            test_fraction: 0.2,
            held_out: BTreeSet::new(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy world: {m}")));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.captions_per_image == 0 {
            return bad("captions_per_image must be positive");
        }
        if !(0.0..=1.0).contains(&self.two_object_prob) {
            return bad("two_object_prob must lie in [0, 1]");
        }
        if self.noise < 0.0 || self.scene_scale < 0.0 || self.style_scale < 0.0 {
            return bad("scales must be non-negative");
        }
        if self.val_fraction < 0.0 || self.test_fraction < 0.0 || self.val_fraction + self.test_fraction >= 1.0 {
            return bad("split fractions must be non-negative and leave a training split");
        }
        for h in &self.held_out {
            if !TOY_OBJECTS.iter().any(|o| o.0 == h) {
                return bad(&format!("held-out object {h} is not a toy object"));
            }
        }
        Ok(())
    }
}

/// Generator-side ground truth for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyImage {
    pub image_id: String,
    pub scene: usize,
    pub style: usize,
    /// (object name, plural) in region order.
    pub objects: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub objects: ObjectVocabulary,
    pub train: RawSplit,
    pub val: RawSplit,
    pub test: RawSplit,
    pub meta: Vec<ToyImage>,
    pub held_out: BTreeSet<String>,
}

pub fn toy_objects() -> ObjectVocabulary {
    ObjectVocabulary::new(TOY_OBJECTS.iter().map(|(n, s, p)| {
        (
            n.to_string(),
            SurfaceForms {
                singular: s.to_string(),
                plural: p.to_string(),
            },
        )
    }))
    .expect("toy object table is valid")
}

fn render(template: &str, objects: &[(String, bool)], ov: &ObjectVocabulary) -> String {
    let mut s = template.to_string();
    for (slot, (name, _)) in ["a", "b"].iter().zip(objects) {
        let f = ov.forms(name).expect("toy object");
        s = s.replace(&format!("{{{slot}s}}"), &f.plural);
        s = s.replace(&format!("{{{slot}}}"), &f.singular);
    }
    s
}

/// Whether slot `i` of the template is plural.
fn slot_plural(template: &str, i: usize) -> bool {
    template.contains(if i == 0 { "{as}" } else { "{bs}" })
}

fn templates_for(scene: usize, style: usize, n_objects: usize) -> Vec<&'static str> {
    TEMPLATES[scene][style]
        .iter()
        .map(|t| if n_objects == 1 { t.0 } else { t.1 })
        .collect()
}

impl ToyImage {
    /// Captions rendered from one style's templates with either object order.
    fn captions_for_style(&self, style: usize, ov: &ObjectVocabulary) -> Vec<String> {
        let mut orders = vec![self.objects.clone()];
        if self.objects.len() == 2 {
            orders.push(vec![self.objects[1].clone(), self.objects[0].clone()]);
        }
        let mut out = Vec::new();
        for t in templates_for(self.scene, style, self.objects.len()) {
            for o in &orders {
                out.push(render(t, o, ov));
            }
        }
        out
    }

    /// Every caption the generator grammar admits for this image: all
    /// templates of the image's scene under every object order.
    pub fn true_captions(&self, ov: &ObjectVocabulary) -> BTreeSet<String> {
        (0..TEMPLATES[self.scene].len())
            .flat_map(|style| self.captions_for_style(style, ov))
            .collect()
    }
}

pub fn generate_toy_world(seed: u64, n_images: usize, cfg: &ToyConfig) -> Result<ToyWorld> {
    if n_images < 10 {
        return Err(Error::Config(format!("toy world needs at least 10 images, got {n_images}")));
    }
    cfg.validate()?;
    let ov = toy_objects();
    let d = cfg.feature_dim;
    let names: Vec<&str> = TOY_OBJECTS.iter().map(|o| o.0).collect();

    let mut proto_rng = rng_for(seed, &["toyworld", "prototypes"]);
    let protos: Vec<Vec<f64>> = names.iter().map(|_| normal_vec(&mut proto_rng, d)).collect();
    let scene_vecs: Vec<Vec<f64>> = SCENES.iter().map(|_| normal_vec(&mut proto_rng, d)).collect();
    let style_vecs: Vec<Vec<Vec<f64>>> = SCENES
        .iter()
        .map(|_| (0..3).map(|_| normal_vec(&mut proto_rng, d)).collect())
        .collect();

    let mut rng = rng_for(seed, &["toyworld", "images"]);
    let n_test = ((n_images as f64) * cfg.test_fraction).round() as usize;
    let n_val = ((n_images as f64) * cfg.val_fraction).round() as usize;
    let n_train = n_images - n_test - n_val;

    let mut meta = Vec::with_capacity(n_images);
    let mut splits: [RawSplit; 3] = std::array::from_fn(|_| RawSplit {
        images: Vec::new(),
        captions: Vec::new(),
    });
    for i in 0..n_images {
        let which = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        let image_id = format!("toy{i:05}");
        let scene = rng.gen_range(0..SCENES.len());
        let style = rng.gen_range(0..3);
        let n_obj = if rng.gen_bool(cfg.two_object_prob) { 2 } else { 1 };
        let picked: Vec<&str> = names.choose_multiple(&mut rng, n_obj).cloned().collect();
        let template_idx = rng.gen_range(0..2);
        let t = templates_for(scene, style, n_obj)[template_idx];
        let objects: Vec<(String, bool)> = picked
            .iter()
            .enumerate()
            .map(|(k, n)| (n.to_string(), slot_plural(t, k)))
            .collect();

        let mut regions = Vec::with_capacity(n_obj);
        for (name, _) in &objects {
            let c = names.iter().position(|n| n == name).expect("toy object");
            let r: Vec<f32> = (0..d)
                .map(|j| {
                    let x = protos[c][j]
                        + cfg.scene_scale * scene_vecs[scene][j]
                        + cfg.style_scale * style_vecs[scene][style][j]
                        + rng.gen_range(-cfg.noise..=cfg.noise);
                    x as f32
                })
                .collect();
            regions.push(r);
        }
        let classes = objects.iter().map(|o| o.0.clone()).collect();
        let record = ImageRecord::new(image_id.clone(), regions, classes)?;
        let img = ToyImage {
            image_id: image_id.clone(),
            scene,
            style,
            objects,
        };

        let pool = img.captions_for_style(style, &ov);
        let captions: Vec<String> = (0..cfg.captions_per_image)
            .map(|_| pool.choose(&mut rng).expect("non-empty pool").clone())
            .collect();
        let excluded = which == 0 && img.objects.iter().any(|(n, _)| cfg.held_out.contains(n));
        splits[which].images.push(record);
        if !excluded {
            splits[which].captions.push(CaptionRecord { image_id, captions });
        }
        meta.push(img);
    }
    let [train, val, test] = splits;
    Ok(ToyWorld {
        objects: ov,
        train,
        val,
        test,
        meta,
        held_out: cfg.held_out.clone(),
    })
}

impl ToyWorld {
    pub fn dataset(&self, max_len: usize) -> Result<Dataset> {
        Dataset::assemble(
            self.objects.clone(),
            self.train.clone(),
            self.val.clone(),
            self.test.clone(),
            &self.held_out,
            max_len,
        )
    }

    pub fn meta(&self, image_id: &str) -> Option<&ToyImage> {
        self.meta.iter().find(|m| m.image_id == image_id)
    }
}
