use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::io::CaptionRecord;
use crate::corpus::objects::ObjectVocabulary;
use crate::corpus::split::Splitter;
use crate::corpus::vocab::{normalize, tokenize, Caption, Vocabulary};
use crate::error::{Error, Result};

/// Region features of one image with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    regions: Vec<Vec<f32>>,
    region_classes: Vec<String>,
    pooled: Vec<f64>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, regions: Vec<Vec<f32>>, region_classes: Vec<String>) -> Result<Self> {
        let image_id = image_id.into();
        if regions.is_empty() {
            return Err(Error::NoRegions);
        }
        let d = regions[0].len();
        if d == 0 || regions.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("image {image_id}: ragged region features")));
        }
        if region_classes.len() != regions.len() {
            return Err(Error::Shape(format!(
                "image {image_id}: {} regions but {} classes",
                regions.len(),
                region_classes.len()
            )));
        }
        let mut pooled = vec![0.0f64; d];
        for r in &regions {
            for (p, x) in pooled.iter_mut().zip(r) {
                *p += *x as f64;
            }
        }
        let k = regions.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= k);
        Ok(Self {
            image_id,
            regions,
            region_classes,
            pooled,
        })
    }

    pub fn regions(&self) -> &[Vec<f32>] {
        &self.regions
    }

    pub fn regions_f64(&self) -> Vec<Vec<f64>> {
        self.regions
            .iter()
            .map(|r| r.iter().map(|&x| x as f64).collect())
            .collect()
    }

    pub fn region_classes(&self) -> &[String] {
        &self.region_classes
    }

    /// Mean of the region vectors.
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn dim(&self) -> usize {
        self.pooled.len()
    }

    /// Distinct region classes, C(I), in region order.
    pub fn classes(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.region_classes
            .iter()
            .filter(|c| seen.insert(c.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// The first `k` distinct classes in region order. Regions are assumed to
    /// be stored in detector-confidence order.
    pub fn top_k_classes(&self, k: usize) -> Vec<&str> {
        let mut c = self.classes();
        c.truncate(k);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub image: ImageRecord,
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub pairs: Vec<Pair>,
    pub held_out_objects: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.pairs.iter().map(|p| &p.image)
    }

    pub fn num_captions(&self) -> usize {
        self.pairs.iter().map(|p| p.captions.len()).sum()
    }

    pub fn find(&self, image_id: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.image.image_id == image_id)
    }
}

/// Unprocessed split contents as read from disk or produced by a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplit {
    pub images: Vec<ImageRecord>,
    pub captions: Vec<CaptionRecord>,
}

/// Vocabulary, object table and the three tokenized splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub objects: ObjectVocabulary,
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

impl Dataset {
    /// Builds the vocabulary from the retained training captions plus every
    /// object surface form, tokenizes all splits and applies held-out
    /// exclusion: a training image whose captions mention a held-out object
    /// keeps its regions but loses all its captions.
    pub fn assemble(
        objects: ObjectVocabulary,
        train: RawSplit,
        val: RawSplit,
        test: RawSplit,
        held_out: &BTreeSet<String>,
        max_len: usize,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max caption length must be positive".into()));
        }
        for h in held_out {
            if !objects.contains(h) {
                return Err(Error::Config(format!("held-out object {h} not in object vocabulary")));
            }
        }
        let mut train_texts = group_captions(&train)?;
        if !held_out.is_empty() {
            for caps in train_texts.values_mut() {
                let hit = caps.iter().any(|c| {
                    let w = normalize(c);
                    held_out.iter().any(|h| objects.mentions(&w, h))
                });
                if hit {
                    caps.clear();
                }
            }
        }
        let mut words: Vec<String> = train_texts
            .values()
            .flatten()
            .flat_map(|c| normalize(c))
            .collect();
        for s in objects.all_surfaces() {
            words.extend(s.split(' ').map(str::to_string));
            words.push(s.to_string());
        }
        let vocab = Vocabulary::build(words);

        let build = |role: SplitRole, raw: &RawSplit, texts: &BTreeMap<String, Vec<String>>| -> Result<DatasetSplit> {
            let mut pairs = Vec::with_capacity(raw.images.len());
            for img in &raw.images {
                let mut caps = Vec::new();
                for t in texts.get(&img.image_id).into_iter().flatten() {
                    let mut c = tokenize(t, &vocab)?;
                    c.truncate(max_len);
                    caps.push(c);
                }
                pairs.push(Pair {
                    image: img.clone(),
                    captions: caps,
                });
            }
            Ok(DatasetSplit {
                role,
                pairs,
                held_out_objects: held_out.clone(),
            })
        };
        let val_texts = group_captions(&val)?;
        let test_texts = group_captions(&test)?;
        Ok(Self {
            train: build(SplitRole::Train, &train, &train_texts)?,
            val: build(SplitRole::Val, &val, &val_texts)?,
            test: build(SplitRole::Test, &test, &test_texts)?,
            vocab,
            objects,
        })
    }

    pub fn splitter(&self) -> Splitter {
        Splitter::new(&self.objects, &self.vocab)
    }

    pub fn split(&self, role: SplitRole) -> &DatasetSplit {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }

    /// Normalized text of every training caption.
    pub fn train_texts(&self) -> BTreeSet<String> {
        self.train
            .pairs
            .iter()
            .flat_map(|p| p.captions.iter())
            .map(|c| self.vocab.decode(c.words()))
            .collect()
    }
}

fn group_captions(raw: &RawSplit) -> Result<BTreeMap<String, Vec<String>>> {
    let ids: BTreeSet<&str> = raw.images.iter().map(|i| i.image_id.as_str()).collect();
    if ids.len() != raw.images.len() {
        return Err(Error::Config("duplicate image ids in feature records".into()));
    }
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in &raw.captions {
        if !ids.contains(rec.image_id.as_str()) {
            return Err(Error::Config(format!(
                "captions reference unknown image {}",
                rec.image_id
            )));
        }
        out.entry(rec.image_id.clone())
            .or_default()
            .extend(rec.captions.iter().cloned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_is_region_mean() {
        let img = ImageRecord::new(
            "i",
            vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![0.5, 0.0]],
            vec!["a".into(), "b".into(), "a".into()],
        )
        .unwrap();
        assert!((img.pooled()[0] - 1.5).abs() < 1e-6);
        assert!(img.pooled()[1].abs() < 1e-6);
        assert_eq!(img.classes(), ["a", "b"]);
        assert_eq!(img.top_k_classes(1), ["a"]);
    }

    #[test]
    fn rejects_malformed_images() {
        assert!(matches!(ImageRecord::new("i", vec![], vec![]), Err(Error::NoRegions)));
        assert!(ImageRecord::new("i", vec![vec![1.0]], vec![]).is_err());
        assert!(ImageRecord::new("i", vec![vec![1.0], vec![1.0, 2.0]], vec!["a".into(), "a".into()]).is_err());
    }
}
