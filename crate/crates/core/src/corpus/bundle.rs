//! On-disk dataset bundle: an object table, per-split caption and feature
//! files and a small metadata record.
//!
//! ```text
//! objects.json
//! {train,val,test}.captions.jsonl
//! {train,val,test}.features.bin
//! bundle.json            (prepared bundles only)
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, RawSplit, SplitRole};
use super::io::{read_captions, read_features, write_captions, write_features};
use super::objects::ObjectVocabulary;
use crate::error::{Error, Result};

pub const ROLES: [SplitRole; 3] = [SplitRole::Train, SplitRole::Val, SplitRole::Test];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub max_len: usize,
    pub held_out: BTreeSet<String>,
}

pub fn objects_path(dir: &Path) -> PathBuf {
    dir.join("objects.json")
}

pub fn captions_path(dir: &Path, role: SplitRole) -> PathBuf {
    dir.join(format!("{}.captions.jsonl", role.as_str()))
}

pub fn features_path(dir: &Path, role: SplitRole) -> PathBuf {
    dir.join(format!("{}.features.bin", role.as_str()))
}

pub fn meta_path(dir: &Path) -> PathBuf {
    dir.join("bundle.json")
}

/// Writes the object table and the three raw splits.
pub fn write_raw(dir: &Path, objects: &ObjectVocabulary, splits: [&RawSplit; 3]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = vec![objects_path(dir)];
    objects.save(&out[0])?;
    for (role, split) in ROLES.iter().zip(splits) {
        let c = captions_path(dir, *role);
        let f = features_path(dir, *role);
        write_captions(&c, &split.captions)?;
        write_features(&f, &split.images)?;
        out.extend([c, f]);
    }
    Ok(out)
}

pub fn read_raw(dir: &Path) -> Result<(ObjectVocabulary, [RawSplit; 3])> {
    let ov = ObjectVocabulary::load(&objects_path(dir))?;
    let read = |role| -> Result<RawSplit> {
        Ok(RawSplit {
            images: read_features(&features_path(dir, role))?,
            captions: read_captions(&captions_path(dir, role))?,
        })
    };
    Ok((ov, [read(SplitRole::Train)?, read(SplitRole::Val)?, read(SplitRole::Test)?]))
}

/// Validates the raw inputs by assembling them, then writes a bundle.
pub fn prepare(input: &Path, out: &Path, meta: &BundleMeta) -> Result<(Dataset, Vec<PathBuf>)> {
    let (ov, [train, val, test]) = read_raw(input)?;
    let ds = Dataset::assemble(ov.clone(), train.clone(), val.clone(), test.clone(), &meta.held_out, meta.max_len)?;
    let mut paths = write_raw(out, &ov, [&train, &val, &test])?;
    let m = meta_path(out);
    std::fs::write(&m, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(&m, e))?;
    paths.push(m);
    Ok((ds, paths))
}

pub fn load_bundle(dir: &Path) -> Result<(Dataset, BundleMeta)> {
    let m = meta_path(dir);
    let text = std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&m, 1, e.to_string()))?;
    let (ov, [train, val, test]) = read_raw(dir)?;
    let ds = Dataset::assemble(ov, train, val, test, &meta.held_out, meta.max_len)?;
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toyworld::{generate_toy_world, ToyConfig};

    #[test]
    fn prepare_then_load() {
        let w = generate_toy_world(2, 30, &ToyConfig::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_raw(&raw, &w.objects, [&w.train, &w.val, &w.test]).unwrap();
        let meta = BundleMeta {
            max_len: 20,
            held_out: ["dog".to_string()].into(),
        };
        let (a, paths) = prepare(&raw, &tmp.path().join("b"), &meta).unwrap();
        assert_eq!(paths.len(), 8);
        let (b, m) = load_bundle(&tmp.path().join("b")).unwrap();
        assert_eq!(m, meta);
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.train.pairs, b.train.pairs);
        assert!(load_bundle(&raw).is_err());
    }
}
