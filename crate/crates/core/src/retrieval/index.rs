use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::embedder::JointEmbedder;
use crate::corpus::split::Context;
use crate::corpus::vocab::TokenId;
use crate::corpus::{Dataset, ImageRecord};
use crate::error::{Error, Result};

/// One retrievable context with its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub context: Context,
    pub image_id: String,
    pub vector: Vec<f32>,
}

/// Exhaustive cosine index over training contexts.
///
/// Entries are stored in a canonical order (by image id, then context), so
/// the entry ordinal used for tie-breaking does not depend on the order in
/// which entries were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    dim: usize,
    fingerprint: String,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub context: Context,
    pub image_id: String,
    pub similarity: f64,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborQuery {
    pub neighbors: Vec<Neighbor>,
    /// Set when fewer than `K` distinct contexts were available.
    pub short: bool,
}

/// SHA-256 over training image ids and caption token ids.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for p in &ds.train.pairs {
        h.update((p.image.image_id.len() as u64).to_le_bytes());
        h.update(p.image.image_id.as_bytes());
        for c in &p.captions {
            h.update((c.len() as u64).to_le_bytes());
            for &w in c.words() {
                h.update(w.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl NeighborIndex {
    pub fn from_entries(dim: usize, fingerprint: String, mut entries: Vec<IndexEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.vector.len() != dim) {
            return Err(Error::Shape(format!("entry vector of length {} in a {dim}-d index", e.vector.len())));
        }
        entries.sort_by(|a, b| {
            a.image_id
                .cmp(&b.image_id)
                .then_with(|| a.context.cmp(&b.context))
                .then_with(|| a.vector.iter().zip(&b.vector).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        });
        Ok(Self {
            dim,
            fingerprint,
            entries,
        })
    }

    /// Indexes the context of every training caption.
    pub fn build(ds: &Dataset, embedder: &JointEmbedder) -> Result<Self> {
        let sp = ds.splitter();
        let mut entries = Vec::new();
        for p in &ds.train.pairs {
            for c in &p.captions {
                let context = sp.split(c).to_context();
                let vector = unit_f32(&embedder.embed_context(&context.tokens));
                entries.push(IndexEntry {
                    context,
                    image_id: p.image.image_id.clone(),
                    vector,
                });
            }
        }
        Self::from_entries(embedder.config.dim, dataset_fingerprint(ds), entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Top `k` distinct contexts for the query vector, by similarity then
    /// entry ordinal. A context that occurs under several images counts
    /// once, at its best rank. `exclude` drops entries sourced from that
    /// image id.
    pub fn query(&self, q: &[f64], k: usize, exclude: Option<&str>) -> Result<NeighborQuery> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if q.len() != self.dim {
            return Err(Error::Shape(format!("query of length {} in a {}-d index", q.len(), self.dim)));
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| exclude != Some(e.image_id.as_str()))
            .map(|(i, e)| (e.vector.iter().zip(q).map(|(&a, b)| a as f64 * b).sum(), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<Neighbor> = Vec::with_capacity(k);
        for (s, i) in scored {
            let e = &self.entries[i];
            if out.iter().any(|n| n.context == e.context) {
                continue;
            }
            out.push(Neighbor {
                context: e.context.clone(),
                image_id: e.image_id.clone(),
                similarity: s,
                ordinal: i,
            });
            if out.len() == k {
                break;
            }
        }
        let short = out.len() < k;
        if short {
            log::warn!("requested {k} neighbors, index offers {}", out.len());
        }
        Ok(NeighborQuery { neighbors: out, short })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut b = Vec::new();
        let io = |e| Error::io(path, e);
        b.write_all(MAGIC).map_err(io)?;
        put(&mut b, self.dim as u32);
        put(&mut b, self.entries.len() as u32);
        put_str(&mut b, &self.fingerprint);
        for e in &self.entries {
            for x in &e.vector {
                b.extend_from_slice(&x.to_le_bytes());
            }
            put(&mut b, e.context.tokens.len() as u32);
            for &t in &e.context.tokens {
                put(&mut b, t);
            }
            put(&mut b, e.context.plural.len() as u32);
            b.extend(e.context.plural.iter().map(|&p| p as u8));
            put_str(&mut b, &e.image_id);
        }
        std::fs::write(path, b).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = bytes.as_slice();
        let bad = |rec: usize, m: &str| Error::parse(path, rec, m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad(0, "truncated header"))?;
        if &magic != MAGIC {
            return Err(bad(0, "bad magic"));
        }
        let dim = get(&mut r).ok_or_else(|| bad(0, "truncated header"))? as usize;
        let n = get(&mut r).ok_or_else(|| bad(0, "truncated header"))? as usize;
        let fingerprint = get_str(&mut r).ok_or_else(|| bad(0, "bad fingerprint"))?;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for rec in 1..=n {
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut f = [0u8; 4];
                r.read_exact(&mut f).map_err(|_| bad(rec, "truncated vector"))?;
                vector.push(f32::from_le_bytes(f));
            }
            let nt = get(&mut r).ok_or_else(|| bad(rec, "truncated context"))? as usize;
            let tokens = (0..nt)
                .map(|_| get(&mut r).map(|t| t as TokenId))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(rec, "truncated context"))?;
            let np = get(&mut r).ok_or_else(|| bad(rec, "truncated plural flags"))? as usize;
            if r.len() < np {
                return Err(bad(rec, "truncated plural flags"));
            }
            let plural = r[..np].iter().map(|&b| b != 0).collect();
            r = &r[np..];
            let image_id = get_str(&mut r).ok_or_else(|| bad(rec, "bad image id"))?;
            entries.push(IndexEntry {
                context: Context { tokens, plural },
                image_id,
                vector,
            });
        }
        if !r.is_empty() {
            return Err(bad(n, "trailing bytes"));
        }
        Self::from_entries(dim, fingerprint, entries)
    }
}

const MAGIC: &[u8; 8] = b"COSIDX1\0";

fn put(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

fn get(r: &mut &[u8]) -> Option<u32> {
    if r.len() < 4 {
        return None;
    }
    let v = u32::from_le_bytes(r[..4].try_into().ok()?);
    *r = &r[4..];
    Some(v)
}

fn get_str(r: &mut &[u8]) -> Option<String> {
    let n = get(r)? as usize;
    if r.len() < n {
        return None;
    }
    let s = String::from_utf8(r[..n].to_vec()).ok()?;
    *r = &r[n..];
    Some(s)
}

/// Nearest contexts for an image: embeds the image and queries the index.
pub fn neighbors(
    img: &ImageRecord,
    index: &NeighborIndex,
    k: usize,
    embedder: &JointEmbedder,
    exclude_self: bool,
) -> Result<NeighborQuery> {
    let q = embedder.embed_image(img)?;
    index.query(&q, k, exclude_self.then_some(img.image_id.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(img: &str, toks: Vec<TokenId>, v: Vec<f32>) -> IndexEntry {
        IndexEntry {
            context: Context {
                tokens: toks,
                plural: vec![],
            },
            image_id: img.into(),
            vector: v,
        }
    }

    fn idx() -> NeighborIndex {
        NeighborIndex::from_entries(
            2,
            "fp".into(),
            vec![
                entry("b", vec![7], vec![0.0, 1.0]),
                entry("a", vec![5], vec![1.0, 0.0]),
                entry("c", vec![6], vec![0.6, 0.8]),
                entry("d", vec![5], vec![1.0, 0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ranks_and_dedups() {
        let q = idx().query(&[1.0, 0.0], 5, None).unwrap();
        let toks: Vec<_> = q.neighbors.iter().map(|n| n.context.tokens[0]).collect();
        assert_eq!(toks, vec![5, 6, 7]);
        assert!(q.short);
        assert_eq!(q.neighbors[0].image_id, "a");
    }

    #[test]
    fn excludes_self() {
        let q = idx().query(&[1.0, 0.0], 1, Some("a")).unwrap();
        assert_eq!(q.neighbors[0].image_id, "d");
        assert!(!q.short);
    }

    #[test]
    fn empty_and_bad_k() {
        let e = NeighborIndex::from_entries(2, String::new(), vec![]).unwrap();
        assert!(matches!(e.query(&[1.0, 0.0], 1, None), Err(Error::EmptyIndex)));
        assert!(idx().query(&[1.0, 0.0], 0, None).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.bin");
        let mut i = idx();
        i.entries[0].context.plural = vec![true];
        i.save(&p).unwrap();
        assert_eq!(NeighborIndex::load(&p).unwrap(), i);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(NeighborIndex::load(&p).is_err());
    }
}
