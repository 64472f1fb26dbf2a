//! Caption JSON Lines and the binary region-feature container.
//!
//! Feature file layout (all integers little-endian `u32`):
//!
//! ```text
//! "COSF1" k_max d count
//! count x { id_len id_bytes k  k*d f32  k class_index }
//! n_strings n_strings x { len bytes }
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub captions: Vec<String>,
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

const FEATURE_MAGIC: &[u8; 5] = b"COSF1";

pub fn write_features(path: &Path, images: &[ImageRecord]) -> Result<()> {
    let d = images.first().map(|i| i.dim()).unwrap_or(0);
    if images.iter().any(|i| i.dim() != d) {
        return Err(Error::Shape("feature dimension differs across images".into()));
    }
    let k_max = images.iter().map(|i| i.num_regions()).max().unwrap_or(0);
    let mut table: BTreeMap<&str, u32> = BTreeMap::new();
    for img in images {
        for c in img.region_classes() {
            table.insert(c.as_str(), 0);
        }
    }
    for (i, v) in table.values_mut().enumerate() {
        *v = i as u32;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(FEATURE_MAGIC);
    for v in [k_max as u32, d as u32, images.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for img in images {
        buf.extend_from_slice(&(img.image_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(img.image_id.as_bytes());
        buf.extend_from_slice(&(img.num_regions() as u32).to_le_bytes());
        for r in img.regions() {
            for x in r {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for c in img.region_classes() {
            buf.extend_from_slice(&table[c.as_str()].to_le_bytes());
        }
    }
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for name in table.keys() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.path,
                self.record,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::parse(self.path, self.record, "invalid utf-8"))
    }
}

/// Reads a feature file. The reported "line" of a parse error is the 1-based
/// record number (0 for the header, count+1 for the string table).
pub fn read_features(path: &Path) -> Result<Vec<ImageRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
        record: 0,
    };
    if c.take(5)? != FEATURE_MAGIC {
        return Err(Error::parse(path, 0, "bad magic"));
    }
    let k_max = c.u32()? as usize;
    let d = c.u32()? as usize;
    let count = c.u32()? as usize;
    let mut raw = Vec::with_capacity(count);
    for rec in 1..=count {
        c.record = rec;
        let id = c.string()?;
        let k = c.u32()? as usize;
        if k == 0 || k > k_max {
            return Err(Error::parse(path, rec, format!("region count {k} outside 1..={k_max}")));
        }
        let mut regions = Vec::with_capacity(k);
        for _ in 0..k {
            let b = c.take(4 * d)?;
            regions.push(
                b.chunks_exact(4)
                    .map(|x| f32::from_le_bytes(x.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            idx.push(c.u32()? as usize);
        }
        raw.push((id, regions, idx));
    }
    c.record = count + 1;
    let n = c.u32()? as usize;
    let mut table = Vec::with_capacity(n);
    for _ in 0..n {
        table.push(c.string()?);
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(path, count + 1, "trailing bytes after string table"));
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, (id, regions, idx))| {
            let classes = idx
                .into_iter()
                .map(|j| {
                    table
                        .get(j)
                        .cloned()
                        .ok_or_else(|| Error::parse(path, i + 1, format!("class index {j} out of range")))
                })
                .collect::<Result<Vec<_>>>()?;
            ImageRecord::new(id, regions, classes).map_err(|e| Error::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images() -> Vec<ImageRecord> {
        vec![
            ImageRecord::new("a", vec![vec![0.1, f32::MIN_POSITIVE], vec![-3.5, 1e-30]], vec!["dog".into(), "cat".into()]).unwrap(),
            ImageRecord::new("bb", vec![vec![7.0, -0.0]], vec!["cat".into()]).unwrap(),
        ]
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.cosf");
        let imgs = images();
        write_features(&p, &imgs).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.len(), imgs.len());
        for (a, b) in imgs.iter().zip(&back) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.region_classes(), b.region_classes());
            for (ra, rb) in a.regions().iter().zip(b.regions()) {
                let ba: Vec<u32> = ra.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = rb.iter().map(|x| x.to_bits()).collect();
                assert_eq!(ba, bb);
            }
        }
        write_features(&dir.path().join("g.cosf"), &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(dir.path().join("g.cosf")).unwrap());
    }

    #[test]
    fn truncated_features_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.cosf");
        write_features(&p, &images()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [3, 10, 20, bytes.len() - 1] {
            std::fs::write(&p, &bytes[..cut]).unwrap();
            assert!(matches!(read_features(&p), Err(Error::Parse { .. })), "cut {cut}");
        }
    }

    #[test]
    fn record_count_matches_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.cosf");
        write_features(&p, &images()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let count = u32::from_le_bytes(bytes[13..17].try_into().unwrap());
        assert_eq!(count as usize, read_features(&p).unwrap().len());
        // claim one extra record: reader must fail rather than invent one
        let mut bad = bytes.clone();
        bad[13..17].copy_from_slice(&(count + 1).to_le_bytes());
        std::fs::write(&p, &bad).unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"image_id\":\"a\",\"captions\":[\"x\"]}\n{oops}\n").unwrap();
        match read_captions(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
