//! Named parameter tensors, gradient buffers and the checkpoint container.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major matrix. Vectors are stored with `rows == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `[-1/sqrt(cols), 1/sqrt(cols)]`.
    Uniform,
    UniformScaled(f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut Rng) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        let mut t = Tensor::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Const(c) => t.data.iter_mut().for_each(|x| *x = c),
            Init::Uniform => {
                let a = 1.0 / (cols.max(1) as f64).sqrt();
                t.data.iter_mut().for_each(|x| *x = rng.gen_range(-a..=a));
            }
            Init::UniformScaled(a) => t.data.iter_mut().for_each(|x| *x = rng.gen_range(-a..=a)),
        }
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies values from `other` for every name present in both stores.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            if let Some(j) = other.id_of(name) {
                let src = other.get(j);
                let dst = &mut self.tensors[i];
                if src.rows != dst.rows || src.cols != dst.cols {
                    return Err(Error::Shape(format!(
                        "parameter {name}: {}x{} vs {}x{}",
                        src.rows, src.cols, dst.rows, dst.cols
                    )));
                }
                dst.data.copy_from_slice(&src.data);
            }
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            data: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().flat_map(|v| v.iter_mut()).for_each(|x| *x *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flat_map(|v| v.iter()).all(|x| x.is_finite())
    }
}

const CKPT_MAGIC: &[u8; 8] = b"COSCKPT\0";
const CKPT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes a versioned checkpoint: magic, version, config echo (JSON), then
/// every tensor in insertion order as name, rows, cols and little-endian f64.
pub fn write_checkpoint(path: &Path, store: &ParamStore, config_json: &str) -> Result<()> {
    let mut buf = Vec::new();
    let io = |e| Error::io(path, e);
    buf.write_all(CKPT_MAGIC).map_err(io)?;
    put_u32(&mut buf, CKPT_VERSION).map_err(io)?;
    put_u32(&mut buf, config_json.len() as u32).map_err(io)?;
    buf.write_all(config_json.as_bytes()).map_err(io)?;
    put_u32(&mut buf, store.len() as u32).map_err(io)?;
    for (name, t) in store.names.iter().zip(&store.tensors) {
        put_u32(&mut buf, name.len() as u32).map_err(io)?;
        buf.write_all(name.as_bytes()).map_err(io)?;
        put_u32(&mut buf, t.rows as u32).map_err(io)?;
        put_u32(&mut buf, t.cols as u32).map_err(io)?;
        for x in &t.data {
            buf.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    std::fs::write(path, buf).map_err(io)
}

/// Reads a checkpoint, returning the stored parameters and config echo.
pub fn read_checkpoint(path: &Path) -> Result<(ParamStore, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CKPT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = get_u32(&mut r).map_err(|_| bad("truncated header"))?;
    if version != CKPT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let clen = get_u32(&mut r).map_err(|_| bad("truncated config"))? as usize;
    if r.len() < clen {
        return Err(bad("truncated config"));
    }
    let config = String::from_utf8(r[..clen].to_vec()).map_err(|_| bad("config not utf-8"))?;
    r = &r[clen..];
    let n = get_u32(&mut r).map_err(|_| bad("truncated tensor count"))? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let nl = get_u32(&mut r).map_err(|_| bad("truncated tensor"))? as usize;
        if r.len() < nl {
            return Err(bad("truncated tensor name"));
        }
        let name = String::from_utf8(r[..nl].to_vec()).map_err(|_| bad("name not utf-8"))?;
        r = &r[nl..];
        let rows = get_u32(&mut r).map_err(|_| bad("truncated tensor"))? as usize;
        let cols = get_u32(&mut r).map_err(|_| bad("truncated tensor"))? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated tensor data"))?;
            data.push(f64::from_le_bytes(b));
        }
        store.names.push(name);
        store.tensors.push(Tensor { rows, cols, data });
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((store, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = rng_for(3, &["t"]);
        let mut s = ParamStore::new();
        s.add("a.w", 3, 4, Init::Uniform, &mut rng);
        s.add("b", 1, 5, Init::Const(0.25), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &s, "{\"x\":1}").unwrap();
        let (back, cfg) = read_checkpoint(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(cfg, "{\"x\":1}");
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = rng_for(3, &["t"]);
        let mut s = ParamStore::new();
        s.add("a", 2, 2, Init::Uniform, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &s, "{}").unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
