//! Versioned binary container for named tensors plus key=value metadata.
//!
//! All integers are little-endian:
//!
//! ```text
//! magic      8 bytes  "FFCSECKP"
//! version    u32      currently 1
//! kind_len   u16, kind  (utf-8, e.g. "model" or "train_state")
//! meta_len   u32, meta  (utf-8 "key=value\n" lines, keys sorted)
//! count      u32
//! count x {
//!   name_len u16, name (utf-8)
//!   dtype    u8       0 = f32, 1 = f64
//!   rank     u8
//!   dims     rank x u64
//!   data     product(dims) scalars of dtype, row-major
//! }
//! crc32      u32      IEEE CRC-32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FFCSECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: Dtype, tensor: Tensor) {
        self.entries.push(Entry {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind.len() as u16).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.dtype {
                Dtype::F32 => 0,
                Dtype::F64 => 1,
            });
            out.push(e.tensor.rank() as u8);
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in e.tensor.data() {
                match e.dtype {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 4 + 4 {
            return Err(fail(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic; not a checkpoint".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch (truncated or corrupted file)".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32().map_err(&fail)?;
        if version != VERSION {
            return Err(fail(format!("unsupported format version {version} (expected {VERSION})")));
        }
        let kind_len = r.u16().map_err(&fail)? as usize;
        let kind = r.string(kind_len).map_err(&fail)?;
        let meta_len = r.u32().map_err(&fail)? as usize;
        let meta_text = r.string(meta_len).map_err(&fail)?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("metadata line without '=': {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32().map_err(&fail)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16().map_err(&fail)? as usize;
            let name = r.string(name_len).map_err(&fail)?;
            let dtype = match r.u8().map_err(&fail)? {
                0 => Dtype::F32,
                1 => Dtype::F64,
                d => return Err(fail(format!("tensor {name}: unknown dtype tag {d}"))),
            };
            let rank = r.u8().map_err(&fail)? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&fail)?;
            let n: usize = dims.iter().product();
            let data = match dtype {
                Dtype::F32 => (0..n).map(|_| r.f32().map(f64::from)).collect::<std::result::Result<Vec<_>, _>>(),
                Dtype::F64 => (0..n).map(|_| r.f64()).collect(),
            }
            .map_err(&fail)?;
            let tensor = Tensor::new(&dims, data).map_err(|e| fail(format!("tensor {name}: {e}")))?;
            entries.push(Entry { name, dtype, tensor });
        }
        if r.pos != body.len() {
            return Err(fail(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { kind, meta, entries })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("expected a {kind} checkpoint, found {}", self.kind),
            });
        }
        Ok(())
    }

    pub fn meta_str(&self, key: &str, path: &Path) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing metadata key {key}"),
        })
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.meta_str(key, path)?;
        raw.parse().map_err(|_| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("metadata {key}={raw:?} does not parse"),
        })
    }
}

/// Appends every parameter as `{prefix}param/{name}` and every running
/// statistic as `{prefix}stats/{name}/{mean,var,tracked}`.
pub fn push_store(c: &mut Container, prefix: &str, store: &ParamStore, dtype: Dtype) {
    for p in store.params() {
        c.push(format!("{prefix}param/{}", p.name), dtype, p.value.clone());
    }
    for s in store.stats() {
        let n = s.stats.channels();
        let base = format!("{prefix}stats/{}", s.name);
        c.push(format!("{base}/mean"), dtype, Tensor::from_parts(vec![n], s.stats.mean.clone()));
        c.push(format!("{base}/var"), dtype, Tensor::from_parts(vec![n], s.stats.var.clone()));
        c.push(format!("{base}/tracked"), Dtype::F64, Tensor::scalar(s.stats.tracked as f64));
    }
}

/// Loads tensors written by [`push_store`] into a store of identical
/// layout. Missing, extra, or mis-shaped entries are errors.
pub fn load_store(c: &Container, prefix: &str, store: &mut ParamStore, path: &Path) -> Result<()> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let get = |name: &str, shape: &[usize]| -> Result<Tensor> {
        let t = c.tensor(name).ok_or_else(|| fail(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(fail(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t.clone())
    };
    let mut expected = 0;
    let names: Vec<(String, Vec<usize>)> = store
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    for (name, shape) in names {
        let t = get(&format!("{prefix}param/{name}"), &shape)?;
        *store.by_name_mut(&name).unwrap() = t;
        expected += 1;
    }
    for s in store.stats_mut() {
        let n = s.stats.channels();
        let base = format!("{prefix}stats/{}", s.name);
        s.stats.mean = get(&format!("{base}/mean"), &[n])?.into_data();
        s.stats.var = get(&format!("{base}/var"), &[n])?.into_data();
        s.stats.tracked = get(&format!("{base}/tracked"), &[1])?.item() as u64;
        expected += 3;
    }
    let present = c.entries.iter().filter(|e| e.name.starts_with(prefix)).count();
    if present != expected {
        return Err(fail(format!(
            "{present} tensors under {prefix:?}, model layout expects {expected}"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> std::result::Result<String, String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("model");
        c.set("a", 1);
        c.set("b", "x y");
        c.push("w", Dtype::F32, Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5));
        c.push("v", Dtype::F64, Tensor::from_fn(&[4], |i| 1.0 / (i as f64 + 3.0)));
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20, 3] {
            let err = Container::from_bytes(&bytes[..cut], Path::new("mem")).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        let err = Container::from_bytes(&flipped, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        let err = Container::from_bytes(&bytes, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }
}
