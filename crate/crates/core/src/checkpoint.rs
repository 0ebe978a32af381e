//! Versioned binary container shared by codec and demorpher checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"DMCK"
//! version  u32
//! kind     u32 length + UTF-8
//! meta     u32 length + UTF-8 JSON (config and provenance)
//! count    u32
//! tensors  count × { u32 name length, name, u32 rank, rank × u64 dims, f32 data }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Tensor;

pub const MAGIC: &[u8; 4] = b"DMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta.to_string());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend((t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend((*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let kind = r.string()?;
        let meta = serde_json::from_str(&r.string()?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(reason) => Error::Parse {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Checks the kind tag and returns the metadata.
    pub fn expect_kind(&self, kind: &str) -> Result<&serde_json::Value> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(&self.meta)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            kind: "codec".into(),
            meta: serde_json::json!({"a": 1, "b": [0.5, "x"]}),
            tensors: vec![
                ("w".into(), Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.25, 0.0, 3.0, -0.125]).unwrap()),
                ("b".into(), Tensor::new(vec![1], vec![7.0]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn layout_header() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"DMCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        // last tensor: rank 1, dim 1, then 7.0f32
        assert_eq!(&bytes[bytes.len() - 4..], &7.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut newer = bytes.clone();
        newer[4] = 9;
        assert!(Container::from_bytes(&newer).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Container::from_bytes(&long).is_err());
    }

    #[test]
    fn kind_check() {
        assert!(sample().expect_kind("codec").is_ok());
        assert!(sample().expect_kind("demorpher").is_err());
    }
}
