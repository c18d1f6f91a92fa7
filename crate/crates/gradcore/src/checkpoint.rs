//! Versioned parameter snapshots.
//!
//! Layout: a UTF-8 header terminated by a line `end`, then the raw
//! little-endian `f32` payload.
//!
//! ```text
//! PTCKPT1
//! arch_hash=<hex>
//! meta.<key>=<value>
//! tensor <name> <d0>x<d1>x... <byte offset> <byte length>
//! end
//! ```
//! Offsets are relative to the first payload byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "PTCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch_hash: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> GradError {
    GradError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(arch_hash: impl Into<String>) -> Self {
        Self { arch_hash: arch_hash.into(), meta: BTreeMap::new(), tensors: Vec::new() }
    }

    /// Appends every parameter of `store`, prefixing names with `prefix`.
    pub fn push_store<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.tensors.push((format!("{prefix}{name}"), t.cast()));
        }
    }

    /// Overwrites the parameters of `store` from tensors named `prefix + name`.
    pub fn load_store<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let lookup: BTreeMap<&str, &Tensor<f32>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..store.len() {
            let full = format!("{prefix}{}", store.names()[i]);
            let src = lookup.get(full.as_str()).ok_or_else(|| bad(format!("missing tensor {full}")))?;
            if src.shape() != store.value(i).shape() {
                return Err(bad(format!(
                    "tensor {full} has shape {:?}, model expects {:?}",
                    src.shape(),
                    store.value(i).shape()
                )));
            }
            *store.value_mut(i) = src.cast();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = format!("{CHECKPOINT_MAGIC}\narch_hash={}\n", self.arch_hash);
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(bad(format!("metadata entry {k:?} is not representable")));
            }
            header.push_str(&format!("meta.{k}={v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if name.contains(char::is_whitespace) || name.is_empty() {
                return Err(bad(format!("tensor name {name:?} is not representable")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let dims = if dims.is_empty() { "scalar".to_string() } else { dims.join("x") };
            let bytes = t.len() * 4;
            header.push_str(&format!("tensor {name} {dims} {offset} {bytes}\n"));
            offset += bytes;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|b| *b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))
        };
        if next_line()? != CHECKPOINT_MAGIC {
            return Err(bad("missing PTCKPT1 magic"));
        }
        let arch_hash = next_line()?
            .strip_prefix("arch_hash=")
            .ok_or_else(|| bad("missing arch_hash"))?
            .to_string();
        let mut meta = BTreeMap::new();
        let mut entries = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            if let Some(kv) = line.strip_prefix("meta.") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad meta line {line:?}")))?;
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dims, off, len] = parts[..] else {
                    return Err(bad(format!("bad tensor line {line:?}")));
                };
                let shape: Vec<usize> = if dims == "scalar" {
                    Vec::new()
                } else {
                    dims.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(format!("bad dims {dims}")))?
                };
                let off: usize = off.parse().map_err(|_| bad("bad offset"))?;
                let len: usize = len.parse().map_err(|_| bad("bad length"))?;
                entries.push((name.to_string(), shape, off, len));
            } else {
                return Err(bad(format!("unrecognized header line {line:?}")));
            }
        }
        let payload = &bytes[pos..];
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, off, len) in entries {
            let n: usize = shape.iter().product();
            if len != n * 4 || off + len > payload.len() {
                return Err(bad(format!("tensor {name} payload out of range")));
            }
            let data = payload[off..off + len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { arch_hash, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|source| GradError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| GradError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was written for the given architecture.
    pub fn expect_arch(&self, arch_hash: &str) -> Result<()> {
        if self.arch_hash != arch_hash {
            return Err(bad(format!(
                "architecture hash mismatch: checkpoint {}, model {arch_hash}",
                self.arch_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..40), rows in 1usize..4) {
            let cols = values.len();
            let data: Vec<f32> = (0..rows).flat_map(|_| values.iter().copied()).collect();
            let mut ck = Checkpoint::new("abc123");
            ck.meta.insert("seed".into(), "42".into());
            ck.tensors.push(("gen.w".into(), Tensor::new([rows, cols], data).unwrap()));
            ck.tensors.push(("gen.s".into(), Tensor::scalar(3.5)));
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn store_round_trip_and_arch_check() {
        let mut store = ParamStore::<f32>::new(3);
        store.add_kaiming("conv.w", &[2, 1, 3, 3], 9).unwrap();
        store.add_full("conv.b", &[2], 0.5).unwrap();
        let mut ck = Checkpoint::new("h1");
        ck.push_store("g.", &store);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(back.expect_arch("h1").is_ok());
        assert!(matches!(back.expect_arch("h2"), Err(GradError::Checkpoint(_))));
        let mut fresh = ParamStore::<f32>::new(99);
        fresh.add_kaiming("conv.w", &[2, 1, 3, 3], 9).unwrap();
        fresh.add_full("conv.b", &[2], 0.0).unwrap();
        back.load_store("g.", &mut fresh).unwrap();
        assert_eq!(fresh.value(0), store.value(0));
        assert_eq!(fresh.value(1), store.value(1));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTCKPT\nend\n").is_err());
    }
}
