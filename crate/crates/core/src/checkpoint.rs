//! Single-file parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ISCMCKPT" | u32 version | u64 manifest_len | manifest JSON
//! u32 tensor_count
//! per tensor: u32 name_len | name | u8 dtype_len | dtype | u32 ndim | u64 dims[ndim] | data
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Parameters, Scalar};

const MAGIC: &[u8; 8] = b"ISCMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub crate_version: String,
    /// Full configuration the parameters were trained under.
    pub config_toml: String,
    pub config_hash: String,
    pub step: u64,
    pub phase: String,
    pub method: String,
    pub optimizer: String,
    /// Module name to parameter hash.
    pub module_hashes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    pub fn new(manifest: CheckpointManifest) -> Self {
        Self {
            manifest,
            tensors: BTreeMap::new(),
        }
    }

    /// Stores every parameter of `module` under `prefix/`.
    pub fn insert_module<M: Parameters<f32> + ?Sized>(&mut self, prefix: &str, module: &M) {
        for p in module.params() {
            self.tensors.insert(format!("{prefix}/{}", p.name()), p.value.clone());
        }
        self.manifest.module_hashes.insert(prefix.to_string(), module.param_hash());
    }

    pub fn has_module(&self, prefix: &str) -> bool {
        let start = format!("{prefix}/");
        self.tensors.keys().any(|k| k.starts_with(&start))
    }

    /// Copies `prefix/` tensors into `module`, which must match in names and shapes.
    pub fn restore_module<M: Parameters<f32> + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let start = format!("{prefix}/");
        let stored = self.tensors.keys().filter(|k| k.starts_with(&start)).count();
        let mut params = module.params_mut();
        if stored != params.len() {
            return Err(Error::Checkpoint(format!(
                "module `{prefix}`: checkpoint has {stored} tensors, model expects {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let key = format!("{prefix}/{}", p.name());
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(t);
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.get(name)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(manifest.len() + 64 + self.tensors.values().map(|t| t.len() * 4).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(f32::DTYPE.len() as u8);
            out.extend_from_slice(f32::DTYPE.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.iter() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mlen = r.u64()? as usize;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dlen = r.take(1)?[0] as usize;
            let dtype = r.take(dlen)?;
            if dtype != f32::DTYPE.as_bytes() {
                return Err(Error::Checkpoint(format!("tensor `{name}`: unsupported dtype")));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(len.checked_mul(f32::BYTES).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data: Vec<f32> = raw.chunks_exact(f32::BYTES).map(f32::read_le).collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.insert(name, arr);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manifest() -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            crate_version: "test".into(),
            config_toml: "[run]\n".into(),
            config_hash: "abc".into(),
            step: 7,
            phase: "pretrain".into(),
            method: "iscm".into(),
            optimizer: "radam".into(),
            module_hashes: BTreeMap::new(),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f32>::new("fc", 5, 3, &mut rng);
        let mut ck = Checkpoint::new(manifest());
        ck.insert_module("head", &lin);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut other = Linear::<f32>::new("fc", 5, 3, &mut rng);
        back.restore_module("head", &mut other).unwrap();
        assert_eq!(other.param_hash(), lin.param_hash());
    }

    #[test]
    fn shape_mismatch_and_truncation_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::<f32>::new("fc", 5, 3, &mut rng);
        let mut ck = Checkpoint::new(manifest());
        ck.insert_module("head", &lin);
        let mut wrong = Linear::<f32>::new("fc", 4, 3, &mut rng);
        assert!(matches!(ck.restore_module("head", &mut wrong), Err(Error::Checkpoint(_))));
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = Checkpoint::load(Path::new("/nonexistent/checkpoint.bin")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
