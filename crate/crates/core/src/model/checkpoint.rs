//! `LNPDE1` parameter container: magic, u32 LE header length, JSON header
//! (model config, tensor names and shapes, free-form state), then every
//! tensor as little-endian f64 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{ModelConfig, ModelError, ParamStore, SurrogateModel};

const MAGIC: &[u8; 6] = b"LNPDE1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<Entry>,
    extra: Vec<Entry>,
    state: serde_json::Value,
}

/// Model parameters plus optional training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SurrogateModel,
    /// Free-form state (epoch counters, schedules, ...).
    pub state: serde_json::Value,
    /// Additional named tensors (optimizer moments, ...).
    pub extra: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(model: SurrogateModel) -> Self {
        Self {
            model,
            state: serde_json::Value::Null,
            extra: vec![],
        }
    }

    /// Serializes to bytes; identical inputs give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let entries = |names: &mut dyn Iterator<Item = (&String, &Tensor)>| {
            names
                .map(|(n, t)| Entry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect::<Vec<_>>()
        };
        let p = self.model.params();
        let header = Header {
            config: self.model.config().clone(),
            params: entries(&mut p.names().iter().zip(p.tensors())),
            extra: entries(&mut self.extra.iter().map(|(n, t)| (n, t))),
            state: self.state.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(10 + json.len() + 8 * p.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in p.tensors().iter().chain(self.extra.iter().map(|(_, t)| t)) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(CheckpointError::Format("missing LNPDE1 magic".into()));
        }
        let hlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = bytes
            .get(10..10 + hlen)
            .ok_or_else(|| CheckpointError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 10 + hlen;
        let mut take = |e: &Entry| -> Result<Tensor, CheckpointError> {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * n)
                .ok_or_else(|| CheckpointError::Format(format!("truncated data for {}", e.name)))?;
            pos += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Ok(Tensor::new(&e.shape, data).map_err(ModelError::from)?)
        };
        let mut store = ParamStore::new();
        for e in &header.params {
            store.add(e.name.clone(), take(e)?);
        }
        let mut extra = Vec::with_capacity(header.extra.len());
        for e in &header.extra {
            extra.push((e.name.clone(), take(e)?));
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            model: SurrogateModel::from_params(header.config, store)?,
            state: header.state,
            extra,
        })
    }

    /// Writes through a temporary file in the target directory, then renames.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(&bytes)?;
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SurrogateModel {
        let cfg = ModelConfig {
            extent: 16,
            enc_filters: vec![4, 8],
            enc_kernels: vec![3, 3],
            dec_filters: vec![8, 4],
            dec_kernels: vec![4, 3],
            hidden: vec![6],
            ..ModelConfig::desk_1d(3, 1)
        };
        SurrogateModel::new(cfg, 12).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut ck = Checkpoint::new(model());
        ck.state = serde_json::json!({"epoch": 4});
        ck.extra.push(("adam.m.0".into(), Tensor::new(&[2], vec![0.1, -1e-300]).unwrap()));
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..6], b"LNPDE1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.model.config(), ck.model.config());
        assert_eq!(back.state, ck.state);
        assert_eq!(back.extra, ck.extra);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = Checkpoint::new(model()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(model());
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap().model.params(), ck.model.params());
    }
}
