//! Weight file:
//!
//! ```text
//! magic        8 bytes "GSRWGT01"
//! version      u32
//! config hash  32 bytes, SHA-256 of the canonical network-config JSON
//! meta_len     u64, then JSON {config, metadata}
//! n_tensors    u32, then per tensor:
//!              name_len u16, name, dtype u8, ndim u8, dims u64 x ndim, row-major data
//! checksum     32 bytes, SHA-256 of everything above
//! ```
//! All integers little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{build_network, Network, TensorSpec};
use super::train::TrainConfig;
use super::{InitScheme, ModelError, NetworkConfig};
use crate::conditioning::NormStats;
use crate::{DType, Scalar};

const MAGIC: &[u8; 8] = b"GSRWGT01";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    /// SHA-256 of the training inputs.
    pub data_hash: String,
    pub dev_loss: Option<f64>,
    pub train_config: Option<TrainConfig>,
    pub software: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WeightsMetadata {
    pub provenance: Provenance,
    pub norm: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<S> {
    pub config: NetworkConfig,
    pub config_hash: String,
    pub manifest: Vec<TensorSpec>,
    pub params: Vec<S>,
    pub metadata: WeightsMetadata,
}

pub fn config_hash(cfg: &NetworkConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: NetworkConfig,
    metadata: WeightsMetadata,
}

impl<S: Scalar> Network<S> {
    pub fn to_weights(&self, metadata: WeightsMetadata) -> ModelWeights<S> {
        ModelWeights {
            config: self.config().clone(),
            config_hash: config_hash(self.config()),
            manifest: self.manifest().to_vec(),
            params: self.params().to_vec(),
            metadata,
        }
    }

    /// Loads `w` into a network built from `cfg`; the configs must hash equal.
    pub fn from_weights(cfg: &NetworkConfig, w: &ModelWeights<S>) -> Result<Self, ModelError> {
        let expect = config_hash(cfg);
        if expect != w.config_hash {
            return Err(ModelError::ConfigMismatch { file: w.config_hash.clone(), network: expect });
        }
        let mut net = build_network::<S>(&NetworkConfig { init: InitScheme::Zeros, ..cfg.clone() })?;
        if net.manifest() != w.manifest.as_slice() || net.n_params() != w.params.len() {
            return Err(ModelError::Weights("tensor manifest does not match the configuration".into()));
        }
        net.params_mut().copy_from_slice(&w.params);
        net.set_config(cfg.clone());
        Ok(net)
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn weights_checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.n_params() * S::DTYPE.size());
        self.params().iter().for_each(|p| p.write_le(&mut bytes));
        hex::encode(Sha256::digest(&bytes))
    }
}

impl<S: Scalar> ModelWeights<S> {
    pub fn to_network(&self) -> Result<Network<S>, ModelError> {
        Network::from_weights(&self.config, self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&hex::decode(&self.config_hash).expect("hash is hex"));
        let meta = serde_json::to_vec(&Meta { config: self.config.clone(), metadata: self.metadata.clone() })
            .expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        for t in &self.manifest {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(S::DTYPE.code());
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for p in &self.params[t.offset..t.offset + t.len()] {
                p.write_le(&mut out);
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Weights(m.to_string());
        if bytes.len() < 8 + 4 + 32 + 8 + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a weight file"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { b: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(ModelError::Weights(format!("unsupported version {version}")));
        }
        let config_hash = hex::encode(r.take(32)?);
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| ModelError::Weights(e.to_string()))?;
        if config_hash != super::config_hash(&meta.config) {
            return Err(bad("header hash does not match embedded configuration"));
        }
        let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut manifest = Vec::with_capacity(n);
        let mut params = Vec::new();
        for _ in 0..n {
            let nl = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| bad("unknown dtype"))?;
            if dtype != S::DTYPE {
                return Err(ModelError::Weights(format!("tensor {name} is {dtype:?}, expected {:?}", S::DTYPE)));
            }
            let nd = r.take(1)?[0] as usize;
            let shape = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let t = TensorSpec { name, shape, offset: params.len() };
            let data = r.take(t.len() * dtype.size())?;
            params.extend(data.chunks_exact(dtype.size()).map(S::read_le));
            manifest.push(t);
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        let expect = build_network::<S>(&NetworkConfig { init: InitScheme::Zeros, ..meta.config.clone() })?;
        if expect.manifest() != manifest.as_slice() {
            return Err(bad("tensor manifest does not match the embedded configuration"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self { config: meta.config, config_hash, manifest, params, metadata: meta.metadata })
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.b.len() {
            return Err(ModelError::Weights("truncated weight file".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_weights<S: Scalar>(w: &ModelWeights<S>, path: &Path) -> Result<(), ModelError> {
    crate::container::write_atomic(path, &w.to_bytes())
        .map(|_| ())
        .map_err(|e| ModelError::Weights(format!("{}: {e}", path.display())))
}

pub fn load_weights<S: Scalar>(path: &Path) -> Result<ModelWeights<S>, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::Weights(format!("{}: {e}", path.display())))?;
    ModelWeights::from_bytes(&bytes)
}
