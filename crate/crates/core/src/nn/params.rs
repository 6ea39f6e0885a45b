use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imaging::{decode_rlt1_prefix, encode_rlt1, RawTensor};

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// How a freshly added parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// `N(0, 2 / fan_in)`.
    He {
        fan_in: usize,
    },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; each parameter draws from its own RNG stream
    /// `(seed, index)` so unrelated layers keep their values when an
    /// architecture changes elsewhere.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::He { fan_in } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(self.values.len() as u64);
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                (0..n).map(|_| dist.sample(&mut rng) as f32 as f64).collect()
            }
        };
        self.names.push(name.to_string());
        self.values.push(Tensor::new(shape.to_vec(), data).unwrap());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Rounds every value to `f32` so checkpoints reload exactly.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.values {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.values) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fails unless `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape("parameter names differ from the network's"));
        }
        for (name, (a, b)) in self.names.iter().zip(self.values.iter().zip(&other.values)) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub kind: String,
    pub step: u64,
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub const CHECKPOINT_FORMAT: &str = "relight-checkpoint-1";

/// One JSON header line followed by one RLT1 tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value, step: u64, params: ParamStore) -> Self {
        let tensors = params
            .names
            .iter()
            .zip(&params.values)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                kind: kind.into(),
                step,
                fingerprint: params.fingerprint(),
                config,
                tensors,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for t in &self.params.values {
            let raw = RawTensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v as f32).collect())?;
            out.extend(encode_rlt1(&raw)?);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(0, "checkpoint header is not terminated"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                0,
                format!("unknown checkpoint format `{}`", header.format),
            ));
        }
        let mut at = nl + 1;
        let mut params = ParamStore::new();
        for entry in &header.tensors {
            let (raw, used) = decode_rlt1_prefix(&bytes[at..], at)?;
            if raw.dims != entry.shape {
                return Err(Error::format(
                    at,
                    format!(
                        "tensor {} has dims {:?}, header says {:?}",
                        entry.name, raw.dims, entry.shape
                    ),
                ));
            }
            params.names.push(entry.name.clone());
            params
                .values
                .push(Tensor::new(raw.dims, raw.data.into_iter().map(f64::from).collect())?);
            at += used;
        }
        if at != bytes.len() {
            return Err(Error::format(at, "trailing bytes after the last tensor"));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Typed view of the stored network config.
    pub fn config<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.header.config.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::invalid(format!(
                "expected a {kind} checkpoint, got {}",
                self.header.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ParamStore::new();
        p.add("conv.w", &[2, 1, 3, 3], Init::He { fan_in: 9 }, 5);
        p.add("conv.b", &[2], Init::Zeros, 5);
        let ck = Checkpoint::new("test", serde_json::json!({"a": 1}), 7, p.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.fingerprint(), p.fingerprint());
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn streams_are_per_parameter() {
        let mut a = ParamStore::new();
        a.add("x", &[4], Init::He { fan_in: 1 }, 1);
        a.add("y", &[4], Init::He { fan_in: 1 }, 1);
        let mut b = ParamStore::new();
        b.add("x", &[8], Init::He { fan_in: 1 }, 1);
        b.add("y", &[4], Init::He { fan_in: 1 }, 1);
        assert_eq!(a.values()[1], b.values()[1]);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
