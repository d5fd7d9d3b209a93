//! A trained generator: preprocessing, schedule, network layout and
//! parameter values, with a binary checkpoint format.
//!
//! Checkpoint layout: an 8-byte little-endian header length, a JSON header,
//! then every parameter's values as little-endian `f64` in declaration
//! order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ColumnKind, Preprocessor, TableSchema, TargetBlock};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::masking::MaskMode;
use crate::tensor::{ParamStore, Tensor};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Model {
    pub config: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub preprocessor: Preprocessor,
    pub mask_mode: MaskMode,
    /// Encoded training targets, kept for target resampling.
    pub train_targets: TargetBlock,
    pub store: ParamStore,
    pub net: Denoiser,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    mask_mode: MaskMode,
    preprocessor: serde_json::Value,
    train_targets: Vec<f64>,
    params: Vec<ParamEntry>,
}

impl Model {
    /// Freshly initialised network for the preprocessor's schema.
    pub fn new(
        preprocessor: Preprocessor,
        config: DenoiserConfig,
        schedule: NoiseSchedule,
        mask_mode: MaskMode,
        train_targets: TargetBlock,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Denoiser::new(preprocessor.schema(), config, &mut store, &mut rng)?;
        Ok(Self {
            config,
            schedule,
            preprocessor,
            mask_mode,
            train_targets,
            store,
            net,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        self.preprocessor.schema()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config,
            schedule: self.schedule.clone(),
            mask_mode: self.mask_mode,
            preprocessor: serde_json::from_str(&self.preprocessor.to_json())?,
            train_targets: (0..self.train_targets.len()).map(|i| self.train_targets.value(i)).collect(),
            params: self
                .store
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + self.store.n_values() * 8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("file too short"))?.try_into().expect("8 bytes");
        let len = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.version)));
        }
        let preprocessor = Preprocessor::from_json(&header.preprocessor.to_string())?;
        let train_targets = match preprocessor.schema().target().kind {
            ColumnKind::Numerical => TargetBlock::Real(header.train_targets),
            ColumnKind::Categorical => TargetBlock::Codes(header.train_targets.iter().map(|v| *v as usize).collect()),
        };
        let mut model = Model::new(
            preprocessor,
            header.config,
            header.schedule,
            header.mask_mode,
            train_targets,
            0,
        )?;
        if header.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, the network expects {}",
                header.params.len(),
                model.store.len()
            )));
        }
        let mut payload = &bytes[8 + len..];
        let mut values = Vec::with_capacity(header.params.len());
        for (entry, p) in header.params.iter().zip(model.store.iter()) {
            if entry.name != p.name {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` found where `{}` was expected",
                    entry.name, p.name
                )));
            }
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(bad("truncated parameter payload"));
            }
            let data = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[n * 8..];
            values.push(Tensor::new(entry.shape.clone(), data)?);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        model.store.load_values(values)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(digest(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless `schema` equals the one the model was trained on.
    pub fn check_schema(&self, schema: &TableSchema) -> Result<()> {
        if schema != self.schema() {
            return Err(Error::SchemaMismatch(
                "the schema differs from the one stored in the checkpoint".into(),
            ));
        }
        Ok(())
    }
}

/// Lower-case hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_csv, ColumnSpec};

    pub(crate) fn toy_model(seed: u64) -> Model {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("x"),
            ColumnSpec::categorical("c", 2),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let csv = "x,c,y\n0.1,a,p\n0.5,b,q\n0.9,a,q\n1.3,b,p\n";
        let raw = read_csv(csv.as_bytes(), Some(&schema)).unwrap();
        let prep = Preprocessor::fit(&raw, &schema).unwrap();
        let enc = prep.encode(&raw).unwrap();
        let config = DenoiserConfig {
            latent_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            feedforward_dim: 8,
        };
        Model::new(prep, config, NoiseSchedule::default_for(5).unwrap(), MaskMode::Dynamic, enc.target, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = toy_model(3);
        let bytes = m.to_bytes().unwrap();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.store.iter().map(|p| &p.value).collect::<Vec<_>>(), m.store.iter().map(|p| &p.value).collect::<Vec<_>>());
        assert_eq!(back.schedule, m.schedule);
        assert_eq!(back.train_targets, m.train_targets);
        assert_eq!(back.mask_mode, MaskMode::Dynamic);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn same_seed_same_digest() {
        let a = digest(&toy_model(5).to_bytes().unwrap());
        assert_eq!(a, digest(&toy_model(5).to_bytes().unwrap()));
        assert_ne!(a, digest(&toy_model(6).to_bytes().unwrap()));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = toy_model(1).to_bytes().unwrap();
        assert!(matches!(Model::from_bytes(&bytes[..4]), Err(Error::Checkpoint(_))));
        assert!(matches!(Model::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Model::from_bytes(&extra), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn schema_check() {
        let m = toy_model(1);
        assert!(m.check_schema(&m.schema().clone()).is_ok());
        let other = TableSchema::new(vec![ColumnSpec::numerical("x"), ColumnSpec::categorical("y", 2).as_target()]).unwrap();
        assert!(matches!(m.check_schema(&other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn sha256_reference() {
        assert_eq!(digest(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
