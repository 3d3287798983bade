//! Binary checkpoint codec. Little-endian throughout:
//!
//! ```text
//! "FLDM" | version u32 | seed u64 | config_hash u64
//! config_len u64 | config utf-8 bytes
//! tensor_count u64 | per tensor:
//!     name_len u64 | name | rank u64 | dims u64 * rank | values f64 * numel
//! ```
//!
//! Tensors are written in sorted name order, so identical contents always
//! produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fldmamba_core::model::{Model, ModelConfig};
use fldmamba_core::rng::Rng;
use fldmamba_core::tensor::Tensor;

use crate::config::AppConfig;
use crate::{data_error, CliError};

const MAGIC: &[u8; 4] = b"FLDM";
const VERSION: u32 = 1;

/// Trained weights plus everything needed to rebuild and reuse the model:
/// the run seed, the canonical config text, and (as `stats.mean` /
/// `stats.std` tensors) the normalization statistics of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config_hash: u64,
    pub config_text: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u64).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CliError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(data_error("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(data_error(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let seed = r.u64()?;
        let config_hash = r.u64()?;
        let cfg_len = r.len_field("config")?;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| data_error("checkpoint config text is not utf-8"))?;
        let count = r.len_field("tensor table")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.len_field("tensor name")?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| data_error("tensor name is not utf-8"))?;
            let rank = r.len_field("rank")?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len_field("dim")?);
            }
            let mut numel = 1usize;
            for &d in &shape {
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| data_error(format!("tensor `{name}` size overflows")))?;
            }
            let byte_len = numel
                .checked_mul(8)
                .ok_or_else(|| data_error(format!("tensor `{name}` size overflows")))?;
            let raw = r.take(byte_len)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(values, &shape).map_err(data_error)?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(data_error(format!("duplicate tensor `{name}`")));
            }
        }
        if !r.done() {
            return Err(data_error("trailing bytes after tensor table"));
        }
        Ok(Checkpoint {
            seed,
            config_hash,
            config_text,
            tensors,
        })
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), CliError> {
    fs::write(path, cp.to_bytes())
        .map_err(|e| data_error(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes =
        fs::read(path).map_err(|e| data_error(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

/// Rebuilds the trained model: parse the embedded config, recover the
/// variate count from a weight shape, and load the state dict (everything
/// except the `stats.*` entries, which belong to the data pipeline).
pub fn model_from_checkpoint(cp: &Checkpoint) -> Result<(Model, AppConfig), CliError> {
    let app = AppConfig::parse(&cp.config_text)
        .map_err(|e| data_error(format!("embedded config: {e}")))?;
    let state: BTreeMap<String, Tensor> = cp
        .tensors
        .iter()
        .filter(|(k, _)| !k.starts_with("stats."))
        .map(|(k, t)| (k.clone(), t.clone()))
        .collect();
    let variates = state
        .iter()
        .find(|(k, _)| k.ends_with("w_delta"))
        .map(|(_, t)| t.shape[0])
        .ok_or_else(|| data_error("checkpoint has no encoder weights"))?;
    let cfg: ModelConfig = app.model.to_model_config(variates);
    let mut model = Model::init(&cfg, &mut Rng::new(cp.seed)).map_err(data_error)?;
    model.load_state_dict(&state).map_err(data_error)?;
    Ok((model, app))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.pos + n > self.bytes.len() {
            return Err(data_error(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_field(&mut self, what: &str) -> Result<usize, CliError> {
        let v = self.u64()?;
        // A length beyond the file size is corruption, not a big tensor.
        if v > self.bytes.len() as u64 {
            return Err(data_error(format!("implausible {what} length {v}")));
        }
        Ok(v as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "fusion.w".to_string(),
            Tensor::new(vec![1.5, -2.25, 0.1, 4.0], &[2, 2]).unwrap(),
        );
        tensors.insert(
            "stats.mean".to_string(),
            Tensor::new(vec![0.5], &[1]).unwrap(),
        );
        Checkpoint {
            seed: 42,
            config_hash: 0xdead_beef,
            config_text: "synth.t = 600\n".to_string(),
            tensors,
        }
    }

    #[test]
    fn encode_decode_roundtrip_is_exact() {
        let cp = sample();
        let bytes = cp.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(cp, back);
        // Serialization of the decoded copy is byte-identical.
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn corruption_is_detected() {
        let cp = sample();
        let bytes = cp.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
        let mut bad_version = bytes;
        bad_version[4] = 9;
        assert!(Checkpoint::from_bytes(&bad_version).is_err());
    }

    #[test]
    fn special_float_bits_survive() {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "t".to_string(),
            Tensor::new(vec![-0.0, 4.9e-324, 1.7976931348623157e308, 1.0 / 3.0], &[4])
                .unwrap(),
        );
        let cp = Checkpoint {
            seed: 0,
            config_hash: 0,
            config_text: String::new(),
            tensors,
        };
        let back = Checkpoint::from_bytes(&cp.to_bytes()).unwrap();
        let a = &cp.tensors["t"].values;
        let b = &back.tensors["t"].values;
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
