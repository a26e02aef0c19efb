//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, then every tensor as little-endian values in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PemvModel, PrototypeBank};
use crate::nn::Module;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"PEMVCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub model: ModelConfig,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_acc: f64,
    pub bank_initialized: Vec<bool>,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the tensor payload.
    pub payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub header: CheckpointHeader,
    pub model: PemvModel<T>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters, then buffers, then prototypes, in visitation order.
fn collect<T: Scalar>(model: &mut PemvModel<T>) -> (Vec<TensorEntry>, Vec<T>) {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    model.visit_params(&mut |name, p| {
        entries.push(TensorEntry {
            name: name.to_string(),
            len: p.len(),
        });
        values.extend_from_slice(&p.value);
    });
    model.visit_buffers(&mut |name, b| {
        entries.push(TensorEntry {
            name: name.to_string(),
            len: b.len(),
        });
        values.extend_from_slice(b);
    });
    for c in 0..model.bank.num_classes() {
        let p = model.bank.prototype(c);
        entries.push(TensorEntry {
            name: format!("bank.{c}"),
            len: p.len(),
        });
        values.extend_from_slice(p);
    }
    (entries, values)
}

pub struct SaveInfo<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub epoch: usize,
    pub val_acc: f64,
}

pub fn save<T: Scalar>(path: &Path, model: &PemvModel<T>, info: &SaveInfo<'_>) -> Result<()> {
    let mut model = model.clone();
    let (tensors, values) = collect(&mut model);
    let payload = T::to_le_bytes_vec(&values);
    let header = CheckpointHeader {
        dtype: T::NAME.to_string(),
        model: model.config.clone(),
        config_hash: info.config_hash.to_string(),
        seed: info.seed,
        epoch: info.epoch,
        val_acc: info.val_acc,
        bank_initialized: model.bank.initialized_flags().to_vec(),
        tensors,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&payload)?;
    Ok(())
}

/// Loads and validates a checkpoint. `expected_hash` additionally pins the config.
pub fn load<T: Scalar>(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("format version {version}, expected {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    if header.dtype != T::NAME {
        return Err(bad(format!("stored as {}, requested {}", header.dtype, T::NAME)));
    }
    let payload = &body[hlen..];
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(bad("payload checksum mismatch".into()));
    }
    if let Some(h) = expected_hash {
        if h != header.config_hash {
            return Err(bad(format!("config hash {} does not match {h}", header.config_hash)));
        }
    }
    let values = T::from_le_bytes_slice(payload);
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if values.len() != total || payload.len() != total * T::BYTES {
        return Err(bad(format!("payload holds {} values, header lists {total}", values.len())));
    }

    let mut model = PemvModel::<T>::new(header.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let (expected, _) = collect(&mut model);
    if expected != header.tensors {
        return Err(bad("tensor layout does not match the stored model config".into()));
    }
    let mut offset = 0;
    let mut take = |len: usize| {
        let s = &values[offset..offset + len];
        offset += len;
        s
    };
    model.visit_params(&mut |_, p| {
        let n = p.len();
        p.value.copy_from_slice(take(n));
    });
    model.visit_buffers(&mut |_, b| {
        let n = b.len();
        b.copy_from_slice(take(n));
    });
    let prototypes = (0..model.bank.num_classes()).map(|_| take(model.bank.dim()).to_vec()).collect();
    model.bank = PrototypeBank::from_parts(prototypes, header.bank_initialized.clone(), model.bank.momentum())?;
    Ok(Checkpoint { header, model })
}
