//! Weight manifest: one raw little-endian array file per parameter plus an
//! `index.json` with name, shape, dtype and sha256 of each file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightIndex {
    pub entries: Vec<WeightEntry>,
    /// Free-form description of what the weights belong to, such as a model
    /// config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    format!("{safe}.bin")
}

pub fn save_weights(
    dir: &Path,
    params: &ParamStore,
    dtype: Dtype,
    meta: Option<serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let mut bytes = Vec::with_capacity(t.numel() * dtype.width());
        for &v in t.data() {
            match dtype {
                Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        let file = file_name(name);
        fs::write(dir.join(&file), &bytes)?;
        entries.push(WeightEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
            dtype,
            sha256: sha256_hex(&bytes),
        });
    }
    let index = WeightIndex { entries, meta };
    fs::write(
        dir.join(INDEX_FILE),
        serde_json::to_string_pretty(&index)? + "\n",
    )?;
    Ok(())
}

/// Loads and checksums every array listed in the index.
pub fn load_weights(dir: &Path) -> Result<(ParamStore, Option<serde_json::Value>)> {
    let index: WeightIndex = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
    let mut params = ParamStore::new();
    for e in &index.entries {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Corrupt(format!(
                "checksum mismatch for `{}`",
                e.name
            )));
        }
        let n: usize = e.shape.iter().product();
        if bytes.len() != n * e.dtype.width() {
            return Err(Error::Corrupt(format!(
                "`{}` has {} bytes for shape {:?}",
                e.name,
                bytes.len(),
                e.shape
            )));
        }
        let data = match e.dtype {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok((params, index.meta))
}
