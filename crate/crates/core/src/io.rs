//! File-format helpers: flat little-endian arrays, JSON headers, network
//! blobs and provenance records.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{Activation, MlpParams};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Enough information to regenerate an artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl Provenance {
    pub fn new(command: &str, config: &impl Serialize, seed: u64) -> Self {
        Self { config_hash: config_hash(config), seed, code_version: CODE_VERSION.to_string(), command: command.to_string(), parent: None }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    /// Single-line JSON, used as the `#` comment heading CSV files.
    pub fn csv_comment(&self) -> String {
        format!("# provenance: {}", serde_json::to_string(self).expect("provenance serializes"))
    }
}

/// SHA-256 (hex, first 16 bytes) of a value's canonical JSON encoding.
pub fn config_hash(config: &impl Serialize) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn write_f64s(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    write_atomic(path, &bytes)
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format { path: path.into(), reason: "length is not a multiple of 8".into() });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_u32s(path: &Path, values: impl IntoIterator<Item = u32>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(u32::to_le_bytes).collect();
    write_atomic(path, &bytes)
}

pub fn read_u32s(path: &Path) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format { path: path.into(), reason: "length is not a multiple of 4".into() });
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes through a temporary sibling then renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Shape of one network inside a flat f64 parameter blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpHeader {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

impl MlpHeader {
    pub fn describe(net: &MlpParams, offset: usize) -> Self {
        Self { dims: net.dims(), activations: net.activations.clone(), offset }
    }

    pub fn len(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_from(&self, blob: &[f64]) -> Result<MlpParams> {
        if self.dims.len() < 2 || self.activations.len() + 2 != self.dims.len() {
            return Err(Error::Config(format!("bad network header {:?}", self.dims)));
        }
        let end = self.offset + self.len();
        if end > blob.len() {
            return Err(Error::Dimension { expected: end, got: blob.len() });
        }
        let mut net = MlpParams::zeros(&self.dims, Activation::Tanh);
        net.activations = self.activations.clone();
        net.set_flat(&blob[self.offset..end])?;
        Ok(net)
    }

    /// Writes a standalone blob holding one network.
    pub fn store(net: &MlpParams, bin: &Path) -> Result<Self> {
        write_f64s(bin, net.to_flat())?;
        Ok(Self::describe(net, 0))
    }

    pub fn load(&self, bin: &Path) -> Result<MlpParams> {
        self.read_from(&read_f64s(bin)?)
    }
}
