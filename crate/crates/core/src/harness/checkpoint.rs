//! Binary checkpoint container: magic, format version, payload kind, payload
//! length, bincode payload and a SHA-256 of the payload.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRESSCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    /// Complete resumable training state.
    Trainer,
    /// Policy network only.
    Policy,
    ForceModel,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Trainer => 1,
            CheckpointKind::Policy => 2,
            CheckpointKind::ForceModel => 3,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(CheckpointKind::Trainer),
            2 => Some(CheckpointKind::Policy),
            3 => Some(CheckpointKind::ForceModel),
            _ => None,
        }
    }
}

pub fn encode<T: Serialize>(kind: CheckpointKind, value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| HarnessError::Corrupt(format!("cannot encode: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(kind.tag());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8], expected: CheckpointKind) -> Result<T> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(HarnessError::Corrupt("missing checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(HarnessError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let kind = CheckpointKind::from_tag(bytes[12]).ok_or_else(|| HarnessError::Corrupt(format!("unknown kind tag {}", bytes[12])))?;
    if kind != expected {
        return Err(HarnessError::Kind { found: kind, expected });
    }
    let len = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len.saturating_add(DIGEST_LEN) {
        return Err(HarnessError::Corrupt(format!(
            "payload is {} bytes, header says {}",
            body.len().saturating_sub(DIGEST_LEN),
            len
        )));
    }
    let (payload, digest) = body.split_at(len);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(HarnessError::Corrupt("payload checksum mismatch".into()));
    }
    bincode::deserialize(payload).map_err(|e| HarnessError::Corrupt(format!("cannot decode payload: {e}")))
}

/// Writes through a temporary file and a rename so readers never see a partial file.
pub fn save_checkpoint<T: Serialize>(path: &Path, kind: CheckpointKind, value: &T) -> Result<()> {
    let bytes = encode(kind, value)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: CheckpointKind) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, kind)
}
