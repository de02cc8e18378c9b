//! Parameter files: a JSON manifest followed by flat little-endian arrays.
//!
//! Layout: `b"DRPM"`, `u32` format version, `u64` manifest length, the
//! manifest JSON, then every tensor's values back to back in manifest order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamSet, Result, Tensor};

pub const PARAM_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DRPM";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format_version: u32,
    pub dtype: Dtype,
    pub entries: Vec<ManifestEntry>,
}

pub fn write_params<W: Write>(w: &mut W, params: &ParamSet, dtype: Dtype) -> Result<()> {
    let manifest = ParamManifest {
        format_version: PARAM_FORMAT_VERSION,
        dtype,
        entries: params
            .names()
            .iter()
            .zip(params.values())
            .map(|(n, v)| ManifestEntry { name: n.clone(), shape: [v.rows(), v.cols()] })
            .collect(),
    };
    let header = serde_json::to_vec(&manifest).map_err(|e| AutodiffError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&PARAM_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for v in params.values() {
        for &x in v.data() {
            match dtype {
                Dtype::F32 => w.write_all(&(x as f32).to_le_bytes())?,
                Dtype::F64 => w.write_all(&x.to_le_bytes())?,
            }
        }
    }
    Ok(())
}

pub fn params_to_bytes(params: &ParamSet, dtype: Dtype) -> Vec<u8> {
    let mut buf = Vec::new();
    write_params(&mut buf, params, dtype).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Format("not a parameter file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    read_exact(r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != PARAM_FORMAT_VERSION {
        return Err(AutodiffError::Version { found: version, expected: PARAM_FORMAT_VERSION });
    }
    let mut len = [0u8; 8];
    read_exact(r, &mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(AutodiffError::Format(format!("manifest length {len} is implausible")));
    }
    let mut header = vec![0u8; len];
    read_exact(r, &mut header)?;
    let manifest: ParamManifest =
        serde_json::from_slice(&header).map_err(|e| AutodiffError::Format(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(AutodiffError::Format("manifest version disagrees with file header".into()));
    }
    let mut set = ParamSet::new();
    let width = manifest.dtype.width();
    for entry in manifest.entries {
        let [rows, cols] = entry.shape;
        let mut raw = vec![0u8; rows * cols * width];
        read_exact(r, &mut raw)?;
        let data = match manifest.dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        set.add(entry.name, Tensor::new(rows, cols, data)?);
    }
    Ok(set)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => AutodiffError::Format("truncated parameter file".into()),
        _ => AutodiffError::Io(e),
    })
}
