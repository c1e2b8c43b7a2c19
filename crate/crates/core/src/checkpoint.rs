//! Checkpoint file: a JSON manifest followed by raw little-endian `f64`s.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PGRFCKPT"
//! 8       4     format version, u32 LE
//! 12      8     manifest length L, u64 LE
//! 20      L     manifest, UTF-8 JSON
//! 20+L    ...   parameter values, f64 LE, manifest order, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PoseGrafModel};
use crate::skeleton::SkeletonTopology;

pub const MAGIC: &[u8; 8] = b"PGRFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &PoseGrafModel) -> Result<Vec<u8>> {
    let params = model.params();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        topology: model.topology().clone(),
        params: params
            .names()
            .iter()
            .zip(params.values())
            .map(|(name, m)| ParamEntry {
                name: name.clone(),
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in params.values() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<PoseGrafModel> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20 + len)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)
        .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;

    let mut model = PoseGrafModel::new(manifest.config, manifest.topology, 0)?;
    let params = model.params_mut();
    if params.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, config implies {}",
            manifest.params.len(),
            params.len()
        )));
    }
    let mut cursor = 20 + len;
    for (i, entry) in manifest.params.iter().enumerate() {
        let expected = &params.names()[i];
        let (rows, cols) = params.values()[i].shape();
        if &entry.name != expected || entry.shape != [rows, cols] {
            return Err(Error::Checkpoint(format!(
                "parameter {i}: manifest has {} {:?}, config implies {expected} {:?}",
                entry.name,
                entry.shape,
                [rows, cols]
            )));
        }
        let n = rows * cols;
        let raw = bytes
            .get(cursor..cursor + 8 * n)
            .ok_or_else(|| bad("truncated parameter data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.values_mut()[i] = Matrix::from_vec(rows, cols, data)?;
        cursor += 8 * n;
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok(model)
}

pub fn save(model: &PoseGrafModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PoseGrafModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_params() {
        let topo = SkeletonTopology::chain(5).unwrap();
        let model = PoseGrafModel::new(ModelConfig::toy(), topo, 11).unwrap();
        let bytes = to_bytes(&model).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let topo = SkeletonTopology::chain(5).unwrap();
        let model = PoseGrafModel::new(ModelConfig::toy(), topo, 11).unwrap();
        let bytes = to_bytes(&model).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(from_bytes(&wrong).is_err());
    }
}
