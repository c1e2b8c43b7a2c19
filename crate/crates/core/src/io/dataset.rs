//! Line-delimited JSON pose datasets.
//!
//! Each line is one object:
//! `{"id": "...", "action": "Walking" | null, "joints_2d": [[u, v], ...], "joints_3d": [[x, y, z], ...]}`.
//! 2D in pixels, 3D in millimetres relative to the root joint.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSample {
    pub id: String,
    #[serde(default)]
    pub action: Option<String>,
    pub joints_2d: Vec<[f64; 2]>,
    pub joints_3d: Vec<[f64; 3]>,
}

impl PoseSample {
    pub fn pose2d(&self) -> Matrix {
        Matrix::from_fn(self.joints_2d.len(), 2, |r, c| self.joints_2d[r][c])
    }

    pub fn pose3d(&self) -> Matrix {
        Matrix::from_fn(self.joints_3d.len(), 3, |r, c| self.joints_3d[r][c])
    }

    pub fn validate(&self, num_joints: usize) -> std::result::Result<(), String> {
        if self.joints_2d.len() != num_joints || self.joints_3d.len() != num_joints {
            return Err(format!(
                "sample {}: {} 2D and {} 3D joints, topology has {num_joints}",
                self.id,
                self.joints_2d.len(),
                self.joints_3d.len()
            ));
        }
        let finite = self.joints_2d.iter().flatten().all(|v| v.is_finite())
            && self.joints_3d.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(format!("sample {}: non-finite coordinate", self.id));
        }
        Ok(())
    }
}

pub fn pose3d_to_rows(m: &Matrix) -> Vec<[f64; 3]> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)]).collect()
}

/// Blank lines are skipped; any other unparsable line is an error naming
/// its 1-based line number.
pub fn read_dataset(path: &Path, topo: &SkeletonTopology) -> Result<Vec<PoseSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let sample: PoseSample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        sample.validate(topo.num_joints()).map_err(parse_err)?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[PoseSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Input(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
