//! Run manifests: everything needed to regenerate an output directory.

use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::io;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<FileDigest> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: io::sha256_file(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command arguments as given, without the config-shaping flags.
    pub args: Vec<String>,
    pub config: LabConfig,
    pub config_hash: String,
    pub seed: u64,
    pub eval_split: String,
    pub inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let m: RunManifest = io::read_json(path)?;
        m.config.validate()?;
        if m.config.hash() != m.config_hash {
            return Err(LabError::Format(format!(
                "{}: config snapshot does not match its hash {}",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    /// Fails on the first input whose content changed since the run.
    pub fn check_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = io::sha256_file(Path::new(&f.path))?;
            if now != f.sha256 {
                return Err(LabError::Format(format!("input {} changed since the recorded run", f.path)));
            }
        }
        Ok(())
    }
}

/// Digests of `names` inside `dir`, in the given order.
pub fn digest_outputs(dir: &Path, names: &[String]) -> Result<Vec<FileDigest>> {
    names
        .iter()
        .map(|n| {
            Ok(FileDigest {
                path: n.clone(),
                sha256: io::sha256_file(&dir.join(n))?,
            })
        })
        .collect()
}
