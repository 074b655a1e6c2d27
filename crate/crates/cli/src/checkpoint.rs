//! Versioned JSON checkpoints. Floats are written in round-trip precision, so a
//! save/load cycle reproduces the state bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use bundleflow_core::flow::Schedule;
use bundleflow_core::{BundleState, StepControl};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "bundleflow-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is not a valid checkpoint")]
    Parse { path: String, source: serde_json::Error },
    #[error("{path}: unsupported checkpoint format `{format}` version {version}")]
    Version { path: String, format: String, version: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub state: BundleState,
    /// Schedule of the run that produced the state; resuming reuses it so the
    /// stop times, and hence the steps, are the same as in an unbroken run.
    pub schedule: Schedule,
    pub control: StepControl,
    /// Accepted steps so far.
    pub steps: usize,
    /// Canonical text of the configuration that produced the checkpoint.
    pub config: String,
}

impl CheckpointFile {
    pub fn new(state: BundleState, schedule: Schedule, control: StepControl, steps: usize, config: String) -> Self {
        CheckpointFile { format: FORMAT.into(), version: VERSION, state, schedule, control, steps, config }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, CheckpointError> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|source| CheckpointError::Parse { path: path.into(), source })?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(CheckpointError::Version { path: path.into(), format: file.format, version: file.version });
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: name.clone(), source })?;
        Self::from_json(&text, &name)
    }

    /// Writes to a temporary sibling and renames, so a crash never leaves a
    /// half-written checkpoint under the final name.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(self.to_json().as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)
    }
}
