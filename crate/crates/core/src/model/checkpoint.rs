//! JSON checkpoints.
//!
//! ```text
//! {
//!   "format": "resperturb-checkpoint",
//!   "version": 1,
//!   "master_seed": 42,
//!   "members": [ { "arch": {..}, "noise": {..}, "blocks": [[..]], "head": {..} } ]
//! }
//! ```
//!
//! Every tensor is stored as `{"shape": [..], "data": [..]}` in row-major order.
//! Floats are written with shortest round-trip formatting, so a save/load cycle
//! is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ensemble::EnsembleModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "resperturb-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub members: Vec<super::ResidualNet>,
}

impl Checkpoint {
    pub fn new(ensemble: &EnsembleModel, master_seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            master_seed,
            members: ensemble.members.clone(),
        }
    }

    pub fn into_ensemble(self) -> Result<EnsembleModel> {
        EnsembleModel::new(self.members)
    }
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(path: &Path, ensemble: &EnsembleModel, master_seed: u64) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::new(ensemble, master_seed))
        .map_err(|e| Error::Parse(format!("serializing checkpoint: {e}")))?;
    crate::harness::write_atomic(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Parse(format!(
            "{}: not a checkpoint (format `{}`)",
            path.display(),
            ckpt.format
        )));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            ckpt.version
        )));
    }
    EnsembleModel::new(ckpt.members.clone())?;
    Ok(ckpt)
}
