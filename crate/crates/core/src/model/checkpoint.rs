use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    state: ModelState,
}

/// JSON checkpoint; floats are written in shortest round-trip form.
pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        state: state.clone(),
    };
    std::fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    ckpt.state.validate()?;
    Ok(ckpt.state)
}
