//! Serialized experiment progress for stop/resume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, Progress};
use crate::propagation::PathLossParams;
use crate::scenario::GridSpec;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    /// Path-loss model used to turn predicted shadowing into path loss.
    pub path_loss: PathLossParams,
    pub p_tx: f64,
    /// Ground-truth field of synthetic runs.
    pub reference_field: Option<Vec<f64>>,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn new(config: ExperimentConfig, grid: GridSpec, progress: Progress) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            grid,
            path_loss: PathLossParams::default(),
            p_tx: 0.0,
            reference_field: None,
            progress,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        Ok(cp)
    }

    /// Checks that this checkpoint continues the run described by
    /// `config` on `grid`. `t_max` may grow; everything else must match.
    pub fn check_compatible(&self, config: &ExperimentConfig, grid: &GridSpec) -> Result<()> {
        if self.grid != *grid {
            return Err(Error::GridMismatch(format!(
                "checkpoint grid {}x{} ({} m) differs from source grid {}x{} ({} m)",
                self.grid.px, self.grid.py, self.grid.pixel_size, grid.px, grid.py, grid.pixel_size
            )));
        }
        let mut mine = self.config;
        mine.stream.t_max = config.stream.t_max;
        if mine != *config {
            return Err(Error::Config(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        if self.progress.state.t > config.stream.t_max {
            return Err(Error::Config(format!(
                "checkpoint is at t = {}, beyond t_max = {}",
                self.progress.state.t, config.stream.t_max
            )));
        }
        Ok(())
    }
}
