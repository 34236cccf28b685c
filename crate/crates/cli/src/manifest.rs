//! `manifest.json`: everything needed to reproduce a run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
        if m.seed != m.config.seed {
            return Err(CliError::validation(format!(
                "manifest {}: seed {} disagrees with config seed {}",
                path.display(),
                m.seed,
                m.config.seed
            )));
        }
        Ok(m)
    }
}
