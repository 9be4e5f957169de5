//! Shared command plumbing.

use std::path::{Path, PathBuf};

use nmsa_core::dynamics::SimParams;
use nmsa_core::ensemble::Calibration;

use crate::config::RunConfig;
use crate::CliError;

pub fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.output.directory);
    std::fs::create_dir_all(&dir).map_err(CliError::data)?;
    Ok(dir)
}

/// Calibration used for normalization: the thermal scales of the ensemble's
/// initial (pre-protocol equilibrium) temperature.
pub fn calibration(cfg: &RunConfig) -> Calibration {
    let params = SimParams { temperature: cfg.initial_temperature(), ..cfg.sim_params() };
    Calibration::from_params(&params)
}

pub fn write_key_values(path: &Path, pairs: &[(&str, String)]) -> Result<(), CliError> {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(CliError::data)
}
