//! Run manifest: a flat key-value file recording what produced the outputs.
//! Timestamps live only here; all data files are byte-reproducible.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let canonical = cfg.to_toml();
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut m = Manifest { lines: Vec::new() };
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("config_sha256", hash);
        m.push("master_seed", cfg.ensemble.master_seed);
        m.push("n_trajectories", cfg.ensemble.n_trajectories);
        m.push("freq_c_hz", cfg.sim.freq_c_hz);
        m.push("omega_ratio", cfg.sim.omega_ratio);
        m.push("tau2_s", cfg.protocol.tau2_s);
        m.push("sample_rate_hz", cfg.ensemble.sample_rate_hz);
        m.push("timestamp_unix", timestamp);
        m
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(text, "{k} = {v}");
        }
        std::fs::write(dir.join("manifest.txt"), text).map_err(CliError::data)
    }
}
