//! `calibrate`: Welch PSD calibration of the oscillation frequency and
//! normalization variances from an equilibrium record, given or simulated.

use std::path::Path;

use nmsa_core::ensemble::{generate_ensemble, InitialState, TrajectoryRecord};
use nmsa_core::io::{read_trajectory_binary, read_trajectory_csv, write_table_csv};
use nmsa_core::protocol::build_schedule;
use nmsa_core::psd::{psd_calibrate_with, welch_psd};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

use super::util::{output_dir, write_key_values};

fn load_record(path: &Path) -> Result<TrajectoryRecord, CliError> {
    let result = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_trajectory_csv(path),
        _ => read_trajectory_binary(path),
    };
    result.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn synthetic_record(cfg: &RunConfig) -> Result<TrajectoryRecord, CliError> {
    let params = cfg.sim_params();
    let duration = cfg.calibrate.n_samples as f64 * cfg.sample_dt();
    let schedule =
        build_schedule(duration, 0.0, 0.0, params.omega_c, params.omega_i, 0.0, 0.0, 0.0)
            .map_err(CliError::numeric)?
            .with_duffing(cfg.sim.duffing_xi_m2);
    let records = generate_ensemble(
        &params,
        &schedule,
        1,
        cfg.ensemble.master_seed,
        &InitialState::Thermal { temperature: cfg.initial_temperature() },
        cfg.ensemble.sample_rate_hz,
    )
    .map_err(CliError::numeric)?;
    Ok(records.into_iter().next().expect("one record"))
}

pub fn calibrate(cfg: &RunConfig, input: Option<&Path>) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let record = match input {
        Some(path) => load_record(path)?,
        None => synthetic_record(cfg)?,
    };
    let cal = psd_calibrate_with(&record, cfg.calibrate.segment_len).map_err(CliError::numeric)?;

    // Raw position PSD for plotting.
    let (freqs, psd) = welch_psd(&record.z, 1.0 / record.sample_dt, cfg.calibrate.segment_len)
        .map_err(CliError::numeric)?;
    let rows: Vec<Vec<f64>> =
        freqs.iter().zip(&psd).map(|(&f, &s)| vec![f, s]).collect();
    write_table_csv(&dir.join("psd_z.csv"), "freq_hz,psd_m2_hz", &rows)
        .map_err(CliError::numeric)?;

    write_key_values(
        &dir.join("calibration.txt"),
        &[
            ("omega_psd_rad_s", format!("{:?}", cal.omega_psd)),
            ("freq_psd_hz", format!("{:?}", cal.omega_psd / std::f64::consts::TAU)),
            ("var_z_m2", format!("{:?}", cal.var_z)),
            ("var_v_m2_s2", format!("{:?}", cal.var_v)),
            ("sqrt_var_z_nm", format!("{:?}", cal.var_z.sqrt() * 1e9)),
            ("consistency_ratio", format!("{:?}", cal.consistency_ratio())),
            ("n_samples", record.n_samples().to_string()),
        ],
    )?;

    let mut manifest = Manifest::new("calibrate", cfg);
    manifest.push(
        "input",
        input.map(|p| p.display().to_string()).unwrap_or_else(|| "synthetic".into()),
    );
    manifest.write(&dir)?;
    Ok(())
}
