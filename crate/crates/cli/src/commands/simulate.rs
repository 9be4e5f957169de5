//! `simulate`: generate the configured ensemble, write per-trajectory
//! records, a manifest and summary statistics.

use nmsa_core::ensemble::{ensemble_map, estimate_velocity, InitialState};
use nmsa_core::io::{write_trajectory_binary, write_trajectory_csv};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

use super::util::{calibration, output_dir};

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let params = cfg.sim_params();
    let schedule = cfg.schedule()?;
    let cal = calibration(cfg);
    let format = cfg.output.trajectory_format.clone();
    let traj_dir = dir.join("trajectories");
    if format != "none" {
        std::fs::create_dir_all(&traj_dir).map_err(CliError::data)?;
    }

    // Per-trajectory: write the record, keep only checkpoint states. The
    // trajectory index is recovered from the per-record seed.
    let results: Vec<Result<[f64; 6], String>> = ensemble_map(
        &params,
        &schedule,
        cfg.ensemble.n_trajectories,
        cfg.ensemble.master_seed,
        &InitialState::Thermal { temperature: cfg.initial_temperature() },
        cfg.ensemble.sample_rate_hz,
        |mut rec| {
            let n = rec.n_samples();
            let mid = rec.switch_index.clamp(1, n - 2);
            let checkpoints = [1usize, mid, n - 2];
            let mut out = [0.0f64; 6];
            for (k, &idx) in checkpoints.iter().enumerate() {
                out[2 * k] = rec.z[idx];
                out[2 * k + 1] = rec.velocity_at(idx).unwrap_or(0.0);
            }
            if format == "csv" || format == "binary" {
                if let Err(e) = estimate_velocity(&mut rec) {
                    return Err(e.to_string());
                }
            }
            let write_result = match format.as_str() {
                "binary" => write_trajectory_binary(
                    &traj_dir.join(format!("traj_{:06}.leva", rec.seed ^ cfg.ensemble.master_seed)),
                    &rec,
                ),
                "csv" => write_trajectory_csv(
                    &traj_dir.join(format!("traj_{:06}.csv", rec.seed ^ cfg.ensemble.master_seed)),
                    &rec,
                ),
                _ => Ok(()),
            };
            write_result.map_err(|e| e.to_string())?;
            Ok(out)
        },
    )
    .map_err(CliError::numeric)?;

    let mut checkpoints = vec![Vec::new(); 3];
    for r in results {
        let vals = r.map_err(CliError::Data)?;
        for k in 0..3 {
            checkpoints[k].push((vals[2 * k], vals[2 * k + 1]));
        }
    }
    let n = cfg.ensemble.n_trajectories as f64;
    let mut rows = Vec::new();
    for states in &checkpoints {
        let mean_z = states.iter().map(|s| s.0).sum::<f64>() / n;
        let mean_v = states.iter().map(|s| s.1).sum::<f64>() / n;
        let var_z = states.iter().map(|s| (s.0 - mean_z).powi(2)).sum::<f64>() / n;
        let var_v = states.iter().map(|s| (s.1 - mean_v).powi(2)).sum::<f64>() / n;
        rows.push(vec![mean_z, var_z.sqrt(), mean_v, var_v.sqrt()]);
    }
    nmsa_core::io::write_table_csv(
        &dir.join("summary.csv"),
        "mean_z_m,std_z_m,mean_v_m_s,std_v_m_s",
        &rows,
    )
    .map_err(CliError::numeric)?;

    let mut manifest = Manifest::new("simulate", cfg);
    manifest.push("trajectory_format", &cfg.output.trajectory_format);
    manifest.push("records_written", if format == "none" { 0 } else { cfg.ensemble.n_trajectories });
    manifest.push("sqrt_var_z_nm", format!("{:.3}", cal.var_z.sqrt() * 1e9));
    manifest.write(&dir)?;
    Ok(())
}
