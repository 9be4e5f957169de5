//! `tune`: simulate an ensemble recorded around the inverted stage, then
//! scan the (τ₁, τ₃) grid to locate and classify the operating modes.

use nmsa_core::ensemble::{generate_ensemble, InitialState};
use nmsa_core::io::write_table_csv;
use nmsa_core::protocol::build_schedule;
use nmsa_core::tuning::{default_targets, sample_aligned_grid, scan_timing, ScanConfig};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

use super::util::{calibration, output_dir};

pub fn tune(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let params = cfg.sim_params();
    let sample_dt = cfg.sample_dt();
    let period = std::f64::consts::TAU / params.omega_c;
    let tau1_max = if cfg.scan.tau1_max_s > 0.0 { cfg.scan.tau1_max_s } else { period };
    let tau3_max = if cfg.scan.tau3_max_s > 0.0 { cfg.scan.tau3_max_s } else { period };
    let step = if cfg.scan.step_s > 0.0 { cfg.scan.step_s } else { sample_dt };

    // Record only the window the grids need on each side of the inverted
    // stage; the configured analysis windows are irrelevant for tuning and
    // would multiply the memory footprint.
    let margin = 3.0 * sample_dt;
    let schedule = build_schedule(
        0.0,
        cfg.protocol.tau2_s,
        0.0,
        params.omega_c,
        params.omega_i,
        cfg.protocol.delta_m,
        tau1_max + margin,
        tau3_max + margin,
    )
    .map_err(CliError::numeric)?
    .with_duffing(cfg.sim.duffing_xi_m2);

    let records = generate_ensemble(
        &params,
        &schedule,
        cfg.ensemble.n_trajectories,
        cfg.ensemble.master_seed,
        &InitialState::Thermal { temperature: cfg.initial_temperature() },
        cfg.ensemble.sample_rate_hz,
    )
    .map_err(CliError::numeric)?;

    let cal = calibration(cfg);
    let scan_cfg = ScanConfig {
        targets: default_targets(&cfg.scan.targets_radii, cfg.scan.targets_per_circle),
        budget: nmsa_core::postselect::ZeroCovBudget::Nearest(cfg.scan.select_count),
        min_subset: cfg.scan.min_subset,
        interpolate: cfg.scan.interpolate,
        ..ScanConfig::default()
    };
    let tau1_grid = sample_aligned_grid(step, tau1_max, step);
    let tau3_grid = sample_aligned_grid(step, tau3_max, step);
    let scan = scan_timing(&records, &cal, &schedule, &tau1_grid, &tau3_grid, &scan_cfg)
        .map_err(CliError::numeric)?;

    // Heatmap of the objective over normalized timings.
    let mut rows = Vec::with_capacity(scan.tau1_grid.len() * scan.tau3_grid.len());
    for (i1, &t1) in scan.tau1_grid.iter().enumerate() {
        for (i3, &t3) in scan.tau3_grid.iter().enumerate() {
            rows.push(vec![params.omega_c * t1, params.omega_c * t3, scan.objective_at(i1, i3)]);
        }
    }
    write_table_csv(&dir.join("heatmap.csv"), "tau1_bar,tau3_bar,objective", &rows)
        .map_err(CliError::numeric)?;

    let minima_rows = |minima: &[nmsa_core::tuning::ScanMinimum]| -> (String, Vec<String>) {
        let header = "class,tau1_s,tau3_s,tau1_bar,tau3_bar,objective,g_zz,g_zv,g_vz,g_vv,offset_z,offset_v,n_targets".to_string();
        let lines = minima
            .iter()
            .map(|m| {
                format!(
                    "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                    m.class,
                    m.tau1,
                    m.tau3,
                    params.omega_c * m.tau1,
                    params.omega_c * m.tau3,
                    m.objective,
                    m.gain.g[(0, 0)],
                    m.gain.g[(0, 1)],
                    m.gain.g[(1, 0)],
                    m.gain.g[(1, 1)],
                    m.gain.offset[0],
                    m.gain.offset[1],
                    m.gain.n_points,
                )
            })
            .collect();
        (header, lines)
    };
    let (header, lines) = minima_rows(&scan.minima);
    std::fs::write(dir.join("minima.csv"), format!("{header}\n{}\n", lines.join("\n")))
        .map_err(CliError::data)?;
    let best = scan.best_per_class();
    let (header, lines) = minima_rows(&best);
    std::fs::write(dir.join("modes.csv"), format!("{header}\n{}\n", lines.join("\n")))
        .map_err(CliError::data)?;

    let mut manifest = Manifest::new("tune", cfg);
    manifest.push("grid_size", format!("{}x{}", scan.tau1_grid.len(), scan.tau3_grid.len()));
    manifest.push("minima_found", scan.minima.len());
    manifest.push("modes_found", best.len());
    manifest.push("skipped_targets", scan.skipped_targets);
    manifest.write(&dir)?;
    Ok(())
}
