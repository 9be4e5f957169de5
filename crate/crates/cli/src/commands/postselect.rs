//! `postselect`: extract the phase-space states at the protocol input time
//! and export one selected subset plus the reconstructed parent density.

use nalgebra::Vector2;

use nmsa_core::ensemble::{ensemble_map, EnsembleStats, InitialState};
use nmsa_core::io::{write_density_grid_csv, write_indices_csv};
use nmsa_core::postselect::{
    reconstruct_pdf, select_gaussian, select_zero_cov, PrescribedState, ZeroCovBudget,
};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

use super::util::{calibration, output_dir, write_key_values};

pub fn postselect(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let params = cfg.sim_params();
    let schedule = cfg.schedule()?;
    let cal = calibration(cfg);
    let sample_dt = cfg.sample_dt();

    // Only the input-time states are needed; extract them on the fly.
    let t0 = schedule.step2_start() - cfg.protocol.tau1_s;
    let f0 = t0 / sample_dt;
    if f0 < 1.0 {
        return Err(CliError::Config(
            "protocol.pre_window_s leaves no samples before the input time".into(),
        ));
    }
    let states: Vec<Vector2<f64>> = ensemble_map(
        &params,
        &schedule,
        cfg.ensemble.n_trajectories,
        cfg.ensemble.master_seed,
        &InitialState::Thermal { temperature: cfg.initial_temperature() },
        cfg.ensemble.sample_rate_hz,
        |rec| {
            let base = f0.floor() as usize;
            let w = f0 - base as f64;
            let interp = |i: usize| rec.z[i] * (1.0 - w) + rec.z[i + 1] * w;
            let z = interp(base);
            let v = (interp(base + 1) - interp(base - 1)) / (2.0 * rec.sample_dt);
            cal.normalize_state(z, v)
        },
    )
    .map_err(CliError::numeric)?;

    let mean = Vector2::new(cfg.postselect.mean[0], cfg.postselect.mean[1]);
    let mut report: Vec<(&str, String)> = vec![
        ("mode", cfg.postselect.mode.clone()),
        ("n_trajectories", states.len().to_string()),
        ("t0_s", format!("{t0:?}")),
    ];
    let indices = match cfg.postselect.mode.as_str() {
        "zero_cov" => {
            let budget = if cfg.postselect.radius > 0.0 {
                ZeroCovBudget::Radius(cfg.postselect.radius)
            } else {
                ZeroCovBudget::Nearest(cfg.postselect.count)
            };
            select_zero_cov(&states, mean, budget).map_err(CliError::numeric)?.indices
        }
        _ => {
            let pdf = reconstruct_pdf(&states, None).map_err(CliError::numeric)?;
            write_density_grid_csv(&dir.join("parent_pdf.csv"), &pdf)
                .map_err(CliError::numeric)?;
            let prescribed = PrescribedState::isotropic(mean, cfg.postselect.theta0);
            let sel = select_gaussian(&states, &pdf, &prescribed, cfg.postselect.seed)
                .map_err(CliError::numeric)?;
            report.push(("clamped_fraction", format!("{:?}", sel.probs.clamped_fraction)));
            report.push(("low_yield", sel.probs.low_yield.to_string()));
            sel.indices
        }
    };
    write_indices_csv(&dir.join("indices.csv"), &indices).map_err(CliError::numeric)?;

    let subset: Vec<Vector2<f64>> = indices.iter().map(|&i| states[i]).collect();
    let stats = EnsembleStats::from_states(&subset).map_err(CliError::numeric)?;
    report.extend([
        ("survivors", indices.len().to_string()),
        ("subset_mean_z", format!("{:?}", stats.mean[0])),
        ("subset_mean_v", format!("{:?}", stats.mean[1])),
        ("subset_cov_zz", format!("{:?}", stats.cov[(0, 0)])),
        ("subset_cov_vv", format!("{:?}", stats.cov[(1, 1)])),
        ("subset_cov_zv", format!("{:?}", stats.cov[(0, 1)])),
    ]);
    write_key_values(&dir.join("selection.txt"), &report)?;

    let manifest = Manifest::new("postselect", cfg);
    manifest.write(&dir)?;
    Ok(())
}
