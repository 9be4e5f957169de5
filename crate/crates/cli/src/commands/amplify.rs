//! `amplify`: run the protocol at a chosen operating timing and report the
//! fitted gain, the input-noise sweep of the noise figure, the force-sensing
//! SNR, distortion, and phase-space density grids.

use nalgebra::Vector2;

use nmsa_core::ensemble::{generate_ensemble, snapshot_fractional, EnsembleStats, InitialState};
use nmsa_core::estimation::{fit_added_noise, fit_gain, nf_db, shd, NfPoint};
use nmsa_core::io::{write_density_grid_csv, write_table_csv};
use nmsa_core::postselect::{
    reconstruct_pdf_with_bins, select_gaussian, select_zero_cov, PrescribedState, ZeroCovBudget,
};
use nmsa_core::protocol::{build_schedule, force_offset, ideal_operating_points, NmsaClass};
use nmsa_core::tuning::default_targets;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

use super::util::{calibration, output_dir, write_key_values};

/// Resolve the (τ₁, τ₃) timing for the requested operating mode.
fn resolve_timing(cfg: &RunConfig) -> Result<(f64, f64, NmsaClass), CliError> {
    let class = NmsaClass::parse(&cfg.amplify.timing)
        .ok_or_else(|| CliError::Config(format!("unknown timing {:?}", cfg.amplify.timing)))?;
    match cfg.amplify.timing_source.as_str() {
        "ideal" => {
            let p = cfg.sim_params();
            let points = ideal_operating_points(p.omega_c, p.omega_i, cfg.protocol.tau2_s, &p)
                .map_err(CliError::numeric)?;
            let pt = points.iter().find(|pt| pt.class == class).expect("all classes present");
            Ok((pt.tau1, pt.tau3, class))
        }
        "explicit" => {
            if cfg.amplify.tau1_s <= 0.0 && cfg.amplify.tau3_s <= 0.0 {
                return Err(CliError::Config(
                    "amplify.timing_source = \"explicit\" needs amplify.tau1_s/tau3_s".into(),
                ));
            }
            Ok((cfg.amplify.tau1_s, cfg.amplify.tau3_s, class))
        }
        "file" => {
            let path = &cfg.amplify.timing_file;
            if path.is_empty() {
                return Err(CliError::Config(
                    "amplify.timing_source = \"file\" needs amplify.timing_file".into(),
                ));
            }
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Data(format!(
                    "cannot read timing table {path}: {e}; run `nmsa tune` first"
                ))
            })?;
            parse_timing_row(&text, class).ok_or_else(|| {
                CliError::Data(format!(
                    "no {class} row in {path}; run `nmsa tune` or pick another mode"
                ))
            })
        }
        other => Err(CliError::Config(format!("unknown timing source {other:?}"))),
    }
}

fn parse_timing_row(modes_csv: &str, class: NmsaClass) -> Option<(f64, f64, NmsaClass)> {
    let mut lines = modes_csv.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (c_class, c_t1, c_t3) = (col("class")?, col("tau1_s")?, col("tau3_s")?);
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.get(c_class) == Some(&class.name()) {
            let t1 = fields.get(c_t1)?.parse().ok()?;
            let t3 = fields.get(c_t3)?.parse().ok()?;
            return Some((t1, t3, class));
        }
    }
    None
}

pub fn amplify(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let params = cfg.sim_params();
    let cal = calibration(cfg);
    let sample_dt = cfg.sample_dt();
    let (tau1, tau3, class) = resolve_timing(cfg)?;

    let f_c = if cfg.amplify.force_fc_n != 0.0 {
        cfg.amplify.force_fc_n
    } else {
        -params.mass * params.omega_i * params.omega_i * cfg.protocol.delta_m
    };
    let delta = if params.omega_i > 0.0 {
        -f_c / (params.mass * params.omega_i * params.omega_i)
    } else {
        0.0
    };

    let schedule = build_schedule(
        tau1,
        cfg.protocol.tau2_s,
        tau3,
        params.omega_c,
        params.omega_i,
        delta,
        2.0 * sample_dt,
        3.0 * sample_dt,
    )
    .map_err(CliError::numeric)?
    .with_duffing(cfg.sim.duffing_xi_m2);

    let n_traj = if cfg.amplify.n_trajectories > 0 {
        cfg.amplify.n_trajectories
    } else {
        cfg.ensemble.n_trajectories
    };
    let records = generate_ensemble(
        &params,
        &schedule,
        n_traj,
        cfg.ensemble.master_seed,
        &InitialState::Thermal { temperature: cfg.initial_temperature() },
        cfg.ensemble.sample_rate_hz,
    )
    .map_err(CliError::numeric)?;

    // Input and output states at the exact protocol boundary times.
    let t0 = schedule.step2_start() - tau1;
    let t3 = schedule.step2_start() + cfg.protocol.tau2_s + tau3;
    let states0 =
        snapshot_fractional(&records, t0 / sample_dt, &cal).map_err(CliError::numeric)?;
    let states3 =
        snapshot_fractional(&records, t3 / sample_dt, &cal).map_err(CliError::numeric)?;

    // Gain fit over zero-covariance subsets around circle targets.
    let targets = default_targets(&cfg.scan.targets_radii, cfg.scan.targets_per_circle);
    let budget = ZeroCovBudget::Nearest(cfg.scan.select_count);
    let mut init_means = Vec::new();
    let mut fin_means = Vec::new();
    for &target in &targets {
        let sel = select_zero_cov(&states0, target, budget).map_err(CliError::numeric)?;
        let w = 1.0 / sel.indices.len() as f64;
        init_means.push(sel.indices.iter().map(|&i| states0[i]).sum::<Vector2<f64>>() * w);
        fin_means.push(sel.indices.iter().map(|&i| states3[i]).sum::<Vector2<f64>>() * w);
    }
    let gain = fit_gain(&init_means, &fin_means).map_err(CliError::numeric)?;
    let g_fit = gain.g[(0, 0)];
    let fitted_class = NmsaClass::classify(g_fit);
    // The amplified coordinate: position for |G| > 1 modes, velocity below.
    let amplified_component = usize::from(g_fit.abs() < 1.0);
    let g_amp = gain.g[(amplified_component, amplified_component)];
    let model_offset = force_offset(f_c, &schedule, &params).map_err(CliError::numeric)?;

    write_table_csv(
        &dir.join("gain.csv"),
        "tau1_s,tau3_s,tau1_bar,tau3_bar,g_zz,g_zv,g_vz,g_vv,offset_z,offset_v,residual_z,residual_v",
        &[vec![
            tau1,
            tau3,
            params.omega_c * tau1,
            params.omega_c * tau3,
            gain.g[(0, 0)],
            gain.g[(0, 1)],
            gain.g[(1, 0)],
            gain.g[(1, 1)],
            gain.offset[0],
            gain.offset[1],
            gain.residual_rms[0],
            gain.residual_rms[1],
        ]],
    )
    .map_err(CliError::numeric)?;

    // Input-noise sweep: survivor-selected Gaussian subsets at t0.
    let parent_pdf = reconstruct_pdf_with_bins(&states0, None, cfg.amplify.pdf_bins)
        .map_err(CliError::numeric)?;
    let mean = Vector2::new(cfg.postselect.mean[0], cfg.postselect.mean[1]);
    let mut nf_rows = Vec::new();
    let mut snr_rows = Vec::new();
    let mut nf_points = Vec::new();
    let mut survivors_total = 0usize;
    for (idx, &theta0) in cfg.amplify.theta0_sweep.iter().enumerate() {
        let prescribed = PrescribedState::isotropic(mean, theta0);
        let sel = select_gaussian(&states0, &parent_pdf, &prescribed, cfg.postselect.seed)
            .map_err(CliError::numeric)?;
        let n_sub = sel.indices.len();
        survivors_total += n_sub;
        if n_sub < 20 {
            return Err(CliError::Numeric(format!(
                "only {n_sub} survivors at theta0 = {theta0}; enlarge the ensemble"
            )));
        }
        let sub0: Vec<Vector2<f64>> = sel.indices.iter().map(|&i| states0[i]).collect();
        let sub3: Vec<Vector2<f64>> = sel.indices.iter().map(|&i| states3[i]).collect();
        let stats0 = EnsembleStats::from_states(&sub0).map_err(CliError::numeric)?;
        let stats3 = EnsembleStats::from_states(&sub3).map_err(CliError::numeric)?;
        let c = amplified_component;
        let theta_in = stats0.cov[(c, c)];
        let theta_out = stats3.cov[(c, c)];
        let nf = theta_out / (g_amp * g_amp * theta_in);
        nf_points.push(NfPoint { theta0: theta_in, nf, weight: n_sub as f64 });
        nf_rows.push(vec![theta0, theta_in, nf, nf_db(nf), n_sub as f64]);

        write_density_grid_csv(
            &dir.join(format!("pdf_initial_{idx}.csv")),
            &reconstruct_pdf_with_bins(&sub0, None, cfg.amplify.pdf_bins)
                .map_err(CliError::numeric)?,
        )
        .map_err(CliError::numeric)?;
        write_density_grid_csv(
            &dir.join(format!("pdf_final_{idx}.csv")),
            &reconstruct_pdf_with_bins(&sub3, None, cfg.amplify.pdf_bins)
                .map_err(CliError::numeric)?,
        )
        .map_err(CliError::numeric)?;
    }
    let added_noise =
        fit_added_noise(&nf_points, g_amp).map_err(CliError::numeric)?;
    write_table_csv(
        &dir.join("nf_sweep.csv"),
        "theta0,theta0_measured,nf,nf_db,survivors",
        &nf_rows,
    )
    .map_err(CliError::numeric)?;

    // Force-sensing SNR over the same sweep, using the fitted offset of the
    // amplified position coordinate.
    let offset_z = gain.offset[0];
    for row in &nf_rows {
        let theta_in = row[1];
        let snr = offset_z * offset_z / (g_fit * g_fit * theta_in + added_noise);
        snr_rows.push(vec![row[0], theta_in, offset_z, snr]);
    }
    write_table_csv(&dir.join("snr_sweep.csv"), "theta0,theta0_measured,offset_z,snr_f", &snr_rows)
        .map_err(CliError::numeric)?;

    // State harmonic distortion around a circle of initial states: the
    // detected position readout (the amplifier output port) and, for
    // reference, the amplified coordinate itself.
    let n_angles = cfg.scan.targets_per_circle.max(16);
    let angles: Vec<f64> =
        (0..n_angles).map(|k| std::f64::consts::TAU * k as f64 / n_angles as f64).collect();
    let mut position_out = Vec::with_capacity(n_angles);
    let mut amplified_out = Vec::with_capacity(n_angles);
    for &phi in &angles {
        let target =
            Vector2::new(cfg.amplify.shd_radius * phi.cos(), cfg.amplify.shd_radius * phi.sin());
        let sel = select_zero_cov(&states0, target, budget).map_err(CliError::numeric)?;
        let out = sel.indices.iter().map(|&i| states3[i]).sum::<Vector2<f64>>()
            / sel.indices.len() as f64;
        position_out.push(out[0]);
        amplified_out.push(out[amplified_component]);
    }
    let distortion = shd(&angles, &position_out).map_err(CliError::numeric)?;
    let distortion_amplified = shd(&angles, &amplified_out).map_err(CliError::numeric)?;

    write_key_values(
        &dir.join("metrics.txt"),
        &[
            ("class_requested", class.name().to_string()),
            ("class_fitted", fitted_class.name().to_string()),
            ("tau1_s", format!("{tau1:?}")),
            ("tau3_s", format!("{tau3:?}")),
            ("tau1_bar", format!("{:?}", params.omega_c * tau1)),
            ("tau3_bar", format!("{:?}", params.omega_c * tau3)),
            ("g_zz", format!("{:?}", gain.g[(0, 0)])),
            ("g_zv", format!("{:?}", gain.g[(0, 1)])),
            ("g_vz", format!("{:?}", gain.g[(1, 0)])),
            ("g_vv", format!("{:?}", gain.g[(1, 1)])),
            ("det_g", format!("{:?}", gain.g.determinant())),
            ("offset_z_fit", format!("{:?}", gain.offset[0])),
            ("offset_v_fit", format!("{:?}", gain.offset[1])),
            ("offset_z_model", format!("{:?}", model_offset.offset[0])),
            ("offset_v_model", format!("{:?}", model_offset.offset[1])),
            ("force_fc_n", format!("{f_c:?}")),
            ("delta_equiv_m", format!("{delta:?}")),
            ("added_noise_fit", format!("{added_noise:?}")),
            ("shd_position_readout", format!("{distortion:?}")),
            ("shd_amplified_coordinate", format!("{distortion_amplified:?}")),
            ("amplified_coordinate", if amplified_component == 0 { "z" } else { "v" }.into()),
            ("n_trajectories", n_traj.to_string()),
            ("survivors_total", survivors_total.to_string()),
        ],
    )?;

    let mut manifest = Manifest::new("amplify", cfg);
    manifest.push("timing_source", &cfg.amplify.timing_source);
    manifest.push("class", class.name());
    manifest.write(&dir)?;
    Ok(())
}
