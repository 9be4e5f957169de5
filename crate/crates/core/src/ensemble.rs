//! Trajectory ensembles: generation, velocity estimation from sampled
//! positions, and coordinate normalization against a calibration.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{PhaseState, SimParams, StepPlan};
use crate::error::{Error, Result};
use crate::protocol::ProtocolSchedule;

/// Sampled time series of one protocol realization. Positions are stored in
/// meters on a uniform time grid; velocities are filled in by
/// [`estimate_velocity`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Sampled positions (m).
    pub z: Vec<f64>,
    /// Estimated velocities (m/s), once computed.
    pub v: Option<Vec<f64>>,
    /// Sample interval (s).
    pub sample_dt: f64,
    /// Index of the first sample at or after the switch into the inverted
    /// stage.
    pub switch_index: usize,
    /// RNG seed of this realization.
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn n_samples(&self) -> usize {
        self.z.len()
    }

    /// Time of sample `i` from the start of the record (s).
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.sample_dt
    }

    /// Boundary samples carry one-sided velocity estimates and are excluded
    /// from analysis.
    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.z.len()
    }

    /// Central-difference velocity at an interior sample, without requiring
    /// the full velocity array.
    pub fn velocity_at(&self, i: usize) -> Option<f64> {
        if i == 0 || i + 1 >= self.z.len() {
            return None;
        }
        Some((self.z[i + 1] - self.z[i - 1]) / (2.0 * self.sample_dt))
    }
}

/// Fill the velocity estimate of a record: central differences at interior
/// samples, one-sided differences at the two boundary samples.
pub fn estimate_velocity(record: &mut TrajectoryRecord) -> Result<()> {
    let n = record.z.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "velocity estimation needs at least 3 samples, got {n}"
        )));
    }
    let dt = record.sample_dt;
    let z = &record.z;
    let mut v = Vec::with_capacity(n);
    v.push((z[1] - z[0]) / dt);
    for i in 1..n - 1 {
        v.push((z[i + 1] - z[i - 1]) / (2.0 * dt));
    }
    v.push((z[n - 1] - z[n - 2]) / dt);
    record.v = Some(v);
    Ok(())
}

/// Normalization scales determined from calibration data: the oscillation
/// frequency and the equilibrium position/velocity variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Oscillation frequency from the spectral peak (rad/s).
    pub omega_psd: f64,
    /// Equilibrium position variance ϑ_zz (m²).
    pub var_z: f64,
    /// Equilibrium velocity variance ϑ_vv (m²/s²).
    pub var_v: f64,
    /// Detector conversion (m/V) for ingested voltage data.
    pub detector_gain: Option<f64>,
}

impl Calibration {
    /// Theoretical thermal calibration of a parameter set.
    pub fn from_params(params: &SimParams) -> Self {
        Self {
            omega_psd: params.omega_c,
            var_z: params.var_z(),
            var_v: params.var_v(),
            detector_gain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var_z > 0.0 && self.var_z.is_finite()) {
            return Err(Error::Domain("calibration var_z must be positive".into()));
        }
        if !(self.var_v > 0.0 && self.var_v.is_finite()) {
            return Err(Error::Domain("calibration var_v must be positive".into()));
        }
        if !(self.omega_psd > 0.0 && self.omega_psd.is_finite()) {
            return Err(Error::Domain("calibration omega must be positive".into()));
        }
        Ok(())
    }

    /// var_v / (ω² var_z); unity for ideal thermal-equilibrium data.
    pub fn consistency_ratio(&self) -> f64 {
        self.var_v / (self.omega_psd * self.omega_psd * self.var_z)
    }

    pub fn normalize_state(&self, z: f64, v: f64) -> Vector2<f64> {
        Vector2::new(z / self.var_z.sqrt(), v / self.var_v.sqrt())
    }

    pub fn denormalize_state(&self, state: Vector2<f64>) -> (f64, f64) {
        (state[0] * self.var_z.sqrt(), state[1] * self.var_v.sqrt())
    }

    /// Scale a physical covariance matrix into normalized coordinates,
    /// θ̄_ij = θ_ij / √(ϑ_ii ϑ_jj).
    pub fn normalize_cov(&self, cov: Matrix2<f64>) -> Matrix2<f64> {
        let sz = self.var_z.sqrt();
        let sv = self.var_v.sqrt();
        Matrix2::new(
            cov[(0, 0)] / (sz * sz),
            cov[(0, 1)] / (sz * sv),
            cov[(1, 0)] / (sz * sv),
            cov[(1, 1)] / (sv * sv),
        )
    }
}

/// Sample mean and covariance of a phase-space ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub n: usize,
}

impl EnsembleStats {
    pub fn from_states(states: &[Vector2<f64>]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Degenerate("no states".into()));
        }
        let n = states.len() as f64;
        let mean = states.iter().sum::<Vector2<f64>>() / n;
        let mut cov = Matrix2::zeros();
        for s in states {
            let d = s - mean;
            cov += d * d.transpose();
        }
        cov /= (states.len().max(2) - 1) as f64;
        Ok(Self { mean, cov, n: states.len() })
    }

    /// Scale physical-unit statistics into normalized coordinates.
    pub fn normalized(&self, cal: &Calibration) -> EnsembleStats {
        EnsembleStats {
            mean: cal.normalize_state(self.mean[0], self.mean[1]),
            cov: cal.normalize_cov(self.cov),
            n: self.n,
        }
    }
}

/// How the initial phase-space state of each trajectory is drawn.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// Gaussian equilibrium of the trap at the given temperature (K).
    Thermal { temperature: f64 },
    /// One explicit state per trajectory.
    Explicit(Vec<PhaseState>),
}

fn draw_initial(
    init: &InitialState,
    params: &SimParams,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PhaseState> {
    match init {
        InitialState::Thermal { temperature } => {
            let sz = (params.k_b * temperature / (params.mass * params.omega_c * params.omega_c))
                .sqrt();
            let sv = (params.k_b * temperature / params.mass).sqrt();
            let gz: f64 = rng.sample(StandardNormal);
            let gv: f64 = rng.sample(StandardNormal);
            Ok(PhaseState::physical(gz * sz, gv * sv))
        }
        InitialState::Explicit(states) => {
            let state = states.get(index).ok_or_else(|| {
                Error::Config(format!(
                    "explicit initial states cover {} trajectories, index {index} requested",
                    states.len()
                ))
            })?;
            if state.normalized || !state.is_finite() {
                return Err(Error::Domain(
                    "explicit initial states must be finite physical-unit states".into(),
                ));
            }
            Ok(*state)
        }
    }
}

/// Generate an ensemble of independent trajectories. Each trajectory draws
/// its own RNG stream from `(master_seed, index)`, so results do not depend
/// on scheduling order and any prefix of an ensemble equals the ensemble of
/// that size.
pub fn generate_ensemble(
    params: &SimParams,
    schedule: &ProtocolSchedule,
    n_traj: usize,
    master_seed: u64,
    init: &InitialState,
    sample_rate: f64,
) -> Result<Vec<TrajectoryRecord>> {
    ensemble_map(params, schedule, n_traj, master_seed, init, sample_rate, |rec| rec)
}

/// Generate the same ensemble as [`generate_ensemble`] but fold every record
/// through `f` as soon as it is produced, keeping memory bounded by the
/// mapped output. Results are collected in trajectory order.
pub fn ensemble_map<T, F>(
    params: &SimParams,
    schedule: &ProtocolSchedule,
    n_traj: usize,
    master_seed: u64,
    init: &InitialState,
    sample_rate: f64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(TrajectoryRecord) -> T + Sync,
{
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    if let InitialState::Thermal { temperature } = init {
        if !(temperature.is_finite() && *temperature >= 0.0) {
            return Err(Error::Config("initial temperature must be non-negative".into()));
        }
    }
    let plan = StepPlan::build(schedule, params, sample_rate)?;
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(i as u64);
            let initial = draw_initial(init, params, i, &mut rng)?;
            let samples = plan.run(initial, &mut rng);
            Ok(f(plan.record(samples, master_seed ^ i as u64)))
        })
        .collect()
}

/// Normalized phase-space states of every trajectory at one sample index.
/// The velocity is the central difference of neighboring samples, so the
/// index must be interior.
pub fn snapshot(
    records: &[TrajectoryRecord],
    index: usize,
    cal: &Calibration,
) -> Result<Vec<Vector2<f64>>> {
    cal.validate()?;
    records
        .iter()
        .map(|r| {
            let v = r.velocity_at(index).ok_or_else(|| {
                Error::Domain(format!(
                    "sample {index} is not interior to a record of {} samples",
                    r.n_samples()
                ))
            })?;
            Ok(cal.normalize_state(r.z[index], v))
        })
        .collect()
}

/// Like [`snapshot`], at a fractional sample index: positions are linearly
/// interpolated between neighboring samples before the central difference.
pub fn snapshot_fractional(
    records: &[TrajectoryRecord],
    frac_index: f64,
    cal: &Calibration,
) -> Result<Vec<Vector2<f64>>> {
    cal.validate()?;
    if !frac_index.is_finite() || frac_index < 1.0 {
        return Err(Error::Domain(format!("fractional index {frac_index} out of range")));
    }
    let base = frac_index.floor() as usize;
    let w = frac_index - base as f64;
    records
        .iter()
        .map(|r| {
            let n = r.n_samples();
            if base + 2 >= n {
                return Err(Error::Domain(format!(
                    "fractional index {frac_index} not interior to a record of {n} samples"
                )));
            }
            let interp = |i: usize| r.z[i] * (1.0 - w) + r.z[i + 1] * w;
            let z = interp(base);
            let v = (interp(base + 1) - interp(base - 1)) / (2.0 * r.sample_dt);
            Ok(cal.normalize_state(z, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DEFAULT_SAMPLE_RATE;
    use crate::protocol::build_schedule;
    use approx::assert_relative_eq;

    fn params() -> SimParams {
        SimParams { duffing_xi: 0.0, ..SimParams::default() }
    }

    fn short_trap_schedule(p: &SimParams) -> ProtocolSchedule {
        build_schedule(2e-6, 0.0, 0.0, p.omega_c, p.omega_i, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn thermal_initials_match_equilibrium_covariance() {
        let p = params();
        let schedule = short_trap_schedule(&p);
        let recs = generate_ensemble(
            &p,
            &schedule,
            10_000,
            12345,
            &InitialState::Thermal { temperature: 300.0 },
            DEFAULT_SAMPLE_RATE,
        )
        .unwrap();
        let cal = Calibration::from_params(&p);
        let states = snapshot(&recs, 1, &cal).unwrap();
        let stats = EnsembleStats::from_states(&states).unwrap();
        // One sample into a noiseless trap evolution the distribution is
        // still the rotated equilibrium Gaussian.
        assert_relative_eq!(stats.cov[(0, 0)], 1.0, max_relative = 0.05);
        assert_relative_eq!(stats.cov[(1, 1)], 1.0, max_relative = 0.05);
        assert!(stats.mean.norm() < 0.05);
    }

    #[test]
    fn explicit_single_trajectory_is_deterministic() {
        let mut p = params();
        p.temperature = 0.0;
        let schedule = short_trap_schedule(&p);
        let init = InitialState::Explicit(vec![PhaseState::physical(3e-9, 1e-4)]);
        let a = generate_ensemble(&p, &schedule, 1, 7, &init, DEFAULT_SAMPLE_RATE).unwrap();
        let b = generate_ensemble(&p, &schedule, 1, 7, &init, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(a[0].z, b[0].z);
    }

    #[test]
    fn ensemble_prefix_is_stable() {
        // Trajectory i depends only on (master_seed, i), not on n_traj.
        let mut p = params();
        p.gamma = 2.0 * std::f64::consts::PI * 3000.0;
        let schedule = short_trap_schedule(&p);
        let init = InitialState::Thermal { temperature: 300.0 };
        let small = generate_ensemble(&p, &schedule, 5, 99, &init, DEFAULT_SAMPLE_RATE).unwrap();
        let large = generate_ensemble(&p, &schedule, 50, 99, &init, DEFAULT_SAMPLE_RATE).unwrap();
        for i in 0..5 {
            assert_eq!(small[i].z, large[i].z, "trajectory {i} changed with ensemble size");
        }
    }

    #[test]
    fn velocity_of_linear_ramp_is_exact() {
        let mut rec = TrajectoryRecord {
            z: (0..50).map(|i| 2.0e-9 + 3.0e-4 * i as f64 * 1e-7).collect(),
            v: None,
            sample_dt: 1e-7,
            switch_index: 0,
            seed: 0,
        };
        estimate_velocity(&mut rec).unwrap();
        let v = rec.v.as_ref().unwrap();
        for i in 1..49 {
            assert_relative_eq!(v[i], 3.0e-4, max_relative = 1e-10);
        }
        assert!(rec.is_boundary(0) && rec.is_boundary(49) && !rec.is_boundary(10));
    }

    #[test]
    fn velocity_of_constant_record_is_zero() {
        let mut rec = TrajectoryRecord {
            z: vec![4.2e-9; 10],
            v: None,
            sample_dt: 1e-7,
            switch_index: 0,
            seed: 0,
        };
        estimate_velocity(&mut rec).unwrap();
        assert!(rec.v.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_needs_three_samples() {
        let mut rec = TrajectoryRecord {
            z: vec![0.0, 1.0],
            v: None,
            sample_dt: 1e-7,
            switch_index: 0,
            seed: 0,
        };
        assert!(estimate_velocity(&mut rec).is_err());
    }

    #[test]
    fn sinusoid_velocity_attenuation_and_phase() {
        // Central difference of A sin(Ωt): amplitude attenuated by
        // sin(ΩΔt)/(ΩΔt), phase untouched by the antisymmetric stencil.
        let omega = 2.0 * std::f64::consts::PI * 131_455.0;
        let dt = 1.0 / DEFAULT_SAMPLE_RATE;
        let amp = 5e-9;
        let n = 4000;
        let mut rec = TrajectoryRecord {
            z: (0..n).map(|i| amp * (omega * i as f64 * dt).sin()).collect(),
            v: None,
            sample_dt: dt,
            switch_index: 0,
            seed: 0,
        };
        estimate_velocity(&mut rec).unwrap();
        let v = rec.v.as_ref().unwrap();
        // The antisymmetric stencil maps A sin(Ωt) to exactly
        // A Ω (sin ΩΔt / ΩΔt) cos(Ωt): attenuated amplitude, zero phase lag.
        let att = (omega * dt).sin() / (omega * dt);
        let scale = amp * omega;
        let mut worst = 0.0f64;
        for i in 1..n - 1 {
            let t = i as f64 * dt;
            let expected = scale * att * (omega * t).cos();
            worst = worst.max((v[i] - expected).abs() / scale);
        }
        assert!(worst < 1e-10, "pointwise stencil error {worst}");
    }

    #[test]
    fn normalize_round_trip_and_correlation() {
        let p = params();
        let cal = Calibration::from_params(&p);
        let z = 3.2e-9;
        let v = -1.7e-4;
        let n = cal.normalize_state(z, v);
        let (z2, v2) = cal.denormalize_state(n);
        assert_relative_eq!(z2, z, max_relative = 1e-12);
        assert_relative_eq!(v2, v, max_relative = 1e-12);
        assert_relative_eq!(
            cal.normalize_state(cal.var_z.sqrt(), 0.0)[0],
            1.0,
            max_relative = 1e-12
        );

        // Correlation coefficients survive normalization.
        let cov = Matrix2::<f64>::new(2.0e-18, 3.0e-13, 3.0e-13, 4.0e-7);
        let r_raw = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        let nc = cal.normalize_cov(cov);
        let r_norm = nc[(0, 1)] / (nc[(0, 0)] * nc[(1, 1)]).sqrt();
        assert_relative_eq!(r_norm, r_raw, max_relative = 1e-12);
    }

    #[test]
    fn thermal_snapshot_normalizes_to_unit_variances() {
        let p = params();
        let schedule = short_trap_schedule(&p);
        let recs = generate_ensemble(
            &p,
            &schedule,
            20_000,
            5,
            &InitialState::Thermal { temperature: 300.0 },
            DEFAULT_SAMPLE_RATE,
        )
        .unwrap();
        let cal = Calibration::from_params(&p);
        let states = snapshot(&recs, 5, &cal).unwrap();
        let stats = EnsembleStats::from_states(&states).unwrap();
        assert_relative_eq!(stats.cov[(0, 0)], 1.0, max_relative = 0.04);
        // The central-difference velocity carries the sampling attenuation.
        let att = (p.omega_c / DEFAULT_SAMPLE_RATE).sin() / (p.omega_c / DEFAULT_SAMPLE_RATE);
        assert_relative_eq!(stats.cov[(1, 1)], att * att, max_relative = 0.04);
    }

    #[test]
    fn calibration_consistency_ratio_is_unity_for_theory() {
        let p = params();
        let cal = Calibration::from_params(&p);
        assert_relative_eq!(cal.consistency_ratio(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fractional_snapshot_interpolates() {
        let p = params();
        let cal = Calibration::from_params(&p);
        let rec = TrajectoryRecord {
            z: (0..10).map(|i| i as f64 * 1e-9).collect(),
            v: None,
            sample_dt: 1e-7,
            switch_index: 0,
            seed: 0,
        };
        let records = vec![rec];
        let s = snapshot_fractional(&records, 3.5, &cal).unwrap();
        assert_relative_eq!(s[0][0] * cal.var_z.sqrt(), 3.5e-9, max_relative = 1e-12);
        let exact = snapshot(&records, 4, &cal).unwrap();
        let frac = snapshot_fractional(&records, 4.0, &cal).unwrap();
        assert_relative_eq!(frac[0][0], exact[0][0], max_relative = 1e-12);
    }
}
