//! Potentials, forces, exact noiseless phase-space propagators and the
//! stochastic integrator for the underdamped Langevin dynamics.
//!
//! The integrator is a kick–OU–kick splitting: each step applies the exact
//! linear flow of the active potential for half a step, an exact
//! Ornstein–Uhlenbeck update of the velocity (damping + thermal and recoil
//! noise), and the second half of the linear flow. Cubic trap nonlinearity
//! enters as impulse kicks wrapped around each half flow. In the linear
//! noiseless limit the scheme reproduces the analytic propagator to rounding,
//! and the thermal equilibrium it samples is unbiased at any step size.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::protocol::ProtocolSchedule;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Trap oscillation frequency of the reference experiment (Hz).
pub const DEFAULT_FREQ_C_HZ: f64 = 131_455.0;
/// Frequency ratio of the inverted potential to the trap.
pub const DEFAULT_OMEGA_RATIO: f64 = 0.41;
/// Duration of the inverted-potential stage (s).
pub const DEFAULT_TAU2: f64 = 1.8e-6;
/// Position-detector sampling rate (Hz).
pub const DEFAULT_SAMPLE_RATE: f64 = 9.76e6;
/// Excursion at which the trap force becomes noticeably nonlinear (m).
pub const NONLINEARITY_ONSET: f64 = 70e-9;
/// Cubic coefficient making the cubic force 10% of the linear force at the
/// nonlinearity onset (1/m^2).
pub const DEFAULT_DUFFING_XI: f64 = 0.1 / (NONLINEARITY_ONSET * NONLINEARITY_ONSET);
/// Silica density used for the default particle mass (kg/m^3).
pub const SILICA_DENSITY: f64 = 2200.0;
/// Default particle radius (m).
pub const DEFAULT_RADIUS: f64 = 150e-9;

/// Mass of a sphere of the given density and radius.
pub fn sphere_mass(density: f64, radius: f64) -> f64 {
    density * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3)
}

/// Position/velocity pair of one particle at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    /// Position (m, or dimensionless when `normalized`).
    pub z: f64,
    /// Velocity (m/s, or dimensionless when `normalized`).
    pub v: f64,
    /// True when the coordinates were scaled by a recorded calibration.
    pub normalized: bool,
}

impl PhaseState {
    pub fn physical(z: f64, v: f64) -> Self {
        Self { z, v, normalized: false }
    }

    pub fn normalized(z: f64, v: f64) -> Self {
        Self { z, v, normalized: true }
    }

    pub fn is_finite(&self) -> bool {
        self.z.is_finite() && self.v.is_finite()
    }
}

/// All physical constants and noise rates defining the stochastic dynamics.
#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    /// Particle mass (kg).
    pub mass: f64,
    /// Bath temperature (K). Also the equilibrium temperature used for
    /// thermal initial states and normalization scales.
    pub temperature: f64,
    /// Momentum damping rate (1/s). Taken directly from configuration; the
    /// simulator does not derive it from gas pressure.
    pub gamma: f64,
    /// Trap angular frequency (rad/s).
    pub omega_c: f64,
    /// Inverted-potential angular frequency (rad/s).
    pub omega_i: f64,
    /// Cubic force coefficient (1/m^2); the force term is -m Ω² ξ (z-c)³.
    pub duffing_xi: f64,
    /// One-sided PSD of additional white force noise (N²/Hz), e.g. photon
    /// recoil. Zero disables it.
    pub recoil_psd: f64,
    /// Integrator step (s).
    pub dt: f64,
    /// Boltzmann constant (J/K); configurable for unit experiments.
    pub k_b: f64,
}

impl Default for SimParams {
    /// Parameters of the reference experiment: a 150 nm silica sphere in a
    /// 131.455 kHz trap at room temperature, inverted potential at 0.41 of
    /// the trap frequency, four integrator steps per detector sample.
    fn default() -> Self {
        let omega_c = 2.0 * std::f64::consts::PI * DEFAULT_FREQ_C_HZ;
        Self {
            mass: sphere_mass(SILICA_DENSITY, DEFAULT_RADIUS),
            temperature: 300.0,
            gamma: 0.0,
            omega_c,
            omega_i: DEFAULT_OMEGA_RATIO * omega_c,
            duffing_xi: DEFAULT_DUFFING_XI,
            recoil_psd: 0.0,
            dt: 1.0 / DEFAULT_SAMPLE_RATE / 4.0,
            k_b: BOLTZMANN,
        }
    }
}

impl SimParams {
    /// Resolution guard: the trap phase advance per step must stay below this.
    pub const MAX_OMEGA_DT: f64 = 0.1;

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.temperature,
            self.gamma,
            self.omega_c,
            self.omega_i,
            self.duffing_xi,
            self.recoil_psd,
            self.dt,
            self.k_b,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("simulation parameter is not finite".into()));
        }
        if self.mass <= 0.0 {
            return Err(Error::Config("mass must be positive".into()));
        }
        if self.temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be non-negative".into()));
        }
        if self.omega_c <= 0.0 {
            return Err(Error::Config("omega_c must be positive".into()));
        }
        if self.omega_i < 0.0 {
            return Err(Error::Config("omega_i must be non-negative".into()));
        }
        if self.recoil_psd < 0.0 {
            return Err(Error::Config("recoil_psd must be non-negative".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.k_b <= 0.0 {
            return Err(Error::Config("k_b must be positive".into()));
        }
        if self.omega_c * self.dt >= Self::MAX_OMEGA_DT {
            return Err(Error::Config(format!(
                "dt too coarse: omega_c*dt = {:.3} must be < {}",
                self.omega_c * self.dt,
                Self::MAX_OMEGA_DT
            )));
        }
        Ok(())
    }

    /// Thermal equilibrium position variance k_B T / (m Ω_c²) (m²).
    pub fn var_z(&self) -> f64 {
        self.k_b * self.temperature / (self.mass * self.omega_c * self.omega_c)
    }

    /// Thermal equilibrium velocity variance k_B T / m (m²/s²).
    pub fn var_v(&self) -> f64 {
        self.k_b * self.temperature / self.mass
    }
}

/// Shape of one stage potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// Trapping parabolic potential: restoring force about `center`.
    Pp,
    /// Weak parabolic potential: restoring, lower frequency.
    WeakPp,
    /// Inverted parabolic potential: repulsive about `center`.
    Ipp,
    /// No force.
    Free,
}

/// One stage potential: kind, stiffness, extremum position and cubic term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Angular frequency (rad/s); ignored for `Free`.
    pub omega: f64,
    /// Potential extremum position (m).
    pub center: f64,
    /// Cubic force coefficient (1/m²); applies to parabolic kinds only.
    pub duffing_xi: f64,
}

impl PotentialSpec {
    pub fn parabolic(omega: f64) -> Self {
        Self { kind: PotentialKind::Pp, omega, center: 0.0, duffing_xi: 0.0 }
    }

    pub fn inverted(omega: f64, center: f64) -> Self {
        Self { kind: PotentialKind::Ipp, omega, center, duffing_xi: 0.0 }
    }

    pub fn free() -> Self {
        Self { kind: PotentialKind::Free, omega: 0.0, center: 0.0, duffing_xi: 0.0 }
    }

    pub fn with_duffing(mut self, xi: f64) -> Self {
        if matches!(self.kind, PotentialKind::Pp | PotentialKind::WeakPp) {
            self.duffing_xi = xi;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.center.is_finite() && self.duffing_xi.is_finite()) {
            return Err(Error::Domain("potential spec has non-finite field".into()));
        }
        if self.omega < 0.0 {
            return Err(Error::Domain("potential omega must be non-negative".into()));
        }
        Ok(())
    }

    fn is_parabolic(&self) -> bool {
        matches!(self.kind, PotentialKind::Pp | PotentialKind::WeakPp)
    }
}

/// Force (N) exerted by the stage potential at position `z`.
///
/// Parabolic kinds attract toward `center` with an optional cubic term,
/// the inverted kind repels from `center`, `Free` exerts nothing.
pub fn potential_force(spec: &PotentialSpec, z: f64, params: &SimParams) -> Result<f64> {
    spec.validate()?;
    if !z.is_finite() {
        return Err(Error::Domain(format!("position {z} is not finite")));
    }
    let u = z - spec.center;
    let w2 = spec.omega * spec.omega;
    Ok(match spec.kind {
        PotentialKind::Pp | PotentialKind::WeakPp => {
            -params.mass * w2 * (u + spec.duffing_xi * u * u * u)
        }
        PotentialKind::Ipp => params.mass * w2 * u,
        PotentialKind::Free => 0.0,
    })
}

/// Linear noiseless map on normalized coordinates (z̄, v̄) plus the drift a
/// constant force accumulates over the same interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorMatrix {
    pub m: Matrix2<f64>,
    pub drift: Vector2<f64>,
}

impl PropagatorMatrix {
    pub fn identity() -> Self {
        Self { m: Matrix2::identity(), drift: Vector2::zeros() }
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    /// `self` applied after `earlier`.
    pub fn after(&self, earlier: &PropagatorMatrix) -> Self {
        Self { m: self.m * earlier.m, drift: self.m * earlier.drift + self.drift }
    }

    pub fn apply(&self, state: Vector2<f64>) -> Vector2<f64> {
        self.m * state + self.drift
    }
}

/// Exact propagator of the linear noiseless dynamics over `duration`,
/// expressed on coordinates normalized with `omega_c_ref` and the thermal
/// scale of `params`. `const_force` (N) contributes the affine drift; the
/// matrix part is independent of it. `omega` is ignored for `Free`.
pub fn analytic_propagator(
    kind: PotentialKind,
    omega: f64,
    duration: f64,
    omega_c_ref: f64,
    const_force: f64,
    params: &SimParams,
) -> Result<PropagatorMatrix> {
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::Domain(format!("duration {duration} must be non-negative")));
    }
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(Error::Domain(format!("omega {omega} must be non-negative")));
    }
    if omega_c_ref <= 0.0 || !omega_c_ref.is_finite() {
        return Err(Error::Domain("omega_c_ref must be positive".into()));
    }
    if !const_force.is_finite() {
        return Err(Error::Domain("const_force is not finite".into()));
    }
    let oc = omega_c_ref;
    let a = const_force / params.mass;
    // Normalized drift scales: z by sqrt(var_z), v by omega_c*sqrt(var_z).
    let sz = params.var_z().sqrt() * (oc / params.omega_c);
    // An IPP with vanishing stiffness degenerates to force-free drift.
    let effective_kind = if omega == 0.0 && kind != PotentialKind::Free {
        PotentialKind::Free
    } else {
        kind
    };
    let (m, dz, dv) = match effective_kind {
        PotentialKind::Pp | PotentialKind::WeakPp => {
            let (s, c) = (omega * duration).sin_cos();
            let m = Matrix2::new(c, (oc / omega) * s, -(omega / oc) * s, c);
            (m, a / (omega * omega) * (1.0 - c), a / omega * s)
        }
        PotentialKind::Ipp => {
            let x = omega * duration;
            let (s, c) = (x.sinh(), x.cosh());
            let m = Matrix2::new(c, (oc / omega) * s, (omega / oc) * s, c);
            (m, a / (omega * omega) * (c - 1.0), a / omega * s)
        }
        PotentialKind::Free => {
            let m = Matrix2::new(1.0, oc * duration, 0.0, 1.0);
            (m, 0.5 * a * duration * duration, a * duration)
        }
    };
    let drift = if const_force == 0.0 {
        Vector2::zeros()
    } else if sz > 0.0 {
        Vector2::new(dz / sz, dv / (oc * sz))
    } else {
        return Err(Error::Domain(
            "normalized drift undefined: thermal scale is zero (T = 0)".into(),
        ));
    };
    Ok(PropagatorMatrix { m, drift })
}

/// Precomputed coefficients for one integrator step of length `h` in the
/// given stage potential.
#[derive(Debug, Clone, Copy)]
pub struct StepCoeffs {
    // Exact linear flow over h/2 in physical units, acting on (z - center, v).
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    center: f64,
    // Ω² ξ; zero disables the cubic kicks.
    cubic_k: f64,
    kick_weight: f64,
    ou_decay: f64,
    ou_sigma: f64,
}

impl StepCoeffs {
    pub fn new(spec: &PotentialSpec, params: &SimParams, h: f64) -> Self {
        let half = 0.5 * h;
        let (a11, a12, a21, a22) = match spec.kind {
            PotentialKind::Pp | PotentialKind::WeakPp => {
                let (s, c) = (spec.omega * half).sin_cos();
                (c, s / spec.omega, -spec.omega * s, c)
            }
            PotentialKind::Ipp if spec.omega > 0.0 => {
                let x = spec.omega * half;
                let (s, c) = (x.sinh(), x.cosh());
                (c, s / spec.omega, spec.omega * s, c)
            }
            _ => (1.0, half, 0.0, 1.0),
        };
        let cubic_k = if spec.is_parabolic() {
            spec.omega * spec.omega * spec.duffing_xi
        } else {
            0.0
        };
        let gamma = params.gamma;
        let sigma_tot_sq = 2.0 * gamma * params.k_b * params.temperature / params.mass
            + params.recoil_psd / (2.0 * params.mass * params.mass);
        // Exact OU variance over h; −expm1 keeps the small-γh limit accurate.
        let ou_var = if gamma > 0.0 {
            sigma_tot_sq * (-f64::exp_m1(-2.0 * gamma * h)) / (2.0 * gamma)
        } else {
            sigma_tot_sq * h
        };
        Self {
            a11,
            a12,
            a21,
            a22,
            center: spec.center,
            cubic_k,
            kick_weight: 0.25 * h,
            ou_decay: (-gamma * h).exp(),
            ou_sigma: ou_var.sqrt(),
        }
    }

    pub fn has_noise(&self) -> bool {
        self.ou_sigma > 0.0
    }

    #[inline]
    fn half_flow(&self, z: &mut f64, v: &mut f64) {
        if self.cubic_k != 0.0 {
            let u = *z - self.center;
            *v -= self.cubic_k * u * u * u * self.kick_weight;
        }
        let u = *z - self.center;
        let (u2, v2) = (self.a11 * u + self.a12 * *v, self.a21 * u + self.a22 * *v);
        *z = u2 + self.center;
        *v = v2;
        if self.cubic_k != 0.0 {
            let u = *z - self.center;
            *v -= self.cubic_k * u * u * u * self.kick_weight;
        }
    }

    /// One full step: half flow, exact OU velocity update with the supplied
    /// standard-normal draw, half flow.
    #[inline]
    pub fn apply(&self, z: &mut f64, v: &mut f64, noise: f64) {
        self.half_flow(z, v);
        *v = self.ou_decay * *v + self.ou_sigma * noise;
        self.half_flow(z, v);
    }
}

/// One step of the underdamped Langevin dynamics
/// m dv = F(z) dt − m γ v dt + √(2 m γ k_B T) dW + √(recoil_psd/2) dW′.
///
/// `noise` is a standard-normal draw; both white-noise sources merge into a
/// single Gaussian increment. The step length is `params.dt`.
pub fn sde_step(
    state: &PhaseState,
    spec: &PotentialSpec,
    params: &SimParams,
    noise: f64,
) -> Result<PhaseState> {
    params.validate()?;
    spec.validate()?;
    if state.normalized {
        return Err(Error::Domain("sde_step expects a physical-unit state".into()));
    }
    if !state.is_finite() {
        return Err(Error::Domain("state is not finite".into()));
    }
    let coeffs = StepCoeffs::new(spec, params, params.dt);
    let (mut z, mut v) = (state.z, state.v);
    coeffs.apply(&mut z, &mut v, noise);
    Ok(PhaseState::physical(z, v))
}

enum PlanOp {
    Step(StepCoeffs),
    Sample,
}

/// Precompiled integration schedule shared by every trajectory of an
/// ensemble: step coefficients in stage order with sample emissions merged in.
pub(crate) struct StepPlan {
    ops: Vec<PlanOp>,
    n_samples: usize,
    sample_dt: f64,
    switch_index: usize,
}

impl StepPlan {
    pub(crate) fn build(
        schedule: &ProtocolSchedule,
        params: &SimParams,
        sample_rate: f64,
    ) -> Result<StepPlan> {
        params.validate()?;
        schedule.validate()?;
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let sample_dt = 1.0 / sample_rate;
        if sample_dt < params.dt * (1.0 - 1e-12) {
            return Err(Error::Config(
                "sample_rate exceeds the integrator rate 1/dt".into(),
            ));
        }
        let total = schedule.total_duration();
        let eps = 1e-9 * sample_dt;

        // Contiguous segments: pre-window in the first stage potential, the
        // stages themselves, post-window in the last stage potential.
        let mut segments: Vec<(PotentialSpec, f64)> = Vec::new();
        let first_spec = schedule.stages[0].spec;
        let last_spec = schedule.stages[schedule.stages.len() - 1].spec;
        if schedule.pre_window > 0.0 {
            segments.push((first_spec, schedule.pre_window));
        }
        for stage in &schedule.stages {
            if stage.duration > 0.0 {
                segments.push((stage.spec, stage.duration));
            }
        }
        if schedule.post_window > 0.0 {
            segments.push((last_spec, schedule.post_window));
        }
        if segments.is_empty() {
            return Err(Error::Schedule("schedule has zero total duration".into()));
        }

        let n_samples = (total / sample_dt + eps).floor() as usize + 1;
        let switch_time = schedule.step2_start();
        let switch_index = (0..n_samples)
            .find(|&k| k as f64 * sample_dt >= switch_time - eps)
            .unwrap_or(n_samples - 1);

        let mut ops = Vec::new();
        let mut seg_idx = 0usize;
        let mut seg_end: f64 = segments[0].1;
        let mut t = 0.0f64;
        let push_steps = |ops: &mut Vec<PlanOp>, spec: &PotentialSpec, from: f64, to: f64| {
            let len = to - from;
            if len <= eps {
                return;
            }
            let n_sub = (len / params.dt - 1e-9).ceil().max(1.0) as usize;
            let h = len / n_sub as f64;
            let coeffs = StepCoeffs::new(spec, params, h);
            for _ in 0..n_sub {
                ops.push(PlanOp::Step(coeffs));
            }
        };
        for k in 0..n_samples {
            let target = k as f64 * sample_dt;
            while t < target - eps {
                let stop = target.min(seg_end);
                push_steps(&mut ops, &segments[seg_idx].0, t, stop);
                t = stop;
                if t >= seg_end - eps && seg_idx + 1 < segments.len() {
                    seg_idx += 1;
                    seg_end += segments[seg_idx].1;
                }
            }
            ops.push(PlanOp::Sample);
        }
        Ok(StepPlan { ops, n_samples, sample_dt, switch_index })
    }

    /// Integrate one trajectory, returning the sampled positions.
    pub(crate) fn run(&self, initial: PhaseState, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut z = initial.z;
        let mut v = initial.v;
        let mut samples = Vec::with_capacity(self.n_samples);
        for op in &self.ops {
            match op {
                PlanOp::Step(c) => {
                    let noise: f64 = if c.has_noise() { rng.sample(StandardNormal) } else { 0.0 };
                    c.apply(&mut z, &mut v, noise);
                }
                PlanOp::Sample => samples.push(z),
            }
        }
        samples
    }

    pub(crate) fn record(&self, samples: Vec<f64>, seed: u64) -> TrajectoryRecord {
        TrajectoryRecord {
            z: samples,
            v: None,
            sample_dt: self.sample_dt,
            switch_index: self.switch_index,
            seed,
        }
    }
}

/// Integrate one stochastic trajectory through a protocol schedule, sampling
/// positions at `sample_rate` across the pre-window, all stages and the
/// post-window. Deterministic for a given `(seed, params, schedule)`.
pub fn evolve_trajectory(
    initial: PhaseState,
    schedule: &ProtocolSchedule,
    params: &SimParams,
    sample_rate: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    if initial.normalized {
        return Err(Error::Domain("evolve_trajectory expects a physical-unit state".into()));
    }
    if !initial.is_finite() {
        return Err(Error::Domain("initial state is not finite".into()));
    }
    let plan = StepPlan::build(schedule, params, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = plan.run(initial, &mut rng);
    Ok(plan.record(samples, seed))
}
