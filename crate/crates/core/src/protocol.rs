//! Amplifier schedules, ideal (noiseless) gain matrices, the short-time gain
//! approximation, force offsets and multi-stage chains.

use nalgebra::{Matrix2, Vector2};

use crate::dynamics::{
    analytic_propagator, PotentialKind, PotentialSpec, PropagatorMatrix, SimParams,
};
use crate::error::{Error, Result};

/// One stage of a protocol: the active potential and how long it is held.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub spec: PotentialSpec,
    pub duration: f64,
}

/// Ordered potential stages defining one amplifier run, embedded in trapping
/// windows before the first and after the last stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSchedule {
    pub stages: Vec<Stage>,
    pub pre_window: f64,
    pub post_window: f64,
}

impl ProtocolSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Schedule("schedule has no stages".into()));
        }
        if !(self.pre_window.is_finite() && self.pre_window >= 0.0) {
            return Err(Error::Schedule("pre_window must be non-negative".into()));
        }
        if !(self.post_window.is_finite() && self.post_window >= 0.0) {
            return Err(Error::Schedule("post_window must be non-negative".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            stage.spec.validate()?;
            if !(stage.duration.is_finite() && stage.duration >= 0.0) {
                return Err(Error::Schedule(format!(
                    "stage {i} duration {} must be non-negative",
                    stage.duration
                )));
            }
        }
        Ok(())
    }

    /// Sum of windows and stage durations (s).
    pub fn total_duration(&self) -> f64 {
        self.pre_window
            + self.post_window
            + self.stages.iter().map(|s| s.duration).sum::<f64>()
    }

    /// Time of the switch into the first inverted stage, measured from the
    /// start of the record (falls back to the end of the first stage when no
    /// inverted stage exists).
    pub fn step2_start(&self) -> f64 {
        let mut t = self.pre_window;
        for stage in &self.stages {
            if stage.spec.kind == PotentialKind::Ipp {
                return t;
            }
            t += stage.duration;
        }
        self.pre_window + self.stages[0].duration
    }

    /// Trap frequency of the first parabolic stage, if any.
    pub fn omega_c_ref(&self) -> Option<f64> {
        self.stages
            .iter()
            .find(|s| matches!(s.spec.kind, PotentialKind::Pp | PotentialKind::WeakPp))
            .map(|s| s.spec.omega)
    }

    /// Duration of the inverted stage, zero if absent.
    pub fn tau2(&self) -> f64 {
        self.stages
            .iter()
            .filter(|s| s.spec.kind == PotentialKind::Ipp)
            .map(|s| s.duration)
            .sum()
    }

    /// Apply a cubic trap coefficient to every parabolic stage.
    pub fn with_duffing(mut self, xi: f64) -> Self {
        for stage in &mut self.stages {
            stage.spec = stage.spec.with_duffing(xi);
        }
        self
    }
}

/// Build the canonical three-stage amplifier schedule: trapping for `tau1`,
/// inverted potential for `tau2` with its maximum displaced by `delta`,
/// trapping again for `tau3`, inside `pre`/`post` trapping windows.
#[allow(clippy::too_many_arguments)]
pub fn build_schedule(
    tau1: f64,
    tau2: f64,
    tau3: f64,
    omega_c: f64,
    omega_i: f64,
    delta: f64,
    pre: f64,
    post: f64,
) -> Result<ProtocolSchedule> {
    for (name, value) in [
        ("tau1", tau1),
        ("tau2", tau2),
        ("tau3", tau3),
        ("pre", pre),
        ("post", post),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Schedule(format!("{name} = {value} must be non-negative")));
        }
    }
    let schedule = ProtocolSchedule {
        stages: vec![
            Stage { spec: PotentialSpec::parabolic(omega_c), duration: tau1 },
            Stage { spec: PotentialSpec::inverted(omega_i, delta), duration: tau2 },
            Stage { spec: PotentialSpec::parabolic(omega_c), duration: tau3 },
        ],
        pre_window: pre,
        post_window: post,
    };
    schedule.validate()?;
    Ok(schedule)
}

fn stage_const_force(stage: &Stage, params: &SimParams) -> f64 {
    // Only a displaced inverted stage carries a constant force in the ideal
    // model; trap centers are the coordinate origin by construction.
    if stage.spec.kind == PotentialKind::Ipp && stage.spec.center != 0.0 {
        -params.mass * stage.spec.omega * stage.spec.omega * stage.spec.center
    } else {
        0.0
    }
}

/// Compose the exact noiseless propagators of the schedule's stages into one
/// normalized affine map. The drift collects the response to constant forces
/// acting in displaced inverted stages.
pub fn ideal_gain_matrix(
    schedule: &ProtocolSchedule,
    params: &SimParams,
) -> Result<PropagatorMatrix> {
    schedule.validate()?;
    let omega_c_ref = schedule.omega_c_ref().unwrap_or(params.omega_c);
    let mut total = PropagatorMatrix::identity();
    for stage in &schedule.stages {
        let p = analytic_propagator(
            stage.spec.kind,
            stage.spec.omega,
            stage.duration,
            omega_c_ref,
            stage_const_force(stage, params),
            params,
        )?;
        total = p.after(&total);
    }
    Ok(total)
}

/// Short-time gain magnitude |G| ≈ 1 + κ_pot τ̄₂ / 2 where κ_pot depends on
/// the stage potential: 1 + (Ω_i/Ω_c)² for the inverted potential,
/// 1 − (Ω/Ω_c)² for a parabolic one, 1 for free flight.
pub fn approx_gain(tau2_bar: f64, kind: PotentialKind, omega_ratio: f64) -> Result<f64> {
    if !(tau2_bar.is_finite() && tau2_bar >= 0.0) {
        return Err(Error::Domain(format!("tau2_bar = {tau2_bar} must be non-negative")));
    }
    if !omega_ratio.is_finite() || omega_ratio < 0.0 {
        return Err(Error::Domain("omega_ratio must be non-negative".into()));
    }
    Ok(1.0 + kappa_pot(kind, omega_ratio) * tau2_bar / 2.0)
}

/// κ_pot of the short-time gain expansion.
pub fn kappa_pot(kind: PotentialKind, omega_ratio: f64) -> f64 {
    match kind {
        PotentialKind::Ipp => 1.0 + omega_ratio * omega_ratio,
        PotentialKind::Pp | PotentialKind::WeakPp => 1.0 - omega_ratio * omega_ratio,
        PotentialKind::Free => 1.0,
    }
}

/// Offset response of the amplifier to a constant force during the inverted
/// stage.
#[derive(Debug, Clone, Copy)]
pub struct ForceOffset {
    /// Displacement of the inverted-potential maximum equivalent to the
    /// force, Δ = −F_c/(m Ω_i²). `None` when the stage has no stiffness.
    pub delta_equiv: Option<f64>,
    /// Final-state offset in normalized coordinates, independent of the
    /// initial state.
    pub offset: Vector2<f64>,
}

/// Offset produced by a constant force `f_c` (N) acting during the inverted
/// stage of `schedule`, propagated through the remaining stages.
pub fn force_offset(
    f_c: f64,
    schedule: &ProtocolSchedule,
    params: &SimParams,
) -> Result<ForceOffset> {
    if !f_c.is_finite() {
        return Err(Error::Domain("force is not finite".into()));
    }
    schedule.validate()?;
    let omega_c_ref = schedule.omega_c_ref().unwrap_or(params.omega_c);
    let ipp = schedule
        .stages
        .iter()
        .find(|s| s.spec.kind == PotentialKind::Ipp)
        .ok_or_else(|| Error::Schedule("schedule has no inverted stage".into()))?;
    let delta_equiv = if ipp.spec.omega > 0.0 {
        Some(-f_c / (params.mass * ipp.spec.omega * ipp.spec.omega))
    } else {
        None
    };
    let mut total = PropagatorMatrix::identity();
    for stage in &schedule.stages {
        let force = if stage.spec.kind == PotentialKind::Ipp { f_c } else { 0.0 };
        let p = analytic_propagator(
            stage.spec.kind,
            stage.spec.omega,
            stage.duration,
            omega_c_ref,
            force,
            params,
        )?;
        total = p.after(&total);
    }
    Ok(ForceOffset { delta_equiv, offset: total.drift })
}

/// n-fold chain of the schedule's ideal gain matrix, Mⁿ.
pub fn chain_gain(
    schedule: &ProtocolSchedule,
    n_stages: usize,
    params: &SimParams,
) -> Result<Matrix2<f64>> {
    if n_stages == 0 {
        return Err(Error::Domain("n_stages must be at least 1".into()));
    }
    let m = ideal_gain_matrix(schedule, params)?.m;
    let mut out = m;
    for _ in 1..n_stages {
        out = m * out;
    }
    Ok(out)
}

/// The four amplifier operating modes, classified by the fitted G_zz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NmsaClass {
    PositionNonInverting,
    PositionInverting,
    VelocityNonInverting,
    VelocityInverting,
}

impl NmsaClass {
    pub const ALL: [NmsaClass; 4] = [
        NmsaClass::PositionNonInverting,
        NmsaClass::PositionInverting,
        NmsaClass::VelocityNonInverting,
        NmsaClass::VelocityInverting,
    ];

    /// Classify by sign(G_zz) and |G_zz| ≷ 1.
    pub fn classify(g_zz: f64) -> Self {
        match (g_zz.abs() >= 1.0, g_zz >= 0.0) {
            (true, true) => NmsaClass::PositionNonInverting,
            (true, false) => NmsaClass::PositionInverting,
            (false, true) => NmsaClass::VelocityNonInverting,
            (false, false) => NmsaClass::VelocityInverting,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NmsaClass::PositionNonInverting => "position_noninverting",
            NmsaClass::PositionInverting => "position_inverting",
            NmsaClass::VelocityNonInverting => "velocity_noninverting",
            NmsaClass::VelocityInverting => "velocity_inverting",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

impl std::fmt::Display for NmsaClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One ideal operating point: trap-stage timings that diagonalize the
/// protocol's gain matrix, with the resulting signed position gain.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint {
    pub class: NmsaClass,
    pub tau1: f64,
    pub tau3: f64,
    /// Signed diagonal position gain G_zz at this point.
    pub gain: f64,
}

impl OperatingPoint {
    /// Quantize the timings to multiples of a recording sample interval,
    /// mirroring a detector-limited time grid.
    pub fn grid_quantized(&self, sample_dt: f64) -> OperatingPoint {
        OperatingPoint {
            tau1: (self.tau1 / sample_dt).round() * sample_dt,
            tau3: (self.tau3 / sample_dt).round() * sample_dt,
            ..*self
        }
    }
}

/// Timings of all four operating modes from the singular value decomposition
/// of the inverted-stage map: the trap rotations before and after the
/// inverted stage are chosen to align its principal axes with the coordinate
/// axes. Returns points ordered as [`NmsaClass::ALL`].
pub fn ideal_operating_points(
    omega_c: f64,
    omega_i: f64,
    tau2: f64,
    params: &SimParams,
) -> Result<[OperatingPoint; 4]> {
    if omega_c <= 0.0 {
        return Err(Error::Domain("omega_c must be positive".into()));
    }
    let h = analytic_propagator(PotentialKind::Ipp, omega_i, tau2, omega_c, 0.0, params)?.m;
    let svd = h.svd(true, true);
    let mut u = svd.u.expect("2x2 svd");
    let mut v_t = svd.v_t.expect("2x2 svd");
    let sigma = svd.singular_values;
    let (s_max, s_min) = (sigma[0].max(sigma[1]), sigma[0].min(sigma[1]));
    // Put the large singular value first.
    if sigma[0] < sigma[1] {
        u = u * Matrix2::new(0.0, 1.0, 1.0, 0.0);
        v_t = Matrix2::new(0.0, 1.0, 1.0, 0.0) * v_t;
    }
    // Force both factors to be proper rotations; det h = +1 guarantees the
    // two determinants agree, so one joint sign flip fixes both.
    if u.determinant() < 0.0 {
        u.column_mut(1).neg_mut();
        v_t.row_mut(1).neg_mut();
    }
    // Our propagators rotate clockwise: R(θ) = [[cos θ, sin θ], [−sin θ, cos θ]].
    // R(θ3)·H·R(θ1) = Σ requires R(θ3) = Uᵀ and R(θ1) = V.
    let mut theta3 = f64::atan2(u[(1, 0)], u[(0, 0)]);
    let mut theta1 = f64::atan2(v_t[(1, 0)], v_t[(0, 0)]);
    let tau = std::f64::consts::TAU;
    // The joint sign of the singular vector pair is free; fix it so the
    // first-stage rotation is the shorter one.
    if theta1.rem_euclid(tau) >= std::f64::consts::PI {
        theta1 -= std::f64::consts::PI;
        theta3 -= std::f64::consts::PI;
    }
    let quarter = std::f64::consts::FRAC_PI_2;
    let half = std::f64::consts::PI;
    let point = |class: NmsaClass, d1: f64, d3: f64, gain: f64| OperatingPoint {
        class,
        tau1: (theta1 + d1).rem_euclid(tau) / omega_c,
        tau3: (theta3 + d3).rem_euclid(tau) / omega_c,
        gain,
    };
    Ok([
        point(NmsaClass::PositionNonInverting, 0.0, 0.0, s_max),
        point(NmsaClass::PositionInverting, 0.0, half, -s_max),
        point(NmsaClass::VelocityNonInverting, quarter, quarter + half, s_min),
        point(NmsaClass::VelocityInverting, quarter, quarter, -s_min),
    ])
}
