//! Run configuration: a TOML file with one section per subsystem. Every
//! field is validated against the library preconditions before a command
//! starts; failures name the offending field.

use serde::{Deserialize, Serialize};

use nmsa_core::dynamics::{sphere_mass, SimParams};
use nmsa_core::protocol::{build_schedule, NmsaClass, ProtocolSchedule};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Particle mass (kg); zero derives it from density and radius.
    pub mass_kg: f64,
    pub density_kg_m3: f64,
    pub radius_m: f64,
    pub temperature_k: f64,
    /// Momentum damping rate (rad/s), a direct input.
    pub gamma_rad_s: f64,
    pub freq_c_hz: f64,
    /// Ω_i / Ω_c.
    pub omega_ratio: f64,
    /// Cubic trap coefficient (1/m²).
    pub duffing_xi_m2: f64,
    /// One-sided PSD of extra white force noise (N²/Hz).
    pub recoil_psd: f64,
    /// Integrator step (s); zero picks a quarter of the sample interval.
    pub dt_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mass_kg: 0.0,
            density_kg_m3: 2200.0,
            radius_m: 150e-9,
            temperature_k: 300.0,
            gamma_rad_s: 2.0 * std::f64::consts::PI * 1000.0,
            freq_c_hz: 131_455.0,
            omega_ratio: 0.41,
            duffing_xi_m2: nmsa_core::dynamics::DEFAULT_DUFFING_XI,
            recoil_psd: 0.0,
            dt_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub tau1_s: f64,
    pub tau2_s: f64,
    pub tau3_s: f64,
    /// Displacement of the inverted-potential maximum (m).
    pub delta_m: f64,
    pub pre_window_s: f64,
    pub post_window_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            tau1_s: 0.0,
            tau2_s: 1.8e-6,
            tau3_s: 0.0,
            delta_m: 0.0,
            pre_window_s: 50e-6,
            post_window_s: 50e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub sample_rate_hz: f64,
    /// Temperature of the thermal initial state (K); zero copies
    /// sim.temperature_k.
    pub initial_temperature_k: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 165_000,
            master_seed: 1,
            sample_rate_hz: 9.76e6,
            initial_temperature_k: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostselectConfig {
    /// "gaussian" or "zero_cov".
    pub mode: String,
    pub mean: [f64; 2],
    /// Prescribed isotropic variance for the gaussian mode.
    pub theta0: f64,
    /// Nearest-point count for the zero-covariance mode.
    pub count: usize,
    /// Selection radius alternative; zero uses `count`.
    pub radius: f64,
    pub seed: u64,
}

impl Default for PostselectConfig {
    fn default() -> Self {
        Self {
            mode: "gaussian".into(),
            mean: [0.0, 0.0],
            theta0: 0.1,
            count: 300,
            radius: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfigFile {
    /// Upper edge of the τ₁ grid (s); zero spans one trap period.
    pub tau1_max_s: f64,
    pub tau3_max_s: f64,
    /// Grid step (s); zero uses the recording sample interval.
    pub step_s: f64,
    pub targets_radii: Vec<f64>,
    pub targets_per_circle: usize,
    pub select_count: usize,
    pub min_subset: usize,
    pub interpolate: bool,
}

impl Default for ScanConfigFile {
    fn default() -> Self {
        Self {
            tau1_max_s: 0.0,
            tau3_max_s: 0.0,
            step_s: 0.0,
            targets_radii: vec![0.5, 1.0, 1.5],
            targets_per_circle: 16,
            select_count: 50,
            min_subset: 10,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplifyConfig {
    /// Operating mode to amplify in; one of the four class names.
    pub timing: String,
    /// "ideal" (SVD-derived timings), "explicit" (tau1_s/tau3_s below) or
    /// "file" (a minima table written by `tune`).
    pub timing_source: String,
    pub tau1_s: f64,
    pub tau3_s: f64,
    pub timing_file: String,
    pub theta0_sweep: Vec<f64>,
    /// Ensemble size for this command; zero copies ensemble.n_trajectories.
    pub n_trajectories: usize,
    /// Constant force during the inverted stage (N); zero derives it from
    /// protocol.delta_m.
    pub force_fc_n: f64,
    /// Nodes per axis of the exported phase-space density grids.
    pub pdf_bins: usize,
    /// Radius of the initial-state circle for the distortion estimate.
    pub shd_radius: f64,
}

impl Default for AmplifyConfig {
    fn default() -> Self {
        Self {
            timing: NmsaClass::PositionNonInverting.name().into(),
            timing_source: "ideal".into(),
            tau1_s: 0.0,
            tau3_s: 0.0,
            timing_file: String::new(),
            theta0_sweep: vec![0.015, 0.03, 0.1, 0.3, 1.0],
            n_trajectories: 0,
            force_fc_n: 0.0,
            pdf_bins: 121,
            shd_radius: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Length of the synthetic equilibrium record when no input file is
    /// given.
    pub n_samples: usize,
    /// Welch segment length (samples).
    pub segment_len: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { n_samples: 1_000_000, segment_len: 1 << 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// "binary", "csv" or "none" for per-trajectory files.
    pub trajectory_format: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: "out".into(), trajectory_format: "binary".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub protocol: ProtocolConfig,
    pub ensemble: EnsembleConfig,
    pub postselect: PostselectConfig,
    pub scan: ScanConfigFile,
    pub amplify: AmplifyConfig,
    pub calibrate: CalibrateConfig,
    pub output: OutputConfig,
}

fn field_err(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {message}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn mass(&self) -> f64 {
        if self.sim.mass_kg > 0.0 {
            self.sim.mass_kg
        } else {
            sphere_mass(self.sim.density_kg_m3, self.sim.radius_m)
        }
    }

    pub fn sample_dt(&self) -> f64 {
        1.0 / self.ensemble.sample_rate_hz
    }

    pub fn dt(&self) -> f64 {
        if self.sim.dt_s > 0.0 {
            self.sim.dt_s
        } else {
            self.sample_dt() / 4.0
        }
    }

    pub fn initial_temperature(&self) -> f64 {
        if self.ensemble.initial_temperature_k > 0.0 {
            self.ensemble.initial_temperature_k
        } else {
            self.sim.temperature_k
        }
    }

    pub fn sim_params(&self) -> SimParams {
        let omega_c = std::f64::consts::TAU * self.sim.freq_c_hz;
        SimParams {
            mass: self.mass(),
            temperature: self.sim.temperature_k,
            gamma: self.sim.gamma_rad_s,
            omega_c,
            omega_i: self.sim.omega_ratio * omega_c,
            duffing_xi: self.sim.duffing_xi_m2,
            recoil_psd: self.sim.recoil_psd,
            dt: self.dt(),
            k_b: nmsa_core::dynamics::BOLTZMANN,
        }
    }

    /// The protocol schedule of this configuration, with the configured
    /// cubic coefficient applied to the trap stages.
    pub fn schedule(&self) -> Result<ProtocolSchedule, CliError> {
        let p = self.sim_params();
        let s = build_schedule(
            self.protocol.tau1_s,
            self.protocol.tau2_s,
            self.protocol.tau3_s,
            p.omega_c,
            p.omega_i,
            self.protocol.delta_m,
            self.protocol.pre_window_s,
            self.protocol.post_window_s,
        )
        .map_err(|e| field_err("protocol", e))?;
        Ok(s.with_duffing(self.sim.duffing_xi_m2))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("{v} must be positive")))
            }
        };
        let non_negative = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("{v} must be non-negative")))
            }
        };
        if self.sim.mass_kg == 0.0 {
            positive("sim.density_kg_m3", self.sim.density_kg_m3)?;
            positive("sim.radius_m", self.sim.radius_m)?;
        } else {
            positive("sim.mass_kg", self.sim.mass_kg)?;
        }
        non_negative("sim.temperature_k", self.sim.temperature_k)?;
        non_negative("sim.gamma_rad_s", self.sim.gamma_rad_s)?;
        positive("sim.freq_c_hz", self.sim.freq_c_hz)?;
        non_negative("sim.omega_ratio", self.sim.omega_ratio)?;
        non_negative("sim.recoil_psd", self.sim.recoil_psd)?;
        if self.sim.dt_s < 0.0 || !self.sim.dt_s.is_finite() {
            return Err(field_err("sim.dt_s", "must be zero (auto) or positive"));
        }
        non_negative("protocol.tau1_s", self.protocol.tau1_s)?;
        non_negative("protocol.tau2_s", self.protocol.tau2_s)?;
        non_negative("protocol.tau3_s", self.protocol.tau3_s)?;
        non_negative("protocol.pre_window_s", self.protocol.pre_window_s)?;
        non_negative("protocol.post_window_s", self.protocol.post_window_s)?;
        if self.ensemble.n_trajectories == 0 {
            return Err(field_err("ensemble.n_trajectories", "must be at least 1"));
        }
        positive("ensemble.sample_rate_hz", self.ensemble.sample_rate_hz)?;
        // The integrator guard, named after the field that caused it.
        let params = self.sim_params();
        if let Err(e) = params.validate() {
            return Err(field_err("sim.dt_s", e));
        }
        if self.ensemble.sample_rate_hz > 1.0 / params.dt * (1.0 + 1e-12) {
            return Err(field_err(
                "ensemble.sample_rate_hz",
                "exceeds the integrator rate 1/sim.dt_s",
            ));
        }
        match self.postselect.mode.as_str() {
            "gaussian" => positive("postselect.theta0", self.postselect.theta0)?,
            "zero_cov" => {
                if self.postselect.count == 0 && self.postselect.radius <= 0.0 {
                    return Err(field_err(
                        "postselect.count",
                        "zero_cov mode needs a count or a positive radius",
                    ));
                }
            }
            other => {
                return Err(field_err(
                    "postselect.mode",
                    format!("unknown mode {other:?}; use \"gaussian\" or \"zero_cov\""),
                ))
            }
        }
        non_negative("scan.tau1_max_s", self.scan.tau1_max_s)?;
        non_negative("scan.tau3_max_s", self.scan.tau3_max_s)?;
        non_negative("scan.step_s", self.scan.step_s)?;
        if self.scan.targets_radii.is_empty() || self.scan.targets_per_circle == 0 {
            return Err(field_err("scan.targets_radii", "needs at least one circle of targets"));
        }
        if self.scan.select_count == 0 {
            return Err(field_err("scan.select_count", "must be at least 1"));
        }
        if NmsaClass::parse(&self.amplify.timing).is_none() {
            return Err(field_err(
                "amplify.timing",
                format!("unknown operating mode {:?}", self.amplify.timing),
            ));
        }
        match self.amplify.timing_source.as_str() {
            "ideal" | "explicit" | "file" => {}
            other => {
                return Err(field_err(
                    "amplify.timing_source",
                    format!("unknown source {other:?}; use \"ideal\", \"explicit\" or \"file\""),
                ))
            }
        }
        if self.amplify.theta0_sweep.is_empty()
            || self.amplify.theta0_sweep.iter().any(|&t| !(t > 0.0))
        {
            return Err(field_err("amplify.theta0_sweep", "needs positive variances"));
        }
        if self.amplify.pdf_bins < 16 {
            return Err(field_err("amplify.pdf_bins", "needs at least 16 nodes"));
        }
        positive("amplify.shd_radius", self.amplify.shd_radius)?;
        if self.calibrate.segment_len < 8 || !self.calibrate.segment_len.is_power_of_two() {
            return Err(field_err("calibrate.segment_len", "must be a power of two >= 8"));
        }
        match self.output.trajectory_format.as_str() {
            "binary" | "csv" | "none" => {}
            other => {
                return Err(field_err(
                    "output.trajectory_format",
                    format!("unknown format {other:?}; use \"binary\", \"csv\" or \"none\""),
                ))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        // And a second round trip through the serializer is identical text.
        assert_eq!(text, back.to_toml());
    }

    #[test]
    fn dt_guard_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.sim.dt_s = 1e-4;
        let err = cfg.validate().unwrap_err();
        assert!(format!("{err}").contains("sim.dt_s"), "{err}");
    }

    #[test]
    fn mass_defaults_to_silica_sphere() {
        let cfg = RunConfig::default();
        assert!((cfg.mass() - 3.11e-17).abs() / 3.11e-17 < 0.01);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::parse("[sim]\nbogus = 1.0\n").unwrap_err();
        assert!(format!("{err}").contains("bogus"));
    }
}
