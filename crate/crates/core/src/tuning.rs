//! Grid search over the trap-stage timings (τ₁, τ₃) that locates the four
//! amplifier operating points by minimizing the off-diagonal gain elements.
//!
//! For every τ₁ the ensemble is post-selected into zero-covariance subsets
//! around a set of initial target states; each (τ₁, τ₃) cell propagates the
//! subset means to the output time and fits one gain matrix over all
//! targets. The objective |G_zv| + |G_vz| is minimal where the amplified
//! quadrature aligns with a coordinate axis.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::ensemble::{snapshot, snapshot_fractional, Calibration, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::estimation::{fit_gain, GainEstimate};
use crate::postselect::{select_zero_cov, ZeroCovBudget};
use crate::protocol::{NmsaClass, ProtocolSchedule};

/// Targets and selection settings of a timing scan.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    /// Initial mean states to post-select around, in normalized coordinates.
    pub targets: Vec<Vector2<f64>>,
    /// Zero-covariance selection budget per target.
    pub budget: ZeroCovBudget,
    /// Targets with fewer selected trajectories than this are skipped.
    pub min_subset: usize,
    /// Evaluate off-sample grid times by linear interpolation of the
    /// records instead of snapping to the nearest sample.
    pub interpolate: bool,
    /// Local minima with a larger objective are not reported.
    pub max_minimum_objective: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            targets: default_targets(&[0.5, 1.0, 1.5], 16),
            budget: ZeroCovBudget::Nearest(50),
            min_subset: 10,
            interpolate: false,
            max_minimum_objective: 0.5,
        }
    }
}

/// Concentric circles of initial target states with uniformly spaced angles.
pub fn default_targets(radii: &[f64], per_circle: usize) -> Vec<Vector2<f64>> {
    let mut targets = Vec::with_capacity(radii.len() * per_circle);
    for &r in radii {
        for k in 0..per_circle {
            let phi = std::f64::consts::TAU * k as f64 / per_circle as f64;
            targets.push(Vector2::new(r * phi.cos(), r * phi.sin()));
        }
    }
    targets
}

/// Grid of times aligned to the recording sample interval inside
/// `[t_min, t_max]`.
pub fn sample_aligned_grid(t_min: f64, t_max: f64, sample_dt: f64) -> Vec<f64> {
    let k0 = (t_min / sample_dt).ceil() as i64;
    let k1 = (t_max / sample_dt).floor() as i64;
    (k0..=k1).map(|k| k as f64 * sample_dt).collect()
}

/// One reported local minimum of the scan objective.
#[derive(Debug, Clone)]
pub struct ScanMinimum {
    pub i1: usize,
    pub i3: usize,
    pub tau1: f64,
    pub tau3: f64,
    pub objective: f64,
    pub gain: GainEstimate,
    pub class: NmsaClass,
}

/// Full scan output: the objective and gain on the (τ₁, τ₃) grid plus the
/// classified local minima.
#[derive(Debug, Clone)]
pub struct TimingScan {
    pub tau1_grid: Vec<f64>,
    pub tau3_grid: Vec<f64>,
    /// Row-major objective, indexed `[i1 * tau3_grid.len() + i3]`.
    pub objective: Vec<f64>,
    pub gains: Vec<GainEstimate>,
    pub minima: Vec<ScanMinimum>,
    /// Count of (τ₁, target) combinations skipped for insufficient subsets.
    pub skipped_targets: usize,
}

impl TimingScan {
    pub fn objective_at(&self, i1: usize, i3: usize) -> f64 {
        self.objective[i1 * self.tau3_grid.len() + i3]
    }

    pub fn gain_at(&self, i1: usize, i3: usize) -> &GainEstimate {
        &self.gains[i1 * self.tau3_grid.len() + i3]
    }

    /// Lowest-objective minimum of each class, ties broken by shortest
    /// (τ₁, τ₃); classes ordered as [`NmsaClass::ALL`].
    pub fn best_per_class(&self) -> Vec<ScanMinimum> {
        let mut out = Vec::new();
        for class in NmsaClass::ALL {
            let mut candidates: Vec<&ScanMinimum> =
                self.minima.iter().filter(|m| m.class == class).collect();
            candidates.sort_by(|a, b| {
                a.objective
                    .partial_cmp(&b.objective)
                    .unwrap()
                    .then(a.tau1.partial_cmp(&b.tau1).unwrap())
                    .then(a.tau3.partial_cmp(&b.tau3).unwrap())
            });
            if let Some(best) = candidates.first() {
                out.push((*best).clone());
            }
        }
        out
    }
}

fn states_at_time(
    records: &[TrajectoryRecord],
    t: f64,
    cal: &Calibration,
    interpolate: bool,
) -> Result<Vec<Vector2<f64>>> {
    let sample_dt = records[0].sample_dt;
    let f = t / sample_dt;
    if interpolate {
        snapshot_fractional(records, f, cal)
    } else {
        let i = f.round() as i64;
        if i < 1 {
            return Err(Error::Schedule(format!(
                "scan time {t} falls before the recorded window"
            )));
        }
        snapshot(records, i as usize, cal)
    }
}

/// Scan all (τ₁, τ₃) grid combinations around the fixed inverted stage of
/// `schedule` and fit one gain matrix per cell.
pub fn scan_timing(
    records: &[TrajectoryRecord],
    cal: &Calibration,
    schedule: &ProtocolSchedule,
    tau1_grid: &[f64],
    tau3_grid: &[f64],
    cfg: &ScanConfig,
) -> Result<TimingScan> {
    if records.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    if tau1_grid.is_empty() || tau3_grid.is_empty() {
        return Err(Error::Schedule("empty timing grid".into()));
    }
    if cfg.targets.len() < 3 {
        return Err(Error::Config("need at least 3 scan targets".into()));
    }
    cal.validate()?;
    let switch = schedule.step2_start();
    let restore = switch + schedule.tau2();
    let sample_dt = records[0].sample_dt;

    // Without interpolation each grid time snaps to the nearest recorded
    // sample; report the timings actually evaluated.
    let snap = |anchor: f64, signed: f64| -> f64 {
        if cfg.interpolate {
            signed
        } else {
            let t = anchor + signed;
            (t / sample_dt).round() * sample_dt - anchor
        }
    };
    let tau1_grid: Vec<f64> = tau1_grid.iter().map(|&t| -snap(switch, -t)).collect();
    let tau3_grid: Vec<f64> = tau3_grid.iter().map(|&t| snap(restore, t)).collect();
    let n3 = tau3_grid.len();

    // Output-side snapshots are shared by every τ₁ row.
    let col_states: Vec<Vec<Vector2<f64>>> = tau3_grid
        .par_iter()
        .map(|&tau3| states_at_time(records, restore + tau3, cal, cfg.interpolate))
        .collect::<Result<_>>()?;

    struct Row {
        gains: Vec<GainEstimate>,
        skipped: usize,
    }
    let rows: Vec<Row> = tau1_grid
        .par_iter()
        .map(|&tau1| -> Result<Row> {
            let t0 = switch - tau1;
            if t0 < 0.0 {
                return Err(Error::Schedule(format!(
                    "tau1 = {tau1} reaches before the recorded window"
                )));
            }
            let states0 = states_at_time(records, t0, cal, cfg.interpolate)?;
            let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(cfg.targets.len());
            let mut init_means = Vec::with_capacity(cfg.targets.len());
            let mut skipped = 0usize;
            for &target in &cfg.targets {
                match select_zero_cov(&states0, target, cfg.budget) {
                    Ok(sel) if sel.indices.len() >= cfg.min_subset.max(1) => {
                        let mean = sel.indices.iter().map(|&i| states0[i]).sum::<Vector2<f64>>()
                            / sel.indices.len() as f64;
                        init_means.push(mean);
                        subsets.push(sel.indices);
                    }
                    Ok(_) | Err(Error::EmptySelection(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if init_means.len() < 3 {
                return Err(Error::Degenerate(format!(
                    "only {} usable targets at tau1 = {tau1}",
                    init_means.len()
                )));
            }
            let mut gains = Vec::with_capacity(n3);
            for states3 in &col_states {
                let fin_means: Vec<Vector2<f64>> = subsets
                    .iter()
                    .map(|idx| {
                        idx.iter().map(|&i| states3[i]).sum::<Vector2<f64>>() / idx.len() as f64
                    })
                    .collect();
                gains.push(fit_gain(&init_means, &fin_means)?);
            }
            Ok(Row { gains, skipped })
        })
        .collect::<Result<_>>()?;

    let mut gains = Vec::with_capacity(tau1_grid.len() * n3);
    let mut skipped_targets = 0;
    for row in rows {
        skipped_targets += row.skipped;
        gains.extend(row.gains);
    }
    let objective: Vec<f64> = gains.iter().map(|g| g.off_diagonal_norm()).collect();

    // 8-neighbor local minima below the reporting threshold.
    let n1 = tau1_grid.len();
    let mut minima = Vec::new();
    for i1 in 1..n1.saturating_sub(1) {
        for i3 in 1..n3.saturating_sub(1) {
            let o = objective[i1 * n3 + i3];
            if o >= cfg.max_minimum_objective {
                continue;
            }
            let mut is_min = true;
            'outer: for d1 in -1i64..=1 {
                for d3 in -1i64..=1 {
                    if d1 == 0 && d3 == 0 {
                        continue;
                    }
                    let j1 = (i1 as i64 + d1) as usize;
                    let j3 = (i3 as i64 + d3) as usize;
                    if objective[j1 * n3 + j3] < o {
                        is_min = false;
                        break 'outer;
                    }
                }
            }
            if is_min {
                let gain = gains[i1 * n3 + i3].clone();
                minima.push(ScanMinimum {
                    i1,
                    i3,
                    tau1: tau1_grid[i1],
                    tau3: tau3_grid[i3],
                    objective: o,
                    class: NmsaClass::classify(gain.g[(0, 0)]),
                    gain,
                });
            }
        }
    }
    minima.sort_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap());

    Ok(TimingScan {
        tau1_grid: tau1_grid.to_vec(),
        tau3_grid: tau3_grid.to_vec(),
        objective,
        gains,
        minima,
        skipped_targets,
    })
}
