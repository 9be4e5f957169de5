//! Post-selection of trajectory subsets whose initial-time statistics match
//! a prescribed state: nearest-neighbor ("zero covariance") selection and
//! survivor-function resampling toward a prescribed Gaussian.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default number of nodes per axis of a reconstructed density grid.
pub const DEFAULT_GRID_BINS: usize = 201;

/// Budget of a zero-covariance selection: a point count or a radius in
/// normalized phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroCovBudget {
    /// Up to N points closest to the target.
    Nearest(usize),
    /// Every point within the given distance of the target.
    Radius(f64),
}

/// Trajectory indices selected around a target state, ascending.
#[derive(Debug, Clone)]
pub struct ZeroCovSelection {
    pub indices: Vec<usize>,
}

/// Select the trajectories whose states sit closest to `target` in
/// normalized phase space. Distance ties break by trajectory index.
pub fn select_zero_cov(
    states: &[Vector2<f64>],
    target: Vector2<f64>,
    budget: ZeroCovBudget,
) -> Result<ZeroCovSelection> {
    if states.is_empty() {
        return Err(Error::EmptySelection("ensemble is empty".into()));
    }
    if !(target[0].is_finite() && target[1].is_finite()) {
        return Err(Error::Domain("target state is not finite".into()));
    }
    let dist2 = |i: usize| (states[i] - target).norm_squared();
    let indices = match budget {
        ZeroCovBudget::Nearest(n) => {
            if n == 0 {
                return Err(Error::EmptySelection("requested zero points".into()));
            }
            let mut order: Vec<usize> = (0..states.len()).collect();
            let n = n.min(states.len());
            order.select_nth_unstable_by(n - 1, |&a, &b| {
                dist2(a).partial_cmp(&dist2(b)).unwrap().then(a.cmp(&b))
            });
            let mut picked = order[..n].to_vec();
            picked.sort_unstable();
            picked
        }
        ZeroCovBudget::Radius(r) => {
            if !(r >= 0.0) {
                return Err(Error::Domain("radius must be non-negative".into()));
            }
            let r2 = r * r;
            let picked: Vec<usize> = (0..states.len()).filter(|&i| dist2(i) <= r2).collect();
            if picked.is_empty() {
                return Err(Error::EmptySelection(format!(
                    "no trajectory within radius {r} of the target"
                )));
            }
            picked
        }
    };
    Ok(ZeroCovSelection { indices })
}

/// Prescribed Gaussian initial state in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrescribedState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl PrescribedState {
    pub fn isotropic(mean: Vector2<f64>, variance: f64) -> Self {
        Self { mean, cov: Matrix2::new(variance, 0.0, 0.0, variance) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean[0].is_finite() && self.mean[1].is_finite()) {
            return Err(Error::Domain("prescribed mean is not finite".into()));
        }
        let c = self.cov;
        if (c[(0, 1)] - c[(1, 0)]).abs() > 1e-12 * (c[(0, 0)].abs() + c[(1, 1)].abs()).max(1e-300)
        {
            return Err(Error::Domain("prescribed covariance is not symmetric".into()));
        }
        if !(c[(0, 0)] > 0.0 && c.determinant() > 0.0) {
            return Err(Error::Domain("prescribed covariance is not positive definite".into()));
        }
        Ok(())
    }
}

/// Probability density sampled on a regular phase-space grid.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    /// Node coordinates along z̄ (ascending, uniform).
    pub z_axis: Vec<f64>,
    /// Node coordinates along v̄ (ascending, uniform).
    pub v_axis: Vec<f64>,
    /// Density values, row-major: `values[iz * v_axis.len() + iv]`.
    pub values: Vec<f64>,
    /// Kernel bandwidth per axis.
    pub bandwidth: [f64; 2],
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        (self.z_axis[1] - self.z_axis[0]) * (self.v_axis[1] - self.v_axis[0])
    }

    /// Density integral over the grid; near one for a well-covered sample.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Bilinear interpolation; zero outside the grid.
    pub fn value_at(&self, z: f64, v: f64) -> f64 {
        let nz = self.z_axis.len();
        let nv = self.v_axis.len();
        let dz = self.z_axis[1] - self.z_axis[0];
        let dv = self.v_axis[1] - self.v_axis[0];
        let fz = (z - self.z_axis[0]) / dz;
        let fv = (v - self.v_axis[0]) / dv;
        if fz < 0.0 || fv < 0.0 || fz > (nz - 1) as f64 || fv > (nv - 1) as f64 {
            return 0.0;
        }
        let iz = (fz.floor() as usize).min(nz - 2);
        let iv = (fv.floor() as usize).min(nv - 2);
        let wz = fz - iz as f64;
        let wv = fv - iv as f64;
        let at = |a: usize, b: usize| self.values[a * nv + b];
        at(iz, iv) * (1.0 - wz) * (1.0 - wv)
            + at(iz + 1, iv) * wz * (1.0 - wv)
            + at(iz, iv + 1) * (1.0 - wz) * wv
            + at(iz + 1, iv + 1) * wz * wv
    }
}

fn silverman_bandwidth(spread: f64, n: usize) -> f64 {
    // Two-dimensional rule of thumb: h = σ n^(-1/6).
    spread * (n as f64).powf(-1.0 / 6.0)
}

/// Gaussian-kernel density estimate of a phase-space sample on a regular
/// grid covering the samples plus four bandwidths of margin. `bandwidth` of
/// `None` selects Silverman's rule per axis.
pub fn reconstruct_pdf(
    samples: &[Vector2<f64>],
    bandwidth: Option<[f64; 2]>,
) -> Result<DensityGrid> {
    reconstruct_pdf_with_bins(samples, bandwidth, DEFAULT_GRID_BINS)
}

/// [`reconstruct_pdf`] with an explicit grid resolution per axis.
pub fn reconstruct_pdf_with_bins(
    samples: &[Vector2<f64>],
    bandwidth: Option<[f64; 2]>,
    bins: usize,
) -> Result<DensityGrid> {
    if samples.len() < 2 {
        return Err(Error::Degenerate("need at least two samples".into()));
    }
    if bins < 16 {
        return Err(Error::Domain("grid needs at least 16 nodes per axis".into()));
    }
    let n = samples.len();
    let mut mins = [f64::INFINITY; 2];
    let mut maxs = [f64::NEG_INFINITY; 2];
    let mut mean = [0.0f64; 2];
    for s in samples {
        for a in 0..2 {
            if !s[a].is_finite() {
                return Err(Error::Domain("sample is not finite".into()));
            }
            mins[a] = mins[a].min(s[a]);
            maxs[a] = maxs[a].max(s[a]);
            mean[a] += s[a];
        }
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut bw = [0.0f64; 2];
    for a in 0..2 {
        let var =
            samples.iter().map(|s| (s[a] - mean[a]) * (s[a] - mean[a])).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(Error::Degenerate("samples have zero spread along an axis".into()));
        }
        bw[a] = match bandwidth {
            Some(b) => {
                if !(b[a] > 0.0) {
                    return Err(Error::Domain("bandwidth must be positive".into()));
                }
                b[a]
            }
            None => silverman_bandwidth(var.sqrt(), n),
        };
    }

    // Histogram with linear binning, then a separable Gaussian convolution.
    let margin = 4.0;
    let lo = [mins[0] - margin * bw[0], mins[1] - margin * bw[1]];
    let hi = [maxs[0] + margin * bw[0], maxs[1] + margin * bw[1]];
    let step = [(hi[0] - lo[0]) / (bins - 1) as f64, (hi[1] - lo[1]) / (bins - 1) as f64];
    let mut hist = vec![0.0f64; bins * bins];
    for s in samples {
        let fz = (s[0] - lo[0]) / step[0];
        let fv = (s[1] - lo[1]) / step[1];
        let iz = (fz.floor() as usize).min(bins - 2);
        let iv = (fv.floor() as usize).min(bins - 2);
        let wz = fz - iz as f64;
        let wv = fv - iv as f64;
        hist[iz * bins + iv] += (1.0 - wz) * (1.0 - wv);
        hist[(iz + 1) * bins + iv] += wz * (1.0 - wv);
        hist[iz * bins + iv + 1] += (1.0 - wz) * wv;
        hist[(iz + 1) * bins + iv + 1] += wz * wv;
    }

    let kernel = |bwa: f64, stepa: f64| -> Vec<f64> {
        let reach = (5.0 * bwa / stepa).ceil() as usize;
        (0..=reach)
            .map(|k| {
                let x = k as f64 * stepa / bwa;
                (-0.5 * x * x).exp() / (bwa * (std::f64::consts::TAU).sqrt())
            })
            .collect()
    };
    let kz = kernel(bw[0], step[0]);
    let kv = kernel(bw[1], step[1]);

    // Convolve along z (rows of constant v), then along v.
    let mut tmp = vec![0.0f64; bins * bins];
    for iz in 0..bins {
        for iv in 0..bins {
            let w = hist[iz * bins + iv];
            if w == 0.0 {
                continue;
            }
            for (k, &g) in kz.iter().enumerate() {
                if k == 0 {
                    tmp[iz * bins + iv] += w * g;
                } else {
                    if iz >= k {
                        tmp[(iz - k) * bins + iv] += w * g;
                    }
                    if iz + k < bins {
                        tmp[(iz + k) * bins + iv] += w * g;
                    }
                }
            }
        }
    }
    let mut values = vec![0.0f64; bins * bins];
    for iz in 0..bins {
        for iv in 0..bins {
            let w = tmp[iz * bins + iv];
            if w == 0.0 {
                continue;
            }
            for (k, &g) in kv.iter().enumerate() {
                if k == 0 {
                    values[iz * bins + iv] += w * g;
                } else {
                    if iv >= k {
                        values[iz * bins + iv - k] += w * g;
                    }
                    if iv + k < bins {
                        values[iz * bins + iv + k] += w * g;
                    }
                }
            }
        }
    }
    let norm = 1.0 / (n as f64 * step[0] * step[1]);
    for v in &mut values {
        *v *= norm * step[0] * step[1];
    }

    let axis = |lo: f64, step: f64| (0..bins).map(|i| lo + i as f64 * step).collect::<Vec<_>>();
    Ok(DensityGrid {
        z_axis: axis(lo[0], step[0]),
        v_axis: axis(lo[1], step[1]),
        values,
        bandwidth: bw,
    })
}

/// Per-trajectory survivor probabilities for a prescribed Gaussian.
#[derive(Debug, Clone)]
pub struct SurvivorProbs {
    /// Clamped acceptance probability of each trajectory.
    pub p: Vec<f64>,
    /// Fraction of trajectories whose raw probability exceeded one: the
    /// prescription asks for more density than the ensemble supplies there.
    pub clamped_fraction: f64,
    /// Set when the prescribed mean falls where the empirical density is
    /// nearly zero; yields will be poor.
    pub low_yield: bool,
}

/// Survivor probability of each trajectory: the prescribed Gaussian shape
/// (peak-normalized) divided by the empirical density renormalized to one at
/// the prescribed mean, clamped into [0, 1].
pub fn survivor_probabilities(
    states: &[Vector2<f64>],
    parent_pdf: &DensityGrid,
    prescribed: &PrescribedState,
) -> Result<SurvivorProbs> {
    prescribed.validate()?;
    let cov_inv = prescribed
        .cov
        .try_inverse()
        .ok_or_else(|| Error::Domain("prescribed covariance is singular".into()))?;
    let peak = parent_pdf.max_value();
    if peak <= 0.0 {
        return Err(Error::Degenerate("parent density is identically zero".into()));
    }
    let p0_at_mean = parent_pdf.value_at(prescribed.mean[0], prescribed.mean[1]);
    let low_yield = p0_at_mean < 0.01 * peak;
    let mut clamped = 0usize;
    let p: Vec<f64> = states
        .iter()
        .map(|s| {
            let d = s - prescribed.mean;
            let shape = (-0.5 * (d.transpose() * cov_inv * d)[0]).exp();
            let p0n = if p0_at_mean > 0.0 {
                (parent_pdf.value_at(s[0], s[1]) / p0_at_mean).min(1.0)
            } else {
                1.0
            };
            let raw = if p0n > 0.0 { shape / p0n } else { shape };
            if raw > 1.0 {
                clamped += 1;
            }
            raw.min(1.0)
        })
        .collect();
    Ok(SurvivorProbs {
        clamped_fraction: clamped as f64 / states.len().max(1) as f64,
        p,
        low_yield,
    })
}

/// Outcome of a survivor-function selection.
#[derive(Debug, Clone)]
pub struct GaussianSelection {
    pub indices: Vec<usize>,
    pub probs: SurvivorProbs,
}

/// Resample the ensemble toward a prescribed Gaussian initial state: each
/// trajectory survives with its survivor probability, drawn from an RNG
/// stream derived from `(seed, trajectory index)`.
pub fn select_gaussian(
    states: &[Vector2<f64>],
    parent_pdf: &DensityGrid,
    prescribed: &PrescribedState,
    seed: u64,
) -> Result<GaussianSelection> {
    let probs = survivor_probabilities(states, parent_pdf, prescribed)?;
    let indices: Vec<usize> = (0..states.len())
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng.gen::<f64>() < probs.p[i]
        })
        .collect();
    Ok(GaussianSelection { indices, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EnsembleStats;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn standard_normal_states(n: usize, seed: u64) -> Vec<Vector2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal))
            })
            .collect()
    }

    #[test]
    fn infinite_radius_selects_everything() {
        let states = standard_normal_states(500, 1);
        let sel =
            select_zero_cov(&states, Vector2::new(0.3, -0.2), ZeroCovBudget::Radius(f64::INFINITY))
                .unwrap();
        assert_eq!(sel.indices.len(), 500);
        let stats = EnsembleStats::from_states(&states).unwrap();
        let sub: Vec<_> = sel.indices.iter().map(|&i| states[i]).collect();
        let sub_stats = EnsembleStats::from_states(&sub).unwrap();
        assert_relative_eq!(sub_stats.mean[0], stats.mean[0]);
    }

    #[test]
    fn single_nearest_has_zero_spread() {
        let states = standard_normal_states(100, 2);
        let target = Vector2::new(1.0, 1.0);
        let sel = select_zero_cov(&states, target, ZeroCovBudget::Nearest(1)).unwrap();
        assert_eq!(sel.indices.len(), 1);
        let best = sel.indices[0];
        for (i, s) in states.iter().enumerate() {
            assert!(
                (s - target).norm_squared() >= (states[best] - target).norm_squared()
                    || i == best
            );
        }
    }

    #[test]
    fn nearest_selection_is_an_order_statistic() {
        let states = standard_normal_states(2000, 3);
        let target = Vector2::new(0.5, 0.0);
        let sel = select_zero_cov(&states, target, ZeroCovBudget::Nearest(40)).unwrap();
        let included: Vec<f64> =
            sel.indices.iter().map(|&i| (states[i] - target).norm()).collect();
        let max_in = included.iter().cloned().fold(0.0, f64::max);
        let min_out = (0..states.len())
            .filter(|i| !sel.indices.contains(i))
            .map(|i| (states[i] - target).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(max_in <= min_out, "max included {max_in} > min excluded {min_out}");
    }

    #[test]
    fn nearest_subset_covariance_is_tiny_on_large_thermal_ensemble() {
        // 300 nearest of 160k thermal points around (1, 0): the subset
        // covariance trace collapses well below the selection criterion.
        let states = standard_normal_states(160_000, 4);
        let sel =
            select_zero_cov(&states, Vector2::new(1.0, 0.0), ZeroCovBudget::Nearest(300)).unwrap();
        let sub: Vec<_> = sel.indices.iter().map(|&i| states[i]).collect();
        let stats = EnsembleStats::from_states(&sub).unwrap();
        let trace = stats.cov[(0, 0)] + stats.cov[(1, 1)];
        assert!(trace < 0.01, "covariance trace {trace}");
        assert_relative_eq!(stats.mean[0], 1.0, epsilon = 0.02);
        assert!(stats.mean[1].abs() < 0.02);
    }

    #[test]
    fn tiny_radius_gives_empty_selection_signal() {
        let states = standard_normal_states(100, 5);
        assert!(matches!(
            select_zero_cov(&states, Vector2::new(50.0, 50.0), ZeroCovBudget::Radius(1e-6)),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn kde_matches_analytic_normal() {
        let states = standard_normal_states(1_000_000, 6);
        let grid = reconstruct_pdf(&states, None).unwrap();
        let mut sup = 0.0f64;
        for (iz, &z) in grid.z_axis.iter().enumerate() {
            for (iv, &v) in grid.v_axis.iter().enumerate() {
                let analytic =
                    (-0.5 * (z * z + v * v)).exp() / std::f64::consts::TAU;
                let err = (grid.values[iz * grid.v_axis.len() + iv] - analytic).abs();
                sup = sup.max(err);
            }
        }
        assert!(sup < 0.01, "sup-norm error {sup}");
        assert!((grid.integral() - 1.0).abs() < 1e-3, "integral {}", grid.integral());
    }

    #[test]
    fn kde_rejects_degenerate_samples() {
        let states = vec![Vector2::new(1.0, 1.0); 2];
        assert!(matches!(reconstruct_pdf(&states, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn small_sample_kde_deviates_but_normalizes() {
        let states = standard_normal_states(200, 7);
        let grid = reconstruct_pdf(&states, None).unwrap();
        assert!((grid.integral() - 1.0).abs() < 1e-3);
        let mut sup = 0.0f64;
        for (iz, &z) in grid.z_axis.iter().enumerate() {
            for (iv, &v) in grid.v_axis.iter().enumerate() {
                let analytic = (-0.5 * (z * z + v * v)).exp() / std::f64::consts::TAU;
                sup = sup.max((grid.values[iz * grid.v_axis.len() + iv] - analytic).abs());
            }
        }
        // A 200-point reconstruction visibly misses the true density.
        assert!(sup > 0.005, "reconstruction suspiciously exact: {sup}");
    }

    #[test]
    fn self_prescription_keeps_nearly_everything() {
        // Prescribing the parent distribution itself (scaled to its own max)
        // makes every survivor probability one up to estimation noise.
        let states = standard_normal_states(30_000, 8);
        let grid = reconstruct_pdf(&states, None).unwrap();
        let prescribed = PrescribedState::isotropic(Vector2::zeros(), 1.0);
        let sel = select_gaussian(&states, &grid, &prescribed, 11).unwrap();
        let yield_frac = sel.indices.len() as f64 / states.len() as f64;
        assert!(yield_frac > 0.9, "yield {yield_frac}");
        let sub: Vec<_> = sel.indices.iter().map(|&i| states[i]).collect();
        let stats = EnsembleStats::from_states(&sub).unwrap();
        assert!(stats.mean.norm() < 0.03);
        assert_relative_eq!(stats.cov[(0, 0)], 1.0, max_relative = 0.06);
        assert_relative_eq!(stats.cov[(1, 1)], 1.0, max_relative = 0.06);
    }

    #[test]
    fn narrow_prescription_on_small_sample() {
        // 200-point parent, narrow prescribed variance along z: around a
        // third of the points survive and the subset keeps near-Gaussian
        // shape, with visible residual higher moments.
        let states = standard_normal_states(200, 9);
        let grid = reconstruct_pdf(&states, None).unwrap();
        let prescribed = PrescribedState {
            mean: Vector2::zeros(),
            cov: Matrix2::new(0.35 * 0.35, 0.0, 0.0, 1.0),
        };
        let sel = select_gaussian(&states, &grid, &prescribed, 4).unwrap();
        let n = sel.indices.len();
        assert!((40..=100).contains(&n), "survivors {n}");
        let zs: Vec<f64> = sel.indices.iter().map(|&i| states[i][0]).collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let m2 = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
        let m3 = zs.iter().map(|z| (z - mean).powi(3)).sum::<f64>() / n as f64;
        let m4 = zs.iter().map(|z| (z - mean).powi(4)).sum::<f64>() / n as f64;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        assert!(skew.abs() < 0.6, "skewness {skew}");
        assert!((1.8..=3.8).contains(&kurt), "kurtosis {kurt}");
    }

    #[test]
    fn prescribed_moments_are_reproduced() {
        let states = standard_normal_states(160_000, 10);
        let grid = reconstruct_pdf(&states, None).unwrap();
        for (var, mean) in [(0.015, Vector2::new(0.5, 0.5)), (0.1, Vector2::zeros())] {
            let prescribed = PrescribedState::isotropic(mean, var);
            let sel = select_gaussian(&states, &grid, &prescribed, 21).unwrap();
            assert!(sel.indices.len() >= 500, "survivors {}", sel.indices.len());
            let sub: Vec<_> = sel.indices.iter().map(|&i| states[i]).collect();
            let stats = EnsembleStats::from_states(&sub).unwrap();
            assert!((stats.mean - mean).norm() < 0.02, "mean {:?}", stats.mean);
            assert_relative_eq!(stats.cov[(0, 0)], var, max_relative = 0.2);
            assert_relative_eq!(stats.cov[(1, 1)], var, max_relative = 0.2);
        }
    }

    #[test]
    fn expected_yield_grows_with_prescribed_covariance() {
        let states = standard_normal_states(20_000, 12);
        let grid = reconstruct_pdf(&states, None).unwrap();
        let mean = Vector2::new(0.3, 0.1);
        let mut last = 0.0;
        for var in [0.01, 0.05, 0.2, 0.8] {
            let probs =
                survivor_probabilities(&states, &grid, &PrescribedState::isotropic(mean, var))
                    .unwrap();
            let expected: f64 = probs.p.iter().sum();
            assert!(
                expected >= last,
                "expected yield shrank: {expected} after {last} at var {var}"
            );
            last = expected;
        }
    }

    #[test]
    fn acceptance_frequencies_are_unbiased() {
        // Acceptance frequency of individual trajectories over many seeds
        // converges to the survivor probability within 3σ binomial error.
        let states = standard_normal_states(200, 13);
        let grid = reconstruct_pdf(&states, None).unwrap();
        let prescribed = PrescribedState::isotropic(Vector2::new(0.2, -0.4), 0.1);
        let probs = survivor_probabilities(&states, &grid, &prescribed).unwrap();
        let n_seeds = 2000;
        let mut counts = vec![0usize; states.len()];
        for seed in 0..n_seeds {
            let sel = select_gaussian(&states, &grid, &prescribed, seed).unwrap();
            for i in sel.indices {
                counts[i] += 1;
            }
        }
        // 3σ binomial envelope plus a discreteness allowance: with hundreds
        // of simultaneous checks the pure normal bound is overrun by the
        // granularity of tiny acceptance probabilities.
        for (i, &c) in counts.iter().enumerate() {
            let p = probs.p[i];
            let se = (p * (1.0 - p) / n_seeds as f64).sqrt();
            let freq = c as f64 / n_seeds as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se + 2.5 / n_seeds as f64,
                "trajectory {i}: freq {freq} vs p {p}"
            );
        }
    }

    #[test]
    fn clamping_and_low_yield_are_reported() {
        let states = standard_normal_states(5_000, 14);
        let grid = reconstruct_pdf(&states, None).unwrap();
        // A prescription far outside the populated region.
        let far = PrescribedState::isotropic(Vector2::new(8.0, 8.0), 0.05);
        let probs = survivor_probabilities(&states, &grid, &far).unwrap();
        assert!(probs.low_yield);
        // A wide prescription centered in a thin tail region demands more
        // density than the parent supplies beyond its mean and gets clamped.
        let displaced = PrescribedState::isotropic(Vector2::new(2.0, 2.0), 1.0);
        let probs = survivor_probabilities(&states, &grid, &displaced).unwrap();
        assert!(probs.clamped_fraction > 0.0, "clamped {}", probs.clamped_fraction);
    }
}
