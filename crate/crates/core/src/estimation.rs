//! Gain-matrix and offset fitting, covariance propagation, and the amplifier
//! metrics: noise figure, force-sensing SNR and state harmonic distortion.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Fitted linear amplifier: final = G · initial + offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    /// 2×2 dimensionless gain matrix.
    pub g: Matrix2<f64>,
    /// Offset vector (z̄_F, v̄_F).
    pub offset: Vector2<f64>,
    /// Root-mean-square fit residual per output component.
    pub residual_rms: Vector2<f64>,
    /// Number of fitted point pairs.
    pub n_points: usize,
}

impl GainEstimate {
    /// Sum of the absolute off-diagonal gains, the tuning objective.
    pub fn off_diagonal_norm(&self) -> f64 {
        self.g[(0, 1)].abs() + self.g[(1, 0)].abs()
    }
}

/// Least-squares fit of the affine map final = G · initial + F over paired
/// mean states. Needs at least three pairs with non-collinear initial means.
pub fn fit_gain(
    initial_means: &[Vector2<f64>],
    final_means: &[Vector2<f64>],
) -> Result<GainEstimate> {
    if initial_means.len() != final_means.len() {
        return Err(Error::Domain("initial/final lists differ in length".into()));
    }
    let n = initial_means.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 point pairs, got {n}")));
    }
    // Normal equations over the augmented regressor (z, v, 1).
    let mut ata = Matrix3::zeros();
    let mut aty_z = Vector3::zeros();
    let mut aty_v = Vector3::zeros();
    for (x, y) in initial_means.iter().zip(final_means) {
        let row = Vector3::new(x[0], x[1], 1.0);
        ata += row * row.transpose();
        aty_z += y[0] * row;
        aty_v += y[1] * row;
    }
    // Scale-invariant rank check on the centered design.
    let nf = n as f64;
    let mean = Vector2::new(ata[(0, 2)] / nf, ata[(1, 2)] / nf);
    let cxx = ata[(0, 0)] / nf - mean[0] * mean[0];
    let cvv = ata[(1, 1)] / nf - mean[1] * mean[1];
    let cxv = ata[(0, 1)] / nf - mean[0] * mean[1];
    let det_c = cxx * cvv - cxv * cxv;
    if !(det_c > 1e-12 * (cxx + cvv).powi(2).max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(
            "initial means are collinear; the gain fit is rank deficient".into(),
        ));
    }
    let lu = ata.lu();
    let sol_z = lu
        .solve(&aty_z)
        .ok_or_else(|| Error::Degenerate("singular design matrix".into()))?;
    let sol_v = lu
        .solve(&aty_v)
        .ok_or_else(|| Error::Degenerate("singular design matrix".into()))?;
    let g = Matrix2::new(sol_z[0], sol_z[1], sol_v[0], sol_v[1]);
    let offset = Vector2::new(sol_z[2], sol_v[2]);
    let mut rss = Vector2::<f64>::zeros();
    for (x, y) in initial_means.iter().zip(final_means) {
        let r = y - (g * x + offset);
        rss[0] += r[0] * r[0];
        rss[1] += r[1] * r[1];
    }
    Ok(GainEstimate {
        g,
        offset,
        residual_rms: Vector2::new((rss[0] / nf).sqrt(), (rss[1] / nf).sqrt()),
        n_points: n,
    })
}

/// Offset estimate with the gain matrix held fixed: mean(final − G·initial).
pub fn offset_given_gain(
    initial_means: &[Vector2<f64>],
    final_means: &[Vector2<f64>],
    g: &Matrix2<f64>,
) -> Result<Vector2<f64>> {
    if initial_means.len() != final_means.len() || initial_means.is_empty() {
        return Err(Error::Domain("need equal-length non-empty lists".into()));
    }
    let sum: Vector2<f64> = initial_means
        .iter()
        .zip(final_means)
        .map(|(x, y)| y - g * x)
        .sum();
    Ok(sum / initial_means.len() as f64)
}

/// Covariance of the amplified state, Θ = G · Θ₀ · Gᵀ.
pub fn transform_covariance(g: &Matrix2<f64>, theta0: &Matrix2<f64>) -> Matrix2<f64> {
    g * theta0 * g.transpose()
}

/// Noise figure of the amplified coordinate,
/// NF = 1 + N̄_a / (G² θ̄₀zz).
pub fn noise_figure(theta0_zz: f64, g: f64, added: f64) -> Result<f64> {
    if !(theta0_zz > 0.0 && theta0_zz.is_finite()) {
        return Err(Error::Domain(format!("theta0_zz = {theta0_zz} must be positive")));
    }
    if g == 0.0 || !g.is_finite() {
        return Err(Error::Domain("gain must be nonzero".into()));
    }
    Ok(1.0 + added / (g * g * theta0_zz))
}

/// Noise figure in decibels.
pub fn nf_db(nf: f64) -> f64 {
    10.0 * nf.log10()
}

/// One point of an input-noise sweep: prescribed input variance, measured
/// noise figure, and a fit weight (subset size).
#[derive(Debug, Clone, Copy)]
pub struct NfPoint {
    pub theta0: f64,
    pub nf: f64,
    pub weight: f64,
}

/// Invert the noise-figure law over an input-noise sweep: weighted
/// least-squares of NF − 1 = N̄_a / (G² θ̄₀) through the origin.
pub fn fit_added_noise(points: &[NfPoint], g: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Degenerate("no sweep points".into()));
    }
    if g == 0.0 || !g.is_finite() {
        return Err(Error::Domain("gain must be nonzero".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for p in points {
        if !(p.theta0 > 0.0) {
            return Err(Error::Domain(format!("theta0 = {} must be positive", p.theta0)));
        }
        if !(p.weight >= 0.0) {
            return Err(Error::Domain("weights must be non-negative".into()));
        }
        let x = 1.0 / (g * g * p.theta0);
        num += p.weight * x * (p.nf - 1.0);
        den += p.weight * x * x;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    Ok(num / den)
}

/// Signal-to-noise ratio of a force measurement through the amplifier,
/// SNR_F = z̄_F² / (G² θ̄₀zz + N̄_a).
pub fn snr_force(offset_z: f64, g: f64, theta0_zz: f64, added: f64) -> Result<f64> {
    let denom = g * g * theta0_zz + added;
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Domain(format!("SNR denominator {denom} must be positive")));
    }
    Ok(offset_z * offset_z / denom)
}

/// State harmonic distortion: the relative power of harmonics k ≥ 2 in the
/// amplified coordinate as a function of the initial phase angle,
/// √(Σ_{k≥2} (a_k² + b_k²) / (a_1² + b_1²)).
///
/// Angles must cover at least one full circle with 16 or more uniformly
/// spaced points.
pub fn shd(angles: &[f64], amplified: &[f64]) -> Result<f64> {
    let n = angles.len();
    if n < 16 {
        return Err(Error::Domain(format!("need at least 16 angles, got {n}")));
    }
    if amplified.len() != n {
        return Err(Error::Domain("angles/values differ in length".into()));
    }
    let mut sorted = angles.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = sorted[n - 1] - sorted[0];
    let step = std::f64::consts::TAU / n as f64;
    if span < std::f64::consts::TAU - 1.5 * step {
        return Err(Error::Domain("angles do not cover a full circle".into()));
    }
    for w in sorted.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-6 * step.max(1e-12) {
            return Err(Error::Domain("angles must be uniformly spaced".into()));
        }
    }
    let harmonic = |k: usize| -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for (&phi, &y) in angles.iter().zip(amplified) {
            a += y * (k as f64 * phi).cos();
            b += y * (k as f64 * phi).sin();
        }
        (2.0 * a / n as f64, 2.0 * b / n as f64)
    };
    let (a1, b1) = harmonic(1);
    let fundamental = a1 * a1 + b1 * b1;
    let total: f64 = amplified.iter().map(|y| y * y).sum::<f64>() / n as f64;
    if fundamental <= 1e-24 * total.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("vanishing fundamental harmonic".into()));
    }
    let k_max = (n - 1) / 2;
    let mut higher = 0.0;
    for k in 2..=k_max {
        let (a, b) = harmonic(k);
        higher += a * a + b * b;
    }
    Ok((higher / fundamental).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle_points(n: usize, radius: f64) -> Vec<Vector2<f64>> {
        (0..n)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / n as f64;
                Vector2::new(radius * phi.cos(), radius * phi.sin())
            })
            .collect()
    }

    #[test]
    fn identity_map_fits_exactly() {
        let pts = circle_points(24, 1.0);
        let est = fit_gain(&pts, &pts).unwrap();
        assert!((est.g - Matrix2::identity()).norm() < 1e-12);
        assert!(est.offset.norm() < 1e-12);
        assert!(est.residual_rms.norm() < 1e-12);
    }

    #[test]
    fn synthetic_affine_map_is_recovered() {
        let g = Matrix2::new(2.1, 0.0, 0.0, 1.0 / 2.1);
        let offset = Vector2::new(0.3, -0.1);
        let init = circle_points(100, 1.3);
        let fin: Vec<_> = init.iter().map(|x| g * x + offset).collect();
        let est = fit_gain(&init, &fin).unwrap();
        assert!((est.g - g).norm() < 1e-10);
        assert!((est.offset - offset).norm() < 1e-10);
        assert!(est.residual_rms.norm() < 1e-10);
    }

    #[test]
    fn collinear_inputs_are_rank_deficient() {
        let init: Vec<_> = (0..10).map(|i| Vector2::new(i as f64, 2.0 * i as f64)).collect();
        let fin = init.clone();
        assert!(matches!(fit_gain(&init, &fin), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fit_is_exact_on_noiseless_linear_data() {
        let g = Matrix2::new(0.4, 1.7, -0.6, 0.2);
        let offset = Vector2::new(-2.0, 0.7);
        let init = circle_points(33, 0.8);
        let fin: Vec<_> = init.iter().map(|x| g * x + offset).collect();
        let est = fit_gain(&init, &fin).unwrap();
        assert!(est.residual_rms[0] < 1e-10 && est.residual_rms[1] < 1e-10);
    }

    #[test]
    fn offset_given_gain_is_translation_invariant() {
        let g = Matrix2::new(2.1, 0.0, 0.0, 1.0 / 2.1);
        let offset = Vector2::new(0.25, -0.4);
        let init = circle_points(40, 1.0);
        let fin: Vec<_> = init.iter().map(|x| g * x + offset).collect();
        let o1 = offset_given_gain(&init, &fin, &g).unwrap();
        let shift = Vector2::new(3.0, -1.5);
        let init2: Vec<_> = init.iter().map(|x| x + shift).collect();
        let fin2: Vec<_> = init2.iter().map(|x| g * x + offset).collect();
        let o2 = offset_given_gain(&init2, &fin2, &g).unwrap();
        assert!((o1 - o2).norm() < 1e-12);
        assert!((o1 - offset).norm() < 1e-12);
    }

    #[test]
    fn covariance_transform_patterns() {
        let theta0 = Matrix2::identity();
        assert_eq!(transform_covariance(&Matrix2::identity(), &theta0), theta0);
        let g = Matrix2::new(2.0, 0.0, 0.0, 0.5);
        let out = transform_covariance(&g, &theta0);
        assert_relative_eq!(out[(0, 0)], 4.0);
        assert_relative_eq!(out[(1, 1)], 0.25);
        assert_eq!(out[(0, 1)], 0.0);
        // Off-diagonals survive a reciprocal diagonal gain unchanged.
        let theta = Matrix2::new(1.0, 0.3, 0.3, 1.0);
        let out = transform_covariance(&g, &theta);
        assert_relative_eq!(out[(0, 1)], 0.3, max_relative = 1e-12);
    }

    #[test]
    fn covariance_determinant_is_preserved_by_symplectic_gain() {
        let g = Matrix2::new(1.3, 0.4, 0.7, (1.0 + 0.4 * 0.7) / 1.3);
        assert_relative_eq!(g.determinant(), 1.0, max_relative = 1e-12);
        let theta0 = Matrix2::new(0.8, 0.2, 0.2, 1.4);
        let out = transform_covariance(&g, &theta0);
        assert!((out.determinant() - theta0.determinant()).abs() <= 1e-10 * theta0.determinant());
    }

    #[test]
    fn noise_figure_values() {
        assert_relative_eq!(noise_figure(1.0, 2.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(nf_db(1.0), 0.0);
        // Reference arithmetic: G = 2.1, θ̄₀ = 1, N̄_a = 0.1.
        assert_relative_eq!(noise_figure(1.0, 2.1, 0.1).unwrap(), 1.0227, epsilon = 1e-4);
        assert!(noise_figure(0.0, 2.1, 0.1).is_err());
        assert!(noise_figure(-1.0, 2.1, 0.1).is_err());
    }

    #[test]
    fn noise_figure_is_monotone_in_inputs() {
        let mut prev = f64::INFINITY;
        for theta in [0.01, 0.1, 0.3, 1.0, 3.0] {
            let nf = noise_figure(theta, 2.1, 0.14).unwrap();
            assert!(nf < prev, "NF not decreasing in theta0");
            prev = nf;
        }
        let mut prev = f64::INFINITY;
        for g in [0.5, 1.0, 2.0, 4.0] {
            let nf = noise_figure(0.3, g, 0.14).unwrap();
            assert!(nf < prev, "NF not decreasing in G^2");
            prev = nf;
        }
    }

    #[test]
    fn added_noise_fit_inverts_the_sweep() {
        let g = 2.1;
        let injected = 0.14;
        let points: Vec<NfPoint> = [0.015, 0.03, 0.1, 0.3, 1.0]
            .iter()
            .map(|&theta0| NfPoint {
                theta0,
                nf: noise_figure(theta0, g, injected).unwrap(),
                weight: 1.0,
            })
            .collect();
        let fitted = fit_added_noise(&points, g).unwrap();
        assert_relative_eq!(fitted, injected, max_relative = 1e-12);
    }

    #[test]
    fn snr_force_values() {
        let zf = 0.8;
        assert_relative_eq!(snr_force(zf, 1.0, 0.5, 0.0).unwrap(), zf * zf / 0.5);
        // Same offset through a velocity-mode (G = 0.45) vs a position-mode
        // (G = 2.1) amplifier at θ̄₀ = 1, N̄_a = 0.1.
        let vel = snr_force(zf, 0.45, 1.0, 0.1).unwrap();
        let pos = snr_force(zf, 2.1, 1.0, 0.1).unwrap();
        assert_relative_eq!(vel / pos, (4.41 + 0.1) / (0.2025 + 0.1), max_relative = 1e-12);
        // θ̄₀ → 0 leaves the added-noise floor.
        assert_relative_eq!(
            snr_force(zf, 2.1, 1e-15, 0.1).unwrap(),
            zf * zf / 0.1,
            max_relative = 1e-6
        );
        assert!(snr_force(zf, 1.0, 0.0, 0.0).is_err());
    }

    fn uniform_angles(n: usize) -> Vec<f64> {
        (0..n).map(|k| std::f64::consts::TAU * k as f64 / n as f64).collect()
    }

    #[test]
    fn linear_response_has_zero_shd() {
        let angles = uniform_angles(64);
        let values: Vec<f64> = angles.iter().map(|p| 2.1 * p.cos() + 0.2 * p.sin()).collect();
        assert!(shd(&angles, &values).unwrap() < 1e-12);
    }

    #[test]
    fn cubic_response_shd_is_exact() {
        let angles = uniform_angles(64);
        let g = 2.1;
        let values: Vec<f64> =
            angles.iter().map(|p| g * p.cos() + 0.05 * g * (3.0 * p).cos()).collect();
        assert_relative_eq!(shd(&angles, &values).unwrap(), 0.05, epsilon = 1e-6);
    }

    #[test]
    fn shd_is_scale_invariant() {
        let angles = uniform_angles(48);
        let values: Vec<f64> =
            angles.iter().map(|p| p.cos() + 0.03 * (2.0 * p).sin() + 0.01 * (5.0 * p).cos()).collect();
        let a = shd(&angles, &values).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| 7.3 * v).collect();
        let b = shd(&angles, &scaled).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn shd_error_paths() {
        let angles = uniform_angles(8);
        let values = vec![1.0; 8];
        assert!(shd(&angles, &values).is_err());
        let angles = uniform_angles(32);
        let values = vec![0.0; 32];
        assert!(matches!(shd(&angles, &values), Err(Error::Domain(_))));
        let half: Vec<f64> = (0..32).map(|k| std::f64::consts::PI * k as f64 / 32.0).collect();
        assert!(shd(&half, &vec![1.0; 32]).is_err());
    }
}
