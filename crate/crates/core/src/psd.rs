//! Power-spectral-density estimation and calibration of the oscillation
//! frequency and equilibrium variances from an equilibrium trap record.
//!
//! The PSD is a Welch average of Hann-windowed periodograms (50% overlap).
//! The oscillation peak is located by a Lorentzian fit: the inverse of the
//! response S(f) = a / ((f₀² − f²)² + g² f²) is a quadratic polynomial in f²,
//! so the fit reduces to weighted linear least squares, iterated once to set
//! the fit window to ±10 linewidths around the peak.

use nalgebra::{Matrix3, Vector3};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::ensemble::{estimate_velocity, Calibration, TrajectoryRecord};
use crate::error::{Error, Result};

/// Default Welch segment length (samples).
pub const DEFAULT_SEGMENT_LEN: usize = 1 << 16;

/// Minimum ratio of peak power to median power for a peak to count as
/// resolved.
const PEAK_PROMINENCE: f64 = 10.0;

/// One-sided Welch PSD with a Hann window and 50% overlap.
///
/// Returns (frequencies in Hz, PSD in unit²/Hz).
pub fn welch_psd(
    samples: &[f64],
    sample_rate: f64,
    segment_len: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if segment_len < 8 || segment_len % 2 != 0 {
        return Err(Error::Domain("segment_len must be an even number >= 8".into()));
    }
    if samples.len() < segment_len {
        return Err(Error::Calibration(format!(
            "record of {} samples is shorter than one segment of {segment_len}",
            samples.len()
        )));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Domain("sample_rate must be positive".into()));
    }
    let n = segment_len;
    let hop = n / 2;
    let n_segments = (samples.len() - n) / hop + 1;
    let window: Vec<f64> = (0..n)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / n as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut acc = vec![0.0f64; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for seg in 0..n_segments {
        let start = seg * hop;
        for i in 0..n {
            buf[i] = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }
    let scale = 1.0 / (n_segments as f64 * sample_rate * window_power);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            // Interior bins fold in the negative frequencies.
            let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..=n / 2).map(|k| k as f64 * sample_rate / n as f64).collect();
    Ok((freqs, psd))
}

/// Result of the Lorentzian peak fit.
#[derive(Debug, Clone, Copy)]
pub struct LorentzianFit {
    /// Peak frequency (Hz).
    pub f0: f64,
    /// Linewidth parameter g of S(f) = a/((f₀²−f²)² + g²f²), in Hz.
    pub linewidth: f64,
    /// Index of the raw peak bin.
    pub peak_index: usize,
}

fn quadratic_inverse_fit(
    freqs: &[f64],
    psd: &[f64],
    f_pk: f64,
    half_width: f64,
) -> Result<(f64, f64)> {
    // Fit 1/S = α x² + β x + δ in x = (f/f_pk)², weighted by S² so the
    // implied noise on 1/S is equalized; scaling by the peak keeps the
    // normal equations well conditioned.
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    let s_peak = psd.iter().cloned().fold(0.0f64, f64::max);
    let mut count = 0usize;
    for (i, (&f, &s)) in freqs.iter().zip(psd).enumerate() {
        if i == 0 || s <= 0.0 || (f - f_pk).abs() > half_width {
            continue;
        }
        let x = (f / f_pk) * (f / f_pk);
        let y = s_peak / s;
        let w = (s / s_peak) * (s / s_peak);
        let row = Vector3::new(x * x, x, 1.0);
        ata += w * row * row.transpose();
        aty += w * y * row;
        count += 1;
    }
    if count < 5 {
        return Err(Error::Calibration("too few bins in the peak window".into()));
    }
    let coef = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Calibration("singular peak-fit system".into()))?;
    let (alpha, beta, delta) = (coef[0], coef[1], coef[2]);
    if alpha <= 0.0 || delta <= 0.0 {
        return Err(Error::Calibration("peak fit did not converge to a resonance".into()));
    }
    let f0 = f_pk * (delta / alpha).powf(0.25);
    let g2 = f_pk * f_pk * (beta / alpha) + 2.0 * f0 * f0;
    Ok((f0, g2.max(0.0).sqrt()))
}

/// Locate the oscillation peak of a one-sided PSD with a Lorentzian fit.
pub fn lorentzian_peak_fit(freqs: &[f64], psd: &[f64]) -> Result<LorentzianFit> {
    if freqs.len() != psd.len() || freqs.len() < 16 {
        return Err(Error::Domain("PSD arrays too short or mismatched".into()));
    }
    // Skip the DC bin when hunting for the peak.
    let peak_index = psd
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut sorted: Vec<f64> = psd[1..].to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) || psd[peak_index] < PEAK_PROMINENCE * median {
        return Err(Error::Calibration(
            "no resolvable oscillation peak above the noise floor".into(),
        ));
    }
    let df = freqs[1] - freqs[0];
    let f_pk = freqs[peak_index];
    let mut half_width = 5.0 * df;
    let mut fit = (f_pk, half_width);
    for _ in 0..3 {
        fit = quadratic_inverse_fit(freqs, psd, f_pk, half_width)?;
        half_width = (10.0 * fit.1).max(3.0 * df);
    }
    Ok(LorentzianFit { f0: fit.0, linewidth: fit.1, peak_index })
}

/// Integrate a one-sided PSD over frequency (rectangle rule).
pub fn integrate_psd(freqs: &[f64], psd: &[f64]) -> f64 {
    if freqs.len() < 2 {
        return 0.0;
    }
    let df = freqs[1] - freqs[0];
    psd.iter().sum::<f64>() * df
}

/// Calibrate normalization scales from an equilibrium trap record: Welch
/// PSDs of position and estimated velocity, a Lorentzian fit for the
/// oscillation frequency, and PSD integrals for the variances.
pub fn psd_calibrate(record: &TrajectoryRecord) -> Result<Calibration> {
    psd_calibrate_with(record, DEFAULT_SEGMENT_LEN)
}

/// [`psd_calibrate`] with an explicit Welch segment length.
pub fn psd_calibrate_with(record: &TrajectoryRecord, segment_len: usize) -> Result<Calibration> {
    let sample_rate = 1.0 / record.sample_dt;
    let (freqs, psd_z) = welch_psd(&record.z, sample_rate, segment_len)?;
    let fit = lorentzian_peak_fit(&freqs, &psd_z)?;
    let var_z = integrate_psd(&freqs, &psd_z);

    let mut with_v = record.clone();
    if with_v.v.is_none() {
        estimate_velocity(&mut with_v)?;
    }
    let v = with_v.v.as_ref().unwrap();
    let (_, psd_v) = welch_psd(&v[1..v.len() - 1], sample_rate, segment_len)?;
    let var_v = integrate_psd(&freqs, &psd_v);

    let cal = Calibration {
        omega_psd: std::f64::consts::TAU * fit.f0,
        var_z,
        var_v,
        detector_gain: None,
    };
    cal.validate()?;
    Ok(cal)
}
