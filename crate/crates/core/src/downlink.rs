//! Downlink performance implied by a channel estimate: MRT beamforming,
//! beamforming efficiency, SNR, spectral efficiency and square-QAM symbol
//! error rate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelVector;
use crate::error::{invalid, Error, Result};
use crate::linalg::hermitian_eigenvalues;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkConfig {
    /// `E_d`, energy per downlink symbol.
    pub symbol_energy: f64,
    pub noise_variance: f64,
    /// Square QAM order `Q`.
    pub constellation_order: u32,
}

impl DownlinkConfig {
    pub fn new(symbol_energy: f64, noise_variance: f64, constellation_order: u32) -> Result<Self> {
        if !(symbol_energy.is_finite() && symbol_energy > 0.0) {
            return Err(invalid(format!("symbol energy {symbol_energy} must be positive")));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(invalid(format!("noise variance {noise_variance} must be positive")));
        }
        qam_side(constellation_order)?;
        Ok(Self {
            symbol_energy,
            noise_variance,
            constellation_order,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub frequency: f64,
    pub eta_monte_carlo: f64,
    pub eta_approx: f64,
    pub snr_downlink: f64,
    pub spectral_efficiency: f64,
    pub ser: f64,
}

/// `g = ĥ^* / ‖ĥ‖`.
pub fn mrt_beamformer(estimate: &ChannelVector) -> Result<DVector<Complex64>> {
    let norm = estimate.values.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid("cannot beamform toward a zero channel estimate"));
    }
    Ok(estimate.values.map(|v| v.conj() / norm))
}

/// Channel-ignorant beamformer `1/√M`.
pub fn uniform_beamformer(num_antennas: usize) -> DVector<Complex64> {
    DVector::from_element(num_antennas, Complex64::new(1.0 / (num_antennas as f64).sqrt(), 0.0))
}

/// `|g^T h|² / (‖g‖² ‖h‖²)`.
pub fn beamforming_efficiency(channel: &ChannelVector, beamformer: &DVector<Complex64>) -> Result<f64> {
    let h = &channel.values;
    if h.len() != beamformer.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} antennas, beamformer {}",
            h.len(),
            beamformer.len()
        )));
    }
    let denom = h.norm_squared() * beamformer.norm_squared();
    if !(denom > 0.0) {
        return Err(invalid("efficiency undefined for a zero channel or beamformer"));
    }
    let gain: Complex64 = beamformer.iter().zip(h.iter()).map(|(g, v)| g * v).sum();
    Ok((gain.norm_sqr() / denom).min(1.0))
}

/// `|ĥ^H h|² / (‖ĥ‖² ‖h‖²)`, the efficiency of MRT toward `estimate`.
///
/// Evaluated without normalizing the beamformer first, so a perfect
/// estimate gives exactly 1.
pub fn estimate_efficiency(channel: &ChannelVector, estimate: &ChannelVector) -> Result<f64> {
    let (h, e) = (&channel.values, &estimate.values);
    if h.len() != e.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} antennas, estimate {}",
            h.len(),
            e.len()
        )));
    }
    let mut cross = Complex64::new(0.0, 0.0);
    let (mut hh, mut ee) = (0.0, 0.0);
    for (a, b) in e.iter().zip(h.iter()) {
        cross += a.conj() * b;
        hh += b.norm_sqr();
        ee += a.norm_sqr();
    }
    if !(ee > 0.0) {
        return Err(invalid("cannot beamform toward a zero channel estimate"));
    }
    if !(hh > 0.0) {
        return Err(invalid("efficiency undefined for a zero channel"));
    }
    Ok((cross.norm_sqr() / (hh * ee)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEfficiency {
    pub mean: f64,
    pub std_error: f64,
    pub used_trials: usize,
    pub skipped_trials: usize,
}

/// Average MRT efficiency over `trials` estimates.
///
/// `estimator` receives a per-trial seed derived from `seed` and the trial
/// index. Trials whose estimate is identically zero are skipped.
pub fn efficiency_monte_carlo<F>(
    true_channel: &ChannelVector,
    estimator: F,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEfficiency>
where
    F: Fn(u64) -> Result<ChannelVector> + Sync,
{
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    if !(true_channel.norm_squared() > 0.0) {
        return Err(invalid("true channel is zero"));
    }
    let outcomes: Vec<Result<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let estimate = estimator(derive_seed(seed, t as u64))?;
            if estimate.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                return Ok(None);
            }
            estimate_efficiency(true_channel, &estimate).map(Some)
        })
        .collect();
    let mut values = Vec::with_capacity(trials);
    for o in outcomes {
        if let Some(v) = o? {
            values.push(v);
        }
    }
    let skipped = trials - values.len();
    if skipped * 100 > trials {
        log::warn!("{skipped} of {trials} trials produced a zero estimate and were skipped");
    }
    if values.is_empty() {
        return Err(invalid("every trial produced a zero estimate"));
    }
    let (mean, std_error) = mean_and_std_error(&values);
    Ok(MonteCarloEfficiency {
        mean,
        std_error,
        used_trials: values.len(),
        skipped_trials: skipped,
    })
}

/// Sample mean and its standard error.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(‖h‖² + h^H E h / ‖h‖²) / (‖h‖² + tr E)` for an error correlation `E`.
pub fn efficiency_approx(true_channel: &ChannelVector, error_correlation: &DMatrix<Complex64>) -> Result<f64> {
    let h = &true_channel.values;
    let m = h.len();
    if error_correlation.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "error correlation is {}x{}, channel has {m} antennas",
            error_correlation.nrows(),
            error_correlation.ncols()
        )));
    }
    let h2 = h.norm_squared();
    if !(h2 > 0.0) {
        return Err(invalid("true channel is zero"));
    }
    let e = error_correlation;
    let scale = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if (e - e.adjoint()).iter().any(|v| v.norm() > 1e-9 * scale) {
        return Err(invalid("error correlation is not Hermitian"));
    }
    let ev = hermitian_eigenvalues(e);
    let (lo, hi) = (ev[0], ev[m - 1]);
    if lo < -1e-9 * hi.abs().max(f64::MIN_POSITIVE) {
        return Err(invalid(format!(
            "error correlation is not positive semidefinite (eigenvalue {lo:e})"
        )));
    }
    let quotient = (h.adjoint() * e * h)[(0, 0)].re / h2;
    let trace = e.trace().re;
    Ok(((h2 + quotient) / (h2 + trace)).min(1.0))
}

/// `E_d ‖h‖² η / σ_w²`.
pub fn downlink_snr(true_channel: &ChannelVector, eta: f64, config: &DownlinkConfig) -> f64 {
    config.symbol_energy * true_channel.norm_squared() / config.noise_variance * eta
}

/// `log2(1 + snr)`.
pub fn spectral_efficiency(snr: f64) -> f64 {
    (1.0 + snr.max(0.0)).log2()
}

fn qam_side(order: u32) -> Result<f64> {
    let side = (order as f64).sqrt().round();
    if order < 4 || (side as u64) * (side as u64) != order as u64 {
        return Err(invalid(format!("QAM order {order} is not a perfect square ≥ 4")));
    }
    Ok(side)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Uncoded square-QAM symbol error rate
/// `2(√Q−1)/√Q · erfc(√(3 snr / (2(Q−1))))`.
///
/// The expression is a union bound and exceeds 1 at very low SNR for
/// `Q ≥ 16`; the result is clipped to `[0, 1]`.
pub fn ser_mqam(snr: f64, constellation_order: u32) -> Result<f64> {
    let side = qam_side(constellation_order)?;
    if !(snr >= 0.0) {
        return Err(invalid(format!("SNR {snr} must be non-negative")));
    }
    let q = constellation_order as f64;
    let value = 2.0 * (side - 1.0) / side * erfc((3.0 * snr / (2.0 * (q - 1.0))).sqrt());
    Ok(value.clamp(0.0, 1.0))
}

/// Full report at one frequency; SNR, SE and SER follow the approximate
/// efficiency `eta_approx`.
pub fn efficiency_report(
    true_channel: &ChannelVector,
    eta_monte_carlo: f64,
    eta_approx: f64,
    config: &DownlinkConfig,
) -> Result<EfficiencyReport> {
    let snr = downlink_snr(true_channel, eta_approx, config);
    Ok(EfficiencyReport {
        frequency: true_channel.frequency,
        eta_monte_carlo,
        eta_approx,
        snr_downlink: snr,
        spectral_efficiency: spectral_efficiency(snr),
        ser: ser_mqam(snr, config.constellation_order)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn channel(values: Vec<Complex64>) -> ChannelVector {
        ChannelVector::new(0.0, DVector::from_vec(values))
    }

    fn random_phase_channel(m: usize, phase_seed: u64) -> ChannelVector {
        channel(
            (0..m)
                .map(|i| {
                    let u = (derive_seed(phase_seed, i as u64) >> 11) as f64 / (1u64 << 53) as f64;
                    Complex64::from_polar(1.0, 2.0 * PI * u)
                })
                .collect(),
        )
    }

    /// Series below 1, Lentz continued fraction above.
    fn erfc_oracle(x: f64) -> f64 {
        if x < 1.0 {
            let mut term = x;
            let mut sum = x;
            let mut n = 0.0;
            while term.abs() > 1e-18 * sum.abs() {
                n += 1.0;
                term *= 2.0 * x * x / (2.0 * n + 1.0);
                sum += term;
            }
            1.0 - 2.0 / PI.sqrt() * (-x * x).exp() * sum
        } else {
            let tiny = 1e-300;
            let mut f = x;
            let mut c = x;
            let mut d = 0.0;
            for n in 1..10_000 {
                let a = n as f64 / 2.0;
                d = x + a * d;
                if d.abs() < tiny {
                    d = tiny;
                }
                c = x + a / c;
                if c.abs() < tiny {
                    c = tiny;
                }
                d = 1.0 / d;
                let delta = c * d;
                f *= delta;
                if (delta - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            (-x * x).exp() / (PI.sqrt() * f)
        }
    }

    #[test]
    fn erfc_matches_oracle() {
        for i in 0..=1000 {
            let x = i as f64 * 0.01;
            let (a, b) = (erfc(x), erfc_oracle(x));
            assert!((a - b).abs() <= 1e-12 * b, "x = {x}: {a:e} vs {b:e}");
        }
    }

    #[test]
    fn perfect_csi_is_fully_efficient() {
        let h = random_phase_channel(16, 4);
        let g = mrt_beamformer(&h).unwrap();
        assert!((g.norm() - 1.0).abs() < 1e-14);
        let gain: Complex64 = g.iter().zip(h.values.iter()).map(|(a, b)| a * b).sum();
        assert!((gain.norm() - h.values.norm()).abs() < 1e-12);
        assert_eq!(estimate_efficiency(&h, &h).unwrap(), 1.0);
    }

    #[test]
    fn zero_estimate_cannot_beamform() {
        let z = channel(vec![Complex64::new(0.0, 0.0); 4]);
        assert!(mrt_beamformer(&z).is_err());
    }

    #[test]
    fn approximate_efficiency_closed_forms() {
        let h = random_phase_channel(8, 1);
        assert_eq!(efficiency_approx(&h, &DMatrix::zeros(8, 8)).unwrap(), 1.0);
        let eps = 0.3;
        let e = DMatrix::identity(8, 8) * Complex64::new(eps, 0.0);
        let h2 = h.norm_squared();
        let expected = (h2 + eps) / (h2 + 8.0 * eps);
        assert!((efficiency_approx(&h, &e).unwrap() - expected).abs() < 1e-14);
        let mut bad = DMatrix::identity(8, 8);
        bad[(0, 0)] = Complex64::new(-1.0, 0.0);
        assert!(efficiency_approx(&h, &bad).is_err());
    }

    #[test]
    fn snr_and_spectral_efficiency() {
        let h = channel(vec![Complex64::new(1.0, 0.0); 16]);
        let cfg = DownlinkConfig::new(10.0, 1.0, 256).unwrap();
        assert_eq!(downlink_snr(&h, 1.0, &cfg), 160.0);
        assert_eq!(downlink_snr(&h, 0.0, &cfg), 0.0);
        assert_eq!(downlink_snr(&h, 0.5, &cfg), 80.0);
        assert_eq!(spectral_efficiency(0.0), 0.0);
        assert_eq!(spectral_efficiency(1.0), 1.0);
        assert!((spectral_efficiency(160.0) - 7.331).abs() < 1e-3);
    }

    #[test]
    fn ser_reference_values() {
        for snr in [0.0, 0.5, 3.0, 20.0] {
            assert!((ser_mqam(snr, 4).unwrap() - erfc((snr / 2.0).sqrt())).abs() < 1e-15);
        }
        assert_eq!(ser_mqam(0.0, 4).unwrap(), 1.0);
        assert_eq!(ser_mqam(0.0, 16).unwrap(), 1.0);
        assert!(ser_mqam(1e6, 256).unwrap() < 1e-300);
        assert!(ser_mqam(10.0, 8).is_err());
        assert!(ser_mqam(10.0, 1).is_err());
        assert!(DownlinkConfig::new(1.0, 1.0, 12).is_err());
    }

    #[test]
    fn monte_carlo_noiseless_and_skips() {
        let h = random_phase_channel(8, 2);
        let r = efficiency_monte_carlo(&h, |_| Ok(h.clone()), 10, 5).unwrap();
        assert_eq!(r.mean, 1.0);
        let zero = channel(vec![Complex64::new(0.0, 0.0); 8]);
        let r = efficiency_monte_carlo(
            &h,
            |s| Ok(if s % 2 == 0 { zero.clone() } else { h.clone() }),
            200,
            5,
        )
        .unwrap();
        assert_eq!(r.used_trials + r.skipped_trials, 200);
        assert!(r.skipped_trials > 0);
    }
}
