//! Per-antenna least-squares estimation at the pilots and LMMSE
//! interpolation/extrapolation built on a uniform-delay frequency
//! autocorrelation model.
//!
//! The LMMSE weights depend only on long-term statistics, so the same weight
//! vector is applied to every antenna; antennas are never combined.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{ChannelVector, PilotGrid, ReceivedPilots};
use crate::error::{invalid, Error, Result};
use crate::linalg::solve_hermitian_pd;

/// LS channel estimates `ĥ_LS,m(f_k)`, one row per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimates {
    pub values: DMatrix<Complex64>,
    pub pilots: PilotGrid,
}

/// `ĥ_LS,m(f_k) = r_m(f_k) / s(f_k)`.
pub fn ls_estimate(received: &ReceivedPilots, pilots: &PilotGrid) -> Result<LsEstimates> {
    if received.num_pilots() != pilots.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} received pilots but grid has {}",
            received.num_pilots(),
            pilots.len()
        )));
    }
    let mut values = received.samples.clone();
    for (k, s) in pilots.symbols().iter().enumerate() {
        if s.norm_sqr() == 0.0 {
            return Err(Error::DivisionByZero {
                subcarrier: k,
                frequency: pilots.frequencies()[k],
            });
        }
        let inv = s.inv();
        values.column_mut(k).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(LsEstimates {
        values,
        pilots: pilots.clone(),
    })
}

/// Statistical model behind the LMMSE smoother.
///
/// `channel_power` is `P_h = L·E[|α|²]`: the per-antenna average power of
/// the channel frequency response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmseModel {
    pub max_delay: f64,
    pub channel_power: f64,
    pub noise_variance: f64,
    pub pilot_energy: f64,
}

impl LmmseModel {
    pub fn new(
        max_delay: f64,
        channel_power: f64,
        noise_variance: f64,
        pilot_energy: f64,
    ) -> Result<Self> {
        if !(max_delay.is_finite() && max_delay > 0.0) {
            return Err(invalid(format!("max delay {max_delay} must be positive")));
        }
        if !(channel_power.is_finite() && channel_power > 0.0) {
            return Err(invalid(format!("channel power {channel_power} must be positive")));
        }
        if !(pilot_energy.is_finite() && pilot_energy > 0.0) {
            return Err(invalid(format!("pilot energy {pilot_energy} must be positive")));
        }
        if !(noise_variance >= 0.0) {
            return Err(invalid(format!("noise variance {noise_variance} must be non-negative")));
        }
        Ok(Self {
            max_delay,
            channel_power,
            noise_variance,
            pilot_energy,
        })
    }

    /// Variance of the LS error at one pilot, `σ_w² / E_s`.
    pub fn ls_error_variance(&self) -> f64 {
        self.noise_variance / self.pilot_energy
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `C_h(Δf) = P_h e^{−jπΔfτ_max} sinc(πΔfτ_max)`.
pub fn channel_autocorrelation(model: &LmmseModel, delta_f: f64) -> Complex64 {
    let x = PI * delta_f * model.max_delay;
    Complex64::from_polar(model.channel_power * sinc(x), -x)
}

/// LMMSE weights `p(f)` such that `ĥ_m(f) = p(f)^H ĥ_LS,m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseWeights {
    pub frequency: f64,
    pub weights: DVector<Complex64>,
    pub condition_number: f64,
}

impl LmmseWeights {
    /// `p^H x` for one antenna's LS vector.
    pub fn apply_row(&self, ls_row: impl Iterator<Item = Complex64>) -> Complex64 {
        self.weights
            .iter()
            .zip(ls_row)
            .map(|(p, x)| p.conj() * x)
            .sum()
    }

    /// Applies the weights to every antenna.
    pub fn apply(&self, ls: &DMatrix<Complex64>) -> ChannelVector {
        let values = DVector::from_iterator(
            ls.nrows(),
            ls.row_iter().map(|row| self.apply_row(row.iter().copied())),
        );
        ChannelVector::new(self.frequency, values)
    }
}

/// `C_LS = [C_h(f_k − f_k') + (σ_w²/E_s) δ_kk']`.
pub fn ls_covariance(model: &LmmseModel, pilots: &PilotGrid) -> DMatrix<Complex64> {
    let f = pilots.frequencies();
    let k_total = f.len();
    let noise = model.ls_error_variance();
    DMatrix::from_fn(k_total, k_total, |i, j| {
        let c = channel_autocorrelation(model, f[i] - f[j]);
        if i == j {
            c + noise
        } else {
            c
        }
    })
}

/// Cross-correlation vector `c(f)` with `c_k = E[h(f_k) h(f)^*] = C_h(f_k − f)`,
/// i.e. `c^H` has entries `C_h(f − f_k)`.
pub fn cross_correlation(model: &LmmseModel, pilots: &PilotGrid, frequency: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        pilots.len(),
        pilots
            .frequencies()
            .iter()
            .map(|&fk| channel_autocorrelation(model, frequency - fk).conj()),
    )
}

/// Solves `C_LS p = c(f)`.
pub fn lmmse_weights(model: &LmmseModel, pilots: &PilotGrid, frequency: f64) -> Result<LmmseWeights> {
    let c_ls = ls_covariance(model, pilots);
    let c = cross_correlation(model, pilots, frequency);
    let (weights, condition_number) = solve_hermitian_pd(&c_ls, &c)?;
    Ok(LmmseWeights {
        frequency,
        weights,
        condition_number,
    })
}

/// `ĥ_LMMSE,m(f) = p^H(f) ĥ_LS,m`, with the same `p` for every antenna.
pub fn lmmse_estimate(ls: &LsEstimates, model: &LmmseModel, frequency: f64) -> Result<ChannelVector> {
    let w = lmmse_weights(model, &ls.pilots, frequency)?;
    Ok(w.apply(&ls.values))
}

/// Noise-only error statistics of an estimator at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub frequency: f64,
    pub mse_per_antenna: Vec<f64>,
    pub error_correlation: DMatrix<Complex64>,
    /// `E[ĥ_m(f)] − h_m(f)`.
    pub bias: DVector<Complex64>,
}

impl ErrorStats {
    /// `tr(E) / M`.
    pub fn mean_mse(&self) -> f64 {
        self.mse_per_antenna.iter().sum::<f64>() / self.mse_per_antenna.len() as f64
    }
}

/// Analytic LMMSE error correlation for a deterministic channel, with the
/// expectation taken over the pilot noise only.
///
/// `true_channel_per_pilot` holds `h_m(f_k)` (one row per antenna).
pub fn lmmse_error_stats(
    model: &LmmseModel,
    pilots: &PilotGrid,
    true_channel_per_pilot: &DMatrix<Complex64>,
    true_channel_at_f: &ChannelVector,
    frequency: f64,
) -> Result<ErrorStats> {
    let m_total = true_channel_per_pilot.nrows();
    if true_channel_per_pilot.ncols() != pilots.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} pilot columns, grid has {}",
            true_channel_per_pilot.ncols(),
            pilots.len()
        )));
    }
    if true_channel_at_f.len() != m_total {
        return Err(Error::DimensionMismatch(format!(
            "channel at f has {} antennas, pilot channel has {m_total}",
            true_channel_at_f.len()
        )));
    }
    let w = lmmse_weights(model, pilots, frequency)?;
    let p = &w.weights;
    let noise = model.ls_error_variance();
    let hf = &true_channel_at_f.values;
    let rows: Vec<DVector<Complex64>> = true_channel_per_pilot
        .row_iter()
        .map(|r| r.transpose())
        .collect();
    // p^H h_m for every antenna
    let ph: Vec<Complex64> = rows.iter().map(|h| p.dotc(h)).collect();
    let p_norm2 = p.norm_squared();

    let mut mse = Vec::with_capacity(m_total);
    for m in 0..m_total {
        // |h_m(f)|² − 2Re(h_m^*(f) p^H h_m) + p^H (h_m h_m^H + σ²/E_s I) p
        let v = hf[m].norm_sqr() - 2.0 * (hf[m].conj() * ph[m]).re + ph[m].norm_sqr() + noise * p_norm2;
        mse.push(v.max(0.0));
    }

    let mut e = DMatrix::zeros(m_total, m_total);
    for m in 0..m_total {
        for mp in 0..m_total {
            // h_m(f) h_m'^*(f) + p^H (h_m h_m'^H + σ²/E_s I δ) p − h_m(f) h_m'^H p − p^H h_m h_m'^*(f)
            let mut v = hf[m] * hf[mp].conj() + ph[m] * ph[mp].conj()
                - hf[m] * ph[mp].conj()
                - ph[m] * hf[mp].conj();
            if m == mp {
                v += noise * p_norm2;
            }
            e[(m, mp)] = v;
        }
    }
    for (m, v) in mse.iter().enumerate() {
        e[(m, m)] = Complex64::new(*v, 0.0);
    }
    let bias = DVector::from_iterator(m_total, (0..m_total).map(|m| ph[m] - hf[m]));
    Ok(ErrorStats {
        frequency,
        mse_per_antenna: mse,
        error_correlation: e,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        channel_response, half_wavelength_planar_array, pilot_mean, simulate_pilots, PathParameters,
        PathSet,
    };

    fn model(noise: f64) -> LmmseModel {
        LmmseModel::new(2.5e-6, 1.0, noise, 1.0).unwrap()
    }

    #[test]
    fn autocorrelation_closed_form_values() {
        let m = model(0.1);
        assert_eq!(channel_autocorrelation(&m, 0.0), Complex64::new(1.0, 0.0));
        assert!(channel_autocorrelation(&m, 1.0 / 2.5e-6).norm() < 1e-15);
        let half = channel_autocorrelation(&m, 1.0 / (2.0 * 2.5e-6));
        let expected = Complex64::new(0.0, -2.0 / PI);
        assert!((half - expected).norm() < 1e-15, "{half}");
    }

    #[test]
    fn autocorrelation_is_conjugate_symmetric() {
        let m = model(0.1);
        for df in [1.3e5, -7.7e5, 3.1e6, 2.2e8] {
            let a = channel_autocorrelation(&m, df);
            let b = channel_autocorrelation(&m, -df);
            assert!((a - b.conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn ls_divides_by_pilot() {
        let grid = PilotGrid::new(vec![0.0], vec![Complex64::new(2.0, 0.0)], 1e6).unwrap();
        let h = Complex64::new(0.3, -0.7);
        let w = Complex64::new(0.05, 0.02);
        let rx = ReceivedPilots {
            samples: DMatrix::from_element(1, 1, h * 2.0 + w),
            noise_variance: 0.0,
        };
        let ls = ls_estimate(&rx, &grid).unwrap();
        assert!((ls.values[(0, 0)] - (h + w / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn ls_zero_pilot_names_subcarrier() {
        let grid = PilotGrid::new(
            vec![-1.0, 1.0],
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            4.0,
        )
        .unwrap();
        let rx = ReceivedPilots {
            samples: DMatrix::zeros(2, 2),
            noise_variance: 0.0,
        };
        match ls_estimate(&rx, &grid) {
            Err(Error::DivisionByZero { subcarrier, .. }) => assert_eq!(subcarrier, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noiseless_ls_equals_truth() {
        let a = half_wavelength_planar_array(2, 2, 3.5e9).unwrap();
        let paths = PathSet::new(vec![PathParameters::new(Complex64::new(0.6, 0.8), 4e-7, 0.5, 1.3)]).unwrap();
        let grid = PilotGrid::from_max_delay(20e6, 2.5e-6, 1.0).unwrap();
        let rx = simulate_pilots(&paths, &a, &grid, 0.0, 0).unwrap();
        let ls = ls_estimate(&rx, &grid).unwrap();
        assert!((ls.values - pilot_mean(&paths, &a, &grid)).norm() < 1e-12);
    }

    #[test]
    fn single_pilot_noiseless_lmmse_returns_ls() {
        let grid = PilotGrid::new(vec![0.0], vec![Complex64::new(1.0, 0.0)], 1e6).unwrap();
        let ls = LsEstimates {
            values: DMatrix::from_element(3, 1, Complex64::new(0.2, 0.9)),
            pilots: grid,
        };
        let est = lmmse_estimate(&ls, &model(0.0), 0.0).unwrap();
        for v in est.values.iter() {
            assert!((v - Complex64::new(0.2, 0.9)).norm() < 1e-15);
        }
    }

    #[test]
    fn huge_noise_drives_weights_to_zero() {
        let grid = PilotGrid::from_max_delay(20e6, 2.5e-6, 1.0).unwrap();
        let w = lmmse_weights(&model(1e12), &grid, 0.0).unwrap();
        assert!(w.weights.norm() < 1e-11);
    }

    #[test]
    fn singular_covariance_is_reported() {
        // noiseless, pilots 1/τ_max apart with no regularization: C_LS = P_h I is fine,
        // but two pilots a hair apart are collinear.
        let grid = PilotGrid::new(
            vec![0.0, 1e-3],
            vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            lmmse_weights(&model(0.0), &grid, 0.0),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn error_correlation_is_hermitian_with_bias_decomposition() {
        let a = half_wavelength_planar_array(2, 2, 3.5e9).unwrap();
        let paths = PathSet::new(vec![
            PathParameters::new(Complex64::new(0.6, 0.2), 3e-7, 0.5, 1.3),
            PathParameters::new(Complex64::new(-0.3, 0.5), 1.1e-6, -1.5, 1.9),
        ])
        .unwrap();
        let grid = PilotGrid::from_max_delay(20e6, 2.5e-6, 1.0).unwrap();
        let h_pilots = pilot_mean(&paths, &a, &grid);
        let m = model(0.1);
        for f in [0.0, 3.3e6, 1.2e7, 5e7] {
            let hf = channel_response(&paths, &a, f);
            let stats = lmmse_error_stats(&m, &grid, &h_pilots, &hf, f).unwrap();
            let e = &stats.error_correlation;
            assert!((e - e.adjoint()).norm() < 1e-12);
            let w = lmmse_weights(&m, &grid, f).unwrap();
            let noise = m.ls_error_variance() * w.weights.norm_squared();
            let alt = &stats.bias * stats.bias.adjoint()
                + DMatrix::<Complex64>::identity(4, 4) * Complex64::new(noise, 0.0);
            assert!((e - alt).norm() < 1e-12);
            for (i, v) in stats.mse_per_antenna.iter().enumerate() {
                assert!(*v >= 0.0);
                assert!((e[(i, i)].re - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn error_stats_dimension_mismatch() {
        let grid = PilotGrid::uniform(1e6, 3, 1.0).unwrap();
        let h = DMatrix::zeros(2, 4);
        let hf = ChannelVector::new(0.0, DVector::zeros(2));
        assert!(matches!(
            lmmse_error_stats(&model(0.1), &grid, &h, &hf, 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn single_pilot_noiseless_mse_is_zero() {
        let grid = PilotGrid::new(vec![0.0], vec![Complex64::new(1.0, 0.0)], 1e6).unwrap();
        let h = DMatrix::from_element(2, 1, Complex64::new(0.4, -0.1));
        let hf = ChannelVector::new(0.0, DVector::from_element(2, Complex64::new(0.4, -0.1)));
        // with P_h = |h|² the 1x1 weight is exactly one
        let m = LmmseModel::new(2.5e-6, 0.17, 0.0, 1.0).unwrap();
        let stats = lmmse_error_stats(&m, &grid, &h, &hf, 0.0).unwrap();
        assert!(stats.mse_per_antenna.iter().all(|v| v.abs() < 1e-15));
    }
}
