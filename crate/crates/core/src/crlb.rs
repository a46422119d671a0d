//! Cramér-Rao bound on the extrapolated channel.
//!
//! The Fisher information of the real path parameters is mapped through the
//! Jacobian `G(f)`, `[G]_{v,m} = ∂h_m(f)/∂ψ_v`, to a lower bound on the
//! error correlation of any unbiased channel estimate at frequency `f`.
//! Also here: the closed-form bound for well-separated paths, the
//! extrapolation range it implies, and diagnostics telling how far a
//! scenario is from the separated-paths regime.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::channel::{ArrayGeometry, PathParameters, PathSet, PilotGrid, PARAMS_PER_PATH};
use crate::error::{invalid, Error, Result};
use crate::linalg::{equilibrate, equilibrated_condition_number, hermitian_part, symmetric_pd_inverse};

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A pair of paths is treated as separated when every normalized inner
/// product in one domain (delay or angle) is below this value.
pub const SEPARATION_THRESHOLD: f64 = 1e-3;
/// Per-path symmetry products must fall below this value.
pub const SYMMETRY_THRESHOLD: f64 = 1e-6;
/// Relative size of off-diagonal Fisher blocks accepted as "block diagonal".
pub const BLOCK_DIAGONAL_THRESHOLD: f64 = 1e-6;

/// Fisher information of the stacked path parameters, plus the scenario
/// quantities needed by the closed-form bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    /// `5L × 5L`, ordered `(τ, φ, θ, Re α, Im α)` per path.
    pub entries: DMatrix<f64>,
    pub num_paths: usize,
    pub num_antennas: usize,
    pub noise_variance: f64,
    /// `E_T = Σ|s(f_k)|²`.
    pub total_energy: f64,
    /// `σ_F²` of the pilot grid.
    pub mean_squared_bandwidth: f64,
}

impl FisherMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Condition number after unit-diagonal equilibration.
    pub fn condition_number(&self) -> f64 {
        equilibrated_condition_number(&self.entries)
    }

    /// Pair of paths whose parameter blocks are most strongly coupled.
    pub fn most_coupled_pair(&self) -> Option<(usize, usize)> {
        let (n, _) = equilibrate(&self.entries)?;
        let mut best: Option<((usize, usize), f64)> = None;
        for l in 0..self.num_paths {
            for lp in (l + 1)..self.num_paths {
                let mut c: f64 = 0.0;
                for u in 0..PARAMS_PER_PATH {
                    for v in 0..PARAMS_PER_PATH {
                        c = c.max(n[(l * PARAMS_PER_PATH + u, lp * PARAMS_PER_PATH + v)].abs());
                    }
                }
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some(((l, lp), c));
                }
            }
        }
        best.map(|(pair, _)| pair)
    }

    /// Largest `|I_uv| / sqrt(I_uu I_vv)` over entries coupling different paths.
    pub fn max_off_block_coupling(&self) -> f64 {
        let d = &self.entries;
        let mut worst: f64 = 0.0;
        for u in 0..self.dim() {
            for v in 0..self.dim() {
                if u / PARAMS_PER_PATH == v / PARAMS_PER_PATH {
                    continue;
                }
                let num = d[(u, v)].abs();
                if num == 0.0 {
                    continue;
                }
                let den = (d[(u, u)] * d[(v, v)]).sqrt();
                worst = worst.max(if den > 0.0 { num / den } else { f64::INFINITY });
            }
        }
        worst
    }
}

/// Derivatives of the noise-free observation `μ_{m,k}` with respect to every
/// path parameter; row `k·M + m`, column = parameter index.
pub fn observation_derivatives(
    paths: &PathSet,
    array: &ArrayGeometry,
    pilots: &PilotGrid,
) -> DMatrix<Complex64> {
    let m_total = array.num_elements();
    let mut d = DMatrix::zeros(m_total * pilots.len(), paths.num_parameters());
    for (k, (&f, &s)) in pilots.frequencies().iter().zip(pilots.symbols()).enumerate() {
        let block = path_derivative_block(paths, array, f, s);
        d.rows_mut(k * m_total, m_total).copy_from(&block);
    }
    d
}

/// `M × 5L` matrix of `∂(h_m(f) s)/∂ψ_v`.
fn path_derivative_block(
    paths: &PathSet,
    array: &ArrayGeometry,
    frequency: f64,
    symbol: Complex64,
) -> DMatrix<Complex64> {
    let m_total = array.num_elements();
    let mut block = DMatrix::zeros(m_total, paths.num_parameters());
    for (l, p) in paths.iter().enumerate() {
        let (a, da_phi, da_theta) = array.steering_with_gradients(p.azimuth, p.elevation, frequency);
        let e = symbol * Complex64::from_polar(1.0, -2.0 * PI * frequency * p.delay);
        let c = l * PARAMS_PER_PATH;
        for m in 0..m_total {
            block[(m, c)] = p.gain * a[m] * (-J * 2.0 * PI * frequency) * e;
            block[(m, c + 1)] = p.gain * da_phi[m] * e;
            block[(m, c + 2)] = p.gain * da_theta[m] * e;
            block[(m, c + 3)] = a[m] * e;
            block[(m, c + 4)] = J * a[m] * e;
        }
    }
    block
}

/// `[I]_uv = (2/σ_w²) Σ_k Σ_m Re(∂μ*/∂ψ_u ∂μ/∂ψ_v)` with the array pattern
/// evaluated at every pilot frequency.
pub fn fisher_matrix(
    paths: &PathSet,
    array: &ArrayGeometry,
    pilots: &PilotGrid,
    noise_variance: f64,
) -> Result<FisherMatrix> {
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(invalid(format!("noise variance {noise_variance} must be positive")));
    }
    let d = observation_derivatives(paths, array, pilots);
    let gram = d.adjoint() * &d;
    let scale = 2.0 / noise_variance;
    let n = gram.nrows();
    let mut entries = DMatrix::from_fn(n, n, |u, v| scale * gram[(u, v)].re);
    entries = (&entries + entries.transpose()) * 0.5;
    let total_energy = pilots.total_energy();
    let mean_squared_bandwidth = if total_energy > 0.0 {
        weighted_second_moment(pilots)
    } else {
        0.0
    };
    Ok(FisherMatrix {
        entries,
        num_paths: paths.len(),
        num_antennas: array.num_elements(),
        noise_variance,
        total_energy,
        mean_squared_bandwidth,
    })
}

/// `G(f)`: `5L × M`, `[G]_{v,m} = ∂h_m(f)/∂ψ_v`, pattern evaluated at `f`.
pub fn jacobian(paths: &PathSet, array: &ArrayGeometry, frequency: f64) -> DMatrix<Complex64> {
    path_derivative_block(paths, array, frequency, Complex64::new(1.0, 0.0)).transpose()
}

/// Bound on the channel error correlation at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbResult {
    pub frequency: f64,
    /// Bound on `E[(ĥ − h)(ĥ − h)^H]`: `G^T I^{-1} G^*`, the entrywise
    /// conjugate of `G^H I^{-1} G` (same diagonal and trace). Hermitian PSD.
    pub bound_matrix: DMatrix<Complex64>,
    /// `tr C(f) / M`.
    pub mean_bound: f64,
    /// Closed-form separated-paths bound at `f`, when the pilot grid has a
    /// non-zero mean squared bandwidth.
    pub simplified_bound: Option<f64>,
    pub condition_number: f64,
}

impl CrlbResult {
    pub fn per_antenna(&self) -> Vec<f64> {
        self.bound_matrix.diagonal().iter().map(|v| v.re).collect()
    }
}

/// Inverted Fisher matrix, reusable across frequencies.
#[derive(Debug, Clone)]
pub struct FisherInverse {
    inverse: DMatrix<Complex64>,
    condition_number: f64,
    num_antennas: usize,
    simplified: Option<SimplifiedBound>,
}

#[derive(Debug, Clone, Copy)]
struct SimplifiedBound {
    num_paths: usize,
    num_antennas: usize,
    total_energy: f64,
    sigma_f: f64,
    noise_variance: f64,
}

impl FisherInverse {
    /// Refuses matrices whose equilibrated condition number reaches 1e12.
    pub fn new(fisher: &FisherMatrix) -> Result<Self> {
        let inv = symmetric_pd_inverse(&fisher.entries).map_err(|cond| Error::IllConditionedFisher {
            condition_number: cond,
            closest_pair: fisher.most_coupled_pair(),
        })?;
        let simplified = (fisher.total_energy > 0.0 && fisher.mean_squared_bandwidth > 0.0).then(|| {
            SimplifiedBound {
                num_paths: fisher.num_paths,
                num_antennas: fisher.num_antennas,
                total_energy: fisher.total_energy,
                sigma_f: fisher.mean_squared_bandwidth.sqrt(),
                noise_variance: fisher.noise_variance,
            }
        });
        Ok(Self {
            inverse: inv.inverse.map(|v| Complex64::new(v, 0.0)),
            condition_number: inv.condition_number,
            num_antennas: fisher.num_antennas,
            simplified,
        })
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Real-valued `I^{-1}`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.inverse.map(|v| v.re)
    }

    pub fn bound(&self, jac: &DMatrix<Complex64>, frequency: f64) -> Result<CrlbResult> {
        if jac.nrows() != self.inverse.nrows() || jac.ncols() != self.num_antennas {
            return Err(Error::DimensionMismatch(format!(
                "Jacobian is {}x{}, expected {}x{}",
                jac.nrows(),
                jac.ncols(),
                self.inverse.nrows(),
                self.num_antennas
            )));
        }
        // E[e e^H] of the linearized error e = G^T δψ; the conjugate of G^H I^{-1} G
        let c = hermitian_part(&(jac.transpose() * (&self.inverse * jac.conjugate())));
        let mean_bound = c.trace().re / self.num_antennas as f64;
        let simplified_bound = self.simplified.map(|s| {
            simplified_formula(
                s.num_paths,
                s.num_antennas,
                s.total_energy,
                s.sigma_f,
                s.noise_variance,
                frequency,
            )
        });
        Ok(CrlbResult {
            frequency,
            bound_matrix: c,
            mean_bound,
            simplified_bound,
            condition_number: self.condition_number,
        })
    }
}

/// Bound matrix at `frequency` and its antenna average.
pub fn crlb_matrix(fisher: &FisherMatrix, jac: &DMatrix<Complex64>, frequency: f64) -> Result<CrlbResult> {
    FisherInverse::new(fisher)?.bound(jac, frequency)
}

fn simplified_formula(l: usize, m: usize, e_t: f64, sigma_f: f64, noise: f64, f: f64) -> f64 {
    noise / e_t * (l as f64 / m as f64) * (2.0 + 0.5 * (f / sigma_f).powi(2))
}

/// `(σ_w²/E_T)(L/M)(2 + ½(f/σ_F)²)`.
pub fn simplified_crlb(
    num_paths: usize,
    num_antennas: usize,
    total_energy: f64,
    sigma_f: f64,
    noise_variance: f64,
    frequency: f64,
) -> Result<f64> {
    if num_paths == 0 || num_antennas == 0 {
        return Err(invalid("path and antenna counts must be positive"));
    }
    if !(sigma_f > 0.0 && sigma_f.is_finite()) {
        return Err(invalid(format!("mean squared bandwidth root {sigma_f} must be positive")));
    }
    if !(total_energy > 0.0 && noise_variance > 0.0) {
        return Err(invalid("total energy and noise variance must be positive"));
    }
    Ok(simplified_formula(
        num_paths,
        num_antennas,
        total_energy,
        sigma_f,
        noise_variance,
        frequency,
    ))
}

fn weighted_second_moment(pilots: &PilotGrid) -> f64 {
    let num: f64 = pilots
        .frequencies()
        .iter()
        .zip(pilots.energies())
        .map(|(f, e)| f * f * e)
        .sum();
    num / pilots.total_energy()
}

/// `σ_F² = Σ f_k²|s_k|² / Σ|s_k|²`.
pub fn mean_squared_bandwidth(pilots: &PilotGrid) -> Result<f64> {
    if pilots.total_energy() <= 0.0 {
        return Err(invalid("pilot grid carries no energy"));
    }
    Ok(weighted_second_moment(pilots))
}

/// Frequency offset at which the separated-paths bound reaches `γ` times
/// the in-band LS error: `2σ_F sqrt(MKγ/(2L) − 1)`.
pub fn extrapolation_range(
    gamma: f64,
    num_antennas: usize,
    num_pilots: usize,
    num_paths: usize,
    sigma_f: f64,
) -> Result<f64> {
    if num_paths == 0 {
        return Err(invalid("path count must be positive"));
    }
    if !(gamma.is_finite() && gamma > 0.0) || !(sigma_f.is_finite() && sigma_f >= 0.0) {
        return Err(invalid("gamma must be positive and sigma_F non-negative"));
    }
    let ratio = num_antennas as f64 * num_pilots as f64 * gamma / (2.0 * num_paths as f64);
    if ratio < 1.0 {
        return Err(Error::Domain(format!(
            "no extrapolation range exists: MKγ/(2L) = {ratio} < 1"
        )));
    }
    Ok(2.0 * sigma_f * (ratio - 1.0).sqrt())
}

/// Normalized inner products between two paths.
///
/// Each entry is `|x^H y| / (‖x‖‖y‖)`, taking the larger of the two path
/// orderings; a zero-norm vector contributes 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSeparation {
    pub first: usize,
    pub second: usize,
    /// `s^H s'`, `ṡ^H ṡ'`, `ṡ^H s'`.
    pub delay: [f64; 3],
    /// `a^H a'`, `ȧ_θ^H ȧ_θ'`, `ȧ_φ^H ȧ_φ'`, `ȧ_θ^H a'`, `ȧ_φ^H a'`, `ȧ_φ^H ȧ_θ'`.
    pub angular: [f64; 6],
    pub separated_in_delay: bool,
    pub separated_in_angle: bool,
}

impl PairSeparation {
    pub fn separated(&self) -> bool {
        self.separated_in_delay || self.separated_in_angle
    }
}

/// Per-path symmetry products `ṡ^H s`, `ȧ_φ^H a`, `ȧ_θ^H a` (normalized).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSymmetry {
    pub path: usize,
    pub frequency: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub pairs: Vec<PairSeparation>,
    pub paths: Vec<PathSymmetry>,
    pub max_off_block_coupling: f64,
    pub fisher_block_diagonal: bool,
}

impl SeparationReport {
    /// Every pair separated in delay or angle (vacuous for one path).
    pub fn paths_separated(&self) -> bool {
        self.pairs.iter().all(PairSeparation::separated)
    }

    pub fn symmetric(&self) -> bool {
        self.paths.iter().all(|p| p.symmetric)
    }
}

fn normalized_product(x: &DVector<Complex64>, y: &DVector<Complex64>) -> f64 {
    let nx = x.norm();
    let ny = y.norm();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        x.dotc(y).norm() / (nx * ny)
    }
}

fn both_orders(x: &DVector<Complex64>, y: &DVector<Complex64>, xp: &DVector<Complex64>, yp: &DVector<Complex64>) -> f64 {
    normalized_product(x, yp).max(normalized_product(xp, y))
}

struct PathVectors {
    s: DVector<Complex64>,
    s_dot: DVector<Complex64>,
    a: DVector<Complex64>,
    a_phi: DVector<Complex64>,
    a_theta: DVector<Complex64>,
}

fn path_vectors(p: &PathParameters, array: &ArrayGeometry, pilots: &PilotGrid) -> PathVectors {
    let k_total = pilots.len();
    let mut s = DVector::zeros(k_total);
    let mut s_dot = DVector::zeros(k_total);
    for (k, (&f, &sym)) in pilots.frequencies().iter().zip(pilots.symbols()).enumerate() {
        let v = sym * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
        s[k] = v;
        s_dot[k] = -J * 2.0 * PI * f * v;
    }
    // frequency-flat pattern, evaluated at the carrier
    let (a, a_phi, a_theta) = array.steering_with_gradients(p.azimuth, p.elevation, 0.0);
    PathVectors {
        s,
        s_dot,
        a,
        a_phi,
        a_theta,
    }
}

/// Inner-product diagnostics for the separated-paths and symmetry
/// conditions, plus a direct block-diagonality check of the Fisher matrix.
pub fn separation_diagnostics(
    paths: &PathSet,
    array: &ArrayGeometry,
    pilots: &PilotGrid,
) -> SeparationReport {
    let vecs: Vec<PathVectors> = paths.iter().map(|p| path_vectors(p, array, pilots)).collect();
    let mut pairs = Vec::new();
    for l in 0..vecs.len() {
        for lp in (l + 1)..vecs.len() {
            let (x, y) = (&vecs[l], &vecs[lp]);
            let delay = [
                normalized_product(&x.s, &y.s),
                normalized_product(&x.s_dot, &y.s_dot),
                both_orders(&x.s_dot, &y.s_dot, &x.s, &y.s),
            ];
            let angular = [
                normalized_product(&x.a, &y.a),
                normalized_product(&x.a_theta, &y.a_theta),
                normalized_product(&x.a_phi, &y.a_phi),
                both_orders(&x.a_theta, &y.a_theta, &x.a, &y.a),
                both_orders(&x.a_phi, &y.a_phi, &x.a, &y.a),
                both_orders(&x.a_phi, &y.a_phi, &x.a_theta, &y.a_theta),
            ];
            pairs.push(PairSeparation {
                first: l,
                second: lp,
                separated_in_delay: delay.iter().all(|v| *v < SEPARATION_THRESHOLD),
                separated_in_angle: angular.iter().all(|v| *v < SEPARATION_THRESHOLD),
                delay,
                angular,
            });
        }
    }
    let path_symmetry = vecs
        .iter()
        .enumerate()
        .map(|(l, v)| {
            let frequency = normalized_product(&v.s_dot, &v.s);
            let azimuth = normalized_product(&v.a_phi, &v.a);
            let elevation = normalized_product(&v.a_theta, &v.a);
            PathSymmetry {
                path: l,
                frequency,
                azimuth,
                elevation,
                symmetric: frequency < SYMMETRY_THRESHOLD
                    && azimuth < SYMMETRY_THRESHOLD
                    && elevation < SYMMETRY_THRESHOLD,
            }
        })
        .collect();
    let fisher = fisher_matrix(paths, array, pilots, 1.0).expect("unit noise variance is valid");
    let coupling = fisher.max_off_block_coupling();
    SeparationReport {
        pairs,
        paths: path_symmetry,
        max_off_block_coupling: coupling,
        fisher_block_diagonal: coupling < BLOCK_DIAGONAL_THRESHOLD,
    }
}

/// Thresholds for merging nearly coincident paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeThresholds {
    pub delay_gap: f64,
    pub angle_gap: f64,
}

impl MergeThresholds {
    /// Delay gap `1/(10 f_target)` and angle gap 0.1°.
    pub fn for_target_frequency(target_frequency: f64) -> Self {
        Self {
            delay_gap: 1.0 / (10.0 * target_frequency.abs()),
            angle_gap: 0.1_f64.to_radians(),
        }
    }
}

/// Replaces groups of paths that are closer than `thresholds` in delay and
/// both angles by a single path carrying the summed gain (the strongest
/// member's geometry is kept).
pub fn merge_close_paths(paths: &PathSet, thresholds: MergeThresholds) -> PathSet {
    let mut merged: Vec<(PathParameters, f64)> = Vec::new();
    for p in paths {
        let close = merged.iter_mut().find(|(q, _)| {
            (q.delay - p.delay).abs() < thresholds.delay_gap
                && crate::channel::wrap_azimuth(q.azimuth - p.azimuth).abs() < thresholds.angle_gap
                && (q.elevation - p.elevation).abs() < thresholds.angle_gap
        });
        match close {
            Some((q, strongest)) => {
                let power = p.gain.norm_sqr();
                let gain = q.gain + p.gain;
                if power > *strongest {
                    *q = *p;
                    *strongest = power;
                }
                q.gain = gain;
            }
            None => merged.push((*p, p.gain.norm_sqr())),
        }
    }
    PathSet::new(merged.into_iter().map(|(p, _)| p).collect()).expect("merged paths stay valid")
}
