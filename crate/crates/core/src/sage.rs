//! High-resolution path extraction by space-alternating coordinate search.
//!
//! [`sage_initialize`] peels paths off the received pilots one at a time by
//! grid search against the residual. [`sage_refine`] then cycles over the
//! paths, re-fitting delay, azimuth and elevation on successively finer local
//! grids with the complex gain solved in closed form after every move.
//! [`hr_extrapolate`] evaluates the estimated multipath model at any
//! frequency.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{
    channel_response, wrap_azimuth, ArrayGeometry, ChannelVector, PathParameters, PathSet, PilotGrid,
    ReceivedPilots, PARAMS_PER_PATH,
};
use crate::error::{invalid, Error, Result};

/// Local-grid refinement: `stages` zooms after the coarse step, each
/// `factor` times finer, probing `±half_width` steps around the incumbent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    pub stages: usize,
    pub factor: f64,
    pub half_width: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            stages: 3,
            factor: 10.0,
            half_width: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageConfig {
    /// Number of paths to extract.
    pub num_paths: usize,
    /// Coarse delay grid step in seconds.
    pub delay_step: f64,
    /// Coarse angle grid step in radians.
    pub angle_step: f64,
    /// Upper end of the delay search range in seconds.
    pub max_delay: f64,
    /// Maximum number of refinement cycles.
    pub max_iterations: usize,
    /// Stop when a full cycle lowers the objective by less than this fraction.
    pub convergence_threshold: f64,
    pub refinement: Refinement,
    /// Stop adding paths once a new one removes less than this fraction of
    /// the received power. Disabled when `None`.
    pub min_reduction: Option<f64>,
}

impl SageConfig {
    /// Delay step `1/(50B)` and a 1° angle grid.
    pub fn with_defaults(num_paths: usize, bandwidth: f64, max_delay: f64) -> Self {
        Self {
            num_paths,
            delay_step: 1.0 / (50.0 * bandwidth),
            angle_step: 1f64.to_radians(),
            max_delay,
            max_iterations: 50,
            convergence_threshold: 1e-6,
            refinement: Refinement::default(),
            min_reduction: None,
        }
    }

    pub fn validate(&self, bandwidth: f64) -> Result<()> {
        if self.num_paths == 0 {
            return Err(invalid("at least one path must be estimated"));
        }
        if !(self.delay_step > 0.0 && self.delay_step <= 1.0 / bandwidth) {
            return Err(invalid(format!(
                "delay step {} s must lie in (0, 1/B = {} s]",
                self.delay_step,
                1.0 / bandwidth
            )));
        }
        if !(self.angle_step > 0.0 && self.angle_step <= PI / 90.0 * (1.0 + 1e-12)) {
            return Err(invalid(format!(
                "angle step {} rad must lie in (0, π/90]",
                self.angle_step
            )));
        }
        if !(self.max_delay.is_finite() && self.max_delay > 0.0) {
            return Err(invalid("maximum delay must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(invalid("convergence threshold must be positive"));
        }
        let r = &self.refinement;
        if !(r.factor > 1.0) || r.half_width == 0 {
            return Err(invalid("refinement needs factor > 1 and a positive half width"));
        }
        if let Some(frac) = self.min_reduction {
            if !(0.0..1.0).contains(&frac) {
                return Err(invalid("min_reduction must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageResult {
    pub estimated_paths: PathSet,
    /// Paths whose extraction did not lower the residual; their gain is 0.
    pub negligible: Vec<bool>,
    /// Residual power after initialization, then after every cycle.
    pub residual_power: Vec<f64>,
    pub iterations_used: usize,
    /// Residual power after every single-parameter update.
    pub objective_trace: Vec<f64>,
}

impl SageResult {
    pub fn final_residual_power(&self) -> f64 {
        *self.residual_power.last().expect("residual history is never empty")
    }
}

/// Precomputed quantities shared by all searches of one run.
struct Searcher<'a> {
    array: &'a ArrayGeometry,
    frequencies: &'a [f64],
    conj_symbols: Vec<Complex64>,
    wavenumbers: Vec<f64>,
    /// `(first, step)` when the wavenumbers are evenly spaced.
    wavenumber_ramp: Option<(f64, f64)>,
    /// `(first, step)` when the pilot frequencies are evenly spaced.
    frequency_ramp: Option<(f64, f64)>,
    /// `M · E_T`, the squared norm of every path signature.
    signature_energy: f64,
}

impl<'a> Searcher<'a> {
    fn new(array: &'a ArrayGeometry, pilots: &'a PilotGrid) -> Result<Self> {
        let energy = pilots.total_energy();
        if !(energy > 0.0) {
            return Err(invalid("pilot grid carries no energy"));
        }
        let wavenumbers: Vec<f64> = pilots.frequencies().iter().map(|&f| array.wavenumber(f)).collect();
        Ok(Self {
            array,
            frequencies: pilots.frequencies(),
            conj_symbols: pilots.symbols().iter().map(|s| s.conj()).collect(),
            wavenumber_ramp: ramp(&wavenumbers),
            frequency_ramp: ramp(pilots.frequencies()),
            wavenumbers,
            signature_energy: array.num_elements() as f64 * energy,
        })
    }

    fn num_pilots(&self) -> usize {
        self.frequencies.len()
    }

    /// `c_{m,k} = a_m(f_k) e^{-j2πf_kτ} s_k`.
    fn signature(&self, p: &PathParameters) -> DMatrix<Complex64> {
        let proj = self.array.projections(p.azimuth, p.elevation);
        DMatrix::from_fn(proj.len(), self.num_pilots(), |m, k| {
            let phase = -self.wavenumbers[k] * proj[m] - 2.0 * PI * self.frequencies[k] * p.delay;
            Complex64::from_polar(1.0, phase) * self.conj_symbols[k].conj()
        })
    }

    /// `q_k = s_k^* Σ_m a_m(f_k)^* x_{m,k}`.
    fn delay_kernel(&self, x: &DMatrix<Complex64>, azimuth: f64, elevation: f64) -> Vec<Complex64> {
        let proj = self.array.projections(azimuth, elevation);
        (0..self.num_pilots())
            .map(|k| {
                let kappa = self.wavenumbers[k];
                let col = x.column(k);
                let sum: Complex64 = proj
                    .iter()
                    .zip(col.iter())
                    .map(|(p, v)| Complex64::from_polar(1.0, kappa * p) * v)
                    .sum();
                sum * self.conj_symbols[k]
            })
            .collect()
    }

    fn delay_correlation(&self, q: &[Complex64], delay: f64) -> Complex64 {
        if let Some((f0, df)) = self.frequency_ramp {
            let mut w = Complex64::from_polar(1.0, 2.0 * PI * f0 * delay);
            let step = Complex64::from_polar(1.0, 2.0 * PI * df * delay);
            let mut acc = Complex64::new(0.0, 0.0);
            for v in q {
                acc += w * v;
                w *= step;
            }
            return acc;
        }
        self.frequencies
            .iter()
            .zip(q)
            .map(|(f, v)| Complex64::from_polar(1.0, 2.0 * PI * f * delay) * v)
            .sum()
    }

    /// `z_{m,k} = e^{j2πf_kτ} s_k^* x_{m,k}`.
    fn angle_kernel(&self, x: &DMatrix<Complex64>, delay: f64) -> DMatrix<Complex64> {
        let mut z = x.clone();
        for k in 0..self.num_pilots() {
            let w = Complex64::from_polar(1.0, 2.0 * PI * self.frequencies[k] * delay) * self.conj_symbols[k];
            for v in z.column_mut(k).iter_mut() {
                *v *= w;
            }
        }
        z
    }

    fn angle_correlation(&self, z: &DMatrix<Complex64>, azimuth: f64, elevation: f64) -> Complex64 {
        let proj = self.array.projections(azimuth, elevation);
        let mut acc = Complex64::new(0.0, 0.0);
        if let Some((k0, dk)) = self.wavenumber_ramp {
            let m_total = proj.len();
            let data = z.as_slice();
            for (m, p) in proj.iter().enumerate() {
                let mut w = Complex64::from_polar(1.0, k0 * p);
                let step = Complex64::from_polar(1.0, dk * p);
                for k in 0..self.num_pilots() {
                    acc += w * data[k * m_total + m];
                    w *= step;
                }
            }
            return acc;
        }
        for k in 0..self.num_pilots() {
            let kappa = self.wavenumbers[k];
            for (p, v) in proj.iter().zip(z.column(k).iter()) {
                acc += Complex64::from_polar(1.0, kappa * p) * v;
            }
        }
        acc
    }

    /// Angle correlation with the pattern frozen at the carrier, given the
    /// pilot-summed kernel `z_m = Σ_k z_{m,k}`.
    fn carrier_angle_correlation(&self, z_sum: &[Complex64], azimuth: f64, elevation: f64) -> Complex64 {
        let kappa = self.array.wavenumber(0.0);
        let proj = self.array.projections(azimuth, elevation);
        proj.iter()
            .zip(z_sum)
            .map(|(p, v)| Complex64::from_polar(1.0, kappa * p) * v)
            .sum()
    }

    fn score(&self, corr: Complex64) -> f64 {
        corr.norm_sqr() / self.signature_energy
    }

    fn gain(&self, corr: Complex64) -> Complex64 {
        corr / self.signature_energy
    }
}

/// `(first, step)` of an evenly spaced sequence.
fn ramp(values: &[f64]) -> Option<(f64, f64)> {
    let first = *values.first()?;
    let step = if values.len() > 1 { values[1] - first } else { 0.0 };
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    values
        .iter()
        .enumerate()
        .all(|(k, v)| (first + k as f64 * step - v).abs() <= 1e-12 * scale)
        .then_some((first, step))
}

fn power(x: &DMatrix<Complex64>) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

fn check_inputs(
    received: &ReceivedPilots,
    pilots: &PilotGrid,
    array: &ArrayGeometry,
    config: &SageConfig,
) -> Result<()> {
    config.validate(pilots.bandwidth())?;
    let (m, k) = received.samples.shape();
    if m != array.num_elements() || k != pilots.len() {
        return Err(Error::DimensionMismatch(format!(
            "received pilots are {m}x{k}, expected {}x{}",
            array.num_elements(),
            pilots.len()
        )));
    }
    let parameters = PARAMS_PER_PATH * config.num_paths;
    if parameters > m * k {
        return Err(Error::OverParameterized {
            parameters,
            observations: m * k,
        });
    }
    Ok(())
}

struct Grids {
    delays: Vec<f64>,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

impl Grids {
    fn new(config: &SageConfig) -> Self {
        let n_delay = (config.max_delay / config.delay_step + 1e-9).floor() as usize;
        let n_az = (2.0 * PI / config.angle_step - 1e-9).ceil() as usize;
        let n_el = (PI / config.angle_step + 1e-9).floor() as usize;
        Self {
            delays: (0..=n_delay).map(|i| i as f64 * config.delay_step).collect(),
            azimuths: (0..n_az).map(|i| -PI + i as f64 * config.angle_step).collect(),
            elevations: (0..=n_el).map(|i| i as f64 * config.angle_step).collect(),
        }
    }
}

/// Index of the first maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Coarse search for the strongest remaining path in `x`.
fn coarse_search(s: &Searcher<'_>, grids: &Grids, x: &DMatrix<Complex64>) -> (f64, f64, f64) {
    // delay: energy collected over all antennas, angles unknown
    let weighted = DMatrix::from_fn(x.nrows(), x.ncols(), |m, k| x[(m, k)] * s.conj_symbols[k]);
    let phases = DMatrix::from_fn(s.num_pilots(), grids.delays.len(), |k, i| {
        Complex64::from_polar(1.0, 2.0 * PI * s.frequencies[k] * grids.delays[i])
    });
    let beams = weighted * phases;
    let delay_idx = argmax(beams.column_iter().map(|c| c.norm_squared()));
    let mut delay = grids.delays[delay_idx];

    // angles: carrier-frequency beamforming at that delay
    let z = s.angle_kernel(x, delay);
    let z_sum: Vec<Complex64> = z.row_iter().map(|r| r.sum()).collect();
    let n_el = grids.elevations.len();
    let angle_idx = argmax(grids.azimuths.iter().flat_map(|&az| {
        let z_sum = &z_sum;
        grids
            .elevations
            .iter()
            .map(move |&el| s.carrier_angle_correlation(z_sum, az, el).norm_sqr())
    }));
    let mut azimuth = grids.azimuths[angle_idx / n_el];
    let mut elevation = grids.elevations[angle_idx % n_el];

    // coherent re-search of each coordinate with the exact pattern
    let q = s.delay_kernel(x, azimuth, elevation);
    delay = grids.delays[argmax(grids.delays.iter().map(|&t| s.delay_correlation(&q, t).norm_sqr()))];
    let z = s.angle_kernel(x, delay);
    azimuth = grids.azimuths
        [argmax(grids.azimuths.iter().map(|&az| s.angle_correlation(&z, az, elevation).norm_sqr()))];
    elevation = grids.elevations
        [argmax(grids.elevations.iter().map(|&el| s.angle_correlation(&z, azimuth, el).norm_sqr()))];
    (delay, azimuth, elevation)
}

/// Successive cancellation: extracts paths one by one from the residual.
pub fn sage_initialize(
    received: &ReceivedPilots,
    pilots: &PilotGrid,
    array: &ArrayGeometry,
    config: &SageConfig,
) -> Result<SageResult> {
    check_inputs(received, pilots, array, config)?;
    let searcher = Searcher::new(array, pilots)?;
    let grids = Grids::new(config);
    let mut residual = received.samples.clone();
    let received_power = power(&residual);
    let mut paths = Vec::with_capacity(config.num_paths);
    let mut negligible = Vec::with_capacity(config.num_paths);
    let mut trace = Vec::with_capacity(config.num_paths);

    for l in 0..config.num_paths {
        let (delay, azimuth, elevation) = coarse_search(&searcher, &grids, &residual);
        let corr = searcher.angle_correlation(&searcher.angle_kernel(&residual, delay), azimuth, elevation);
        let reduction = searcher.score(corr);
        if let Some(frac) = config.min_reduction {
            if l > 0 && reduction < frac * received_power {
                log::debug!("stopping after {l} paths: next path removes {reduction:e}");
                break;
            }
        }
        let is_negligible = !(reduction > f64::EPSILON * received_power);
        let gain = if is_negligible {
            Complex64::new(0.0, 0.0)
        } else {
            searcher.gain(corr)
        };
        let path = PathParameters::new(gain, delay, azimuth, elevation);
        if !is_negligible {
            residual -= searcher.signature(&path) * gain;
        }
        paths.push(path);
        negligible.push(is_negligible);
        trace.push(power(&residual));
    }

    Ok(SageResult {
        estimated_paths: PathSet::new(paths)?,
        negligible,
        residual_power: vec![power(&residual)],
        iterations_used: 0,
        objective_trace: trace,
    })
}

/// Maximizes `score` along one coordinate on successively finer grids
/// centred on the incumbent; moves only on strict improvement.
fn line_search(
    start: f64,
    coarse_step: f64,
    refinement: &Refinement,
    constrain: impl Fn(f64) -> f64,
    mut score: impl FnMut(f64) -> f64,
) -> f64 {
    let mut best = start;
    let mut best_score = score(start);
    let half = refinement.half_width as i64;
    for stage in 0..=refinement.stages {
        let step = coarse_step / refinement.factor.powi(stage as i32);
        let centre = best;
        for n in -half..=half {
            if n == 0 {
                continue;
            }
            let candidate = constrain(centre + n as f64 * step);
            let value = score(candidate);
            if value > best_score {
                best = candidate;
                best_score = value;
            }
        }
    }
    best
}

/// Cyclic per-path refinement starting from `init`.
pub fn sage_refine(
    init: &SageResult,
    received: &ReceivedPilots,
    pilots: &PilotGrid,
    array: &ArrayGeometry,
    config: &SageConfig,
) -> Result<SageResult> {
    check_inputs(received, pilots, array, config)?;
    if init.negligible.len() != init.estimated_paths.len() {
        return Err(Error::DimensionMismatch(
            "negligible flags do not match the path count".into(),
        ));
    }
    let searcher = Searcher::new(array, pilots)?;
    let max_delay = config.max_delay + config.delay_step;
    let mut paths: Vec<PathParameters> = init.estimated_paths.paths().to_vec();
    let mut signatures: Vec<DMatrix<Complex64>> = paths.iter().map(|p| searcher.signature(p)).collect();
    let mut residual = received.samples.clone();
    for (p, c) in paths.iter().zip(&signatures) {
        residual -= c * p.gain;
    }
    let mut objective = power(&residual);
    let mut residual_power = vec![objective];
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let cycle_start = objective;
        for l in 0..paths.len() {
            if init.negligible[l] {
                continue;
            }
            let x = &residual + &signatures[l] * paths[l].gain;
            let mut p = paths[l];
            let refit = |p: &mut PathParameters, trace: &mut Vec<f64>| {
                let sig = searcher.signature(p);
                let corr = sig.iter().zip(x.iter()).map(|(c, v)| c.conj() * v).sum();
                p.gain = searcher.gain(corr);
                let r = &x - &sig * p.gain;
                trace.push(power(&r));
                (sig, r)
            };

            let q = searcher.delay_kernel(&x, p.azimuth, p.elevation);
            p.delay = line_search(
                p.delay,
                config.delay_step,
                &config.refinement,
                |t| t.clamp(0.0, max_delay),
                |t| searcher.delay_correlation(&q, t).norm_sqr(),
            );
            refit(&mut p, &mut trace);

            let z = searcher.angle_kernel(&x, p.delay);
            p.azimuth = line_search(p.azimuth, config.angle_step, &config.refinement, wrap_azimuth, |az| {
                searcher.angle_correlation(&z, az, p.elevation).norm_sqr()
            });
            refit(&mut p, &mut trace);

            p.elevation = line_search(
                p.elevation,
                config.angle_step,
                &config.refinement,
                |el| el.clamp(0.0, PI),
                |el| searcher.angle_correlation(&z, p.azimuth, el).norm_sqr(),
            );
            let (sig, r) = refit(&mut p, &mut trace);

            paths[l] = p;
            signatures[l] = sig;
            residual = r;
        }
        iterations += 1;
        objective = power(&residual);
        log::trace!("cycle {iterations}: residual power {objective:e}");
        residual_power.push(objective);
        if !(cycle_start > 0.0) || (cycle_start - objective) / cycle_start < config.convergence_threshold {
            break;
        }
    }

    Ok(SageResult {
        estimated_paths: PathSet::new(paths)?,
        negligible: init.negligible.clone(),
        residual_power,
        iterations_used: iterations,
        objective_trace: trace,
    })
}

/// Initialization followed by refinement.
pub fn sage_estimate(
    received: &ReceivedPilots,
    pilots: &PilotGrid,
    array: &ArrayGeometry,
    config: &SageConfig,
) -> Result<SageResult> {
    let init = sage_initialize(received, pilots, array, config)?;
    sage_refine(&init, received, pilots, array, config)
}

/// Channel implied by the estimated paths at baseband frequency `frequency`.
pub fn hr_extrapolate(result: &SageResult, array: &ArrayGeometry, frequency: f64) -> ChannelVector {
    channel_response(&result.estimated_paths, array, frequency)
}
