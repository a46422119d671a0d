//! Ground-truth physical channel.
//!
//! Specular multipath model: every path carries a complex gain, a delay and
//! an azimuth/elevation direction of arrival, and the base-station array sees
//! each path through a frequency-dependent element pattern. All frequencies
//! are baseband: `0 Hz` is the uplink carrier.
//!
//! Direction convention: `ê(φ, θ) = (cos φ sin θ, sin φ sin θ, cos θ)` with
//! azimuth `φ ∈ [−π, π)` and elevation (polar angle) `θ ∈ [0, π]`. Planar
//! arrays built by [`build_planar_array`] lie in the x–z plane (columns along
//! x, rows along z), so broadside is the ±y axis and the array cannot tell
//! `φ` from `−φ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{complex_gaussian, derive_seed};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of real parameters describing one path.
pub const PARAMS_PER_PATH: usize = 5;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// One real coordinate of a path, in parameter-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathParameterKind {
    Delay,
    Azimuth,
    Elevation,
    GainRe,
    GainIm,
}

impl PathParameterKind {
    pub const ALL: [PathParameterKind; PARAMS_PER_PATH] = [
        PathParameterKind::Delay,
        PathParameterKind::Azimuth,
        PathParameterKind::Elevation,
        PathParameterKind::GainRe,
        PathParameterKind::GainIm,
    ];

    /// Offset of this coordinate inside a path's 5-block.
    pub fn offset(self) -> usize {
        match self {
            PathParameterKind::Delay => 0,
            PathParameterKind::Azimuth => 1,
            PathParameterKind::Elevation => 2,
            PathParameterKind::GainRe => 3,
            PathParameterKind::GainIm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PathParameterKind::Delay => "delay",
            PathParameterKind::Azimuth => "azimuth",
            PathParameterKind::Elevation => "elevation",
            PathParameterKind::GainRe => "gain_re",
            PathParameterKind::GainIm => "gain_im",
        }
    }
}

/// Index of `kind` of path `path` in the stacked parameter vector.
pub fn parameter_index(path: usize, kind: PathParameterKind) -> usize {
    path * PARAMS_PER_PATH + kind.offset()
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_azimuth(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = (angle + PI).rem_euclid(two_pi);
    if r >= two_pi {
        r = 0.0;
    }
    r - PI
}

/// Parameters of a single specular path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParameters {
    /// Complex amplitude (linear).
    pub gain: Complex64,
    /// Propagation delay in seconds.
    pub delay: f64,
    /// Azimuth of arrival in radians.
    pub azimuth: f64,
    /// Elevation (polar angle from +z) in radians.
    pub elevation: f64,
}

impl PathParameters {
    pub fn new(gain: Complex64, delay: f64, azimuth: f64, elevation: f64) -> Self {
        Self {
            gain,
            delay,
            azimuth,
            elevation,
        }
    }

    fn validated(mut self, index: usize) -> Result<Self> {
        let finite = self.gain.re.is_finite()
            && self.gain.im.is_finite()
            && self.delay.is_finite()
            && self.azimuth.is_finite()
            && self.elevation.is_finite();
        if !finite {
            return Err(invalid(format!("path {index} has non-finite parameters")));
        }
        if self.delay < 0.0 {
            return Err(invalid(format!("path {index} has negative delay {}", self.delay)));
        }
        if !(0.0..=PI).contains(&self.elevation) {
            return Err(invalid(format!(
                "path {index} elevation {} outside [0, π]",
                self.elevation
            )));
        }
        self.azimuth = wrap_azimuth(self.azimuth);
        Ok(self)
    }
}

/// Ordered, non-empty collection of paths.
///
/// The stacked real parameter vector is `(τ, φ, θ, Re α, Im α)` per path,
/// concatenated in path order; Fisher and Jacobian indexing follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PathParameters>", into = "Vec<PathParameters>")]
pub struct PathSet {
    paths: Vec<PathParameters>,
}

impl PathSet {
    /// Validates and stores the paths; azimuths are wrapped into `[−π, π)`.
    pub fn new(paths: Vec<PathParameters>) -> Result<Self> {
        if paths.is_empty() {
            return Err(invalid("a path set needs at least one path"));
        }
        let paths = paths
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.validated(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PathParameters] {
        &self.paths
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PathParameters> {
        self.paths.iter()
    }

    pub fn num_parameters(&self) -> usize {
        self.paths.len() * PARAMS_PER_PATH
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    /// Concatenation `self ∪ other`, preserving order.
    pub fn concat(&self, other: &PathSet) -> PathSet {
        let mut paths = self.paths.clone();
        paths.extend_from_slice(&other.paths);
        PathSet { paths }
    }

    pub fn to_parameter_vector(&self) -> Vec<f64> {
        self.paths
            .iter()
            .flat_map(|p| [p.delay, p.azimuth, p.elevation, p.gain.re, p.gain.im])
            .collect()
    }

    pub fn from_parameter_vector(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() % PARAMS_PER_PATH != 0 {
            return Err(invalid(format!(
                "parameter vector length {} is not a positive multiple of {PARAMS_PER_PATH}",
                values.len()
            )));
        }
        let paths = values
            .chunks_exact(PARAMS_PER_PATH)
            .map(|c| PathParameters::new(Complex64::new(c[3], c[4]), c[0], c[1], c[2]))
            .collect();
        Self::new(paths)
    }
}

impl TryFrom<Vec<PathParameters>> for PathSet {
    type Error = Error;

    fn try_from(paths: Vec<PathParameters>) -> Result<Self> {
        PathSet::new(paths)
    }
}

impl From<PathSet> for Vec<PathParameters> {
    fn from(set: PathSet) -> Self {
        set.paths
    }
}

impl<'a> IntoIterator for &'a PathSet {
    type Item = &'a PathParameters;
    type IntoIter = std::slice::Iter<'a, PathParameters>;

    fn into_iter(self) -> Self::IntoIter {
        self.paths.iter()
    }
}

/// Rule used to evaluate the element pattern `a_m(φ, θ, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementPattern {
    /// Isotropic elements: pure phase shift at wavenumber `2π(f_c + f)/c`,
    /// which includes beam squint across frequency.
    #[default]
    Isotropic,
    /// Isotropic elements with the phase frozen at the carrier, i.e. the
    /// pattern is forced to be frequency-flat.
    IsotropicFrozen,
}

/// Unit direction of arrival.
pub fn direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    [cp * st, sp * st, ct]
}

fn direction_d_azimuth(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sp, cp) = azimuth.sin_cos();
    let st = elevation.sin();
    [-sp * st, cp * st, 0.0]
}

fn direction_d_elevation(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    [cp * ct, sp * ct, -st]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Base-station array: element positions relative to the array centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<[f64; 3]>,
    carrier_frequency: f64,
    element_pattern: ElementPattern,
}

impl ArrayGeometry {
    /// Positions must be distinct and sum to the zero vector.
    pub fn new(
        positions: Vec<[f64; 3]>,
        carrier_frequency: f64,
        element_pattern: ElementPattern,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("array needs at least one element"));
        }
        if !(carrier_frequency.is_finite() && carrier_frequency > 0.0) {
            return Err(invalid(format!("carrier frequency {carrier_frequency} must be positive")));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("element positions must be finite"));
        }
        let mut sum = [0.0; 3];
        let mut extent: f64 = 0.0;
        for p in &positions {
            for i in 0..3 {
                sum[i] += p[i];
                extent = extent.max(p[i].abs());
            }
        }
        let tol = 1e-9 * extent.max(1.0) * positions.len() as f64;
        if sum.iter().any(|s| s.abs() > tol) {
            return Err(invalid(format!("element positions sum to {sum:?}, not the origin")));
        }
        for (i, a) in positions.iter().enumerate() {
            for (j, b) in positions.iter().enumerate().skip(i + 1) {
                let d2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
                if d2.sqrt() <= 1e-12 {
                    return Err(invalid(format!("elements {i} and {j} share a position")));
                }
            }
        }
        Ok(Self {
            positions,
            carrier_frequency,
            element_pattern,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }

    pub fn element_pattern(&self) -> ElementPattern {
        self.element_pattern
    }

    pub fn carrier_wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Same geometry evaluated with another pattern rule.
    pub fn with_pattern(mut self, pattern: ElementPattern) -> Self {
        self.element_pattern = pattern;
        self
    }

    /// Phase wavenumber applied to `r_m · ê` at baseband frequency `f`.
    pub fn wavenumber(&self, frequency: f64) -> f64 {
        let f = match self.element_pattern {
            ElementPattern::Isotropic => self.carrier_frequency + frequency,
            ElementPattern::IsotropicFrozen => self.carrier_frequency,
        };
        2.0 * PI * f / SPEED_OF_LIGHT
    }

    /// `r_m · ê(φ, θ)` for every element.
    pub fn projections(&self, azimuth: f64, elevation: f64) -> Vec<f64> {
        let e = direction(azimuth, elevation);
        self.positions.iter().map(|r| dot(r, &e)).collect()
    }

    /// Pattern of every element toward `(φ, θ)` at frequency `f`.
    pub fn steering(&self, azimuth: f64, elevation: f64, frequency: f64) -> DVector<Complex64> {
        let k = self.wavenumber(frequency);
        let e = direction(azimuth, elevation);
        DVector::from_iterator(
            self.positions.len(),
            self.positions
                .iter()
                .map(|r| Complex64::from_polar(1.0, -k * dot(r, &e))),
        )
    }

    /// Steering vector plus its azimuth and elevation derivatives.
    pub fn steering_with_gradients(
        &self,
        azimuth: f64,
        elevation: f64,
        frequency: f64,
    ) -> (DVector<Complex64>, DVector<Complex64>, DVector<Complex64>) {
        let m = self.positions.len();
        let k = self.wavenumber(frequency);
        let e = direction(azimuth, elevation);
        let de_dphi = direction_d_azimuth(azimuth, elevation);
        let de_dtheta = direction_d_elevation(azimuth, elevation);
        let mut a = DVector::zeros(m);
        let mut da_dphi = DVector::zeros(m);
        let mut da_dtheta = DVector::zeros(m);
        for (i, r) in self.positions.iter().enumerate() {
            let v = Complex64::from_polar(1.0, -k * dot(r, &e));
            a[i] = v;
            da_dphi[i] = v * (-J * k * dot(r, &de_dphi));
            da_dtheta[i] = v * (-J * k * dot(r, &de_dtheta));
        }
        (a, da_dphi, da_dtheta)
    }

    fn check_element(&self, element: usize) -> Result<&[f64; 3]> {
        self.positions.get(element).ok_or_else(|| {
            invalid(format!(
                "element {element} out of range for a {}-element array",
                self.positions.len()
            ))
        })
    }
}

/// Rectangular `rows × cols` array in the x–z plane, centred on the origin.
pub fn build_planar_array(
    rows: usize,
    cols: usize,
    spacing: f64,
    carrier_frequency: f64,
) -> Result<ArrayGeometry> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("array dimensions {rows}x{cols} must be positive")));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(invalid(format!("element spacing {spacing} must be positive")));
    }
    let row_center = (rows as f64 - 1.0) / 2.0;
    let col_center = (cols as f64 - 1.0) / 2.0;
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 - col_center) * spacing;
            let z = (r as f64 - row_center) * spacing;
            positions.push([x, 0.0, z]);
        }
    }
    ArrayGeometry::new(positions, carrier_frequency, ElementPattern::Isotropic)
}

/// Half-wavelength spaced planar array at `carrier_frequency`.
pub fn half_wavelength_planar_array(
    rows: usize,
    cols: usize,
    carrier_frequency: f64,
) -> Result<ArrayGeometry> {
    if !(carrier_frequency.is_finite() && carrier_frequency > 0.0) {
        return Err(invalid(format!("carrier frequency {carrier_frequency} must be positive")));
    }
    build_planar_array(rows, cols, SPEED_OF_LIGHT / carrier_frequency / 2.0, carrier_frequency)
}

/// `a_m(φ, θ, f)` for one element.
pub fn antenna_pattern(
    array: &ArrayGeometry,
    element: usize,
    azimuth: f64,
    elevation: f64,
    frequency: f64,
) -> Result<Complex64> {
    let r = array.check_element(element)?;
    let phase = -array.wavenumber(frequency) * dot(r, &direction(azimuth, elevation));
    Ok(Complex64::from_polar(1.0, phase))
}

/// `(∂a_m/∂φ, ∂a_m/∂θ)` evaluated analytically.
pub fn antenna_pattern_gradients(
    array: &ArrayGeometry,
    element: usize,
    azimuth: f64,
    elevation: f64,
    frequency: f64,
) -> Result<(Complex64, Complex64)> {
    let r = array.check_element(element)?;
    let k = array.wavenumber(frequency);
    let a = Complex64::from_polar(1.0, -k * dot(r, &direction(azimuth, elevation)));
    let d_phi = a * (-J * k * dot(r, &direction_d_azimuth(azimuth, elevation)));
    let d_theta = a * (-J * k * dot(r, &direction_d_elevation(azimuth, elevation)));
    Ok((d_phi, d_theta))
}

/// Uplink pilot layout: baseband frequencies and transmitted symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotGrid {
    frequencies: Vec<f64>,
    symbols: Vec<Complex64>,
    bandwidth: f64,
}

impl PilotGrid {
    pub fn new(frequencies: Vec<f64>, symbols: Vec<Complex64>, bandwidth: f64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(invalid("pilot grid needs at least one pilot"));
        }
        if frequencies.len() != symbols.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pilot frequencies but {} symbols",
                frequencies.len(),
                symbols.len()
            )));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid(format!("bandwidth {bandwidth} must be positive")));
        }
        let edge = bandwidth / 2.0 * (1.0 + 1e-12);
        for (k, &f) in frequencies.iter().enumerate() {
            if !f.is_finite() || f.abs() > edge {
                return Err(invalid(format!(
                    "pilot {k} at {f} Hz lies outside [−B/2, B/2] for B = {bandwidth} Hz"
                )));
            }
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("pilot frequencies must be strictly increasing"));
        }
        if symbols.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(invalid("pilot symbols must be finite"));
        }
        Ok(Self {
            frequencies,
            symbols,
            bandwidth,
        })
    }

    /// `K` equal-energy pilots evenly spread over `[−B/2, B/2]`.
    pub fn uniform(bandwidth: f64, num_pilots: usize, energy: f64) -> Result<Self> {
        if num_pilots == 0 {
            return Err(invalid("pilot grid needs at least one pilot"));
        }
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(invalid(format!("pilot energy {energy} must be non-negative")));
        }
        let frequencies = if num_pilots == 1 {
            vec![0.0]
        } else {
            let spacing = bandwidth / (num_pilots - 1) as f64;
            let center = (num_pilots - 1) as f64 / 2.0;
            (0..num_pilots).map(|k| (k as f64 - center) * spacing).collect()
        };
        let symbols = vec![Complex64::new(energy.sqrt(), 0.0); num_pilots];
        Self::new(frequencies, symbols, bandwidth)
    }

    /// Equal-energy pilots spaced `1/τ_max` apart, `K = B·τ_max + 1`.
    pub fn from_max_delay(bandwidth: f64, max_delay: f64, energy: f64) -> Result<Self> {
        if !(max_delay.is_finite() && max_delay > 0.0) {
            return Err(invalid(format!("max delay {max_delay} must be positive")));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid(format!("bandwidth {bandwidth} must be positive")));
        }
        let intervals = (bandwidth * max_delay + 1e-9).floor() as usize;
        let k_total = intervals + 1;
        let center = intervals as f64 / 2.0;
        let frequencies = (0..k_total).map(|k| (k as f64 - center) / max_delay).collect();
        let symbols = vec![Complex64::new(energy.sqrt(), 0.0); k_total];
        Self::new(frequencies, symbols, bandwidth)
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.symbols.iter().map(|s| s.norm_sqr())
    }

    /// `E_T = Σ_k |s(f_k)|²`.
    pub fn total_energy(&self) -> f64 {
        self.energies().sum()
    }

    /// Average per-pilot energy `E_T / K` (equals `E_s` for equal-energy pilots).
    pub fn mean_energy(&self) -> f64 {
        self.total_energy() / self.len() as f64
    }

    /// Index of the pilot sitting at `frequency`, if any (1e-6 Hz tolerance).
    pub fn index_of(&self, frequency: f64) -> Option<usize> {
        self.frequencies
            .iter()
            .position(|&f| (f - frequency).abs() <= 1e-6)
    }
}

/// Channel frequency response of the whole array at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub frequency: f64,
    pub values: DVector<Complex64>,
}

impl ChannelVector {
    pub fn new(frequency: f64, values: DVector<Complex64>) -> Self {
        Self { frequency, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.norm_squared()
    }
}

/// OFDM-demodulated pilots `r_m(f_k)`, one row per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPilots {
    pub samples: DMatrix<Complex64>,
    pub noise_variance: f64,
}

impl ReceivedPilots {
    pub fn num_antennas(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_pilots(&self) -> usize {
        self.samples.ncols()
    }
}

/// `h_m(f) = Σ_l α_l a_m(φ_l, θ_l, f) e^{−j2πfτ_l}` for every element.
pub fn channel_response(paths: &PathSet, array: &ArrayGeometry, frequency: f64) -> ChannelVector {
    let mut values = DVector::zeros(array.num_elements());
    for p in paths {
        let phase = Complex64::from_polar(1.0, -2.0 * PI * frequency * p.delay);
        values += array.steering(p.azimuth, p.elevation, frequency) * (p.gain * phase);
    }
    ChannelVector::new(frequency, values)
}

/// Noise-free pilot observations `h_m(f_k) s(f_k)`.
pub fn pilot_mean(paths: &PathSet, array: &ArrayGeometry, pilots: &PilotGrid) -> DMatrix<Complex64> {
    let mut mean = DMatrix::zeros(array.num_elements(), pilots.len());
    for (k, (&f, &s)) in pilots.frequencies().iter().zip(pilots.symbols()).enumerate() {
        let h = channel_response(paths, array, f);
        mean.column_mut(k).copy_from(&(h.values * s));
    }
    mean
}

/// Noisy uplink pilots; noise sample `(m, k)` comes from its own stream
/// keyed by `m·K + k`, so the output is a pure function of `seed`.
pub fn simulate_pilots(
    paths: &PathSet,
    array: &ArrayGeometry,
    pilots: &PilotGrid,
    noise_variance: f64,
    seed: u64,
) -> Result<ReceivedPilots> {
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(invalid(format!("noise variance {noise_variance} must be non-negative")));
    }
    let mut samples = pilot_mean(paths, array, pilots);
    if noise_variance > 0.0 {
        let k_total = pilots.len();
        for m in 0..samples.nrows() {
            for k in 0..k_total {
                let index = (m * k_total + k) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
                samples[(m, k)] += complex_gaussian(&mut rng, noise_variance);
            }
        }
    }
    Ok(ReceivedPilots {
        samples,
        noise_variance,
    })
}
