#![allow(dead_code)]

use std::f64::consts::PI;

use fddx::channel::{
    channel_response, half_wavelength_planar_array, pilot_mean, ArrayGeometry, PathParameters, PathSet, PilotGrid,
};
use fddx::rng::complex_gaussian;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

pub const FC: f64 = 3.5e9;
pub const B: f64 = 20e6;
pub const TAU_MAX: f64 = 2.5e-6;

/// Central-difference step for each parameter kind (τ, φ, θ, Re α, Im α).
pub const FD_STEPS: [f64; 5] = [1e-12, 1e-6, 1e-6, 1e-6, 1e-6];

pub fn array(rows: usize, cols: usize) -> ArrayGeometry {
    half_wavelength_planar_array(rows, cols, FC).unwrap()
}

pub fn default_pilots() -> PilotGrid {
    PilotGrid::from_max_delay(B, TAU_MAX, 1.0).unwrap()
}

/// Three paths well apart in delay and angle, all with negative azimuth so
/// the x–z array's mirror ambiguity never maps one onto another.
pub fn separated_paths() -> PathSet {
    let g = 1.0 / 3f64.sqrt();
    PathSet::new(vec![
        PathParameters::new(Complex64::from_polar(g, 0.4), 0.3e-6, (-40f64).to_radians(), 80f64.to_radians()),
        PathParameters::new(Complex64::from_polar(g, 2.1), 1.1e-6, (-95f64).to_radians(), 105f64.to_radians()),
        PathParameters::new(Complex64::from_polar(g, -1.3), 1.9e-6, (-150f64).to_radians(), 70f64.to_radians()),
    ])
    .unwrap()
}

pub fn random_paths<R: Rng>(rng: &mut R, num_paths: usize) -> PathSet {
    PathSet::new(
        (0..num_paths)
            .map(|_| {
                PathParameters::new(
                    complex_gaussian(rng, 1.0 / num_paths as f64),
                    rng.random_range(0.05e-6..TAU_MAX),
                    rng.random_range(-PI..PI),
                    rng.random_range(0.2..PI - 0.2),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// Uniform grid with random symbol magnitudes and phases.
pub fn random_pilots<R: Rng>(rng: &mut R, num_pilots: usize) -> PilotGrid {
    let spacing = B / (num_pilots - 1) as f64;
    let centre = (num_pilots - 1) as f64 / 2.0;
    let freqs = (0..num_pilots).map(|k| (k as f64 - centre) * spacing).collect();
    let symbols = (0..num_pilots)
        .map(|_| Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(-PI..PI)))
        .collect();
    PilotGrid::new(freqs, symbols, B).unwrap()
}

fn perturbed(paths: &PathSet, v: usize, delta: f64) -> PathSet {
    let mut psi = paths.to_parameter_vector();
    psi[v] += delta;
    PathSet::from_parameter_vector(&psi).unwrap()
}

/// Fisher matrix from central differences of the noise-free pilots.
pub fn fisher_by_differences(paths: &PathSet, array: &ArrayGeometry, pilots: &PilotGrid, noise: f64) -> DMatrix<f64> {
    let n = paths.num_parameters();
    let cols: Vec<Vec<Complex64>> = (0..n)
        .map(|v| {
            let h = FD_STEPS[v % 5];
            let up = pilot_mean(&perturbed(paths, v, h), array, pilots);
            let down = pilot_mean(&perturbed(paths, v, -h), array, pilots);
            up.iter().zip(down.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |u, v| {
        let s: Complex64 = cols[u].iter().zip(&cols[v]).map(|(a, b)| a.conj() * b).sum();
        2.0 / noise * s.re
    })
}

/// `∂h_m(f)/∂ψ_v` from central differences.
pub fn jacobian_by_differences(paths: &PathSet, array: &ArrayGeometry, frequency: f64) -> DMatrix<Complex64> {
    let n = paths.num_parameters();
    let m = array.num_elements();
    let mut g = DMatrix::zeros(n, m);
    for v in 0..n {
        let h = FD_STEPS[v % 5];
        let up = channel_response(&perturbed(paths, v, h), array, frequency).values;
        let down = channel_response(&perturbed(paths, v, -h), array, frequency).values;
        for i in 0..m {
            g[(v, i)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    g
}

/// Largest `|A_uv − B_uv| / sqrt(A_uu A_vv)`.
pub fn equilibrated_error(analytic: &DMatrix<f64>, oracle: &DMatrix<f64>) -> f64 {
    let n = analytic.nrows();
    let mut worst: f64 = 0.0;
    for u in 0..n {
        for v in 0..n {
            let scale = (analytic[(u, u)] * analytic[(v, v)]).sqrt();
            worst = worst.max((analytic[(u, v)] - oracle[(u, v)]).abs() / scale);
        }
    }
    worst
}

/// Largest per-row `max_m |A_vm − B_vm| / max_m |A_vm|` over rows with a
/// nonzero analytic entry; rows that vanish analytically must vanish in the
/// oracle to within `floor`.
pub fn row_relative_error(analytic: &DMatrix<Complex64>, oracle: &DMatrix<Complex64>, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for v in 0..analytic.nrows() {
        let scale = analytic.row(v).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = analytic
            .row(v)
            .iter()
            .zip(oracle.row(v).iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff / floor });
    }
    worst
}

/// Dense complex solve by Gaussian elimination with partial pivoting.
pub fn gaussian_solve(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> DVector<Complex64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm()))
            .unwrap();
        m.swap_rows(col, pivot);
        x.swap_rows(col, pivot);
        for row in col + 1..n {
            let factor = m[(row, col)] / m[(col, col)];
            for c in col..n {
                let t = m[(col, c)];
                m[(row, c)] -= factor * t;
            }
            let t = x[col];
            x[row] -= factor * t;
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for c in row + 1..n {
            acc -= m[(row, c)] * x[c];
        }
        x[row] = acc / m[(row, row)];
    }
    x
}

/// Boxcar of `taps` unit taps convolved with itself three times. Its
/// transform has a triple zero at every non-integer multiple of `1/taps`.
pub fn triple_boxcar(taps: usize) -> Vec<f64> {
    let box_ = vec![1.0; taps];
    let conv = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    conv(&conv(&box_, &box_), &box_)
}

/// Symmetric grid of `3N − 2` pilots spaced `spacing` apart whose energies
/// follow [`triple_boxcar`], normalized to unit mean energy.
pub fn orthogonal_pilots(taps: usize, spacing: f64) -> PilotGrid {
    let energies = triple_boxcar(taps);
    let k = energies.len();
    let mean = energies.iter().sum::<f64>() / k as f64;
    let centre = (k - 1) as f64 / 2.0;
    let freqs = (0..k).map(|i| (i as f64 - centre) * spacing).collect();
    let symbols = energies.iter().map(|e| Complex64::new((e / mean).sqrt(), 0.0)).collect();
    PilotGrid::new(freqs, symbols, (k - 1) as f64 * spacing).unwrap()
}

/// Per-antenna mean `‖a − b‖² / M`.
pub fn mean_squared_error(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}
