mod common;

use common::*;
use fddx::channel::{ElementPattern, PathParameters, PathSet, PilotGrid};
use fddx::crlb::{
    extrapolation_range, fisher_matrix, jacobian, mean_squared_bandwidth, separation_diagnostics, simplified_crlb,
    FisherInverse,
};
use fddx::linalg::hermitian_eigenvalues;
use fddx::rng::stream_rng;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

const NOISE: f64 = 0.1;

fn frozen(rows: usize, cols: usize) -> fddx::channel::ArrayGeometry {
    array(rows, cols).with_pattern(ElementPattern::IsotropicFrozen)
}

/// Two paths `n/(N·Δf)` apart in delay over the triple-boxcar grid.
fn orthogonal_pair(taps: usize, spacing: f64, n: usize) -> PathSet {
    let dtau = n as f64 / (taps as f64 * spacing);
    PathSet::new(vec![
        PathParameters::new(Complex64::new(0.6, -0.3), 0.1e-6, -0.7, 1.3),
        PathParameters::new(Complex64::new(0.2, 0.5), 0.1e-6 + dtau, -2.2, 1.9),
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn fisher_and_bound_are_positive_semidefinite(seed in any::<u64>(), l in 1usize..5, f in -300e6..300e6f64) {
        let mut rng = stream_rng(seed, 0);
        let a = array(rng.random_range(1..=4), rng.random_range(1..=4));
        let paths = random_paths(&mut rng, l);
        let pilots = random_pilots(&mut rng, 51);
        let fisher = fisher_matrix(&paths, &a, &pilots, NOISE).unwrap();
        prop_assert!((&fisher.entries - fisher.entries.transpose()).norm() == 0.0);
        let ev = SymmetricEigen::new(fisher.entries.clone()).eigenvalues;
        prop_assert!(ev.min() >= -1e-9 * ev.max());

        let Ok(inv) = FisherInverse::new(&fisher) else {
            return Err(TestCaseError::reject("ill-conditioned draw"));
        };
        let c = inv.bound(&jacobian(&paths, &a, f), f).unwrap().bound_matrix;
        prop_assert!((&c - c.adjoint()).norm() <= 1e-12 * c.norm());
        let ev = hermitian_eigenvalues(&c);
        prop_assert!(ev[0] >= -1e-10 * ev[ev.len() - 1]);
    }

    #[test]
    fn single_path_bound_grows_with_offset(seed in any::<u64>(), f1 in 0.0..2e9f64, f2 in 0.0..2e9f64) {
        let mut rng = stream_rng(seed, 1);
        let a = frozen(3, 3);
        let paths = random_paths(&mut rng, 1);
        let pilots = default_pilots();
        let inv = FisherInverse::new(&fisher_matrix(&paths, &a, &pilots, NOISE).unwrap()).unwrap();
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        let at = |f: f64| inv.bound(&jacobian(&paths, &a, f), f).unwrap().mean_bound;
        prop_assert!(at(lo) <= at(hi) * (1.0 + 1e-12));
        prop_assert!((at(-hi) - at(hi)).abs() <= 1e-9 * at(hi));
    }

    #[test]
    fn mean_squared_bandwidth_is_bounded_by_the_band_edge(seed in any::<u64>(), k in 2usize..80) {
        let mut rng = stream_rng(seed, 2);
        let pilots = random_pilots(&mut rng, k);
        prop_assert!(mean_squared_bandwidth(&pilots).unwrap() <= (B / 2.0).powi(2) * (1.0 + 1e-12));
    }
}

#[test]
fn gain_information_per_path() {
    let a = array(2, 4);
    let pilots = default_pilots();
    let paths = separated_paths();
    let fisher = fisher_matrix(&paths, &a, &pilots, NOISE).unwrap();
    let expected = 2.0 / NOISE * 8.0 * pilots.total_energy();
    for l in 0..3 {
        for offset in [3, 4] {
            let v = l * 5 + offset;
            assert!((fisher.entries[(v, v)] - expected).abs() < 1e-10 * expected);
        }
        assert!(fisher.entries[(l * 5 + 3, l * 5 + 4)].abs() < 1e-10 * expected);
    }
}

/// `C = G^T I^{-1} G^*` spelled out as the covariance of `e = G^T δψ`.
#[test]
fn bound_is_the_linearized_error_covariance() {
    let a = array(3, 2);
    let pilots = default_pilots();
    let paths = separated_paths();
    let inv = FisherInverse::new(&fisher_matrix(&paths, &a, &pilots, NOISE).unwrap()).unwrap();
    let cov = inv.inverse();
    for f in [0.0, 25e6, -80e6] {
        let g = jacobian(&paths, &a, f);
        let m = a.num_elements();
        let oracle = DMatrix::from_fn(m, m, |i, j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..g.nrows() {
                for v in 0..g.nrows() {
                    acc += g[(u, i)] * cov[(u, v)] * g[(v, j)].conj();
                }
            }
            acc
        });
        let c = inv.bound(&g, f).unwrap().bound_matrix;
        assert!((&c - &oracle).norm() < 1e-10 * oracle.norm(), "f = {f}");
    }
}

#[test]
fn orthogonal_paths_meet_the_closed_form() {
    let a = frozen(4, 4);
    let taps = 17;
    let spacing = B / (3 * taps - 3) as f64;
    let pilots = orthogonal_pilots(taps, spacing);
    let sigma_f = mean_squared_bandwidth(&pilots).unwrap().sqrt();
    for n in [1, 4, 7] {
        let paths = orthogonal_pair(taps, spacing, n);
        let report = separation_diagnostics(&paths, &a, &pilots);
        assert!(report.fisher_block_diagonal, "coupling {}", report.max_off_block_coupling);
        assert!(report.pairs[0].separated_in_delay, "{:?}", report.pairs[0].delay);
        let inv = FisherInverse::new(&fisher_matrix(&paths, &a, &pilots, NOISE).unwrap()).unwrap();
        for i in 0..20 {
            let f = -10.0 * B + 20.0 * B * i as f64 / 19.0;
            let r = inv.bound(&jacobian(&paths, &a, f), f).unwrap();
            let closed = simplified_crlb(2, 16, pilots.total_energy(), sigma_f, NOISE, f).unwrap();
            assert!((r.mean_bound - closed).abs() < 1e-9 * closed, "n = {n}, f = {f}");
            assert!((r.simplified_bound.unwrap() - closed).abs() < 1e-12 * closed);
        }
    }
}

/// Beam-squint regression: freezing the pattern at the carrier moves the
/// bound by less than 1% for arrays below 8×8 up to 200 MHz.
#[test]
fn frozen_pattern_changes_the_bound_by_under_one_percent() {
    let pilots = default_pilots();
    let paths = separated_paths();
    for (rows, cols) in [(2, 2), (3, 3), (4, 4), (7, 7)] {
        let live = array(rows, cols);
        let flat = frozen(rows, cols);
        let inv_live = FisherInverse::new(&fisher_matrix(&paths, &live, &pilots, NOISE).unwrap()).unwrap();
        let inv_flat = FisherInverse::new(&fisher_matrix(&paths, &flat, &pilots, NOISE).unwrap()).unwrap();
        for f in [0.0, 50e6, 100e6, 200e6] {
            let b_live = inv_live.bound(&jacobian(&paths, &live, f), f).unwrap().mean_bound;
            let b_flat = inv_flat.bound(&jacobian(&paths, &flat, f), f).unwrap().mean_bound;
            let rel = (b_live - b_flat).abs() / b_flat;
            assert!(rel < 0.01, "{rows}x{cols} at {f} Hz: {rel:.4}");
        }
    }
}

#[test]
fn closed_form_scalings() {
    let sigma_f = 5.8e6;
    let base = simplified_crlb(10, 16, 51.0, sigma_f, NOISE, 0.0).unwrap();
    assert!((base - 2.451e-3).abs() < 5e-7);
    let at_two_sigma = simplified_crlb(10, 16, 51.0, sigma_f, NOISE, 2.0 * sigma_f).unwrap();
    assert!((at_two_sigma - 2.0 * base).abs() < 1e-15);
    for f in [0.0, 1e6, 3e7, -2e8] {
        let one = simplified_crlb(10, 16, 51.0, sigma_f, NOISE, f).unwrap();
        let two = simplified_crlb(10, 32, 51.0, sigma_f, NOISE, f).unwrap();
        assert!((two - one / 2.0).abs() < 1e-15 * one);
    }
    assert!(simplified_crlb(10, 16, 51.0, 0.0, NOISE, 0.0).is_err());
}

#[test]
fn mean_squared_bandwidth_of_the_default_grid() {
    let pilots = default_pilots();
    let direct: f64 = pilots.frequencies().iter().map(|f| f * f).sum::<f64>() / 51.0;
    let hand = (0.4e6f64).powi(2) * 2.0 * (1..=25).map(|n| (n * n) as f64).sum::<f64>() / 51.0;
    let value = mean_squared_bandwidth(&pilots).unwrap();
    assert!((value - hand).abs() < 1e-9 * hand);
    assert!((value - direct).abs() < 1e-9 * hand);
    let single = PilotGrid::new(vec![3e6], vec![Complex64::new(2.0, 0.0)], B).unwrap();
    assert!((mean_squared_bandwidth(&single).unwrap() - 9e12).abs() < 1e-3);
}

#[test]
fn extrapolation_range_matches_a_root_search() {
    let pilots = default_pilots();
    let sigma_f = mean_squared_bandwidth(&pilots).unwrap().sqrt();
    let closed = extrapolation_range(1.0, 16, 51, 10, sigma_f).unwrap();
    let gap = |f: f64| simplified_crlb(10, 16, 51.0, sigma_f, NOISE, f).unwrap() - NOISE;
    let (mut lo, mut hi) = (0.0, 1e9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    assert!((closed - lo).abs() < 1e-9 * closed, "{closed} vs {lo}");

    assert_eq!(extrapolation_range(1.0, 2, 10, 10, sigma_f).unwrap(), 0.0);
    assert!(extrapolation_range(1.0, 1, 10, 10, sigma_f).is_err());
    let r1 = extrapolation_range(1.0, 64, 51, 2, sigma_f).unwrap();
    let r4 = extrapolation_range(1.0, 256, 51, 2, sigma_f).unwrap();
    assert!((r4 / r1 - 2.0).abs() < 0.01);
}

#[test]
fn symmetric_grid_and_centred_array_satisfy_symmetry() {
    let report = separation_diagnostics(&separated_paths(), &array(4, 4), &default_pilots());
    assert!(report.symmetric());
    assert!(report.paths.iter().all(|p| p.frequency == 0.0 || p.frequency < 1e-12));
    let single = PathSet::new(vec![separated_paths().paths()[0]]).unwrap();
    assert!(separation_diagnostics(&single, &array(4, 4), &default_pilots()).paths_separated());
}
