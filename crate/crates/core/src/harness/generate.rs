//! Scenario construction, including a clustered stochastic surrogate for a
//! geometry-based channel model.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Generator, ScenarioConfig};
use crate::channel::{build_planar_array, ArrayGeometry, PathParameters, PathSet, PilotGrid, SPEED_OF_LIGHT};
use crate::error::{invalid, Result};
use crate::rng::derive_seed_path;

/// Paths per cluster.
pub const PATHS_PER_CLUSTER: usize = 4;
/// Width of the uniform intra-cluster delay spread.
pub const INTRA_CLUSTER_DELAY_SPREAD: f64 = 30e-9;
/// Standard deviation of the Laplacian azimuth spread around a cluster centre.
pub const AZIMUTH_SPREAD_DEG: f64 = 5.0;
/// Standard deviation of the Laplacian elevation spread.
pub const ELEVATION_SPREAD_DEG: f64 = 3.0;
/// Range of cluster-centre elevations.
pub const ELEVATION_CENTRE_RANGE_DEG: (f64, f64) = (60.0, 120.0);

const DROP_STREAM: u64 = 0x6472_6f70;

/// One channel realization with everything needed to simulate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub paths: PathSet,
    pub array: ArrayGeometry,
    pub pilots: PilotGrid,
    pub noise_variance: f64,
}

/// A clustered draw together with its latent cluster structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDraw {
    pub paths: PathSet,
    /// Cluster index of every path.
    pub cluster_of: Vec<usize>,
    pub azimuth_centres: Vec<f64>,
    pub elevation_centres: Vec<f64>,
    pub delay_centres: Vec<f64>,
}

/// Laplace sample with standard deviation `std` by CDF inversion.
fn laplace<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let b = std / 2f64.sqrt();
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Draws `num_paths` clustered paths with delays in `[0, max_delay]`,
/// an exponential power-delay profile and unit total power.
pub fn draw_clustered<R: Rng + ?Sized>(num_paths: usize, max_delay: f64, rng: &mut R) -> Result<ClusteredDraw> {
    if num_paths == 0 {
        return Err(invalid("at least one path is required"));
    }
    if !(max_delay.is_finite() && max_delay > 0.0) {
        return Err(invalid(format!("max delay {max_delay} must be positive")));
    }
    let clusters = num_paths.div_ceil(PATHS_PER_CLUSTER);
    let spread = INTRA_CLUSTER_DELAY_SPREAD.min(max_delay);
    let (el_lo, el_hi) = ELEVATION_CENTRE_RANGE_DEG;
    let mut delay_centres = Vec::with_capacity(clusters);
    let mut azimuth_centres = Vec::with_capacity(clusters);
    let mut elevation_centres = Vec::with_capacity(clusters);
    for _ in 0..clusters {
        delay_centres.push(rng.random::<f64>() * (max_delay - spread));
        azimuth_centres.push(-PI + 2.0 * PI * rng.random::<f64>());
        elevation_centres.push((el_lo + (el_hi - el_lo) * rng.random::<f64>()).to_radians());
    }

    let decay = max_delay / 3.0;
    let mut raw = Vec::with_capacity(num_paths);
    let mut cluster_of = Vec::with_capacity(num_paths);
    for l in 0..num_paths {
        let c = l / PATHS_PER_CLUSTER;
        let delay = (delay_centres[c] + spread * rng.random::<f64>()).min(max_delay);
        let azimuth = azimuth_centres[c] + laplace(rng, AZIMUTH_SPREAD_DEG.to_radians());
        let elevation = (elevation_centres[c] + laplace(rng, ELEVATION_SPREAD_DEG.to_radians())).clamp(0.0, PI);
        let phase = 2.0 * PI * rng.random::<f64>();
        let power = (-delay / decay).exp();
        raw.push((power, phase, delay, azimuth, elevation));
        cluster_of.push(c);
    }
    let total: f64 = raw.iter().map(|r| r.0).sum();
    let paths = raw
        .into_iter()
        .map(|(power, phase, delay, azimuth, elevation)| {
            PathParameters::new(Complex64::from_polar((power / total).sqrt(), phase), delay, azimuth, elevation)
        })
        .collect();
    Ok(ClusteredDraw {
        paths: PathSet::new(paths)?,
        cluster_of,
        azimuth_centres,
        elevation_centres,
        delay_centres,
    })
}

/// Half-wavelength array described by the config.
pub fn scenario_array(config: &ScenarioConfig) -> Result<ArrayGeometry> {
    let spacing = SPEED_OF_LIGHT / config.carrier / 2.0;
    Ok(build_planar_array(config.array.rows, config.array.cols, spacing, config.carrier)?
        .with_pattern(config.element_pattern))
}

/// Unit-energy pilots: `B·τ_max + 1` pilots `1/τ_max` apart unless a count
/// is configured.
pub fn scenario_pilots(config: &ScenarioConfig) -> Result<PilotGrid> {
    match config.num_pilots {
        None => PilotGrid::from_max_delay(config.bandwidth, config.max_delay, 1.0),
        Some(k) => PilotGrid::uniform(config.bandwidth, k, 1.0),
    }
}

/// Multipath channel of drop `drop`.
pub fn drop_paths(config: &ScenarioConfig, drop: usize) -> Result<PathSet> {
    match config.generator {
        Generator::ExplicitPaths => PathSet::new(config.paths.clone()),
        Generator::ClusteredSurrogate => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_path(config.seed, &[DROP_STREAM, drop as u64]));
            Ok(draw_clustered(config.num_paths, config.max_delay, &mut rng)?.paths)
        }
    }
}

/// Scenario of drop `drop`.
pub fn generate_drop(config: &ScenarioConfig, drop: usize) -> Result<Scenario> {
    config.validate()?;
    Ok(Scenario {
        paths: drop_paths(config, drop)?,
        array: scenario_array(config)?,
        pilots: scenario_pilots(config)?,
        noise_variance: config.noise_variance(),
    })
}

/// Scenario of the first drop.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    generate_drop(config, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_paths() {
        let c = ScenarioConfig::default();
        assert_eq!(generate_scenario(&c).unwrap(), generate_scenario(&c).unwrap());
        assert_ne!(drop_paths(&c, 0).unwrap(), drop_paths(&c, 1).unwrap());
    }

    #[test]
    fn draws_are_normalized_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in [1, 3, 4, 5, 13] {
            let d = draw_clustered(l, 2.5e-6, &mut rng).unwrap();
            assert_eq!(d.paths.len(), l);
            assert!((d.paths.total_power() - 1.0).abs() < 1e-12);
            assert!(d.paths.iter().all(|p| (0.0..=2.5e-6).contains(&p.delay)));
            assert_eq!(d.azimuth_centres.len(), l.div_ceil(4));
        }
        assert!(draw_clustered(0, 1e-6, &mut rng).is_err());
    }

    #[test]
    fn default_grid_has_51_pilots() {
        let s = generate_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(s.pilots.len(), 51);
        assert_eq!(s.array.num_elements(), 16);
        assert!((s.pilots.frequencies()[26] - 0.4e6).abs() < 1e-6);
    }

    #[test]
    fn explicit_paths_pass_through() {
        let mut c = ScenarioConfig::default();
        c.generator = Generator::ExplicitPaths;
        c.paths = vec![PathParameters::new(Complex64::new(0.2, 0.1), 4e-7, 1.0, 1.0)];
        assert_eq!(generate_scenario(&c).unwrap().paths.paths(), c.paths.as_slice());
    }
}
