//! Monte-Carlo frequency sweeps.
//!
//! Every drop and every noise trial draws from its own derived seed, and
//! results are aggregated in drop/trial order, so the output does not
//! depend on how rayon schedules the work.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cdf::{compute_cdf, CdfTable};
use super::config::ScenarioConfig;
use super::generate::{drop_paths, scenario_array, scenario_pilots};
use crate::channel::{channel_response, pilot_mean, simulate_pilots, ArrayGeometry, ChannelVector, PathSet, PilotGrid};
use crate::crlb::{fisher_matrix, jacobian, FisherInverse};
use crate::downlink::{
    downlink_snr, efficiency_approx, estimate_efficiency, mean_and_std_error, ser_mqam, spectral_efficiency,
    DownlinkConfig,
};
use crate::error::{invalid, Result};
use crate::lowres::{lmmse_error_stats, lmmse_weights, ls_estimate, LmmseModel, LmmseWeights};
use crate::rng::derive_seed_path;
use crate::sage::{hr_extrapolate, sage_estimate};

const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// Grid points of every CDF table.
pub const CDF_GRID_POINTS: usize = 101;

/// Which estimators a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub ls: bool,
    pub lmmse: bool,
    pub sage: bool,
}

impl EstimatorSet {
    pub const ALL: Self = Self {
        ls: true,
        lmmse: true,
        sage: true,
    };

    /// Parses a comma-separated list such as `ls,lmmse,sage`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut set = Self {
            ls: false,
            lmmse: false,
            sage: false,
        };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name.to_ascii_lowercase().as_str() {
                "ls" => set.ls = true,
                "lmmse" => set.lmmse = true,
                "sage" => set.sage = true,
                other => return Err(invalid(format!("unknown estimator `{other}`"))),
            }
        }
        Ok(set)
    }
}

/// Aggregated results at one frequency. Missing values are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepRow {
    pub frequency: f64,
    pub mse_ls: Option<f64>,
    pub mse_ls_std_error: Option<f64>,
    pub mse_lmmse: Option<f64>,
    pub mse_lmmse_std_error: Option<f64>,
    /// Noise-only expectation of the LMMSE error, averaged over drops.
    pub mse_lmmse_analytic: Option<f64>,
    pub mse_sage: Option<f64>,
    pub mse_sage_std_error: Option<f64>,
    pub crlb_mean: Option<f64>,
    pub crlb_simplified: Option<f64>,
    /// MRT efficiency of the best enabled estimator (SAGE, else LMMSE,
    /// else LS at pilot frequencies).
    pub eta_mc: Option<f64>,
    pub eta_mc_std_error: Option<f64>,
    /// Approximate efficiency with the bound as error correlation.
    pub eta_approx: Option<f64>,
    /// Spectral efficiency at `eta_approx`.
    pub se_bits: Option<f64>,
    /// Symbol error rate at `eta_approx`.
    pub ser: Option<f64>,
    pub errors: Vec<String>,
}

impl SweepRow {
    /// True when the row carries no value at all because of errors.
    pub fn failed(&self) -> bool {
        !self.errors.is_empty()
            && [
                self.mse_ls,
                self.mse_lmmse,
                self.mse_lmmse_analytic,
                self.mse_sage,
                self.crlb_mean,
                self.crlb_simplified,
                self.eta_mc,
                self.eta_approx,
                self.se_bits,
                self.ser,
            ]
            .iter()
            .all(Option::is_none)
    }
}

/// Distribution over drops of one quantity at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCdf {
    pub name: String,
    pub frequency: f64,
    pub table: CdfTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ScenarioConfig,
    pub trials: usize,
    pub estimators: EstimatorSet,
    pub rows: Vec<SweepRow>,
    pub cdfs: Vec<NamedCdf>,
}

impl SweepResult {
    pub fn all_rows_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(SweepRow::failed)
    }
}

/// Evenly spaced frequencies from `min` to `max` inclusive.
pub fn frequency_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite()) || steps == 0 {
        return Err(invalid("frequency range must be finite with at least one step"));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    if max < min {
        return Err(invalid("freq-max must not be below freq-min"));
    }
    let step = (max - min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { max } else { min + i as f64 * step })
        .collect())
}

/// Downlink link parameters: unit noise, `E_d` from the configured SNR.
pub fn downlink_config(config: &ScenarioConfig) -> Result<DownlinkConfig> {
    DownlinkConfig::new(
        10f64.powf(config.downlink.symbol_snr / 10.0),
        1.0,
        config.downlink.qam_order,
    )
}

/// Noise-independent quantities of one drop at one frequency.
#[derive(Debug, Clone, Default)]
struct DropPoint {
    lmmse_analytic: Option<f64>,
    crlb_mean: Option<f64>,
    crlb_simplified: Option<f64>,
    eta_approx: Option<f64>,
    se: Option<f64>,
    ser: Option<f64>,
    se_perfect: f64,
    errors: Vec<String>,
}

struct DropAnalysis {
    paths: PathSet,
    channels: Vec<ChannelVector>,
    lmmse: Vec<std::result::Result<LmmseWeights, String>>,
    points: Vec<DropPoint>,
}

struct Setup<'a> {
    config: &'a ScenarioConfig,
    array: ArrayGeometry,
    pilots: PilotGrid,
    noise_variance: f64,
    downlink: DownlinkConfig,
    frequencies: &'a [f64],
}

fn analyze_drop(setup: &Setup<'_>, drop: usize) -> Result<DropAnalysis> {
    let paths = drop_paths(setup.config, drop)?;
    let array = &setup.array;
    let pilots = &setup.pilots;
    let channels: Vec<ChannelVector> = setup
        .frequencies
        .iter()
        .map(|&f| channel_response(&paths, array, f))
        .collect();
    let per_pilot: DMatrix<Complex64> = pilot_mean(&paths, array, pilots);
    let model = LmmseModel::new(setup.config.max_delay, paths.total_power(), setup.noise_variance, 1.0)?;
    let lmmse: Vec<_> = setup
        .frequencies
        .iter()
        .map(|&f| lmmse_weights(&model, pilots, f).map_err(|e| format!("drop {drop}: LMMSE: {e}")))
        .collect();
    let inverse = fisher_matrix(&paths, array, pilots, setup.noise_variance)
        .and_then(|f| FisherInverse::new(&f))
        .map_err(|e| format!("drop {drop}: CRLB: {e}"));

    let mut points = Vec::with_capacity(channels.len());
    for (&f, h) in setup.frequencies.iter().zip(&channels) {
        let mut p = DropPoint {
            se_perfect: spectral_efficiency(downlink_snr(h, 1.0, &setup.downlink)),
            ..DropPoint::default()
        };
        match lmmse_error_stats(&model, pilots, &per_pilot, h, f) {
            Ok(stats) => p.lmmse_analytic = Some(stats.mean_mse()),
            Err(e) => p.errors.push(format!("drop {drop}: LMMSE: {e}")),
        }
        match &inverse {
            Ok(inv) => match inv.bound(&jacobian(&paths, array, f), f) {
                Ok(bound) => {
                    p.crlb_mean = Some(bound.mean_bound);
                    p.crlb_simplified = bound.simplified_bound;
                    match efficiency_approx(h, &bound.bound_matrix) {
                        Ok(eta) => {
                            let snr = downlink_snr(h, eta, &setup.downlink);
                            p.eta_approx = Some(eta);
                            p.se = Some(spectral_efficiency(snr));
                            p.ser = Some(ser_mqam(snr, setup.downlink.constellation_order)?);
                        }
                        Err(e) => p.errors.push(format!("drop {drop}: efficiency: {e}")),
                    }
                }
                Err(e) => p.errors.push(format!("drop {drop}: CRLB: {e}")),
            },
            Err(e) => p.errors.push(e.clone()),
        }
        points.push(p);
    }
    Ok(DropAnalysis {
        paths,
        channels,
        lmmse,
        points,
    })
}

/// Per-frequency outcomes of one noise trial.
#[derive(Debug, Clone, Default)]
struct TrialPoint {
    ls: Option<f64>,
    lmmse: Option<f64>,
    sage: Option<f64>,
    eta: Option<f64>,
}

struct TrialOutcome {
    points: Vec<TrialPoint>,
    errors: Vec<String>,
}

fn squared_error(estimate: &ChannelVector, truth: &ChannelVector) -> f64 {
    (&estimate.values - &truth.values).norm_squared() / truth.len() as f64
}

fn run_trial(
    setup: &Setup<'_>,
    analysis: &DropAnalysis,
    estimators: EstimatorSet,
    drop: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let seed = derive_seed_path(setup.config.seed, &[NOISE_STREAM, drop as u64, trial as u64]);
    let rx = simulate_pilots(&analysis.paths, &setup.array, &setup.pilots, setup.noise_variance, seed)?;
    let ls = ls_estimate(&rx, &setup.pilots)?;
    let mut errors = Vec::new();
    let sage = if estimators.sage {
        match sage_estimate(&rx, &setup.pilots, &setup.array, &setup.config.sage_config()) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(format!("drop {drop} trial {trial}: SAGE: {e}"));
                None
            }
        }
    } else {
        None
    };

    let mut points = Vec::with_capacity(setup.frequencies.len());
    for (i, (&f, h)) in setup.frequencies.iter().zip(&analysis.channels).enumerate() {
        let mut p = TrialPoint::default();
        let mut best: Option<ChannelVector> = None;
        if estimators.ls {
            if let Some(k) = setup.pilots.index_of(f) {
                let est = ChannelVector::new(f, ls.values.column(k).into_owned());
                p.ls = Some(squared_error(&est, h));
                best = Some(est);
            }
        }
        if estimators.lmmse {
            if let Ok(w) = &analysis.lmmse[i] {
                let est = w.apply(&ls.values);
                p.lmmse = Some(squared_error(&est, h));
                best = Some(est);
            }
        }
        if let Some(r) = &sage {
            let est = hr_extrapolate(r, &setup.array, f);
            p.sage = Some(squared_error(&est, h));
            best = Some(est);
        }
        if let Some(est) = best {
            // a zero estimate cannot steer a beam; the trial is skipped
            if let Ok(eta) = estimate_efficiency(h, &est) {
                p.eta = Some(eta);
            }
        }
        points.push(p);
    }
    Ok(TrialOutcome { points, errors })
}

fn mean_pair(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_and_std_error(values);
        (Some(m), Some(s))
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sweep(
    config: &ScenarioConfig,
    frequencies: &[f64],
    trials: usize,
    estimators: EstimatorSet,
) -> Result<SweepResult> {
    config.validate()?;
    if frequencies.is_empty() || frequencies.iter().any(|f| !f.is_finite()) {
        return Err(invalid("at least one finite frequency is required"));
    }
    let setup = Setup {
        config,
        array: scenario_array(config)?,
        pilots: scenario_pilots(config)?,
        noise_variance: config.noise_variance(),
        downlink: downlink_config(config)?,
        frequencies,
    };
    if trials > 0 && estimators.sage {
        config.sage_config().validate(config.bandwidth)?;
    }

    let drops: Vec<DropAnalysis> = (0..config.drops)
        .into_par_iter()
        .map(|d| analyze_drop(&setup, d))
        .collect::<Result<_>>()?;
    let outcomes: Vec<TrialOutcome> = (0..config.drops * trials)
        .into_par_iter()
        .map(|i| run_trial(&setup, &drops[i / trials], estimators, i / trials, i % trials))
        .collect::<Result<_>>()?;

    let trial_errors: Vec<&String> = outcomes.iter().flat_map(|o| &o.errors).collect();
    let mut rows = Vec::with_capacity(frequencies.len());
    let mut cdfs = Vec::new();
    for (i, &f) in frequencies.iter().enumerate() {
        let mut row = SweepRow {
            frequency: f,
            ..SweepRow::default()
        };
        let (mut ls, mut lmmse, mut sage, mut eta) = (vec![], vec![], vec![], vec![]);
        let mut eta_per_drop = Vec::with_capacity(config.drops);
        for d in 0..config.drops {
            let mut drop_eta = vec![];
            for o in &outcomes[d * trials..(d + 1) * trials] {
                let p = &o.points[i];
                ls.extend(p.ls);
                lmmse.extend(p.lmmse);
                sage.extend(p.sage);
                eta.extend(p.eta);
                drop_eta.extend(p.eta);
            }
            eta_per_drop.push(mean_of(drop_eta.into_iter().map(Some)));
        }
        (row.mse_ls, row.mse_ls_std_error) = mean_pair(&ls);
        (row.mse_lmmse, row.mse_lmmse_std_error) = mean_pair(&lmmse);
        (row.mse_sage, row.mse_sage_std_error) = mean_pair(&sage);
        (row.eta_mc, row.eta_mc_std_error) = mean_pair(&eta);

        let points: Vec<&DropPoint> = drops.iter().map(|d| &d.points[i]).collect();
        row.mse_lmmse_analytic = mean_of(points.iter().map(|p| p.lmmse_analytic));
        row.crlb_mean = mean_of(points.iter().map(|p| p.crlb_mean));
        row.crlb_simplified = mean_of(points.iter().map(|p| p.crlb_simplified));
        row.eta_approx = mean_of(points.iter().map(|p| p.eta_approx));
        row.se_bits = mean_of(points.iter().map(|p| p.se));
        row.ser = mean_of(points.iter().map(|p| p.ser));
        for p in &points {
            row.errors.extend(p.errors.iter().cloned());
        }
        if let Some(first) = trial_errors.first() {
            row.errors.push(format!("{} failed trial(s), first: {first}", trial_errors.len()));
        }

        let mut push_cdf = |name: &str, values: Vec<f64>| -> Result<()> {
            if !values.is_empty() {
                cdfs.push(NamedCdf {
                    name: name.to_string(),
                    frequency: f,
                    table: compute_cdf(&values, CDF_GRID_POINTS)?,
                });
            }
            Ok(())
        };
        push_cdf("se_approx", points.iter().filter_map(|p| p.se).collect())?;
        let dl = &setup.downlink;
        push_cdf(
            "se_mc",
            eta_per_drop
                .iter()
                .zip(&drops)
                .filter_map(|(eta, d)| eta.map(|e| spectral_efficiency(downlink_snr(&d.channels[i], e, dl))))
                .collect(),
        )?;
        push_cdf("se_perfect", points.iter().map(|p| p.se_perfect).collect())?;
        rows.push(row);
    }

    Ok(SweepResult {
        config: config.clone(),
        trials,
        estimators,
        rows,
        cdfs,
    })
}

/// Monte-Carlo sweep over `frequencies` with `trials` noise draws per drop.
pub fn run_sweep(
    config: &ScenarioConfig,
    frequencies: &[f64],
    trials: usize,
    estimators: EstimatorSet,
) -> Result<SweepResult> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    sweep(config, frequencies, trials, estimators)
}

/// Bounds and analytic quantities only, without noise trials.
pub fn run_bounds(config: &ScenarioConfig, frequencies: &[f64]) -> Result<SweepResult> {
    sweep(
        config,
        frequencies,
        0,
        EstimatorSet {
            ls: false,
            lmmse: false,
            sage: false,
        },
    )
}
