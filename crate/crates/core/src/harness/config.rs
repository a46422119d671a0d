//! Scenario configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ElementPattern, PathParameters};
use crate::error::{invalid, Result};
use crate::sage::{Refinement, SageConfig};

/// How the multipath channel of each drop is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    #[default]
    ClusteredSurrogate,
    ExplicitPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub rows: usize,
    pub cols: usize,
}

impl ArraySpec {
    pub fn num_elements(&self) -> usize {
        self.rows * self.cols
    }
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self { rows: 4, cols: 4 }
    }
}

/// Overrides for the high-resolution estimator. Unset fields fall back to a
/// `1/(50B)` delay step, a 1° angle step and the scenario's path count.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SageSection {
    pub num_paths: Option<usize>,
    pub delay_step: Option<f64>,
    /// Degrees.
    pub angle_step_deg: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_threshold: Option<f64>,
    pub min_reduction: Option<f64>,
    pub refinement: Option<Refinement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownlinkSection {
    /// `E_d / σ_w²` in dB.
    pub symbol_snr: f64,
    pub qam_order: u32,
}

impl Default for DownlinkSection {
    fn default() -> Self {
        Self {
            symbol_snr: 10.0,
            qam_order: 256,
        }
    }
}

/// Grid explored by the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub arrays: Vec<ArraySpec>,
    /// dB.
    pub pilot_snr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_paths: usize,
    /// Seconds.
    pub max_delay: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Evenly spread pilots over the band; when unset, `B·τ_max + 1` pilots
    /// spaced `1/τ_max` apart.
    pub num_pilots: Option<usize>,
    /// Hz.
    pub carrier: f64,
    pub array: ArraySpec,
    pub element_pattern: ElementPattern,
    /// `E_s / σ_w²` in dB.
    pub pilot_snr: f64,
    pub seed: u64,
    pub generator: Generator,
    /// Used by the `explicit-paths` generator.
    pub paths: Vec<PathParameters>,
    /// Independent channel realizations.
    pub drops: usize,
    pub sage: SageSection,
    pub downlink: DownlinkSection,
    pub sweep: SweepSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_paths: 8,
            max_delay: 2.5e-6,
            bandwidth: 20e6,
            num_pilots: None,
            carrier: 3.5e9,
            array: ArraySpec::default(),
            element_pattern: ElementPattern::Isotropic,
            pilot_snr: 10.0,
            seed: 1,
            generator: Generator::ClusteredSurrogate,
            paths: Vec::new(),
            drops: 1,
            sage: SageSection::default(),
            downlink: DownlinkSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("max_delay", self.max_delay)?;
        positive("bandwidth", self.bandwidth)?;
        positive("carrier", self.carrier)?;
        if !self.pilot_snr.is_finite() || !self.downlink.symbol_snr.is_finite() {
            return Err(invalid("SNR values must be finite"));
        }
        if self.array.rows == 0 || self.array.cols == 0 {
            return Err(invalid("array needs at least one row and one column"));
        }
        if self.drops == 0 {
            return Err(invalid("drops must be at least 1"));
        }
        if self.num_pilots == Some(0) {
            return Err(invalid("num_pilots must be at least 1"));
        }
        match self.generator {
            Generator::ClusteredSurrogate if self.num_paths == 0 => {
                return Err(invalid("num_paths must be at least 1"));
            }
            Generator::ExplicitPaths if self.paths.is_empty() => {
                return Err(invalid("explicit-paths generator needs at least one path"));
            }
            _ => {}
        }
        for a in &self.sweep.arrays {
            if a.rows == 0 || a.cols == 0 {
                return Err(invalid("sweep arrays need at least one row and one column"));
            }
        }
        if self.sweep.pilot_snr.iter().any(|s| !s.is_finite()) {
            return Err(invalid("sweep SNR values must be finite"));
        }
        self.sage_config().validate(self.bandwidth)
    }

    /// Number of paths actually present in each drop.
    pub fn true_num_paths(&self) -> usize {
        match self.generator {
            Generator::ClusteredSurrogate => self.num_paths,
            Generator::ExplicitPaths => self.paths.len(),
        }
    }

    /// Pilot noise variance for unit pilot energy.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.pilot_snr / 10.0)
    }

    pub fn sage_config(&self) -> SageConfig {
        let s = &self.sage;
        let mut c = SageConfig::with_defaults(
            s.num_paths.unwrap_or_else(|| self.true_num_paths()),
            self.bandwidth,
            self.max_delay,
        );
        if let Some(v) = s.delay_step {
            c.delay_step = v;
        }
        if let Some(v) = s.angle_step_deg {
            c.angle_step = v.to_radians();
        }
        if let Some(v) = s.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = s.convergence_threshold {
            c.convergence_threshold = v;
        }
        if let Some(r) = s.refinement {
            c.refinement = r;
        }
        c.min_reduction = s.min_reduction;
        c
    }
}

/// Failure to obtain a configuration, split by exit-code class.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}
