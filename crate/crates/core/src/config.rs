//! Run configuration: priors, chain controls and summary options, read from
//! TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsbp::LsbpConfig;
use crate::model::ComponentPriorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burn_in: u64,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: u64,
    pub seed: u64,
    pub chains: u64,
    /// Worker threads; 0 lets the runtime choose. Never affects results.
    pub threads: usize,
    /// Stored draws per chunk file; a checkpoint is written with each chunk.
    pub chunk_size: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 50_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            chains: 1,
            threads: 0,
            chunk_size: 250,
        }
    }
}

/// How mixture weights are formed for a series in the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// The series' own sampled indicator in each draw.
    #[default]
    Drawn,
    /// `π_h(u)` at the series' covariates, as for an unobserved point.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// Points of the frequency grid on `[0, ½]`, endpoints included.
    pub freq_grid_size: usize,
    pub weighting: Weighting,
    /// Pointwise posterior quantiles reported for the mean and variance.
    pub quantiles: Vec<f64>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            freq_grid_size: 128,
            weighting: Weighting::Drawn,
            quantiles: vec![0.025, 0.5, 0.975],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chain: ChainConfig,
    pub prior: ComponentPriorConfig,
    pub mixture: LsbpConfig,
    pub summary: SummaryConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(text, s.start))
                .unwrap_or((0, 0));
            Error::Parse {
                file: file.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Divide iterations and burn-in by `factor` (at least 1 post-burn-in
    /// iteration is kept when there was one before).
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::invalid(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        self.chain.iterations = (self.chain.iterations as f64 / factor).round() as u64;
        self.chain.burn_in = (self.chain.burn_in as f64 / factor).round() as u64;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.chain;
        if c.iterations <= c.burn_in {
            return Err(Error::invalid("iterations must exceed burn-in"));
        }
        if c.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if c.chains == 0 {
            return Err(Error::invalid("chains must be at least 1"));
        }
        if c.chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be at least 1"));
        }
        self.prior.validate()?;
        self.mixture.validate()?;
        self.summary.validate()
    }
}

impl SummaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freq_grid_size < 2 {
            return Err(Error::invalid("freq_grid_size must be at least 2"));
        }
        if self.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::invalid("quantiles must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// 1-based line and column of a byte offset.
pub(crate) fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
