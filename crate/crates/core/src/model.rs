//! Parameter types shared by the spectral kernels and the component sampler.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spline coefficients `(α₀, b₁..b_J)` of a log spectral density plus the
/// segment's smoothing variance `τ²_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpectrum {
    pub coefficients: Vec<f64>,
    pub tau2_b: f64,
}

impl SplineSpectrum {
    pub fn new(coefficients: Vec<f64>, tau2_b: f64) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::invalid(
                "spline spectrum needs at least one basis function",
            ));
        }
        if !(tau2_b > 0.0) || !tau2_b.is_finite() {
            return Err(Error::invalid(format!(
                "tau2_b must be positive and finite, got {tau2_b}"
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("spline coefficients must be finite"));
        }
        Ok(SplineSpectrum {
            coefficients,
            tau2_b,
        })
    }

    /// Constant log spectrum `alpha0` with `j` zero spline coefficients.
    pub fn flat(alpha0: f64, j: usize, tau2_b: f64) -> Self {
        let mut coefficients = vec![0.0; j + 1];
        coefficients[0] = alpha0;
        SplineSpectrum {
            coefficients,
            tau2_b,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }

    /// `log f(ω)` at an arbitrary frequency.
    pub fn log_density_at(&self, omega: f64) -> f64 {
        basis_row(omega, self.n_basis())
            .iter()
            .zip(&self.coefficients)
            .map(|(q, b)| q * b)
            .sum()
    }
}

/// Basis vector `q(ω) = (1, √2 cos(2πω)/π, ..., √2 cos(2Jπω)/(Jπ))`.
pub fn basis_row(omega: f64, j: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(j + 1);
    row.push(1.0);
    for jj in 1..=j {
        let jf = jj as f64;
        row.push(SQRT_2 * (2.0 * PI * jf * omega).cos() / (jf * PI));
    }
    row
}

/// Basis evaluated at the non-redundant Fourier frequencies `ω_k = k/n`,
/// `k = 0..=⌊n/2⌋`, with the multiplicity of each frequency in the full
/// set of `n`.
#[derive(Debug, Clone)]
pub struct FoldedBasis {
    pub n: usize,
    pub q: DMatrix<f64>,
    /// `q` transposed, so each frequency's basis vector is contiguous.
    pub qt: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// `Σ_k w_k q_k q_k'` over all `n` frequencies.
    pub gram: DMatrix<f64>,
}

impl FoldedBasis {
    pub fn new(n: usize, j: usize) -> Self {
        let k = n / 2 + 1;
        let q = DMatrix::from_fn(k, j + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                let omega = row as f64 / n as f64;
                let jf = col as f64;
                SQRT_2 * (2.0 * PI * jf * omega).cos() / (jf * PI)
            }
        });
        let weights: Vec<f64> = (0..k)
            .map(|row| {
                if row == 0 || (n % 2 == 0 && row == n / 2) {
                    1.0
                } else {
                    2.0
                }
            })
            .collect();
        let qt = q.transpose();
        let mut scaled = q.clone();
        for (mut row, w) in scaled.row_iter_mut().zip(&weights) {
            row *= *w;
        }
        let gram = q.tr_mul(&scaled);
        FoldedBasis {
            n,
            q,
            qt,
            weights,
            gram,
        }
    }

    pub fn n_freq(&self) -> usize {
        self.weights.len()
    }

    /// Unclamped `q_k' b` at the folded frequencies.
    pub fn log_spectrum(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.q * b
    }

    /// Expand folded values to all `n` Fourier frequencies.
    pub fn unfold(&self, folded: &[f64]) -> Vec<f64> {
        (0..self.n).map(|k| folded[k.min(self.n - k)]).collect()
    }
}

/// Lazily built [`FoldedBasis`] per segment length, shared across threads.
#[derive(Debug)]
pub struct BasisCache {
    j: usize,
    entries: RwLock<HashMap<usize, Arc<FoldedBasis>>>,
}

impl BasisCache {
    pub fn new(j: usize) -> Self {
        BasisCache {
            j,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.j
    }

    pub fn get(&self, n: usize) -> Arc<FoldedBasis> {
        if let Some(b) = self.entries.read().expect("basis cache poisoned").get(&n) {
            return Arc::clone(b);
        }
        let built = Arc::new(FoldedBasis::new(n, self.j));
        let mut w = self.entries.write().expect("basis cache poisoned");
        Arc::clone(w.entry(n).or_insert(built))
    }
}

/// Hyperparameters of one AdaptSPEC mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentPriorConfig {
    /// Maximum number of segments `M`.
    pub max_segments: usize,
    /// Minimum segment length `t_min`.
    pub min_segment_length: usize,
    /// Number of spline basis functions `J`.
    pub n_basis: usize,
    pub mu_lower: f64,
    pub mu_upper: f64,
    /// Prior variance of the log-spectrum intercept `α₀`.
    pub sigma2_alpha: f64,
    /// `τ²_b ~ IG(nu/2, eta/2)` truncated to `(0, tau2_max]`.
    pub tau2_prior_nu: f64,
    pub tau2_prior_eta: f64,
    pub tau2_max: f64,
}

impl Default for ComponentPriorConfig {
    fn default() -> Self {
        ComponentPriorConfig {
            max_segments: 4,
            min_segment_length: 40,
            n_basis: 25,
            mu_lower: -10.0,
            mu_upper: 10.0,
            sigma2_alpha: 100.0,
            tau2_prior_nu: 1e-3,
            tau2_prior_eta: 1e-3,
            tau2_max: 1e4,
        }
    }
}

impl ComponentPriorConfig {
    pub fn tau2_shape(&self) -> f64 {
        0.5 * self.tau2_prior_nu
    }

    pub fn tau2_scale(&self) -> f64 {
        0.5 * self.tau2_prior_eta
    }

    /// Checks that do not depend on the series length.
    pub fn validate(&self) -> Result<()> {
        if self.max_segments < 1 {
            return Err(Error::invalid("max_segments must be at least 1"));
        }
        if self.min_segment_length < 2 {
            return Err(Error::invalid("min_segment_length must be at least 2"));
        }
        if self.n_basis < 1 {
            return Err(Error::invalid("n_basis must be at least 1"));
        }
        if !(self.mu_lower < self.mu_upper) {
            return Err(Error::invalid("mu_lower must be below mu_upper"));
        }
        for (name, v) in [
            ("sigma2_alpha", self.sigma2_alpha),
            ("tau2_prior_nu", self.tau2_prior_nu),
            ("tau2_prior_eta", self.tau2_prior_eta),
            ("tau2_max", self.tau2_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Validates against a series length and returns non-fatal warnings.
    pub fn validate_for_length(&self, n: usize) -> Result<Vec<String>> {
        self.validate()?;
        if self.max_segments * self.min_segment_length > n {
            return Err(Error::invalid(format!(
                "max_segments * min_segment_length = {} exceeds series length {n}",
                self.max_segments * self.min_segment_length
            )));
        }
        let mut warnings = Vec::new();
        if self.min_segment_length < 2 * self.n_basis {
            warnings.push(format!(
                "min_segment_length {} is below 2 * n_basis = {}",
                self.min_segment_length,
                2 * self.n_basis
            ));
        }
        Ok(warnings)
    }
}

/// Piecewise-stationary parameters `Θ = (m, ξ, μ, f)` of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentModel {
    /// Segment ends `ξ_1 < ... < ξ_m = n`; segment `s` covers
    /// `ξ_{s-1}..ξ_s` (0-based, end exclusive) with `ξ_0 = 0`.
    pub cutpoints: Vec<usize>,
    pub means: Vec<f64>,
    pub spectra: Vec<SplineSpectrum>,
}

impl SegmentModel {
    pub fn stationary(n: usize, mean: f64, spectrum: SplineSpectrum) -> Self {
        SegmentModel {
            cutpoints: vec![n],
            means: vec![mean],
            spectra: vec![spectrum],
        }
    }

    pub fn n_segments(&self) -> usize {
        self.cutpoints.len()
    }

    pub fn series_length(&self) -> usize {
        *self
            .cutpoints
            .last()
            .expect("segment model has no segments")
    }

    /// `(start, end)` of segment `s`, end exclusive.
    pub fn bounds(&self, s: usize) -> (usize, usize) {
        let start = if s == 0 { 0 } else { self.cutpoints[s - 1] };
        (start, self.cutpoints[s])
    }

    pub fn segment_of(&self, t: usize) -> usize {
        self.cutpoints.partition_point(|&c| c <= t)
    }

    pub fn validate(&self, n: usize, config: &ComponentPriorConfig) -> Result<()> {
        let m = self.n_segments();
        if m == 0 || m > config.max_segments {
            return Err(Error::invalid(format!(
                "segment count {m} outside 1..={}",
                config.max_segments
            )));
        }
        if self.means.len() != m || self.spectra.len() != m {
            return Err(Error::invalid(
                "segment parameter lengths disagree with segment count",
            ));
        }
        if self.series_length() != n {
            return Err(Error::invalid(format!(
                "last cutpoint {} differs from series length {n}",
                self.series_length()
            )));
        }
        for s in 0..m {
            let (a, b) = self.bounds(s);
            if b <= a || b - a < config.min_segment_length {
                return Err(Error::invalid(format!(
                    "segment {s} has length {} below minimum",
                    b.saturating_sub(a)
                )));
            }
            let mu = self.means[s];
            if !(mu >= config.mu_lower && mu <= config.mu_upper) {
                return Err(Error::invalid(format!(
                    "segment mean {mu} outside prior support"
                )));
            }
            let sp = &self.spectra[s];
            if sp.n_basis() != config.n_basis {
                return Err(Error::invalid("spline basis size disagrees with config"));
            }
            if !(sp.tau2_b > 0.0) || sp.coefficients.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("invalid spline spectrum"));
            }
        }
        Ok(())
    }
}
