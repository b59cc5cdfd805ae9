//! Fourier-domain kernels: periodograms, spline log spectra, the Whittle
//! likelihood, the circulant precision it implies, and the Gaussian
//! conditional of missing values under that precision.
//!
//! Frequencies are stored 0-based: index `k` holds `ω = k/n`.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::distributions::std_normal;
use crate::error::{Error, Result};
use crate::model::{basis_row, BasisCache, SegmentModel, SplineSpectrum};

/// Lower clamp on `log f(ω)`; keeps `I/f` finite in deep spectral troughs.
pub const LOG_F_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// In-place forward DFT, `X_k = Σ_t x_t e^{-2πi kt/n}` (unnormalized).
pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

/// A series with its missing-value mask.
///
/// Entries under the mask hold either `NaN` or the current imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        let n = values.len();
        if missing.len() != n {
            return Err(Error::invalid(
                "missing mask length differs from series length",
            ));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::invalid(format!(
                "series length must be even and at least 2, got {n}"
            )));
        }
        if let Some(t) = (0..n).find(|&t| !missing[t] && !values[t].is_finite()) {
            return Err(Error::invalid(format!(
                "observed value at t={} is not finite",
                t + 1
            )));
        }
        Ok(TimeSeries { values, missing })
    }

    pub fn complete(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// The same values with an empty mask; fails if any masked value is unset.
    pub fn completed(&self) -> Result<TimeSeries> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series has unimputed missing values"));
        }
        Ok(TimeSeries {
            values: self.values.clone(),
            missing: vec![false; self.len()],
        })
    }

    /// Replace masked entries with `fill`, in mask order.
    pub fn with_imputed(&self, fill: &[f64]) -> Result<TimeSeries> {
        if fill.len() != self.n_missing() {
            return Err(Error::invalid(
                "imputation length differs from missing count",
            ));
        }
        let mut values = self.values.clone();
        let mut it = fill.iter();
        for (v, &m) in values.iter_mut().zip(&self.missing) {
            if m {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(TimeSeries {
            values,
            missing: self.missing.clone(),
        })
    }

    /// Current values under the mask, in time order.
    pub fn imputed_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Fourier frequencies `ω_k = (k-1)/n`, `k = 1..n`.
pub fn fourier_frequencies(n: usize) -> Result<Vec<f64>> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "Fourier grid needs an even n >= 2, got {n}"
        )));
    }
    Ok((0..n).map(|k| k as f64 / n as f64).collect())
}

/// `I_k = |d_k|²` for all `n` Fourier frequencies of an arbitrary-length slice.
pub fn periodogram_of(values: &[f64], mu: f64) -> Vec<f64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values
        .iter()
        .map(|&v| Complex64::new(v - mu, 0.0))
        .collect();
    fft_forward(&mut buf);
    buf.iter().map(|c| c.norm_sqr() / n as f64).collect()
}

/// Periodogram at the non-redundant frequencies `k = 0..=⌊n/2⌋`.
pub fn folded_periodogram(values: &[f64], mu: f64) -> Vec<f64> {
    let n = values.len();
    let mut input: Vec<f64> = values.iter().map(|v| v - mu).collect();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    REAL_PLANNER.with(|p| {
        p.borrow_mut()
            .plan_fft_forward(n)
            .process(&mut input, &mut spectrum)
            .expect("buffer lengths match the plan")
    });
    spectrum.iter().map(|c| c.norm_sqr() / n as f64).collect()
}

/// Periodogram of a complete series about `mu`.
pub fn periodogram(x: &TimeSeries, mu: f64) -> Result<Vec<f64>> {
    if x.has_missing() {
        return Err(Error::invalid(
            "periodogram requires a series without missing values",
        ));
    }
    Ok(periodogram_of(x.values(), mu))
}

/// `q_k' b` at every Fourier frequency of a length-`n` series.
pub fn log_spectral_density(spec: &SplineSpectrum, n: usize) -> Vec<f64> {
    let j = spec.n_basis();
    (0..n)
        .map(|k| {
            let kk = k.min(n - k);
            let omega = kk as f64 / n as f64;
            basis_row(omega, j)
                .iter()
                .zip(&spec.coefficients)
                .map(|(q, b)| q * b)
                .sum()
        })
        .collect()
}

#[inline]
pub(crate) fn clamp_log_f(lf: f64) -> f64 {
    lf.max(LOG_F_FLOOR)
}

/// Whittle log-likelihood of a slice of any length.
pub fn whittle_slice(values: &[f64], mu: f64, log_f: &[f64]) -> Result<f64> {
    let n = values.len();
    if log_f.len() != n {
        return Err(Error::invalid(format!(
            "log spectrum has length {} but series has {n}",
            log_f.len()
        )));
    }
    if log_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("log spectrum contains non-finite values"));
    }
    let pgram = periodogram_of(values, mu);
    let s: f64 = pgram
        .iter()
        .zip(log_f)
        .map(|(i, &lf)| {
            let lf = clamp_log_f(lf);
            lf + i * (-lf).exp()
        })
        .sum();
    Ok(-0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * s)
}

/// Whittle approximation to the log-likelihood of a stationary series.
pub fn whittle_log_likelihood(x: &TimeSeries, mu: f64, log_f: &[f64]) -> Result<f64> {
    if x.has_missing() {
        return Err(Error::invalid(
            "Whittle likelihood requires a series without missing values",
        ));
    }
    whittle_slice(x.values(), mu, log_f)
}

/// Sum over segments of the per-segment Whittle log-likelihoods, each segment
/// using its own length as the Fourier grid size.
pub fn segmented_log_likelihood(x: &TimeSeries, model: &SegmentModel) -> Result<f64> {
    if x.has_missing() {
        return Err(Error::invalid(
            "segmented likelihood requires a series without missing values",
        ));
    }
    segmented_slice(x.values(), model)
}

pub(crate) fn segmented_slice(values: &[f64], model: &SegmentModel) -> Result<f64> {
    if model.series_length() != values.len() {
        return Err(Error::invalid("cutpoints do not match series length"));
    }
    let mut total = 0.0;
    for s in 0..model.n_segments() {
        let (a, b) = model.bounds(s);
        if b < a + 2 {
            return Err(Error::invalid(format!("segment {s} is shorter than 2")));
        }
        let lf = log_spectral_density(&model.spectra[s], b - a);
        total += whittle_slice(&values[a..b], model.means[s], &lf)?;
    }
    Ok(total)
}

/// First column `λ` of the symmetric circulant precision `Λ = V R V*`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantPrecision {
    pub lambda: Vec<f64>,
}

impl CirculantPrecision {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `Λ_{t1,t2} = λ_{(t1 - t2) mod n}`.
    pub fn entry(&self, t1: usize, t2: usize) -> f64 {
        let n = self.lambda.len();
        self.lambda[(t1 + n - t2) % n]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

fn check_symmetric(log_f: &[f64]) -> Result<()> {
    let n = log_f.len();
    for k in 1..n {
        let (a, b) = (log_f[k], log_f[n - k]);
        if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
            return Err(Error::invalid(format!(
                "log spectrum is not symmetric: index {k} differs from {}",
                n - k
            )));
        }
    }
    Ok(())
}

/// `λ_t = (1/n) Σ_k f(ω_k)^{-1} e^{-2πi t ω_k}`, via one FFT of `1/f`.
pub fn circulant_precision(log_f: &[f64]) -> Result<CirculantPrecision> {
    let n = log_f.len();
    if n == 0 {
        return Err(Error::invalid("empty log spectrum"));
    }
    if log_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("log spectrum contains non-finite values"));
    }
    check_symmetric(log_f)?;
    let mut buf: Vec<Complex64> = log_f
        .iter()
        .map(|&lf| Complex64::new((-clamp_log_f(lf)).exp(), 0.0))
        .collect();
    fft_forward(&mut buf);
    let lambda = buf.iter().map(|c| c.re / n as f64).collect();
    Ok(CirculantPrecision { lambda })
}

/// Gaussian conditional of the masked entries given the observed ones.
#[derive(Debug, Clone)]
pub struct MissingConditional {
    /// 0-based time indices of the missing entries.
    pub indices: Vec<usize>,
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl MissingConditional {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Draw `x_mis` given the Cholesky factor of the precision.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Ok(DVector::zeros(0));
        }
        crate::distributions::sample_mvn_precision(&self.mean, &self.precision, rng)
    }
}

/// Conditional of the masked entries of a slice under `N(μ1, Λ^{-1})`.
pub(crate) fn missing_conditional_slice(
    values: &[f64],
    missing: &[bool],
    mu: f64,
    log_f: &[f64],
) -> Result<MissingConditional> {
    let n = values.len();
    if missing.len() != n || log_f.len() != n {
        return Err(Error::invalid(
            "series, mask and log spectrum lengths differ",
        ));
    }
    let indices: Vec<usize> = (0..n).filter(|&t| missing[t]).collect();
    if indices.is_empty() {
        return Ok(MissingConditional {
            indices,
            mean: DVector::zeros(0),
            precision: DMatrix::zeros(0, 0),
        });
    }
    let prec = circulant_precision(log_f)?;
    let k = indices.len();
    let lmm = DMatrix::from_fn(k, k, |i, j| prec.entry(indices[i], indices[j]));
    let rhs = DVector::from_fn(k, |i, _| {
        let ti = indices[i];
        (0..n)
            .filter(|&t| !missing[t])
            .map(|t| prec.entry(ti, t) * (values[t] - mu))
            .sum::<f64>()
    });
    let chol = lmm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("missing-block precision is not positive definite"))?;
    let shift = chol.solve(&rhs);
    let mean = DVector::from_fn(k, |i, _| mu - shift[i]);
    Ok(MissingConditional {
        indices,
        mean,
        precision: lmm,
    })
}

/// `x_mis | x_obs ~ N(μ − Λ_mm^{-1} Λ_mo (x_obs − μ), Λ_mm^{-1})`.
pub fn missing_conditional(x: &TimeSeries, mu: f64, log_f: &[f64]) -> Result<MissingConditional> {
    missing_conditional_slice(x.values(), x.missing_mask(), mu, log_f)
}

/// Impute every masked entry segment by segment from its Gaussian conditional.
pub fn sample_missing<R: Rng + ?Sized>(
    x: &TimeSeries,
    model: &SegmentModel,
    rng: &mut R,
) -> Result<TimeSeries> {
    impute_segments(
        x,
        model,
        |s, len| log_spectral_density(&model.spectra[s], len),
        rng,
    )
}

/// [`sample_missing`] with log spectra evaluated through a basis cache.
pub fn sample_missing_cached<R: Rng + ?Sized>(
    x: &TimeSeries,
    model: &SegmentModel,
    bases: &BasisCache,
    rng: &mut R,
) -> Result<TimeSeries> {
    impute_segments(
        x,
        model,
        |s, len| {
            let basis = bases.get(len);
            basis.unfold(basis.log_spectrum(&model.spectra[s].as_vector()).as_slice())
        },
        rng,
    )
}

fn impute_segments<R: Rng + ?Sized, F: Fn(usize, usize) -> Vec<f64>>(
    x: &TimeSeries,
    model: &SegmentModel,
    log_f: F,
    rng: &mut R,
) -> Result<TimeSeries> {
    if model.series_length() != x.len() {
        return Err(Error::invalid("cutpoints do not match series length"));
    }
    let mut out = x.clone();
    for s in 0..model.n_segments() {
        let (a, b) = model.bounds(s);
        let mask = &x.missing_mask()[a..b];
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let lf = log_f(s, b - a);
        let cond = missing_conditional_slice(&x.values()[a..b], mask, model.means[s], &lf)?;
        let draw = cond.sample(rng)?;
        let vals = out.values_mut();
        for (i, &t) in cond.indices.iter().enumerate() {
            vals[a + t] = draw[i];
        }
    }
    Ok(out)
}

/// Draw a stationary Gaussian series with circulant covariance `(V R V*)^{-1}`,
/// i.e. exactly the Whittle model with log spectrum `log_f`.
pub fn sample_circulant_gaussian<R: Rng + ?Sized>(
    mu: f64,
    log_f: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = log_f.len();
    check_symmetric(log_f)?;
    // Covariance first column c_t = (1/n) Σ_k f_k e^{-2πi t k/n}.
    let mut buf: Vec<Complex64> = log_f
        .iter()
        .map(|&lf| Complex64::new(clamp_log_f(lf).exp(), 0.0))
        .collect();
    fft_forward(&mut buf);
    let cov = DMatrix::from_fn(n, n, |i, j| buf[(i + n - j) % n].re / n as f64);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::numerical("circulant covariance is not positive definite"))?;
    let z = DVector::from_fn(n, |_, _| std_normal(rng));
    let x = chol.l() * z;
    Ok(x.iter().map(|v| v + mu).collect())
}
