//! Single-component piecewise-stationary sampler.
//!
//! A component owns one [`SegmentModel`] shared by every series currently
//! assigned to it. All moves work on pooled per-segment statistics, so the
//! cost of a move does not grow with the number of assigned series beyond
//! one FFT per series per new segment.

pub mod conditional;
pub mod hmc;
pub mod moves;

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::distributions::{inverse_gamma_log_density, sample_truncated_inverse_gamma, std_normal};
use crate::error::{Error, Result};
use crate::model::{BasisCache, ComponentPriorConfig, FoldedBasis, SegmentModel, SplineSpectrum};
use crate::spectral::{folded_periodogram, LOG_F_FLOOR};

pub use conditional::{
    b_log_conditional_and_derivatives, b_prior_log_density, newton_maximize, prior_precision,
    rmhmc_metric, BConditional, ModalProposal,
};
pub use hmc::{hmc_trajectory, rmhmc_update_b, HmcOutcome};
pub use moves::{
    birth_death_move, component_update, sample_segment_mean, sample_tau2_b, split_log_ratio,
    within_model_move,
};

/// Periodogram of one segment summed over the assigned series, plus each
/// series' segment mean. Only the zero frequency depends on `μ`.
#[derive(Debug, Clone)]
pub struct SegmentStats {
    pub len: usize,
    /// Folded, summed periodogram with the zero frequency left at 0.
    pub pgram: Vec<f64>,
    pub means: Vec<f64>,
}

impl SegmentStats {
    pub fn compute(series: &[&[f64]], a: usize, b: usize) -> Self {
        let len = b - a;
        let mut pgram = vec![0.0; len / 2 + 1];
        let mut means = Vec::with_capacity(series.len());
        for x in series {
            let seg = &x[a..b];
            let mean = seg.iter().sum::<f64>() / len as f64;
            for (acc, v) in pgram.iter_mut().zip(folded_periodogram(seg, mean)) {
                *acc += v;
            }
            means.push(mean);
        }
        pgram[0] = 0.0;
        SegmentStats { len, pgram, means }
    }

    pub fn n_series(&self) -> usize {
        self.means.len()
    }

    /// Mean of the segment pooled over series; 0 without data.
    pub fn pooled_mean(&self) -> f64 {
        if self.means.is_empty() {
            0.0
        } else {
            self.means.iter().sum::<f64>() / self.means.len() as f64
        }
    }

    /// Summed zero-frequency periodogram `n_s Σ_j (x̄_j − μ)²`.
    pub fn zero_frequency(&self, mu: f64) -> f64 {
        self.len as f64 * self.means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>()
    }

    pub fn periodogram_at(&self, mu: f64) -> Vec<f64> {
        let mut p = self.pgram.clone();
        p[0] = self.zero_frequency(mu);
        p
    }
}

/// Acceptance bookkeeping for one or more component sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub birth_proposed: u64,
    pub birth_accepted: u64,
    pub death_proposed: u64,
    pub death_accepted: u64,
    pub within_proposed: u64,
    pub within_accepted: u64,
    pub hmc_proposed: u64,
    pub hmc_accepted: u64,
    pub hmc_divergent: u64,
    pub mode_failures: u64,
}

impl MoveStats {
    pub fn merge(&mut self, o: &MoveStats) {
        self.birth_proposed += o.birth_proposed;
        self.birth_accepted += o.birth_accepted;
        self.death_proposed += o.death_proposed;
        self.death_accepted += o.death_accepted;
        self.within_proposed += o.within_proposed;
        self.within_accepted += o.within_accepted;
        self.hmc_proposed += o.hmc_proposed;
        self.hmc_accepted += o.hmc_accepted;
        self.hmc_divergent += o.hmc_divergent;
        self.mode_failures += o.mode_failures;
    }
}

/// The series currently assigned to one component, with lazily cached
/// segment statistics. Lives for one component sweep.
pub struct ComponentData<'a> {
    series: Vec<&'a [f64]>,
    n: usize,
    config: &'a ComponentPriorConfig,
    bases: &'a BasisCache,
    cache: RefCell<HashMap<(usize, usize), Rc<SegmentStats>>>,
}

impl<'a> ComponentData<'a> {
    pub fn new(
        series: Vec<&'a [f64]>,
        n: usize,
        config: &'a ComponentPriorConfig,
        bases: &'a BasisCache,
    ) -> Result<Self> {
        if let Some(bad) = series.iter().find(|s| s.len() != n) {
            return Err(Error::invalid(format!(
                "series of length {} assigned to a component of length {n}",
                bad.len()
            )));
        }
        if series.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("component data must be complete and finite"));
        }
        if bases.n_basis() != config.n_basis {
            return Err(Error::invalid("basis cache size disagrees with config"));
        }
        Ok(ComponentData {
            series,
            n,
            config,
            bases,
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series_length(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &ComponentPriorConfig {
        self.config
    }

    pub fn basis(&self, len: usize) -> Arc<FoldedBasis> {
        self.bases.get(len)
    }

    pub fn stats(&self, a: usize, b: usize) -> Rc<SegmentStats> {
        if let Some(s) = self.cache.borrow().get(&(a, b)) {
            return Rc::clone(s);
        }
        let s = Rc::new(SegmentStats::compute(&self.series, a, b));
        self.cache.borrow_mut().insert((a, b), Rc::clone(&s));
        s
    }

    /// Pooled Whittle log-likelihood of segment `[a, b)`.
    pub fn segment_log_likelihood(&self, a: usize, b: usize, mu: f64, coefs: &DVector<f64>) -> f64 {
        if self.series.is_empty() {
            return 0.0;
        }
        let lf = self.basis(b - a).log_spectrum(coefs);
        self.segment_log_likelihood_folded(a, b, mu, lf.as_slice())
    }

    /// As [`segment_log_likelihood`](Self::segment_log_likelihood) with the
    /// folded log spectrum already evaluated.
    pub fn segment_log_likelihood_folded(&self, a: usize, b: usize, mu: f64, lf: &[f64]) -> f64 {
        if self.series.is_empty() {
            return 0.0;
        }
        let stats = self.stats(a, b);
        let basis = self.basis(b - a);
        let nser = stats.n_series() as f64;
        let p0 = stats.zero_frequency(mu);
        let s: f64 = (0..basis.n_freq())
            .map(|k| {
                let l = lf[k].max(LOG_F_FLOOR);
                let p = if k == 0 { p0 } else { stats.pgram[k] };
                basis.weights[k] * (nser * l + p * (-l).exp())
            })
            .sum();
        -0.5 * nser * (b - a) as f64 * (2.0 * PI).ln() - 0.5 * s
    }

    pub fn log_likelihood(&self, model: &SegmentModel) -> f64 {
        (0..model.n_segments())
            .map(|s| {
                let (a, b) = model.bounds(s);
                self.segment_log_likelihood(a, b, model.means[s], &model.spectra[s].as_vector())
            })
            .sum()
    }

    /// `b` conditional of segment `[a, b)` at mean `mu`.
    pub fn b_conditional<'b>(
        &self,
        basis: &'b FoldedBasis,
        a: usize,
        b: usize,
        mu: f64,
        tau2: f64,
    ) -> BConditional<'b> {
        let stats = self.stats(a, b);
        BConditional::new(
            basis,
            stats.periodogram_at(mu),
            stats.n_series() as f64,
            prior_precision(self.config.n_basis, self.config.sigma2_alpha, tau2),
        )
    }

    /// Modal Gaussian proposal for `(μ, b)` of segment `[a, b)`.
    ///
    /// Newton starts from `start` when given, otherwise from the log of the
    /// average periodogram ordinate.
    pub fn modal_proposal(
        &self,
        a: usize,
        b: usize,
        tau2: f64,
        start: Option<&DVector<f64>>,
    ) -> Result<ModalProposal> {
        let stats = self.stats(a, b);
        let basis = self.basis(b - a);
        let cfg = self.config;
        let xbar = stats.pooled_mean();
        let center = xbar.clamp(cfg.mu_lower, cfg.mu_upper);
        let cond = self.b_conditional(&basis, a, b, center, tau2);
        let start = match start {
            Some(s) => s.clone(),
            None => {
                let mut s = DVector::zeros(cfg.n_basis + 1);
                let nser = stats.n_series() as f64;
                if nser > 0.0 && stats.pgram.len() > 1 {
                    let tail = &stats.pgram[1..];
                    let avg = tail.iter().sum::<f64>() / (tail.len() as f64 * nser);
                    if avg > 0.0 {
                        s[0] = avg.ln();
                    }
                }
                s
            }
        };
        let scale = (stats.len * stats.n_series()) as f64;
        ModalProposal::build(&cond, start, xbar, scale, (cfg.mu_lower, cfg.mu_upper))
    }
}

/// `ln binom(n, k)`.
fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log number of cutpoint configurations with `m` segments of length at
/// least `t_min` in a series of length `n`.
pub fn ln_cutpoint_configurations(n: usize, m: usize, t_min: usize) -> f64 {
    let free = n - m * t_min;
    ln_binomial(free + m - 1, m - 1)
}

/// Log density of the truncated `τ²_b` prior.
pub fn tau2_log_prior(tau2: f64, config: &ComponentPriorConfig) -> f64 {
    if !(tau2 > 0.0 && tau2 <= config.tau2_max) {
        return f64::NEG_INFINITY;
    }
    let (shape, scale) = (config.tau2_shape(), config.tau2_scale());
    let mass = gamma_ur(shape, scale / config.tau2_max);
    inverse_gamma_log_density(tau2, shape, scale) - mass.ln()
}

/// Log prior of one segment's `(μ, b, τ²_b)`.
pub fn segment_log_prior(mu: f64, spec: &SplineSpectrum, config: &ComponentPriorConfig) -> f64 {
    if !(mu >= config.mu_lower && mu <= config.mu_upper) {
        return f64::NEG_INFINITY;
    }
    let lt = tau2_log_prior(spec.tau2_b, config);
    if lt == f64::NEG_INFINITY {
        return lt;
    }
    -(config.mu_upper - config.mu_lower).ln()
        + b_prior_log_density(&spec.as_vector(), config.sigma2_alpha, spec.tau2_b)
        + lt
}

/// Joint log prior of a segment model.
pub fn model_log_prior(model: &SegmentModel, config: &ComponentPriorConfig) -> f64 {
    let m = model.n_segments();
    let n = model.series_length();
    let mut lp = -(config.max_segments as f64).ln()
        - ln_cutpoint_configurations(n, m, config.min_segment_length);
    for s in 0..m {
        lp += segment_log_prior(model.means[s], &model.spectra[s], config);
    }
    lp
}

/// Draw `Θ` from its prior for a series of length `n`.
pub fn sample_from_prior<R: Rng + ?Sized>(
    n: usize,
    config: &ComponentPriorConfig,
    rng: &mut R,
) -> Result<SegmentModel> {
    config.validate_for_length(n)?;
    let m = rng.random_range(1..=config.max_segments);
    let t_min = config.min_segment_length;
    let free = n - m * t_min;
    // Uniform composition of `free` into m nonnegative parts: choose m − 1
    // bar positions among free + m − 1 slots.
    let mut bars: Vec<usize> = rand::seq::index::sample(rng, free + m - 1, m - 1).into_vec();
    bars.sort_unstable();
    let mut cutpoints = Vec::with_capacity(m);
    let mut prev = 0usize;
    let mut end = 0usize;
    for (i, &bar) in bars.iter().enumerate() {
        let extra = bar - prev - if i == 0 { 0 } else { 1 };
        prev = bar;
        end += t_min + extra;
        cutpoints.push(end);
    }
    cutpoints.push(n);
    let mut means = Vec::with_capacity(m);
    let mut spectra = Vec::with_capacity(m);
    for _ in 0..m {
        means.push(config.mu_lower + (config.mu_upper - config.mu_lower) * rng.random::<f64>());
        let tau2 = sample_truncated_inverse_gamma(
            config.tau2_shape(),
            config.tau2_scale(),
            config.tau2_max,
            rng,
        )?;
        let mut coefs = Vec::with_capacity(config.n_basis + 1);
        coefs.push(config.sigma2_alpha.sqrt() * std_normal(rng));
        for _ in 0..config.n_basis {
            coefs.push(tau2.sqrt() * std_normal(rng));
        }
        spectra.push(SplineSpectrum::new(coefs, tau2)?);
    }
    Ok(SegmentModel {
        cutpoints,
        means,
        spectra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use crate::spectral::whittle_slice;

    fn small_config() -> ComponentPriorConfig {
        ComponentPriorConfig {
            max_segments: 3,
            min_segment_length: 10,
            n_basis: 4,
            ..Default::default()
        }
    }

    #[test]
    fn pooled_likelihood_equals_sum_of_whittle_terms() {
        let cfg = small_config();
        let bases = BasisCache::new(cfg.n_basis);
        let mut rng = RngStream::new(1, 0).rng();
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..50).map(|_| std_normal(&mut rng)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let data = ComponentData::new(refs, 50, &cfg, &bases).unwrap();
        let spec = SplineSpectrum::new(vec![0.2, 0.3, -0.1, 0.05, 0.0], 1.0).unwrap();
        for (a, b) in [(0, 50), (0, 23), (23, 50)] {
            let lf = crate::spectral::log_spectral_density(&spec, b - a);
            let direct: f64 = xs
                .iter()
                .map(|x| whittle_slice(&x[a..b], 0.4, &lf).unwrap())
                .sum();
            let pooled = data.segment_log_likelihood(a, b, 0.4, &spec.as_vector());
            assert!(
                (direct - pooled).abs() < 1e-9 * direct.abs(),
                "{direct} vs {pooled}"
            );
        }
    }

    #[test]
    fn identical_series_double_gradient() {
        let cfg = small_config();
        let bases = BasisCache::new(cfg.n_basis);
        let mut rng = RngStream::new(2, 0).rng();
        let x: Vec<f64> = (0..40).map(|_| std_normal(&mut rng)).collect();
        let one = ComponentData::new(vec![&x], 40, &cfg, &bases).unwrap();
        let two = ComponentData::new(vec![&x, &x], 40, &cfg, &bases).unwrap();
        let basis = bases.get(40);
        let b = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.0, 0.1]);
        // no prior so only the likelihood part is compared
        let strip = |c: BConditional<'_>| {
            let base = DVector::zeros(5);
            let p = c.prior_precision().clone();
            let (_, g) = c.value_and_gradient(&b);
            g + p.component_mul(&b) - base
        };
        let g1 = strip(one.b_conditional(&basis, 0, 40, 0.0, 1.0));
        let g2 = strip(two.b_conditional(&basis, 0, 40, 0.0, 1.0));
        assert!((g2 - g1 * 2.0).norm() < 1e-9);
    }

    #[test]
    fn cutpoint_count_matches_enumeration() {
        for (n, m, t) in [(12, 2, 3), (15, 3, 4), (20, 1, 5), (10, 2, 5)] {
            let mut count = 0usize;
            let mut stack = vec![(0usize, 0usize)];
            while let Some((pos, k)) = stack.pop() {
                if k == m - 1 {
                    if n - pos >= t {
                        count += 1;
                    }
                    continue;
                }
                for next in pos + t..=n {
                    stack.push((next, k + 1));
                }
            }
            assert!((ln_cutpoint_configurations(n, m, t) - (count as f64).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn prior_draws_are_valid_and_uniform_in_m() {
        let cfg = small_config();
        let mut rng = RngStream::new(5, 0).rng();
        let mut counts = [0usize; 3];
        let mut first_cut = HashMap::new();
        for _ in 0..9000 {
            let m = sample_from_prior(35, &cfg, &mut rng).unwrap();
            m.validate(35, &cfg).unwrap();
            counts[m.n_segments() - 1] += 1;
            if m.n_segments() == 2 {
                *first_cut.entry(m.cutpoints[0]).or_insert(0usize) += 1;
            }
        }
        for c in counts {
            assert!((c as f64 - 3000.0).abs() < 4.0 * (3000.0f64 * 2.0 / 3.0).sqrt());
        }
        // m = 2, n = 35, t_min = 10: cutpoints 10..=25 equally likely
        assert_eq!(first_cut.len(), 16);
    }

    #[test]
    fn tau2_prior_normalizes_on_truncated_support() {
        let cfg = ComponentPriorConfig {
            tau2_prior_nu: 4.0,
            tau2_prior_eta: 2.0,
            tau2_max: 3.0,
            ..Default::default()
        };
        let k = 200_000;
        let h = 3.0 / k as f64;
        let total: f64 = (0..k)
            .map(|i| tau2_log_prior((i as f64 + 0.5) * h, &cfg).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert_eq!(tau2_log_prior(3.5, &cfg), f64::NEG_INFINITY);
    }
}
