//! Full conditional of the spline coefficients `b` of one segment, its
//! derivatives, the constant Fisher metric, and the modal Gaussian
//! approximation used to propose `(μ, b)` jointly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::{
    mvn_log_density_chol, sample_truncated_normal, std_normal, truncated_normal_log_density,
};
use crate::error::{Error, Result};
use crate::model::{FoldedBasis, SplineSpectrum};
use crate::spectral::LOG_F_FLOOR;

/// Diagonal of `Σ_b^{-1} = diag(1/σ²_α, 1/τ²_b, ..., 1/τ²_b)`.
pub fn prior_precision(j: usize, sigma2_alpha: f64, tau2_b: f64) -> DVector<f64> {
    DVector::from_fn(j + 1, |i, _| {
        if i == 0 {
            1.0 / sigma2_alpha
        } else {
            1.0 / tau2_b
        }
    })
}

/// `log p(b | I, μ, τ²_b)` up to a constant, for `n_series` series sharing
/// one segment spectrum. `pgram` is the folded periodogram summed over the
/// series, with the zero frequency already evaluated at the current `μ`.
pub struct BConditional<'a> {
    basis: &'a FoldedBasis,
    pgram: Vec<f64>,
    n_series: f64,
    prior_prec: DVector<f64>,
}

impl<'a> BConditional<'a> {
    pub fn new(
        basis: &'a FoldedBasis,
        pgram: Vec<f64>,
        n_series: f64,
        prior_prec: DVector<f64>,
    ) -> Self {
        debug_assert_eq!(pgram.len(), basis.n_freq());
        BConditional {
            basis,
            pgram,
            n_series,
            prior_prec,
        }
    }

    pub fn dim(&self) -> usize {
        self.prior_prec.len()
    }

    pub fn basis(&self) -> &FoldedBasis {
        self.basis
    }

    pub fn n_series(&self) -> f64 {
        self.n_series
    }

    pub fn prior_precision(&self) -> &DVector<f64> {
        &self.prior_prec
    }

    fn prior_quad(&self, b: &DVector<f64>) -> f64 {
        b.iter()
            .zip(self.prior_prec.iter())
            .map(|(x, p)| p * x * x)
            .sum()
    }

    pub fn value(&self, b: &DVector<f64>) -> f64 {
        let lf = self.basis.log_spectrum(b);
        let s: f64 = (0..self.basis.n_freq())
            .map(|k| {
                let l = lf[k].max(LOG_F_FLOOR);
                self.basis.weights[k] * (self.n_series * l + self.pgram[k] * (-l).exp())
            })
            .sum();
        -0.5 * s - 0.5 * self.prior_quad(b)
    }

    /// Value, gradient `½ Σ q_k (I_k e^{-q_k'b} − N) − Σ_b^{-1} b`, and the
    /// per-frequency curvature weights `½ w_k I_k e^{-q_k'b}`.
    fn evaluate(&self, b: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let lf = self.basis.log_spectrum(b);
        let k = self.basis.n_freq();
        let mut s = 0.0;
        let mut gcoef = DVector::zeros(k);
        let mut hcoef = DVector::zeros(k);
        for i in 0..k {
            let w = self.basis.weights[i];
            let active = lf[i] > LOG_F_FLOOR;
            let l = lf[i].max(LOG_F_FLOOR);
            let ratio = self.pgram[i] * (-l).exp();
            s += w * (self.n_series * l + ratio);
            if active {
                gcoef[i] = 0.5 * w * (ratio - self.n_series);
                hcoef[i] = 0.5 * w * ratio;
            }
        }
        let value = -0.5 * s - 0.5 * self.prior_quad(b);
        let grad = self.basis.q.tr_mul(&gcoef) - self.prior_prec.component_mul(b);
        (value, grad, hcoef)
    }

    pub fn value_and_gradient(&self, b: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, g, _) = self.evaluate(b);
        (v, g)
    }

    pub fn value_gradient_hessian(&self, b: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (v, g, hcoef) = self.evaluate(b);
        let mut h = weighted_gram(&self.basis.q, &self.basis.qt, &hcoef);
        h.neg_mut();
        for (i, p) in self.prior_prec.iter().enumerate() {
            h[(i, i)] -= p;
        }
        (v, g, h)
    }

    /// `G = ½ N Σ_k q_k q_k' + Σ_b^{-1}`, the expected negative Hessian.
    pub fn metric(&self) -> DMatrix<f64> {
        &self.basis.gram * (0.5 * self.n_series) + DMatrix::from_diagonal(&self.prior_prec)
    }
}

/// `Q' diag(c) Q` from the basis `q` (one row per frequency) and its
/// transpose `qt`.
fn weighted_gram(q: &DMatrix<f64>, qt: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = qt.clone();
    for (mut col, &ck) in scaled.column_iter_mut().zip(c.iter()) {
        col *= ck;
    }
    scaled * q
}

/// Value, gradient and Hessian of the log conditional of `b` for a single
/// series with periodogram `periodogram` (all `n` frequencies).
pub fn b_log_conditional_and_derivatives(
    spec: &SplineSpectrum,
    periodogram: &[f64],
    sigma2_alpha: f64,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = periodogram.len();
    if n < 2 {
        return Err(Error::invalid("periodogram needs at least two frequencies"));
    }
    let basis = FoldedBasis::new(n, spec.n_basis());
    let pgram = periodogram[..basis.n_freq()].to_vec();
    let cond = BConditional::new(
        &basis,
        pgram,
        1.0,
        prior_precision(spec.n_basis(), sigma2_alpha, spec.tau2_b),
    );
    Ok(cond.value_gradient_hessian(&spec.as_vector()))
}

/// Metric for a single series segment of length `n_segment`.
pub fn rmhmc_metric(
    n_segment: usize,
    j: usize,
    sigma2_alpha: f64,
    tau2_b: f64,
) -> Result<DMatrix<f64>> {
    if n_segment < 2 || j < 1 || !(sigma2_alpha > 0.0) || !(tau2_b > 0.0) {
        return Err(Error::invalid(
            "metric needs n_segment >= 2, J >= 1 and positive variances",
        ));
    }
    let basis = FoldedBasis::new(n_segment, j);
    let pgram = vec![0.0; basis.n_freq()];
    Ok(BConditional::new(&basis, pgram, 1.0, prior_precision(j, sigma2_alpha, tau2_b)).metric())
}

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

/// Mode of a strictly log-concave function by damped Newton iteration.
///
/// `value` evaluates the objective alone (used by the step-halving line
/// search); `derivs` returns value, gradient and Hessian. Iteration stops
/// when the gradient norm falls below 1e-8 or the Newton decrement reaches
/// rounding level. Returns the mode and the Cholesky factor `L` of the
/// negative Hessian there.
pub fn newton_maximize<V, D>(
    start: DVector<f64>,
    value: V,
    derivs: D,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    V: Fn(&DVector<f64>) -> f64,
    D: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
{
    let mut x = start;
    let (mut v, mut g, mut h) = derivs(&x);
    if !v.is_finite() {
        return Err(Error::numerical("non-finite objective at Newton start"));
    }
    for _ in 0..=NEWTON_MAX_ITER {
        let chol = (-h)
            .cholesky()
            .ok_or_else(|| Error::numerical("negative Hessian not positive definite"))?;
        let step = chol.solve(&g);
        let decrement = g.dot(&step);
        if g.norm() < NEWTON_GRAD_TOL || decrement < 1e-13 * (1.0 + v.abs()) {
            return Ok((x, chol.l()));
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &x + &step * t;
            let cv = value(&cand);
            if cv.is_finite() && cv >= v {
                next = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(cand) = next else {
            return Err(Error::numerical("Newton line search failed"));
        };
        x = cand;
        (v, g, h) = derivs(&x);
    }
    Err(Error::numerical("Newton iteration did not converge"))
}

/// Joint proposal for a segment's `(μ, b)`: `b ~ N(b̂, (−H(b̂))^{-1})` where
/// `b̂` maximizes the `b` conditional at `μ = x̄`, then `μ | b` from its
/// exact truncated-normal conditional.
#[derive(Debug, Clone)]
pub struct ModalProposal {
    pub mode: DVector<f64>,
    chol_l: DMatrix<f64>,
    xbar: f64,
    /// `n_s · N`; zero means no data and `μ` is proposed from its prior.
    mu_precision_scale: f64,
    q0: DVector<f64>,
    mu_lower: f64,
    mu_upper: f64,
}

impl ModalProposal {
    pub fn build(
        cond: &BConditional<'_>,
        start: DVector<f64>,
        xbar: f64,
        mu_precision_scale: f64,
        mu_bounds: (f64, f64),
    ) -> Result<Self> {
        let (mode, chol_l) =
            newton_maximize(start, |b| cond.value(b), |b| cond.value_gradient_hessian(b))?;
        let q0 = cond.basis().q.row(0).transpose();
        Ok(ModalProposal {
            mode,
            chol_l,
            xbar,
            mu_precision_scale,
            q0,
            mu_lower: mu_bounds.0,
            mu_upper: mu_bounds.1,
        })
    }

    fn mu_variance(&self, b: &DVector<f64>) -> f64 {
        self.q0.dot(b).max(LOG_F_FLOOR).exp() / self.mu_precision_scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, DVector<f64>)> {
        let z = DVector::from_fn(self.mode.len(), |_, _| std_normal(rng));
        let dx = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("singular proposal factor"))?;
        let b = &self.mode + dx;
        let mu = if self.mu_precision_scale > 0.0 {
            let center = self.xbar.clamp(self.mu_lower, self.mu_upper);
            let _ = center;
            sample_truncated_normal(
                self.xbar,
                self.mu_variance(&b),
                self.mu_lower,
                self.mu_upper,
                rng,
            )?
        } else {
            self.mu_lower + (self.mu_upper - self.mu_lower) * rng.random::<f64>()
        };
        Ok((mu, b))
    }

    pub fn log_density(&self, mu: f64, b: &DVector<f64>) -> f64 {
        let lb = mvn_log_density_chol(b, &self.mode, &self.chol_l);
        let lmu = if self.mu_precision_scale > 0.0 {
            truncated_normal_log_density(
                mu,
                self.xbar,
                self.mu_variance(b),
                self.mu_lower,
                self.mu_upper,
            )
        } else if mu >= self.mu_lower && mu <= self.mu_upper {
            -(self.mu_upper - self.mu_lower).ln()
        } else {
            f64::NEG_INFINITY
        };
        lb + lmu
    }
}

/// `log N(b; 0, Σ_b)` including normalization.
pub fn b_prior_log_density(b: &DVector<f64>, sigma2_alpha: f64, tau2_b: f64) -> f64 {
    let j = (b.len() - 1) as f64;
    let quad = b[0] * b[0] / sigma2_alpha + b.rows(1, b.len() - 1).norm_squared() / tau2_b;
    -0.5 * (j + 1.0) * (2.0 * PI).ln()
        - 0.5 * sigma2_alpha.ln()
        - 0.5 * j * tau2_b.ln()
        - 0.5 * quad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use rand::Rng;

    fn random_instance(seed: u64, n: usize, j: usize) -> (SplineSpectrum, Vec<f64>) {
        let mut rng = RngStream::new(seed, 0).rng();
        let coefs: Vec<f64> = (0..=j).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = SplineSpectrum::new(coefs, rng.random_range(0.5..3.0)).unwrap();
        let half: Vec<f64> = (0..=n / 2).map(|_| rng.random_range(0.05..3.0)).collect();
        let full = (0..n).map(|k| half[k.min(n - k)]).collect();
        (spec, full)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (spec, pgram) = random_instance(seed, 64, 5);
            let (_, g, _) = b_log_conditional_and_derivatives(&spec, &pgram, 10.0).unwrap();
            let h = 1e-5;
            for i in 0..spec.coefficients.len() {
                let mut up = spec.clone();
                up.coefficients[i] += h;
                let mut dn = spec.clone();
                dn.coefficients[i] -= h;
                let fd = (b_log_conditional_and_derivatives(&up, &pgram, 10.0)
                    .unwrap()
                    .0
                    - b_log_conditional_and_derivatives(&dn, &pgram, 10.0)
                        .unwrap()
                        .0)
                    / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0),
                    "{fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit_without_prior() {
        let n = 32;
        let spec = SplineSpectrum::new(vec![0.3, -0.5, 0.2], 1.0).unwrap();
        let lf = crate::spectral::log_spectral_density(&spec, n);
        let pgram: Vec<f64> = lf.iter().map(|v| v.exp()).collect();
        let basis = FoldedBasis::new(n, 2);
        let cond = BConditional::new(
            &basis,
            pgram[..basis.n_freq()].to_vec(),
            1.0,
            DVector::zeros(3),
        );
        let (_, g) = cond.value_and_gradient(&spec.as_vector());
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn hessian_symmetric_negative_definite() {
        let (spec, pgram) = random_instance(9, 40, 4);
        let (_, _, h) = b_log_conditional_and_derivatives(&spec, &pgram, 5.0).unwrap();
        assert!((h.clone() - h.transpose()).abs().max() < 1e-12);
        assert!((-h).cholesky().is_some());
    }

    #[test]
    fn metric_single_basis_matches_direct_sum() {
        let (n, j) = (4, 1);
        let g = rmhmc_metric(n, j, 2.0, 3.0).unwrap();
        let mut direct = DMatrix::zeros(2, 2);
        for k in 0..n {
            let q = crate::model::basis_row(k as f64 / n as f64, j);
            let q = DVector::from_vec(q);
            direct += &q * q.transpose() * 0.5;
        }
        direct[(0, 0)] += 0.5;
        direct[(1, 1)] += 1.0 / 3.0;
        assert!((g - direct).abs().max() < 1e-14);
    }

    #[test]
    fn metric_tau_only_touches_spline_block() {
        let a = rmhmc_metric(32, 4, 10.0, 1.0).unwrap();
        let b = rmhmc_metric(32, 4, 10.0, 2.0).unwrap();
        let d = b - a;
        for i in 0..5 {
            for k in 0..5 {
                if i == 0 || k == 0 || i != k {
                    assert_eq!(d[(i, k)], 0.0);
                }
            }
        }
        assert!(d[(1, 1)] < 0.0);
    }

    #[test]
    fn metric_minus_prior_is_psd() {
        let g = rmhmc_metric(33, 6, 10.0, 1.0).unwrap();
        let prior = DMatrix::from_diagonal(&prior_precision(6, 10.0, 1.0));
        let eig = (g - prior).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn newton_finds_mode_of_conditional() {
        let (spec, pgram) = random_instance(3, 64, 5);
        let basis = FoldedBasis::new(64, 5);
        let cond = BConditional::new(
            &basis,
            pgram[..33].to_vec(),
            1.0,
            prior_precision(5, 10.0, spec.tau2_b),
        );
        let (mode, _) = newton_maximize(
            DVector::zeros(6),
            |b| cond.value(b),
            |b| cond.value_gradient_hessian(b),
        )
        .unwrap();
        let (v, g, h) = cond.value_gradient_hessian(&mode);
        // Newton decrement g'(-H)^{-1}g: the gap to the maximum, to second order.
        let decrement = g.dot(&(-h).cholesky().unwrap().solve(&g));
        assert!(
            decrement < 1e-12 * (1.0 + v.abs()),
            "{decrement} {}",
            g.norm()
        );
        assert!(g.norm() < 1e-6 * (1.0 + v.abs()), "{}", g.norm());
    }

    #[test]
    fn modal_proposal_density_integrates_mu() {
        let (spec, pgram) = random_instance(4, 48, 3);
        let basis = FoldedBasis::new(48, 3);
        let cond = BConditional::new(
            &basis,
            pgram[..25].to_vec(),
            1.0,
            prior_precision(3, 10.0, spec.tau2_b),
        );
        let prop = ModalProposal::build(&cond, DVector::zeros(4), 0.2, 48.0, (-1.0, 1.0)).unwrap();
        // density over μ at fixed b integrates to one
        let b = prop.mode.clone();
        let m = 20_000;
        let h = 2.0 / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                (prop.log_density(-1.0 + (i as f64 + 0.5) * h, &b)
                    - mvn_log_density_chol(&b, &prop.mode, &prop.chol_l))
                .exp()
                    * h
            })
            .sum();
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }
}
