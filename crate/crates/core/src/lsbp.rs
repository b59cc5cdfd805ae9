//! Logit stick-breaking mixture weights with a thin-plate Gaussian process
//! on the log odds, and their Gibbs updates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::component::newton_maximize;
use crate::distributions::{
    mvn_log_density_chol, sample_inverse_gamma, sample_mvn_precision, sample_polya_gamma_1,
    std_normal,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsbpConfig {
    /// Truncation level `H`.
    pub n_components: usize,
    /// Retained thin-plate eigenvectors `B`.
    pub n_gp_basis: usize,
    /// Prior variance of the intercept and linear coefficients.
    pub beta_prior_variance: f64,
    pub nu_tau: f64,
    pub a_tau: f64,
}

impl Default for LsbpConfig {
    fn default() -> Self {
        LsbpConfig {
            n_components: 25,
            n_gp_basis: 10,
            beta_prior_variance: 100.0,
            nu_tau: 3.0,
            a_tau: 10.0,
        }
    }
}

impl LsbpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components < 2 {
            return Err(Error::invalid("n_components must be at least 2"));
        }
        for (name, v) in [
            ("beta_prior_variance", self.beta_prior_variance),
            ("nu_tau", self.nu_tau),
            ("a_tau", self.a_tau),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Thin-plate radial function of `r = ‖u₁ − u₂‖`: `r³`, `r² log r` or `r`
/// for one, two or three covariates.
pub fn thin_plate_kernel(u1: &[f64], u2: &[f64]) -> Result<f64> {
    if u1.len() != u2.len() {
        return Err(Error::invalid("kernel arguments differ in dimension"));
    }
    let r = u1
        .iter()
        .zip(u2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    match u1.len() {
        1 => Ok(r * r * r),
        2 => Ok(if r == 0.0 { 0.0 } else { r * r * r.ln() }),
        3 => Ok(r),
        p => Err(Error::invalid(format!(
            "thin-plate kernel supports 1 to 3 covariates, got {p}"
        ))),
    }
}

/// Covariate design `U† = (1 | U | Q_B D_B^{1/2})` on standardized
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDesign {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardized covariates, one row per series.
    pub u_std: Vec<Vec<f64>>,
    pub q_b: DMatrix<f64>,
    pub d_b: DVector<f64>,
    pub u_dagger: DMatrix<f64>,
    /// `Σ D_B / Σ D₊`.
    pub energy_ratio: f64,
}

impl CovariateDesign {
    pub fn n_rows(&self) -> usize {
        self.u_dagger.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.u_dagger.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.center.len()
    }

    pub fn n_gp_basis(&self) -> usize {
        self.d_b.len()
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.u_dagger.row(j).transpose()
    }
}

pub fn build_design(u: &[Vec<f64>], b: usize) -> Result<CovariateDesign> {
    let n = u.len();
    if n == 0 {
        return Err(Error::invalid("design needs at least one covariate row"));
    }
    let p = u[0].len();
    if u.iter()
        .any(|r| r.len() != p || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid(
            "covariate rows must share one dimension and be finite",
        ));
    }
    if b >= n && b > 0 {
        return Err(Error::invalid(format!(
            "B = {b} must be below the number of series {n}"
        )));
    }
    if b > 0 && !(1..=3).contains(&p) {
        return Err(Error::invalid(format!(
            "thin-plate basis needs 1 to 3 covariates, got {p}"
        )));
    }
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for k in 0..p {
        let m = u.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        let var = if n > 1 {
            u.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        center[k] = m;
        if var > 0.0 {
            scale[k] = var.sqrt();
        }
    }
    let u_std: Vec<Vec<f64>> = u
        .iter()
        .map(|r| (0..p).map(|k| (r[k] - center[k]) / scale[k]).collect())
        .collect();

    let (q_b, d_b, energy_ratio) = if b > 0 {
        let mut omega = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = thin_plate_kernel(&u_std[i], &u_std[j])?;
                omega[(i, j)] = v;
                omega[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(omega);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let positive: f64 = eig.eigenvalues.iter().filter(|&&v| v > 0.0).sum();
        let mut q = DMatrix::zeros(n, b);
        let mut d = DVector::zeros(b);
        for (c, &idx) in order.iter().take(b).enumerate() {
            d[c] = eig.eigenvalues[idx].max(0.0);
            q.set_column(c, &eig.eigenvectors.column(idx));
        }
        let ratio = if positive > 0.0 {
            d.sum() / positive
        } else {
            0.0
        };
        (q, d, ratio)
    } else {
        (DMatrix::zeros(n, 0), DVector::zeros(0), 1.0)
    };

    let mut u_dagger = DMatrix::zeros(n, 1 + p + b);
    for j in 0..n {
        u_dagger[(j, 0)] = 1.0;
        for k in 0..p {
            u_dagger[(j, 1 + k)] = u_std[j][k];
        }
        for c in 0..b {
            u_dagger[(j, 1 + p + c)] = q_b[(j, c)] * d_b[c].sqrt();
        }
    }
    Ok(CovariateDesign {
        center,
        scale,
        u_std,
        q_b,
        d_b,
        u_dagger,
        energy_ratio,
    })
}

/// Design row at a new covariate value via the Nyström extension of the
/// retained eigenbasis.
pub fn predictive_design_row(u_star: &[f64], design: &CovariateDesign) -> Result<DVector<f64>> {
    let p = design.n_covariates();
    if u_star.len() != p {
        return Err(Error::invalid(format!(
            "query point has {} covariates, design has {p}",
            u_star.len()
        )));
    }
    if u_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query point must be finite"));
    }
    let us: Vec<f64> = (0..p)
        .map(|k| (u_star[k] - design.center[k]) / design.scale[k])
        .collect();
    let b = design.n_gp_basis();
    let mut row = DVector::zeros(1 + p + b);
    row[0] = 1.0;
    for k in 0..p {
        row[1 + k] = us[k];
    }
    if b > 0 {
        let kstar = DVector::from_iterator(
            design.n_rows(),
            design
                .u_std
                .iter()
                .map(|uj| thin_plate_kernel(&us, uj))
                .collect::<Result<Vec<_>>>()?,
        );
        let proj = design.q_b.tr_mul(&kstar);
        for c in 0..b {
            let d = design.d_b[c];
            row[1 + p + c] = if d > 0.0 { proj[c] / d.sqrt() } else { 0.0 };
        }
    }
    Ok(row)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log π_h` for `h = 1..H` from the `H − 1` stick log odds.
pub fn log_stick_weights(log_odds: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(log_odds.len() + 1);
    let mut rest = 0.0;
    for &w in log_odds {
        out.push(rest - softplus(-w));
        rest -= softplus(w);
    }
    out.push(rest);
    out
}

pub fn stick_weights(log_odds: &[f64]) -> Vec<f64> {
    log_stick_weights(log_odds)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Stick-breaking coefficients `β†_h`, GP scales `τ²_h` and their
/// auxiliaries `a_h`, `h = 1..H−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickState {
    pub beta: Vec<DVector<f64>>,
    pub tau2: Vec<f64>,
    pub a: Vec<f64>,
}

impl StickState {
    pub fn new(n_components: usize, n_cols: usize) -> Self {
        StickState {
            beta: vec![DVector::zeros(n_cols); n_components - 1],
            tau2: vec![1.0; n_components - 1],
            a: vec![1.0; n_components - 1],
        }
    }

    pub fn n_components(&self) -> usize {
        self.beta.len() + 1
    }

    pub fn log_odds(&self, row: &DVector<f64>) -> Vec<f64> {
        self.beta.iter().map(|b| b.dot(row)).collect()
    }

    pub fn log_weights(&self, row: &DVector<f64>) -> Vec<f64> {
        log_stick_weights(&self.log_odds(row))
    }

    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if self.beta.is_empty()
            || self.tau2.len() != self.beta.len()
            || self.a.len() != self.beta.len()
        {
            return Err(Error::invalid(
                "stick state needs H − 1 ≥ 1 entries of each kind",
            ));
        }
        if self
            .beta
            .iter()
            .any(|b| b.len() != n_cols || b.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(
                "stick coefficients have the wrong length or are not finite",
            ));
        }
        if self
            .tau2
            .iter()
            .chain(&self.a)
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::invalid("stick scales must be positive"));
        }
        Ok(())
    }
}

/// Prior precision diagonal of `β†_h`.
pub fn beta_prior_precision(
    design: &CovariateDesign,
    tau2: f64,
    config: &LsbpConfig,
) -> DVector<f64> {
    let fixed = 1 + design.n_covariates();
    DVector::from_fn(design.n_cols(), |i, _| {
        if i < fixed {
            1.0 / config.beta_prior_variance
        } else {
            1.0 / tau2
        }
    })
}

/// Normalized `log N(β†_h; 0, diag(Σ_β, τ²_h I_B))`.
pub fn beta_log_prior(
    beta: &DVector<f64>,
    design: &CovariateDesign,
    tau2: f64,
    config: &LsbpConfig,
) -> f64 {
    let prec = beta_prior_precision(design, tau2, config);
    beta.iter()
        .zip(prec.iter())
        .map(|(b, p)| 0.5 * (p / (2.0 * std::f64::consts::PI)).ln() - 0.5 * p * b * b)
        .sum()
}

/// Categorical draw from unnormalized log weights.
pub fn sample_log_categorical<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (h, l) in logw.iter().enumerate() {
        let w = (l - max).exp();
        if w > 0.0 {
            last = h;
        }
        if u < w {
            return Some(h);
        }
        u -= w;
    }
    Some(last)
}

/// Draw every indicator from `p(z_j = h) ∝ π_h(u_j) g_h(x_j | Θ_h)`.
///
/// `log_lik[j][h]` is `log g_h(x_j | Θ_h)`. Indicators are 0-based.
pub fn sample_z<R: Rng + ?Sized>(
    log_lik: &[Vec<f64>],
    design: &CovariateDesign,
    stick: &StickState,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let h = stick.n_components();
    let mut z = Vec::with_capacity(log_lik.len());
    for (j, ll) in log_lik.iter().enumerate() {
        if ll.len() != h {
            return Err(Error::invalid("log-likelihood row length differs from H"));
        }
        z.push(sample_z_one(j, ll, design, stick, rng)?);
    }
    Ok(z)
}

pub fn sample_z_one<R: Rng + ?Sized>(
    j: usize,
    log_lik: &[f64],
    design: &CovariateDesign,
    stick: &StickState,
    rng: &mut R,
) -> Result<usize> {
    let lw = stick.log_weights(&design.row(j));
    let logp: Vec<f64> = lw.iter().zip(log_lik).map(|(a, b)| a + b).collect();
    sample_log_categorical(&logp, rng).ok_or_else(|| {
        Error::numerical(format!(
            "series {j}: every component has zero posterior weight (log weights {lw:?}, log-likelihoods {log_lik:?})"
        ))
    })
}

/// Rows of `Z_h = {j : z_j ≥ h}` and `κ_j = 1(z_j = h) − ½`.
fn at_risk(h: usize, z: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rows: Vec<usize> = (0..z.len()).filter(|&j| z[j] >= h).collect();
    let kappa = rows
        .iter()
        .map(|&j| if z[j] == h { 0.5 } else { -0.5 })
        .collect();
    (rows, kappa)
}

/// `κ` values of the at-risk set of stick `h` (0-based), for inspection.
pub fn stick_kappa(h: usize, z: &[usize]) -> Vec<(usize, f64)> {
    let (rows, kappa) = at_risk(h, z);
    rows.into_iter().zip(kappa).collect()
}

/// Pólya-Gamma Gibbs update of `β†_h` (0-based `h < H − 1`).
pub fn sample_beta_dagger<R: Rng + ?Sized>(
    h: usize,
    z: &[usize],
    design: &CovariateDesign,
    stick: &StickState,
    config: &LsbpConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if h + 1 >= stick.n_components() {
        return Err(Error::invalid(format!("stick index {h} out of range")));
    }
    let (rows, kappa) = at_risk(h, z);
    let prior = beta_prior_precision(design, stick.tau2[h], config);
    let d = design.n_cols();
    let mut precision = DMatrix::from_diagonal(&prior);
    let mut rhs = DVector::zeros(d);
    let beta = &stick.beta[h];
    for (&j, &k) in rows.iter().zip(&kappa) {
        let row = design.u_dagger.row(j);
        let eta = sample_polya_gamma_1(row.dot(&beta.transpose()), rng)?;
        precision.ger(eta, &row.transpose(), &row.transpose(), 1.0);
        rhs.axpy(k, &row.transpose(), 1.0);
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("stick posterior precision not positive definite"))?;
    let mean = chol.solve(&rhs);
    sample_mvn_precision(&mean, &precision, rng)
}

/// Half-t scale update of stick `h`: `a_h | τ²_h`, then `τ²_h | a_h, β^GP_h`.
pub fn sample_tau_h<R: Rng + ?Sized>(
    h: usize,
    stick: &StickState,
    design: &CovariateDesign,
    config: &LsbpConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let nu = config.nu_tau;
    let a = sample_inverse_gamma(
        0.5 * (nu + 1.0),
        nu / stick.tau2[h] + 1.0 / (config.a_tau * config.a_tau),
        rng,
    )?;
    let b = design.n_gp_basis();
    let gp = stick.beta[h].rows(1 + design.n_covariates(), b);
    let tau2 = sample_inverse_gamma(0.5 * (nu + b as f64), 0.5 * gp.norm_squared() + nu / a, rng)?;
    Ok((tau2, a))
}

/// `log p(z | β†)` under the continuation-ratio representation.
pub fn log_p_z(z: &[usize], design: &CovariateDesign, stick: &StickState) -> f64 {
    z.iter()
        .enumerate()
        .map(|(j, &h)| stick.log_weights(&design.row(j))[h])
        .sum()
}

/// Gaussian approximation of `p(β†_h | z, τ²_h)` at its mode.
#[derive(Debug, Clone)]
pub struct LaplaceApprox {
    pub mode: DVector<f64>,
    pub chol_l: DMatrix<f64>,
}

impl LaplaceApprox {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let z = DVector::from_fn(self.mode.len(), |_, _| std_normal(rng));
        let dx = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("singular Laplace factor"))?;
        Ok(&self.mode + dx)
    }

    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        mvn_log_density_chol(beta, &self.mode, &self.chol_l)
    }
}

/// Log posterior of `β†_h` given `z` and `τ²_h`, up to a constant.
pub fn beta_log_posterior(
    beta: &DVector<f64>,
    h: usize,
    z: &[usize],
    design: &CovariateDesign,
    tau2: f64,
    config: &LsbpConfig,
) -> f64 {
    let prior = beta_prior_precision(design, tau2, config);
    let mut v = -0.5
        * beta
            .iter()
            .zip(prior.iter())
            .map(|(b, p)| p * b * b)
            .sum::<f64>();
    for j in (0..z.len()).filter(|&j| z[j] >= h) {
        let eta = design.u_dagger.row(j).dot(&beta.transpose());
        v += if z[j] == h {
            -softplus(-eta)
        } else {
            -softplus(eta)
        };
    }
    v
}

pub fn laplace_beta(
    h: usize,
    z: &[usize],
    design: &CovariateDesign,
    tau2: f64,
    config: &LsbpConfig,
    start: &DVector<f64>,
) -> Result<LaplaceApprox> {
    let prior = beta_prior_precision(design, tau2, config);
    let (rows, _) = at_risk(h, z);
    let value = |b: &DVector<f64>| beta_log_posterior(b, h, z, design, tau2, config);
    let derivs = |b: &DVector<f64>| {
        let d = b.len();
        let mut g = -prior.component_mul(b);
        let mut hess = -DMatrix::from_diagonal(&prior);
        for &j in &rows {
            let row = design.u_dagger.row(j).transpose();
            let eta = row.dot(b);
            let p = 1.0 / (1.0 + (-eta).exp());
            let y = if z[j] == h { 1.0 } else { 0.0 };
            g.axpy(y - p, &row, 1.0);
            hess.ger(-p * (1.0 - p), &row, &row, 1.0);
        }
        debug_assert_eq!(hess.nrows(), d);
        (value(b), g, hess)
    };
    let (mode, chol_l) = newton_maximize(start.clone(), value, derivs)?;
    Ok(LaplaceApprox { mode, chol_l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;

    #[test]
    fn kernel_basics() {
        assert_eq!(thin_plate_kernel(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(thin_plate_kernel(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(thin_plate_kernel(&[0.0], &[2.0]).unwrap(), 8.0);
        assert_eq!(
            thin_plate_kernel(&[0.0, 0.0, 0.0], &[1.0, 2.0, 2.0]).unwrap(),
            3.0
        );
        assert!(thin_plate_kernel(&[0.0; 4], &[1.0; 4]).is_err());
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..100 {
            let a = [rng.random::<f64>(), rng.random::<f64>()];
            let b = [rng.random::<f64>(), rng.random::<f64>()];
            assert_eq!(
                thin_plate_kernel(&a, &b).unwrap(),
                thin_plate_kernel(&b, &a).unwrap()
            );
        }
    }

    #[test]
    fn stick_weight_examples() {
        let w = stick_weights(&[0.0, 0.0]);
        assert!(
            (w[0] - 0.5).abs() < 1e-15
                && (w[1] - 0.25).abs() < 1e-15
                && (w[2] - 0.25).abs() < 1e-15
        );
        let w = stick_weights(&[800.0, 0.0, 0.0]);
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1..].iter().all(|&v| v < 1e-300));
        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..100 {
            let lo: Vec<f64> = (0..24).map(|_| 10.0 * std_normal(&mut rng)).collect();
            let w = stick_weights(&lo);
            assert_eq!(w.len(), 25);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn design_shape_and_orthonormality() {
        let mut rng = RngStream::new(3, 0).rng();
        let u: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random(), rng.random()]).collect();
        let d = build_design(&u, 10).unwrap();
        assert_eq!(d.n_cols(), 13);
        assert!(d.u_dagger.column(0).iter().all(|&v| v == 1.0));
        let qtq = d.q_b.tr_mul(&d.q_b);
        assert!((qtq - DMatrix::identity(10, 10)).abs().max() < 1e-10);
        assert!(d.d_b.iter().all(|&v| v >= 0.0));
        assert!(d.d_b.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(d.energy_ratio > 0.9, "{}", d.energy_ratio);
        assert!(build_design(&u, 100).is_err());
    }

    #[test]
    fn collinear_design_reproduces_kernel() {
        let u = vec![vec![0.0], vec![1.0], vec![2.0]];
        let d = build_design(&u, 2).unwrap();
        let mut omega = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                omega[(i, j)] = thin_plate_kernel(&d.u_std[i], &d.u_std[j]).unwrap();
            }
        }
        let eig = SymmetricEigen::new(omega.clone());
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues)
            * eig.eigenvectors.transpose();
        assert!((rebuilt - omega).abs().max() < 1e-10);
    }

    #[test]
    fn nystrom_row_reproduces_observed_rows() {
        let mut rng = RngStream::new(4, 0).rng();
        let u: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random(), rng.random()]).collect();
        let d = build_design(&u, 7).unwrap();
        for j in 0..8 {
            let r = predictive_design_row(&u[j], &d).unwrap();
            let retained = (0..7).filter(|&c| d.d_b[c] > 0.0);
            for c in retained {
                assert!((r[3 + c] - d.u_dagger[(j, 3 + c)]).abs() < 1e-8);
            }
            assert!((r.rows(0, 3) - d.u_dagger.row(j).columns(0, 3).transpose()).norm() < 1e-12);
        }
        let near = predictive_design_row(&[u[0][0] + 1e-9, u[0][1]], &d).unwrap();
        let at = predictive_design_row(&u[0], &d).unwrap();
        assert!((near - at).norm() < 1e-6);
    }

    #[test]
    fn zero_eigenvalues_give_zero_columns() {
        let u = vec![vec![0.5], vec![0.5], vec![0.5]];
        let d = build_design(&u, 2).unwrap();
        assert!(d.d_b.iter().all(|&v| v == 0.0));
        let r = predictive_design_row(&[0.7], &d).unwrap();
        assert!(r.rows(2, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kappa_definition() {
        let z = vec![0, 1, 2, 1, 3];
        let k = stick_kappa(1, &z);
        assert_eq!(k, vec![(1, 0.5), (2, -0.5), (3, 0.5), (4, -0.5)]);
    }

    #[test]
    fn z_dominance_and_prior_frequencies() {
        let u: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.0]];
        let d = build_design(&u, 0).unwrap();
        let mut stick = StickState::new(2, d.n_cols());
        stick.beta[0][1] = 0.8;
        let mut rng = RngStream::new(5, 0).rng();
        let ll = vec![vec![0.0, -1e6]; 3];
        assert_eq!(sample_z(&ll, &d, &stick, &mut rng).unwrap(), vec![0, 0, 0]);
        let eq = vec![vec![-3.0, -3.0]; 3];
        let k = 20_000;
        let mut c = [0.0; 3];
        for _ in 0..k {
            let z = sample_z(&eq, &d, &stick, &mut rng).unwrap();
            for j in 0..3 {
                c[j] += (z[j] == 0) as u8 as f64;
            }
        }
        for j in 0..3 {
            let p = stick_weights(&stick.log_odds(&d.row(j)))[0];
            assert!((c[j] / k as f64 - p).abs() < 4.0 * (p * (1.0 - p) / k as f64).sqrt());
        }
        let dead = vec![vec![f64::NEG_INFINITY; 2]];
        assert!(matches!(
            sample_z(&dead, &d, &stick, &mut rng),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn z_matches_enumeration_on_toy() {
        let u: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.2], vec![1.3]];
        let d = build_design(&u, 0).unwrap();
        let mut stick = StickState::new(2, d.n_cols());
        stick.beta[0] = DVector::from_vec(vec![0.3, -1.1]);
        let ll = vec![vec![-2.0, -1.0], vec![-0.5, -1.5], vec![-3.0, -1.0]];
        let mut rng = RngStream::new(6, 0).rng();
        let k = 40_000;
        let mut c = [0.0; 3];
        for _ in 0..k {
            let z = sample_z(&ll, &d, &stick, &mut rng).unwrap();
            for j in 0..3 {
                c[j] += (z[j] == 0) as u8 as f64;
            }
        }
        for j in 0..3 {
            let eta = stick.beta[0].dot(&d.row(j));
            let v = 1.0 / (1.0 + (-eta).exp());
            let a = v * ll[j][0].exp();
            let b = (1.0 - v) * ll[j][1].exp();
            let p = a / (a + b);
            assert!((c[j] / k as f64 - p).abs() < 4.0 * (p * (1.0 - p) / k as f64).sqrt());
        }
    }

    #[test]
    fn beta_without_data_draws_from_prior() {
        let u: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let d = build_design(&u, 2).unwrap();
        let mut stick = StickState::new(3, d.n_cols());
        stick.tau2[1] = 4.0;
        let cfg = LsbpConfig::default();
        let z = vec![0; 6];
        let mut rng = RngStream::new(7, 0).rng();
        let k = 10_000;
        let mut s2 = DVector::zeros(d.n_cols());
        let mut s1 = DVector::zeros(d.n_cols());
        for _ in 0..k {
            let b = sample_beta_dagger(1, &z, &d, &stick, &cfg, &mut rng).unwrap();
            s1 += &b;
            s2 += b.component_mul(&b);
        }
        for (i, var) in [100.0, 100.0, 4.0, 4.0].iter().enumerate() {
            let m = s1[i] / k as f64;
            let v = s2[i] / k as f64 - m * m;
            assert!(m.abs() < 4.0 * (var / k as f64).sqrt());
            assert!((v - var).abs() < 4.0 * var * (2.0 / k as f64).sqrt());
        }
    }

    #[test]
    fn tau_with_zero_gp_coefficients() {
        let u: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let d = build_design(&u, 2).unwrap();
        let stick = StickState::new(2, d.n_cols());
        let cfg = LsbpConfig::default();
        let mut rng = RngStream::new(8, 0).rng();
        // a | τ² = 1: IG(2, 3 + 0.01), mean 3.01
        let k = 100_000;
        let mut sa = 0.0;
        for _ in 0..k {
            sa += sample_tau_h(0, &stick, &d, &cfg, &mut rng).unwrap().1;
        }
        let mean = 3.01;
        // IG(2, ·) has infinite variance: compare with a loose relative band
        assert!((sa / k as f64 - mean).abs() < 0.1 * mean);
    }

    #[test]
    fn laplace_mode_is_stationary_point() {
        let mut rng = RngStream::new(9, 0).rng();
        let u: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random(), rng.random()]).collect();
        let d = build_design(&u, 4).unwrap();
        let z: Vec<usize> = (0..30)
            .map(|j| if u[j][0] < 0.5 { 0 } else { 1 + (j % 2) })
            .collect();
        let cfg = LsbpConfig::default();
        let lap = laplace_beta(0, &z, &d, 2.0, &cfg, &DVector::zeros(d.n_cols())).unwrap();
        let h = 1e-6;
        for i in 0..d.n_cols() {
            let mut up = lap.mode.clone();
            up[i] += h;
            let mut dn = lap.mode.clone();
            dn[i] -= h;
            let g = (beta_log_posterior(&up, 0, &z, &d, 2.0, &cfg)
                - beta_log_posterior(&dn, 0, &z, &d, 2.0, &cfg))
                / (2.0 * h);
            assert!(g.abs() < 1e-5, "{g}");
        }
    }
}
