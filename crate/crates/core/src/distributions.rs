//! Random variate generators used by the Gibbs and Metropolis steps.
//!
//! Every sampler takes an explicit `&mut R: Rng`, and [`RngStream`] hands out
//! counter-based ChaCha streams keyed by `(seed, stream_id)` so that parallel
//! tasks never share generator state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

pub type ChainRng = ChaCha8Rng;

/// A `(seed, stream_id)` pair naming one independent ChaCha8 keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Stream whose id is a hash of an arbitrary tag path, e.g.
    /// `[iteration, STEP_TAG, series]`.
    pub fn keyed(seed: u64, path: &[u64]) -> Self {
        let mut h = 0x243f_6a88_85a3_08d3_u64;
        for &p in path {
            h = splitmix64(h ^ p);
        }
        RngStream::new(seed, h)
    }

    pub fn rng(&self) -> ChainRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log(1 - Φ(x))`, accurate far into the upper tail.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 30.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (x * (2.0 * PI).sqrt()).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `log(Φ(b) - Φ(a))` for `a < b`.
pub fn log_normal_interval(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        let la = log_normal_sf(a);
        let lb = log_normal_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        log_normal_interval(-b, -a)
    } else {
        let lo = log_normal_sf(-a); // Φ(a) = 1 - Φ(-a)
        let hi = log_normal_sf(b);
        (1.0 - lo.exp() - hi.exp()).ln()
    }
}

/// Log density of `N(mean, var)` truncated to `(lo, hi)`.
pub fn truncated_normal_log_density(x: f64, mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    if !(x >= lo && x <= hi) {
        return f64::NEG_INFINITY;
    }
    let sd = var.sqrt();
    let z = (x - mean) / sd;
    -0.5 * z * z
        - 0.5 * (2.0 * PI).ln()
        - sd.ln()
        - log_normal_interval((lo - mean) / sd, (hi - mean) / sd)
}

/// Draw from PG(1, c) with Devroye's alternating-series rejection sampler.
pub fn sample_polya_gamma_1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::invalid(format!(
            "Polya-Gamma tilt must be finite, got {c}"
        )));
    }
    Ok(0.25 * sample_jstar(0.5 * c.abs(), rng))
}

const PG_TRUNC: f64 = 0.64;

fn jstar_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > PG_TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * (0.5 * PI * x).ln() + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn jstar_exponential_mass(z: f64) -> f64 {
    let t = PG_TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + normal_cdf(b).ln();
    let xa = x0 + z + normal_cdf(a).ln();
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian(1/z, 1) restricted to `(0, PG_TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    if z < 1.0 / t {
        loop {
            let (mut e1, mut e2) = (exp1(rng), exp1(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = exp1(rng);
                e2 = exp1(rng);
            }
            let d = 1.0 + e1 * t;
            let x = t / (d * d);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let y = std_normal(rng);
            let mu_y = mu * y * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

fn sample_jstar<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = jstar_exponential_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            PG_TRUNC + exp1(rng) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = jstar_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= jstar_coef(n, x);
                if y <= s {
                    return x;
                }
            } else {
                s += jstar_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Draw from `N(mean, var)` restricted to `(lo, hi)`.
///
/// Uses plain normal rejection when the interval holds most of the mass,
/// and Robert's uniform or translated-exponential proposals in the tails.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::invalid(format!(
            "truncation bounds must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    if !(var > 0.0) || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "truncated normal needs finite mean and var > 0, got ({mean}, {var})"
        )));
    }
    let sd = var.sqrt();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = if a >= 0.0 {
        standard_tail(a, b, rng)
    } else if b <= 0.0 {
        -standard_tail(-b, -a, rng)
    } else {
        standard_central(a, b, rng)
    };
    // Guard against rounding pushing the value onto the boundary.
    let x = (mean + sd * z).clamp(lo, hi);
    Ok(x)
}

fn standard_central<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a >= (2.0 * PI).sqrt() {
        loop {
            let z = std_normal(rng);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        if rng.random::<f64>() <= (-0.5 * z * z).exp() {
            return z;
        }
    }
}

fn standard_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let root = (a * a + 4.0).sqrt();
    let alpha = 0.5 * (a + root);
    let uniform_limit = a + 2.0 / (a + root) * ((a * a - a * root) / 4.0 + 0.5).exp();
    if b <= uniform_limit {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    if a < 0.5 && b.is_infinite() {
        loop {
            let z = std_normal(rng);
            if z > a {
                return z;
            }
        }
    }
    loop {
        let z = a + exp1(rng) / alpha;
        if z >= b {
            continue;
        }
        let d = z - alpha;
        if rng.random::<f64>() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Draw `X` with density proportional to `x^(-shape-1) exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::invalid(format!(
            "inverse gamma needs positive finite shape and scale, got ({shape}, {scale})"
        )));
    }
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let y: f64 = g.sample(rng);
    Ok(scale / y.max(f64::MIN_POSITIVE))
}

/// Inverse gamma restricted to `(0, upper]`.
///
/// Works on the reciprocal `y = scale / x ~ Gamma(shape, 1)`, which must
/// exceed `y0 = scale / upper`.
pub fn sample_truncated_inverse_gamma<R: Rng + ?Sized>(
    shape: f64,
    scale: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(upper > 0.0) {
        return Err(Error::invalid(
            "inverse gamma truncation point must be positive",
        ));
    }
    if upper.is_infinite() {
        return sample_inverse_gamma(shape, scale, rng);
    }
    if !(shape > 0.0 && scale > 0.0) {
        return Err(Error::invalid(format!(
            "inverse gamma needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    let y0 = scale / upper;
    let y = if y0 > shape.max(1e-300) {
        // Exponential envelope on the upper tail of the gamma density.
        let rate = if shape > 1.0 {
            1.0 - (shape - 1.0) / y0
        } else {
            1.0
        };
        loop {
            let y = y0 + exp1(rng) / rate;
            let log_accept = (shape - 1.0) * (y / y0).ln() - (1.0 - rate) * (y - y0);
            if rng.random::<f64>().ln() <= log_accept {
                break y;
            }
        }
    } else {
        let tail = gamma_ur(shape, y0);
        if tail > 0.2 {
            let g = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            loop {
                let y: f64 = g.sample(rng);
                if y >= y0 {
                    break y;
                }
            }
        } else {
            inverse_upper_gamma(shape, y0, tail * rng.random::<f64>().max(f64::MIN_POSITIVE))
        }
    };
    Ok((scale / y).min(upper))
}

/// Solve `Q(shape, y) = target` for `y >= y0` by bisection in `log y`.
fn inverse_upper_gamma(shape: f64, y0: f64, target: f64) -> f64 {
    let mut lo = y0.ln();
    let mut hi = lo + 1.0;
    while gamma_ur(shape, hi.exp()) > target {
        hi += (hi - lo).max(1.0);
        if hi > 800.0 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_ur(shape, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Log density of the inverse gamma distribution.
pub fn inverse_gamma_log_density(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln()
        - statrs::function::gamma::ln_gamma(shape)
        - (shape + 1.0) * x.ln()
        - scale / x
}

/// Draw from `N(mean, precision^{-1})` using the Cholesky factor of the precision.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let d = mean.len();
    if precision.nrows() != d || precision.ncols() != d {
        return Err(Error::invalid(
            "precision matrix dimension does not match mean",
        ));
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("precision matrix is not positive definite"))?;
    let z = DVector::from_fn(d, |_, _| std_normal(rng));
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    Ok(mean + x)
}

/// Log density of `N(mean, precision^{-1})` given the precision's Cholesky factor.
pub fn mvn_log_density_chol(x: &DVector<f64>, mean: &DVector<f64>, chol_l: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    // precision = L L', quadratic form = |L' diff|^2
    let y = chol_l.tr_mul(&diff);
    let log_det: f64 = chol_l.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * d * (2.0 * PI).ln() + log_det - 0.5 * y.norm_squared()
}
