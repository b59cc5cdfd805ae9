//! Hamiltonian Monte Carlo for spline coefficients with the constant Fisher
//! metric as mass matrix.

use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;

use super::conditional::BConditional;
use super::ComponentData;
use crate::distributions::std_normal;
use crate::error::{Error, Result};
use crate::model::SplineSpectrum;

pub const STEP_SIZE_RANGE: (f64, f64) = (0.1, 1.0);
pub const MAX_LEAPFROG_STEPS: usize = 10;

#[derive(Debug, Clone)]
pub struct HmcOutcome {
    pub b: DVector<f64>,
    pub accepted: bool,
    pub divergent: bool,
    /// `H(end) − H(start)`; NaN for a divergent trajectory.
    pub energy_error: f64,
}

/// One leapfrog trajectory of `n_steps` steps of size `step` followed by a
/// Metropolis correction. Momentum is `N(0, G)` with `G = L L'`.
pub fn hmc_trajectory<R: Rng + ?Sized>(
    target: &BConditional<'_>,
    metric: &Cholesky<f64, Dyn>,
    b0: &DVector<f64>,
    step: f64,
    n_steps: usize,
    rng: &mut R,
) -> HmcOutcome {
    let dim = b0.len();
    let z = DVector::from_fn(dim, |_, _| std_normal(rng));
    let mut p = metric.l() * z;
    let kinetic = |p: &DVector<f64>| 0.5 * p.dot(&metric.solve(p));

    let (v0, mut grad) = target.value_and_gradient(b0);
    let h0 = -v0 + kinetic(&p);
    let mut b = b0.clone();
    let mut v = v0;
    for _ in 0..n_steps {
        p += &grad * (0.5 * step);
        b += metric.solve(&p) * step;
        let (nv, ng) = target.value_and_gradient(&b);
        v = nv;
        grad = ng;
        p += &grad * (0.5 * step);
        if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            break;
        }
    }
    let h1 = -v + kinetic(&p);
    let energy_error = h1 - h0;
    if !energy_error.is_finite() {
        return HmcOutcome {
            b: b0.clone(),
            accepted: false,
            divergent: true,
            energy_error: f64::NAN,
        };
    }
    let accepted = rng.random::<f64>().ln() < -energy_error;
    HmcOutcome {
        b: if accepted { b } else { b0.clone() },
        accepted,
        divergent: false,
        energy_error,
    }
}

/// HMC update of the coefficients of segment `[a, b)` at mean `mu`, with
/// step size drawn from `U[0.1, 1]` and step count from `U{1..10}`.
pub fn rmhmc_update_b<R: Rng + ?Sized>(
    spec: &SplineSpectrum,
    mu: f64,
    data: &ComponentData<'_>,
    a: usize,
    b: usize,
    rng: &mut R,
) -> Result<(SplineSpectrum, HmcOutcome)> {
    let step = rng.random_range(STEP_SIZE_RANGE.0..=STEP_SIZE_RANGE.1);
    let n_steps = rng.random_range(1..=MAX_LEAPFROG_STEPS);
    rmhmc_update_b_with(spec, mu, data, a, b, step, n_steps, rng)
}

/// [`rmhmc_update_b`] with explicit integrator settings.
#[allow(clippy::too_many_arguments)]
pub fn rmhmc_update_b_with<R: Rng + ?Sized>(
    spec: &SplineSpectrum,
    mu: f64,
    data: &ComponentData<'_>,
    a: usize,
    b: usize,
    step: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<(SplineSpectrum, HmcOutcome)> {
    let basis = data.basis(b - a);
    let target = data.b_conditional(&basis, a, b, mu, spec.tau2_b);
    let metric = target
        .metric()
        .cholesky()
        .ok_or_else(|| Error::numerical("metric not positive definite"))?;
    let out = hmc_trajectory(&target, &metric, &spec.as_vector(), step, n_steps, rng);
    let next = SplineSpectrum {
        coefficients: out.b.iter().copied().collect(),
        tau2_b: spec.tau2_b,
    };
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use crate::model::{BasisCache, ComponentPriorConfig};

    fn setup() -> (ComponentPriorConfig, BasisCache, Vec<f64>) {
        let cfg = ComponentPriorConfig {
            max_segments: 1,
            min_segment_length: 20,
            n_basis: 6,
            ..Default::default()
        };
        let bases = BasisCache::new(6);
        let mut rng = RngStream::new(11, 0).rng();
        let x = (0..64).map(|_| std_normal(&mut rng)).collect();
        (cfg, bases, x)
    }

    #[test]
    fn zero_steps_returns_input_and_accepts() {
        let (cfg, bases, x) = setup();
        let data = ComponentData::new(vec![&x], 64, &cfg, &bases).unwrap();
        let spec = SplineSpectrum::new(vec![0.1, 0.5, -0.2, 0.0, 0.3, 0.1, 0.0], 1.0).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let (next, out) = rmhmc_update_b_with(&spec, 0.0, &data, 0, 64, 0.5, 0, &mut rng).unwrap();
        assert_eq!(next, spec);
        assert!(out.accepted);
        assert_eq!(out.energy_error, 0.0);
    }

    #[test]
    fn small_steps_conserve_energy() {
        let (cfg, bases, x) = setup();
        let data = ComponentData::new(vec![&x], 64, &cfg, &bases).unwrap();
        let spec = SplineSpectrum::new(vec![0.1, 0.5, -0.2, 0.0, 0.3, 0.1, 0.0], 1.0).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..20 {
            let (_, out) =
                rmhmc_update_b_with(&spec, 0.0, &data, 0, 64, 1e-3, 10, &mut rng).unwrap();
            assert!(out.energy_error.abs() < 1e-4, "{}", out.energy_error);
        }
    }
}
