//! One chain of the mixture sampler: imputation, component sweeps,
//! indicators, stick-breaking coefficients and scales, then a label swap.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::component::{component_update, sample_from_prior, ComponentData, MoveStats};
use crate::distributions::{ChainRng, RngStream};
use crate::error::{Error, Result};
use crate::lsbp::{
    build_design, laplace_beta, log_p_z, sample_beta_dagger, sample_tau_h, sample_z_one,
    CovariateDesign, LsbpConfig, StickState,
};
use crate::model::{BasisCache, ComponentPriorConfig, SegmentModel};
use crate::panel::Panel;
use crate::par;
use crate::spectral::{sample_missing_cached, TimeSeries, LOG_F_FLOOR};

/// Component sweeps run on the mean-filled data before the first iteration.
const INIT_SWEEPS: u64 = 5;

/// Everything fixed over a chain: data, design, priors and the RNG key.
#[derive(Debug)]
pub struct Sampler {
    pub series: Vec<TimeSeries>,
    pub design: CovariateDesign,
    pub prior: ComponentPriorConfig,
    pub lsbp: LsbpConfig,
    pub seed: u64,
    pub chain: u64,
    bases: BasisCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// `Θ_h` for `h = 1..H`.
    pub theta: Vec<SegmentModel>,
    pub stick: StickState,
    /// 0-based component of each series.
    pub z: Vec<usize>,
    /// Current values at each series' missing positions, in time order.
    pub imputed: Vec<Vec<f64>>,
    /// Completed iterations.
    pub iteration: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub h1: usize,
    pub h2: usize,
    pub accepted: bool,
    /// Mode finding or the ratio failed numerically; counted as a rejection.
    pub failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// `Σ_j log g(x_j | Θ_{z_j})` at the completed data.
    pub log_likelihood: f64,
    pub occupied: usize,
    pub moves: MoveStats,
    pub swap: SwapOutcome,
}

fn collect<T>(v: Vec<Result<T>>) -> Result<Vec<T>> {
    v.into_iter().collect()
}

impl Sampler {
    pub fn new(
        panel: &Panel,
        prior: ComponentPriorConfig,
        lsbp: LsbpConfig,
        seed: u64,
        chain: u64,
    ) -> Result<Self> {
        panel.validate()?;
        prior.validate()?;
        prior.validate_for_length(panel.series_length())?;
        lsbp.validate()?;
        let design = build_design(&panel.covariates, lsbp.n_gp_basis)?;
        let bases = BasisCache::new(prior.n_basis);
        Ok(Sampler {
            series: panel.series.clone(),
            design,
            prior,
            lsbp,
            seed,
            chain,
            bases,
        })
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series_length(&self) -> usize {
        self.series[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.lsbp.n_components
    }

    pub fn bases(&self) -> &BasisCache {
        &self.bases
    }

    fn rng(&self, path: &[u64]) -> ChainRng {
        let mut key = Vec::with_capacity(path.len() + 1);
        key.push(self.chain);
        key.extend_from_slice(path);
        RngStream::keyed(self.seed, &key).rng()
    }

    /// Start of the chain: indicators uniform over components, missing
    /// values at their series mean, `Θ` fitted by a few sweeps on that data
    /// and drawn from the prior for empty components.
    pub fn initial_state(&self) -> Result<ChainState> {
        let h_n = self.n_components();
        let n = self.series_length();
        let mut rng = self.rng(&[u64::MAX, 0]);
        let z: Vec<usize> = (0..self.n_series())
            .map(|_| rng.random_range(0..h_n))
            .collect();
        let imputed: Vec<Vec<f64>> = self
            .series
            .iter()
            .map(|x| {
                let obs: Vec<f64> = x
                    .values()
                    .iter()
                    .zip(x.missing_mask())
                    .filter(|(_, &m)| !m)
                    .map(|(v, _)| *v)
                    .collect();
                let mean = if obs.is_empty() {
                    0.0
                } else {
                    obs.iter().sum::<f64>() / obs.len() as f64
                };
                vec![mean; x.n_missing()]
            })
            .collect();
        let mut theta = collect(par::map(h_n, |h| {
            sample_from_prior(n, &self.prior, &mut self.rng(&[u64::MAX, 1, h as u64]))
        }))?;
        let mut state = ChainState {
            theta: Vec::new(),
            stick: StickState::new(h_n, self.design.n_cols()),
            z,
            imputed,
            iteration: 0,
        };
        let completed = self.completed(&state)?;
        let members = members(&state.z, h_n);
        for sweep in 0..INIT_SWEEPS {
            theta = collect(par::map(h_n, |h| {
                if members[h].is_empty() {
                    return Ok(theta[h].clone());
                }
                let data = self.component_data(&members[h], &completed)?;
                let mut rng = self.rng(&[u64::MAX, 2 + sweep, h as u64]);
                Ok(component_update(&theta[h], &data, &mut rng)?.0)
            }))?;
        }
        state.theta = theta;
        Ok(state)
    }

    /// Series with the current imputations filled in.
    pub fn completed(&self, state: &ChainState) -> Result<Vec<Vec<f64>>> {
        self.series
            .iter()
            .zip(&state.imputed)
            .map(|(x, fill)| Ok(x.with_imputed(fill)?.values().to_vec()))
            .collect()
    }

    fn component_data<'a>(
        &'a self,
        members: &[usize],
        completed: &'a [Vec<f64>],
    ) -> Result<ComponentData<'a>> {
        ComponentData::new(
            members.iter().map(|&j| completed[j].as_slice()).collect(),
            self.series_length(),
            &self.prior,
            &self.bases,
        )
    }

    pub fn validate_state(&self, state: &ChainState) -> Result<()> {
        let h_n = self.n_components();
        if state.theta.len() != h_n {
            return Err(Error::invalid(format!(
                "state has {} components, expected {h_n}",
                state.theta.len()
            )));
        }
        for t in &state.theta {
            t.validate(self.series_length(), &self.prior)?;
        }
        state.stick.validate(self.design.n_cols())?;
        if state.stick.n_components() != h_n {
            return Err(Error::invalid("stick state size differs from H"));
        }
        if state.z.len() != self.n_series() || state.z.iter().any(|&h| h >= h_n) {
            return Err(Error::invalid(
                "indicators must be one component index per series",
            ));
        }
        if state.imputed.len() != self.n_series()
            || state
                .imputed
                .iter()
                .zip(&self.series)
                .any(|(v, x)| v.len() != x.n_missing() || v.iter().any(|f| !f.is_finite()))
        {
            return Err(Error::invalid(
                "imputations must cover exactly the missing entries",
            ));
        }
        Ok(())
    }

    /// `log g(x_j | Θ_h)` for every series and component.
    pub fn log_likelihood_matrix(
        &self,
        theta: &[SegmentModel],
        completed: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        struct Seg {
            a: usize,
            b: usize,
            mu: f64,
            /// `−½ (len log 2π + Σ_k w_k log f_k)`.
            constant: f64,
            /// `w_k / f_k`.
            inv_f: Vec<f64>,
        }
        let segs: Vec<Vec<Seg>> = theta
            .iter()
            .map(|t| {
                (0..t.n_segments())
                    .map(|s| {
                        let (a, b) = t.bounds(s);
                        let basis = self.bases.get(b - a);
                        let lf = basis.log_spectrum(&t.spectra[s].as_vector());
                        let mut sum_lf = 0.0;
                        let inv_f = lf
                            .iter()
                            .zip(&basis.weights)
                            .map(|(l, w)| {
                                let l = l.max(LOG_F_FLOOR);
                                sum_lf += w * l;
                                w * (-l).exp()
                            })
                            .collect();
                        let constant =
                            -0.5 * ((b - a) as f64 * (2.0 * std::f64::consts::PI).ln() + sum_lf);
                        Seg {
                            a,
                            b,
                            mu: t.means[s],
                            constant,
                            inv_f,
                        }
                    })
                    .collect()
            })
            .collect();
        collect(par::map(completed.len(), |j| {
            let data = self.component_data(&[j], completed)?;
            Ok(segs
                .iter()
                .map(|comp| {
                    comp.iter()
                        .map(|g| {
                            let st = data.stats(g.a, g.b);
                            let quad: f64 = st.pgram[1..]
                                .iter()
                                .zip(&g.inv_f[1..])
                                .map(|(p, f)| p * f)
                                .sum::<f64>()
                                + st.zero_frequency(g.mu) * g.inv_f[0];
                            g.constant - 0.5 * quad
                        })
                        .sum()
                })
                .collect())
        }))
    }

    /// One full cycle. The input state is untouched; an error leaves the
    /// caller holding the previous state.
    pub fn iterate(&self, state: &ChainState) -> Result<(ChainState, IterationStats)> {
        let it = state.iteration;
        let h_n = self.n_components();
        let n_ser = self.n_series();

        // Step 1: missing values under the current Θ_{z_j}.
        let imputed = collect(par::map(n_ser, |j| {
            let x = &self.series[j];
            if !x.has_missing() {
                return Ok(Vec::new());
            }
            let mut rng = self.rng(&[it, 1, j as u64]);
            Ok(
                sample_missing_cached(x, &state.theta[state.z[j]], &self.bases, &mut rng)?
                    .imputed_values(),
            )
        }))?;
        let mut next = ChainState {
            imputed,
            ..state.clone()
        };
        let completed = self.completed(&next)?;

        // Step 2: component sweeps.
        let members = members(&state.z, h_n);
        let updates = collect(par::map(h_n, |h| {
            let data = self.component_data(&members[h], &completed)?;
            let mut rng = self.rng(&[it, 2, h as u64]);
            component_update(&state.theta[h], &data, &mut rng)
        }))?;
        let mut stats = IterationStats::default();
        next.theta = Vec::with_capacity(h_n);
        for (t, s) in updates {
            next.theta.push(t);
            stats.moves.merge(&s);
        }

        // Step 3: indicators.
        let loglik = self.log_likelihood_matrix(&next.theta, &completed)?;
        next.z = collect(par::map(n_ser, |j| {
            let mut rng = self.rng(&[it, 3, j as u64]);
            sample_z_one(j, &loglik[j], &self.design, &next.stick, &mut rng)
        }))?;
        stats.log_likelihood = next.z.iter().enumerate().map(|(j, &h)| loglik[j][h]).sum();

        // Step 4: stick coefficients.
        next.stick.beta = collect(par::map(h_n - 1, |h| {
            let mut rng = self.rng(&[it, 4, h as u64]);
            sample_beta_dagger(h, &next.z, &self.design, &next.stick, &self.lsbp, &mut rng)
        }))?;

        // Step 5: GP scales.
        let scales = collect(par::map(h_n - 1, |h| {
            let mut rng = self.rng(&[it, 5, h as u64]);
            sample_tau_h(h, &next.stick, &self.design, &self.lsbp, &mut rng)
        }))?;
        for (h, (tau2, a)) in scales.into_iter().enumerate() {
            next.stick.tau2[h] = tau2;
            next.stick.a[h] = a;
        }

        // Step 6: label swap.
        let mut rng = self.rng(&[it, 6]);
        let (mut next, swap) = self.label_swap(&next, &mut rng)?;
        stats.swap = swap;
        stats.occupied = members_count(&next.z, h_n);
        next.iteration = it + 1;
        debug_assert!(self.validate_state(&next).is_ok());
        Ok((next, stats))
    }

    /// Exchange labels `h1 < h2` in `z` and `Θ`, and the GP scales when
    /// both sticks exist. Coefficients are left for the caller to propose.
    pub fn swap_labels(&self, state: &ChainState, h1: usize, h2: usize) -> ChainState {
        let mut out = state.clone();
        for h in out.z.iter_mut() {
            if *h == h1 {
                *h = h2;
            } else if *h == h2 {
                *h = h1;
            }
        }
        out.theta.swap(h1, h2);
        if h2 < out.stick.beta.len() {
            out.stick.tau2.swap(h1, h2);
            out.stick.a.swap(h1, h2);
        }
        out
    }

    /// Sticks whose coefficients a swap of `h1 < h2` re-proposes.
    pub fn swap_proposed_sticks(&self, h1: usize, h2: usize) -> Vec<usize> {
        [h1, h2]
            .into_iter()
            .filter(|&h| h < self.n_components() - 1)
            .collect()
    }

    /// `log p(z | β†) + Σ_h log p(β†_h | τ²_h)`, the only factors of the
    /// joint density a label swap changes.
    pub fn stick_log_target(&self, z: &[usize], stick: &StickState) -> f64 {
        let mut v = log_p_z(z, &self.design, stick);
        for h in 0..stick.beta.len() {
            v += crate::lsbp::beta_log_prior(
                &stick.beta[h],
                &self.design,
                stick.tau2[h],
                &self.lsbp,
            );
        }
        v
    }

    /// Metropolis-Hastings log ratio of moving from `current` to `proposed`
    /// by swapping `h1 < h2`, with the Laplace proposal densities of the
    /// forward and reverse moves.
    pub fn label_swap_log_ratio(
        &self,
        current: &ChainState,
        proposed: &ChainState,
        h1: usize,
        h2: usize,
    ) -> Result<f64> {
        let mut r = self.stick_log_target(&proposed.z, &proposed.stick)
            - self.stick_log_target(&current.z, &current.stick);
        let zero = DVector::zeros(self.design.n_cols());
        for h in self.swap_proposed_sticks(h1, h2) {
            let fwd = laplace_beta(
                h,
                &proposed.z,
                &self.design,
                proposed.stick.tau2[h],
                &self.lsbp,
                &zero,
            )?;
            let rev = laplace_beta(
                h,
                &current.z,
                &self.design,
                current.stick.tau2[h],
                &self.lsbp,
                &zero,
            )?;
            r += rev.log_density(&current.stick.beta[h]) - fwd.log_density(&proposed.stick.beta[h]);
        }
        Ok(r)
    }

    /// Label swap of two uniformly chosen components.
    pub fn label_swap<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        rng: &mut R,
    ) -> Result<(ChainState, SwapOutcome)> {
        let h_n = self.n_components();
        let first = rng.random_range(0..h_n);
        let mut second = rng.random_range(0..h_n - 1);
        if second >= first {
            second += 1;
        }
        let (h1, h2) = (first.min(second), first.max(second));
        let mut outcome = SwapOutcome {
            h1,
            h2,
            ..Default::default()
        };
        match self.propose_swap(state, h1, h2, rng) {
            Ok((proposed, log_r)) => {
                let u: f64 = rng.random();
                if log_r.is_finite() && u.ln() < log_r || log_r == f64::INFINITY {
                    outcome.accepted = true;
                    return Ok((proposed, outcome));
                }
                outcome.failed = log_r.is_nan();
            }
            Err(Error::NumericalFailure(_)) => outcome.failed = true,
            Err(e) => return Err(e),
        }
        Ok((state.clone(), outcome))
    }

    pub fn propose_swap<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        h1: usize,
        h2: usize,
        rng: &mut R,
    ) -> Result<(ChainState, f64)> {
        let mut proposed = self.swap_labels(state, h1, h2);
        let zero = DVector::zeros(self.design.n_cols());
        for h in self.swap_proposed_sticks(h1, h2) {
            let lap = laplace_beta(
                h,
                &proposed.z,
                &self.design,
                proposed.stick.tau2[h],
                &self.lsbp,
                &zero,
            )?;
            proposed.stick.beta[h] = lap.sample(rng)?;
        }
        let log_r = self.label_swap_log_ratio(state, &proposed, h1, h2)?;
        Ok((proposed, log_r))
    }
}

/// Series indices per component.
pub fn members(z: &[usize], h_n: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); h_n];
    for (j, &h) in z.iter().enumerate() {
        m[h].push(j);
    }
    m
}

fn members_count(z: &[usize], h_n: usize) -> usize {
    members(z, h_n).iter().filter(|m| !m.is_empty()).count()
}
