//! Reversible-jump and within-model moves of one component.

use nalgebra::DVector;
use rand::Rng;

use super::{
    hmc::rmhmc_update_b, ln_cutpoint_configurations, sample_from_prior, segment_log_prior,
    ComponentData, ModalProposal, MoveStats, SegmentStats,
};
use crate::distributions::{sample_truncated_inverse_gamma, sample_truncated_normal};
use crate::error::Result;
use crate::model::{ComponentPriorConfig, SegmentModel, SplineSpectrum};
use crate::spectral::LOG_F_FLOOR;

/// Share of within-model cutpoint proposals that are local shifts.
const LOCAL_SHIFT_PROB: f64 = 0.8;

/// `μ | b, x ~ N(x̄, f(0)/(n_s N))` truncated to the prior support, where
/// `log_f[0]` is the log spectrum at frequency zero.
pub fn sample_segment_mean<R: Rng + ?Sized>(
    stats: &SegmentStats,
    log_f: &[f64],
    config: &ComponentPriorConfig,
    rng: &mut R,
) -> Result<f64> {
    let (lo, hi) = (config.mu_lower, config.mu_upper);
    let weight = (stats.len * stats.n_series()) as f64;
    if weight == 0.0 {
        return Ok(lo + (hi - lo) * rng.random::<f64>());
    }
    let var = log_f[0].max(LOG_F_FLOOR).exp() / weight;
    sample_truncated_normal(stats.pooled_mean(), var, lo, hi, rng)
}

/// Conjugate draw of `τ²_b | b` under the truncated inverse-gamma prior.
pub fn sample_tau2_b<R: Rng + ?Sized>(
    spec: &SplineSpectrum,
    config: &ComponentPriorConfig,
    rng: &mut R,
) -> Result<f64> {
    let j = spec.n_basis() as f64;
    let ss: f64 = spec.coefficients[1..].iter().map(|b| b * b).sum();
    sample_truncated_inverse_gamma(
        config.tau2_shape() + 0.5 * j,
        config.tau2_scale() + 0.5 * ss,
        config.tau2_max,
        rng,
    )
}

fn splittable(model: &SegmentModel, t_min: usize) -> Vec<usize> {
    (0..model.n_segments())
        .filter(|&s| {
            let (a, b) = model.bounds(s);
            b - a >= 2 * t_min
        })
        .collect()
}

/// `(P(birth), P(death))` at the current model.
fn jump_probabilities(model: &SegmentModel, config: &ComponentPriorConfig) -> (f64, f64) {
    let m = model.n_segments();
    let can_birth =
        m < config.max_segments && !splittable(model, config.min_segment_length).is_empty();
    let can_death = m > 1;
    match (can_birth, can_death) {
        (true, true) => (0.5, 0.5),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (0.0, 0.0),
    }
}

fn spec_from(b: &DVector<f64>, tau2: f64) -> SplineSpectrum {
    SplineSpectrum {
        coefficients: b.iter().copied().collect(),
        tau2_b: tau2,
    }
}

/// Log acceptance ratio for splitting segment `s` of `parent` into segments
/// `s` and `s + 1` of `child`, with `τ²` split variable `u`.
///
/// `q_parent` is the modal proposal of the merged segment (evaluated at the
/// parent's values); `q_left`, `q_right` those of the children (evaluated at
/// the child values). The death move that undoes the split is accepted with
/// the negative of this ratio.
#[allow(clippy::too_many_arguments)]
pub fn split_log_ratio(
    data: &ComponentData<'_>,
    parent: &SegmentModel,
    child: &SegmentModel,
    s: usize,
    u: f64,
    q_parent: &ModalProposal,
    q_left: &ModalProposal,
    q_right: &ModalProposal,
) -> f64 {
    let cfg = data.config();
    let n = parent.series_length();
    let m = parent.n_segments();
    let (pa, pb) = parent.bounds(s);
    let (la, lb) = child.bounds(s);
    let (ra, rb) = child.bounds(s + 1);
    let (mp, sp) = (parent.means[s], &parent.spectra[s]);
    let (ml, sl) = (child.means[s], &child.spectra[s]);
    let (mr, sr) = (child.means[s + 1], &child.spectra[s + 1]);
    let (bp, bl, br) = (sp.as_vector(), sl.as_vector(), sr.as_vector());

    let lik = data.segment_log_likelihood(la, lb, ml, &bl)
        + data.segment_log_likelihood(ra, rb, mr, &br)
        - data.segment_log_likelihood(pa, pb, mp, &bp);

    let prior = ln_cutpoint_configurations(n, m, cfg.min_segment_length)
        - ln_cutpoint_configurations(n, m + 1, cfg.min_segment_length)
        + segment_log_prior(ml, sl, cfg)
        + segment_log_prior(mr, sr, cfg)
        - segment_log_prior(mp, sp, cfg);

    let (p_birth, _) = jump_probabilities(parent, cfg);
    let (_, p_death) = jump_probabilities(child, cfg);
    let n_split = splittable(parent, cfg.min_segment_length).len() as f64;
    let positions = (pb - pa - 2 * cfg.min_segment_length + 1) as f64;
    let reverse = p_death.ln() - (m as f64).ln() + q_parent.log_density(mp, &bp);
    let forward = p_birth.ln() - n_split.ln() - positions.ln()
        + q_left.log_density(ml, &bl)
        + q_right.log_density(mr, &br);
    let jacobian = (2.0 * sp.tau2_b / (u * (1.0 - u))).ln();

    lik + prior + reverse - forward + jacobian
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// One birth or death proposal. Returns the (possibly unchanged) model.
pub fn birth_death_move<R: Rng + ?Sized>(
    model: &SegmentModel,
    data: &ComponentData<'_>,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<SegmentModel> {
    let cfg = data.config();
    let (p_birth, p_death) = jump_probabilities(model, cfg);
    if p_birth + p_death == 0.0 {
        return Ok(model.clone());
    }
    if rng.random::<f64>() < p_birth {
        stats.birth_proposed += 1;
        let options = splittable(model, cfg.min_segment_length);
        let s = options[rng.random_range(0..options.len())];
        let (a, b) = model.bounds(s);
        let t_min = cfg.min_segment_length;
        let cut = rng.random_range(a + t_min..=b - t_min);
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let t = model.spectra[s].tau2_b;
        let (tl, tr) = (t * u / (1.0 - u), t * (1.0 - u) / u);
        let current_b = model.spectra[s].as_vector();

        let proposals = (|| -> Result<_> {
            Ok((
                data.modal_proposal(a, b, t, Some(&current_b))?,
                data.modal_proposal(a, cut, tl, Some(&current_b))?,
                data.modal_proposal(cut, b, tr, Some(&current_b))?,
            ))
        })();
        let Ok((qp, ql, qr)) = proposals else {
            stats.mode_failures += 1;
            return Ok(model.clone());
        };
        let (ml, bl) = ql.sample(rng)?;
        let (mr, br) = qr.sample(rng)?;
        let mut child = model.clone();
        child.cutpoints.insert(s, cut);
        child.means[s] = ml;
        child.means.insert(s + 1, mr);
        child.spectra[s] = spec_from(&bl, tl);
        child.spectra.insert(s + 1, spec_from(&br, tr));

        let ratio = split_log_ratio(data, model, &child, s, u, &qp, &ql, &qr);
        if accept(ratio, rng) {
            stats.birth_accepted += 1;
            return Ok(child);
        }
        Ok(model.clone())
    } else {
        stats.death_proposed += 1;
        let m = model.n_segments();
        let s = rng.random_range(0..m - 1);
        let (a, _) = model.bounds(s);
        let (_, b) = model.bounds(s + 1);
        let (tl, tr) = (model.spectra[s].tau2_b, model.spectra[s + 1].tau2_b);
        let t = (tl * tr).sqrt();
        let r = (tl / tr).sqrt();
        let u = r / (1.0 + r);
        let bl = model.spectra[s].as_vector();
        let br = model.spectra[s + 1].as_vector();
        let cut = model.cutpoints[s];

        let proposals = (|| -> Result<_> {
            Ok((
                data.modal_proposal(a, b, t, Some(&bl))?,
                data.modal_proposal(a, cut, tl, Some(&bl))?,
                data.modal_proposal(cut, b, tr, Some(&br))?,
            ))
        })();
        let Ok((qp, ql, qr)) = proposals else {
            stats.mode_failures += 1;
            return Ok(model.clone());
        };
        let (mp, bp) = qp.sample(rng)?;
        let mut parent = model.clone();
        parent.cutpoints.remove(s);
        parent.means.remove(s + 1);
        parent.spectra.remove(s + 1);
        parent.means[s] = mp;
        parent.spectra[s] = spec_from(&bp, t);

        let ratio = -split_log_ratio(data, &parent, model, s, u, &qp, &ql, &qr);
        if accept(ratio, rng) {
            stats.death_accepted += 1;
            return Ok(parent);
        }
        Ok(model.clone())
    }
}

/// Relocate one interior cutpoint with fresh `(μ, b)` for the two adjacent
/// segments, then refresh one random segment mean by Gibbs and one random
/// segment's coefficients by HMC.
pub fn within_model_move<R: Rng + ?Sized>(
    model: &SegmentModel,
    data: &ComponentData<'_>,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<SegmentModel> {
    let cfg = data.config();
    let t_min = cfg.min_segment_length;
    let mut current = model.clone();
    let m = current.n_segments();

    if m > 1 {
        let i = rng.random_range(0..m - 1);
        let (a, _) = current.bounds(i);
        let (_, b) = current.bounds(i + 1);
        let c = current.cutpoints[i];
        let (lo, hi) = (a + t_min, b - t_min);
        let proposed = if rng.random::<f64>() < LOCAL_SHIFT_PROB {
            let d = (t_min / 2).max(1) as i64;
            let delta = rng.random_range(1..=d) * if rng.random::<bool>() { 1 } else { -1 };
            c as i64 + delta
        } else {
            rng.random_range(lo..=hi) as i64
        };
        stats.within_proposed += 1;
        if proposed >= lo as i64 && proposed <= hi as i64 {
            let c2 = proposed as usize;
            let (tl, tr) = (current.spectra[i].tau2_b, current.spectra[i + 1].tau2_b);
            let bl = current.spectra[i].as_vector();
            let br = current.spectra[i + 1].as_vector();
            let proposals = (|| -> Result<_> {
                Ok((
                    data.modal_proposal(a, c, tl, Some(&bl))?,
                    data.modal_proposal(c, b, tr, Some(&br))?,
                    data.modal_proposal(a, c2, tl, Some(&bl))?,
                    data.modal_proposal(c2, b, tr, Some(&br))?,
                ))
            })();
            match proposals {
                Err(_) => stats.mode_failures += 1,
                Ok((ql_old, qr_old, ql_new, qr_new)) => {
                    let (ml, bl_new) = ql_new.sample(rng)?;
                    let (mr, br_new) = qr_new.sample(rng)?;
                    let mut cand = current.clone();
                    cand.cutpoints[i] = c2;
                    cand.means[i] = ml;
                    cand.means[i + 1] = mr;
                    cand.spectra[i] = spec_from(&bl_new, tl);
                    cand.spectra[i + 1] = spec_from(&br_new, tr);

                    let old_terms = data.segment_log_likelihood(a, c, current.means[i], &bl)
                        + data.segment_log_likelihood(c, b, current.means[i + 1], &br)
                        + segment_log_prior(current.means[i], &current.spectra[i], cfg)
                        + segment_log_prior(current.means[i + 1], &current.spectra[i + 1], cfg);
                    let new_terms = data.segment_log_likelihood(a, c2, ml, &bl_new)
                        + data.segment_log_likelihood(c2, b, mr, &br_new)
                        + segment_log_prior(ml, &cand.spectra[i], cfg)
                        + segment_log_prior(mr, &cand.spectra[i + 1], cfg);
                    let ratio = new_terms - old_terms
                        + ql_old.log_density(current.means[i], &bl)
                        + qr_old.log_density(current.means[i + 1], &br)
                        - ql_new.log_density(ml, &bl_new)
                        - qr_new.log_density(mr, &br_new);
                    if accept(ratio, rng) {
                        stats.within_accepted += 1;
                        current = cand;
                    }
                }
            }
        }
    }

    let s = rng.random_range(0..m);
    let (a, b) = current.bounds(s);
    let seg_stats = data.stats(a, b);
    let lf0 = data
        .basis(b - a)
        .q
        .row(0)
        .transpose()
        .dot(&current.spectra[s].as_vector());
    current.means[s] = sample_segment_mean(&seg_stats, &[lf0], cfg, rng)?;

    let s = rng.random_range(0..m);
    let (a, b) = current.bounds(s);
    stats.hmc_proposed += 1;
    let (spec, out) = rmhmc_update_b(&current.spectra[s], current.means[s], data, a, b, rng)?;
    if out.accepted {
        stats.hmc_accepted += 1;
    }
    if out.divergent {
        stats.hmc_divergent += 1;
    }
    current.spectra[s] = spec;
    Ok(current)
}

/// One full sweep of a component: birth/death, within-model move, then a
/// `τ²_b` refresh of every segment. A component without data is redrawn
/// from its prior.
pub fn component_update<R: Rng + ?Sized>(
    theta: &SegmentModel,
    data: &ComponentData<'_>,
    rng: &mut R,
) -> Result<(SegmentModel, MoveStats)> {
    let mut stats = MoveStats::default();
    if data.n_series() == 0 {
        return Ok((
            sample_from_prior(data.series_length(), data.config(), rng)?,
            stats,
        ));
    }
    let next = birth_death_move(theta, data, rng, &mut stats)?;
    let mut next = within_model_move(&next, data, rng, &mut stats)?;
    for spec in next.spectra.iter_mut() {
        spec.tau2_b = sample_tau2_b(spec, data.config(), rng)?;
    }
    debug_assert!(next.validate(data.series_length(), data.config()).is_ok());
    Ok((next, stats))
}
