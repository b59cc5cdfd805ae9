use std::f64::consts::PI;

use adaptspecx::lsbp::{build_design, predictive_design_row, stick_weights};
use adaptspecx::model::SplineSpectrum;
use adaptspecx::panel::Panel;
use adaptspecx::predicate::Predicate;
use adaptspecx::spectral::{
    circulant_precision, log_spectral_density, periodogram_of, whittle_slice, TimeSeries,
};
use adaptspecx::summary::{quantile_sorted, variance_functional};
use proptest::prelude::*;

fn coefficients() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn whittle_matches_dense_gaussian(c in coefficients(), half in 2usize..9, mu in -2.0f64..2.0, seed in any::<u64>()) {
        let n = 2 * half;
        let spec = SplineSpectrum::new(c, 1.0).unwrap();
        let lf = log_spectral_density(&spec, n);
        let x: Vec<f64> = (0..n).map(|t| ((seed.wrapping_add(t as u64) % 1000) as f64 / 250.0) - 2.0).collect();
        let lambda = circulant_precision(&lf).unwrap().to_dense();
        let chol = lambda.clone().cholesky().unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let e = nalgebra::DVector::from_iterator(n, x.iter().map(|v| v - mu));
        let quad = (e.transpose() * &lambda * &e)[(0, 0)];
        let dense = -0.5 * n as f64 * (2.0 * PI).ln() + 0.5 * logdet - 0.5 * quad;
        let w = whittle_slice(&x, mu, &lf).unwrap();
        prop_assert!((w - dense).abs() < 1e-8 * (1.0 + dense.abs()));
    }

    #[test]
    fn periodogram_preserves_energy(x in prop::collection::vec(-10.0f64..10.0, 1..64), mu in -3.0f64..3.0) {
        let total: f64 = periodogram_of(&x, mu).iter().sum();
        let energy: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
        prop_assert!((total - energy).abs() < 1e-9 * (1.0 + energy));
    }

    #[test]
    fn stick_weights_are_a_distribution(odds in prop::collection::vec(-40.0f64..40.0, 1..12)) {
        let w = stick_weights(&odds);
        prop_assert!(w.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predictive_row_at_observed_covariate_is_design_row(
        u in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 6..15),
        b in 1usize..5,
    ) {
        let design = build_design(&u, b).unwrap();
        for (j, uj) in u.iter().enumerate() {
            let row = predictive_design_row(uj, &design).unwrap();
            prop_assert!((row - design.row(j)).amax() < 1e-8);
        }
    }

    #[test]
    fn variance_of_flat_spectrum_is_its_level(level in -5.0f64..5.0, g in 2usize..200) {
        let s = variance_functional(&vec![level; g]);
        prop_assert!((s - level.exp()).abs() < 1e-12 * level.exp().max(1.0));
    }

    #[test]
    fn quantiles_are_monotone_and_bounded(mut x in prop::collection::vec(-1e3f64..1e3, 1..50), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        x.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = quantile_sorted(&x, lo);
        let b = quantile_sorted(&x, hi);
        prop_assert!(a <= b);
        prop_assert!(a >= x[0] && b <= x[x.len() - 1]);
    }

    #[test]
    fn strict_comparison_is_irreflexive(t in 1usize..20, mu in prop::collection::vec(-5.0f64..5.0, 20), s in prop::collection::vec(0.1f64..5.0, 20)) {
        let lt = Predicate::parse(&format!("mu({t}) < mu({t})"), 20).unwrap();
        let excluded = Predicate::parse(&format!("sigma2({t}) > 1 or not sigma2({t}) > 1"), 20).unwrap();
        prop_assert!(!lt.eval(&mu, &s));
        prop_assert!(excluded.eval(&mu, &s));
    }

    #[test]
    fn panel_round_trips_through_csv(
        values in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -1e6f64..1e6), 8), 1..6),
        seed in any::<u64>(),
    ) {
        let series: Vec<TimeSeries> = values
            .iter()
            .map(|v| {
                let missing: Vec<bool> = v.iter().map(Option::is_none).collect();
                TimeSeries::new(v.iter().map(|x| x.unwrap_or(0.0)).collect(), missing).unwrap()
            })
            .collect();
        let names = (0..series.len()).map(|j| format!("s{j}")).collect();
        let covs = (0..series.len()).map(|j| vec![(seed % 97) as f64 / 7.0 + j as f64, -0.125 * j as f64]).collect();
        let panel = Panel::new(names, series, vec!["a".into(), "b".into()], covs).unwrap();
        let mut s = Vec::new();
        let mut c = Vec::new();
        panel.write_series(&mut s).unwrap();
        panel.write_covariates(&mut c).unwrap();
        let back = Panel::from_readers(&s[..], "series", &c[..], "covariates").unwrap();
        prop_assert_eq!(back, panel);
    }
}
