//! Simulated panels of piecewise AR(2) series whose regime is determined by
//! a map of the unit square, with the matching truth surfaces and error
//! metrics.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{format_f64, Panel};
use crate::spectral::TimeSeries;

/// `log[σ² / |1 − φ₁e^{−2πiω} − φ₂e^{−4πiω}|²]` on `freq_grid`.
pub fn true_ar2_log_spectrum(
    phi1: f64,
    phi2: f64,
    sigma2: f64,
    freq_grid: &[f64],
) -> Result<Vec<f64>> {
    if !ar2_is_stationary(phi1, phi2) {
        return Err(Error::invalid(format!(
            "AR(2) coefficients ({phi1}, {phi2}) are not stationary"
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("innovation variance must be positive"));
    }
    Ok(freq_grid
        .iter()
        .map(|&w| {
            let z1 = Complex64::from_polar(1.0, -2.0 * PI * w);
            let d = Complex64::new(1.0, 0.0) - z1 * phi1 - z1 * z1 * phi2;
            sigma2.ln() - d.norm_sqr().ln()
        })
        .collect())
}

pub fn ar2_is_stationary(phi1: f64, phi2: f64) -> bool {
    phi2.abs() < 1.0 && phi2 + phi1 < 1.0 && phi2 - phi1 < 1.0
}

/// Stationary variance of an AR(2) process with unit innovations.
pub fn ar2_variance(phi1: f64, phi2: f64) -> f64 {
    (1.0 - phi2) / ((1.0 + phi2) * ((1.0 - phi2).powi(2) - phi1 * phi1))
}

/// `ω_k = (k − 1)/(2k_max − 2)`, `k = 1..k_max`.
pub fn mse_frequency_grid(k_max: usize) -> Vec<f64> {
    (0..k_max)
        .map(|k| k as f64 / (2 * k_max - 2) as f64)
        .collect()
}

pub fn mse_mean(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "mean grids differ: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
}

/// `(1/(n k_max)) Σ_t Σ_k (log f̂ − log f)²` with rows indexed by time.
pub fn mse_spec(estimate: &[Vec<f64>], truth: &[Vec<f64>], k_max: usize) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid(
            "spectrum surfaces cover different time grids",
        ));
    }
    let mut s = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        if e.len() != k_max || t.len() != k_max {
            return Err(Error::invalid(format!(
                "spectrum rows must have k_max = {k_max} frequencies"
            )));
        }
        s += e.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(s / (truth.len() * k_max) as f64)
}

/// Mean and AR coefficients of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub mu: f64,
    pub phi1: f64,
    pub phi2: f64,
}

const fn regime(mu: f64, phi1: f64, phi2: f64) -> Regime {
    Regime { mu, phi1, phi2 }
}

/// Regime of each category before and after the change point.
pub const DEFAULT_REGIMES: [[Regime; 2]; 4] = [
    [regime(-1.5, 1.5, -0.75), regime(-2.0, -0.8, 0.0)],
    [regime(1.0, -0.8, 0.0), regime(-1.0, -0.8, 0.0)],
    [regime(0.0, 1.5, -0.75), regime(0.0, 1.5, -0.75)],
    [regime(1.0, 0.2, 0.0), regime(1.0, 1.5, -0.75)],
];

/// Category of a point of the unit square.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum RegionMap {
    /// Category 1 on the left strip `u₁ < 0.41`; category 3 in the upper
    /// right `u₂ ≥ 0.695`; category 2 a disc of radius 0.16 at (0.7, 0.35)
    /// inside category 4, which fills the rest. Areas 0.41, 0.08, 0.18, 0.33.
    #[default]
    Default,
    /// Labels on a regular `rows × cols` grid; row 0 is `u₂` near 0.
    Grid {
        rows: usize,
        cols: usize,
        labels: Vec<usize>,
    },
}

impl RegionMap {
    pub fn category(&self, u: &[f64]) -> usize {
        match self {
            RegionMap::Default => {
                let (x, y) = (u[0], u[1]);
                if x < 0.41 {
                    1
                } else if y >= 0.695 {
                    3
                } else if (x - 0.7).powi(2) + (y - 0.35).powi(2) <= 0.16f64.powi(2) {
                    2
                } else {
                    4
                }
            }
            RegionMap::Grid { rows, cols, labels } => {
                let c = ((u[0] * *cols as f64) as usize).min(cols - 1);
                let r = ((u[1] * *rows as f64) as usize).min(rows - 1);
                labels[r * cols + c]
            }
        }
    }

    /// Read a grid map: CSV without header, one row per `u₂` band from the
    /// bottom up, one integer category per cell.
    pub fn read_grid(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Parse {
                file: file.clone(),
                line: 0,
                column: 0,
                message: e.to_string(),
            })?;
        let mut labels = Vec::new();
        let mut rows = 0;
        let mut cols = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                file: file.clone(),
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                column: 1,
                message: e.to_string(),
            })?;
            cols = rec.len();
            for i in 0..rec.len() {
                let v = crate::panel::parse_field(&file, &rec, i, "category")?;
                if v < 1.0 || v > 4.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        file: file.clone(),
                        line: rec.position().map(|p| p.line() as usize).unwrap_or(0),
                        column: i + 1,
                        message: format!("category must be an integer in 1..=4, got {v}"),
                    });
                }
                labels.push(v as usize);
            }
            rows += 1;
        }
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("region map {file} is empty")));
        }
        Ok(RegionMap::Grid { rows, cols, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPattern {
    /// Missing times drawn uniformly without replacement.
    Uniform,
    /// One contiguous block at a uniform start.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationDesign {
    pub n_series: usize,
    pub length: usize,
    /// Last 1-based time of the first regime.
    pub change_point: usize,
    pub missing_fraction: f64,
    pub missing_pattern: MissingPattern,
    /// Samples discarded before the first recorded time.
    pub warmup: usize,
    pub regimes: [[Regime; 2]; 4],
    #[serde(skip)]
    pub region_map: RegionMap,
    /// Points whose nearest sampled series become D1..D4.
    pub anchors: [[f64; 2]; 4],
    /// Unobserved test points T1..T4.
    pub test_points: [[f64; 2]; 4],
}

impl Default for SimulationDesign {
    fn default() -> Self {
        SimulationDesign {
            n_series: 100,
            length: 256,
            change_point: 128,
            missing_fraction: 0.1,
            missing_pattern: MissingPattern::Uniform,
            warmup: 500,
            regimes: DEFAULT_REGIMES,
            region_map: RegionMap::Default,
            anchors: [[0.2, 0.25], [0.7, 0.35], [0.7, 0.85], [0.5, 0.1]],
            test_points: [[0.25, 0.75], [0.74, 0.38], [0.55, 0.9], [0.95, 0.6]],
        }
    }
}

impl SimulationDesign {
    fn regime_at(&self, category: usize, t: usize) -> Regime {
        self.regimes[category - 1][usize::from(t >= self.change_point)]
    }

    /// True mean `μ(t)` for a category, `t = 0..n`.
    pub fn true_mean(&self, category: usize) -> Vec<f64> {
        (0..self.length)
            .map(|t| self.regime_at(category, t).mu)
            .collect()
    }

    /// True log spectrum rows `log f(t, ω)` on `freq_grid`.
    pub fn true_log_spectrum(&self, category: usize, freq_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pre = self.regime_at(category, 0);
        let post = self.regime_at(category, self.length - 1);
        let a = true_ar2_log_spectrum(pre.phi1, pre.phi2, 1.0, freq_grid)?;
        let b = true_ar2_log_spectrum(post.phi1, post.phi2, 1.0, freq_grid)?;
        Ok((0..self.length)
            .map(|t| {
                if t < self.change_point {
                    a.clone()
                } else {
                    b.clone()
                }
            })
            .collect())
    }

    fn validate(&self) -> Result<()> {
        if self.length < 2 || self.length % 2 != 0 {
            return Err(Error::invalid(
                "simulated series length must be even and at least 2",
            ));
        }
        if self.n_series < 4 {
            return Err(Error::invalid("need at least 4 series to place D1..D4"));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::invalid("missing fraction must lie in [0, 1)"));
        }
        for r in self.regimes.iter().flatten() {
            if !ar2_is_stationary(r.phi1, r.phi2) {
                return Err(Error::invalid(format!(
                    "regime ({}, {}) is not stationary",
                    r.phi1, r.phi2
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: Panel,
    /// Category of each series, 1-based.
    pub categories: Vec<usize>,
    /// Series indices of D1..D4.
    pub d_points: [usize; 4],
    pub test_points: [[f64; 2]; 4],
    /// Complete values before masking.
    pub complete: Vec<Vec<f64>>,
}

impl SimulatedPanel {
    /// Labelled evaluation points `(name, u, category)`: D1..D4 then T1..T4.
    pub fn evaluation_points(&self) -> Vec<(String, Vec<f64>, usize)> {
        let mut out = Vec::with_capacity(8);
        for (i, &j) in self.d_points.iter().enumerate() {
            out.push((
                format!("D{}", i + 1),
                self.panel.covariates[j].clone(),
                self.categories[j],
            ));
        }
        for (i, t) in self.test_points.iter().enumerate() {
            out.push((format!("T{}", i + 1), t.to_vec(), i + 1));
        }
        out
    }
}

fn simulate_series<R: Rng + ?Sized>(
    design: &SimulationDesign,
    category: usize,
    rng: &mut R,
) -> Vec<f64> {
    let first = design.regime_at(category, 0);
    let (mut y1, mut y2) = (0.0, 0.0);
    for _ in 0..design.warmup {
        let e: f64 = StandardNormal.sample(rng);
        let y = first.phi1 * y1 + first.phi2 * y2 + e;
        y2 = y1;
        y1 = y;
    }
    (0..design.length)
        .map(|t| {
            let r = design.regime_at(category, t);
            let e: f64 = StandardNormal.sample(rng);
            let y = r.phi1 * y1 + r.phi2 * y2 + e;
            y2 = y1;
            y1 = y;
            r.mu + y
        })
        .collect()
}

fn missing_mask<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Vec<bool> {
    let n = design.length;
    let k = (design.missing_fraction * n as f64).round() as usize;
    let mut mask = vec![false; n];
    match design.missing_pattern {
        MissingPattern::Uniform => {
            for i in rand::seq::index::sample(rng, n, k) {
                mask[i] = true;
            }
        }
        MissingPattern::Block => {
            if k > 0 {
                let start = rng.random_range(0..=n - k);
                mask[start..start + k].iter_mut().for_each(|m| *m = true);
            }
        }
    }
    mask
}

/// Draw covariates, categories, series and missingness. Covariate draws are
/// repeated until every category has at least one series.
pub fn simulate_panel<R: Rng + ?Sized>(
    design: &SimulationDesign,
    rng: &mut R,
) -> Result<SimulatedPanel> {
    design.validate()?;
    for &p in &design.test_points {
        if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
            return Err(Error::invalid("test points must lie in the unit square"));
        }
    }
    let (covs, cats) = loop {
        let covs: Vec<Vec<f64>> = (0..design.n_series)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let cats: Vec<usize> = covs.iter().map(|u| design.region_map.category(u)).collect();
        if (1..=4).all(|h| cats.contains(&h)) {
            break (covs, cats);
        }
    };
    let mut d_points = [0usize; 4];
    for h in 1..=4 {
        let a = design.anchors[h - 1];
        d_points[h - 1] = (0..design.n_series)
            .filter(|&j| cats[j] == h)
            .min_by(|&i, &j| {
                let di = (covs[i][0] - a[0]).powi(2) + (covs[i][1] - a[1]).powi(2);
                let dj = (covs[j][0] - a[0]).powi(2) + (covs[j][1] - a[1]).powi(2);
                di.total_cmp(&dj)
            })
            .expect("category present");
    }
    let width = (design.n_series as f64).log10().floor() as usize + 1;
    let mut names = Vec::with_capacity(design.n_series);
    let mut series = Vec::with_capacity(design.n_series);
    let mut complete = Vec::with_capacity(design.n_series);
    for (j, &h) in cats.iter().enumerate() {
        let x = simulate_series(design, h, rng);
        let mask = missing_mask(design, rng);
        let observed: Vec<f64> = x
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { 0.0 } else { v })
            .collect();
        series.push(TimeSeries::new(observed, mask)?);
        complete.push(x);
        names.push(format!("s{:0width$}", j + 1));
    }
    let panel = Panel::new(names, series, vec!["u1".into(), "u2".into()], covs)?;
    Ok(SimulatedPanel {
        panel,
        categories: cats,
        d_points,
        test_points: design.test_points,
        complete,
    })
}

/// Truth for the evaluation points as a tidy CSV (`t,omega,point,statistic,
/// value`): `mu` rows per time and `log_f` rows on the `k_max`-point grid.
pub fn write_truth_csv<W: std::io::Write>(
    sim: &SimulatedPanel,
    design: &SimulationDesign,
    k_max: usize,
    out: W,
) -> Result<()> {
    let grid = mse_frequency_grid(k_max);
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["t", "omega", "point", "statistic", "value"])
        .map_err(io)?;
    for (label, _, category) in sim.evaluation_points() {
        let mu = design.true_mean(category);
        for (t, v) in mu.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                String::new(),
                label.clone(),
                "mu".into(),
                format_f64(*v),
            ])
            .map_err(io)?;
        }
        for (t, row) in design
            .true_log_spectrum(category, &grid)?
            .iter()
            .enumerate()
        {
            for (omega, v) in grid.iter().zip(row) {
                w.write_record([
                    (t + 1).to_string(),
                    format_f64(*omega),
                    label.clone(),
                    "log_f".into(),
                    format_f64(*v),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluation points as CSV: `point,u1,u2,series,category`, `series`
/// empty for unobserved points.
pub fn write_evaluation_points<W: std::io::Write>(sim: &SimulatedPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    let mut header = vec!["point".to_string()];
    header.extend(sim.panel.covariate_names.iter().cloned());
    header.extend(["series".to_string(), "category".to_string()]);
    w.write_record(&header).map_err(io)?;
    for (i, (label, u, category)) in sim.evaluation_points().into_iter().enumerate() {
        let series = if i < 4 {
            sim.panel.names[sim.d_points[i]].clone()
        } else {
            String::new()
        };
        let mut rec = vec![label];
        rec.extend(u.iter().map(|v| format_f64(*v)));
        rec.extend([series, category.to_string()]);
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;

    #[test]
    fn white_noise_log_spectrum_is_zero() {
        let g = mse_frequency_grid(16);
        assert!(true_ar2_log_spectrum(0.0, 0.0, 1.0, &g)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert!(true_ar2_log_spectrum(1.5, 0.75, 1.0, &g).is_err());
    }

    #[test]
    fn resonant_peak_location() {
        let grid: Vec<f64> = (0..=100_000).map(|i| 0.5 * i as f64 / 100_000.0).collect();
        let lf = true_ar2_log_spectrum(1.5, -0.75, 1.0, &grid).unwrap();
        let (imax, _) = lf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        // peak at cos(2πω) = φ₁(φ₂ − 1)/(4φ₂)
        let expected = (1.5f64 * (-0.75 - 1.0) / (4.0 * -0.75)).acos() / (2.0 * PI);
        assert!(
            (grid[imax] - expected).abs() < 1e-5,
            "{} vs {expected}",
            grid[imax]
        );
    }

    #[test]
    fn integrated_spectrum_matches_yule_walker_variance() {
        let k = 1025;
        let grid: Vec<f64> = (0..k).map(|i| 0.5 * i as f64 / (k - 1) as f64).collect();
        let lf = true_ar2_log_spectrum(1.5, -0.75, 1.0, &grid).unwrap();
        let h = 0.5 / (k - 1) as f64;
        let trap: f64 = (0..k - 1)
            .map(|i| 0.5 * h * (lf[i].exp() + lf[i + 1].exp()))
            .sum();
        let v = ar2_variance(1.5, -0.75);
        assert!((2.0 * trap - v).abs() / v < 0.005, "{} vs {v}", 2.0 * trap);
    }

    #[test]
    fn mse_examples() {
        let t = vec![1.0, 2.0, 3.0];
        assert_eq!(mse_mean(&t, &t).unwrap(), 0.0);
        let off: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        assert!((mse_mean(&off, &t).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse_mean(&t, &t[..2]).is_err());
        let s = vec![vec![0.0; 4]; 3];
        let s2 = vec![vec![0.3; 4]; 3];
        assert!((mse_spec(&s2, &s, 4).unwrap() - 0.09).abs() < 1e-15);
        assert!(mse_spec(&s, &s, 5).is_err());
        let g = mse_frequency_grid(128);
        assert_eq!((g[0], g[127]), (0.0, 0.5));
    }

    #[test]
    fn default_map_areas() {
        let m = RegionMap::Default;
        let k = 400;
        let mut counts = [0usize; 4];
        for i in 0..k {
            for j in 0..k {
                let u = [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64];
                counts[m.category(&u) - 1] += 1;
            }
        }
        let areas: Vec<f64> = counts.iter().map(|&c| c as f64 / (k * k) as f64).collect();
        for (a, e) in areas.iter().zip([0.41, 0.08, 0.18, 0.33]) {
            assert!((a - e).abs() < 0.005, "{areas:?}");
        }
    }

    #[test]
    fn category_table_and_points() {
        let d = SimulationDesign::default();
        let mut rng = RngStream::new(1, 0).rng();
        let sim = simulate_panel(&d, &mut rng).unwrap();
        assert_eq!(sim.panel.n_series(), 100);
        for s in &sim.panel.series {
            assert_eq!(s.n_missing(), 26);
        }
        for (i, &j) in sim.d_points.iter().enumerate() {
            assert_eq!(sim.categories[j], i + 1);
        }
        for (i, t) in d.test_points.iter().enumerate() {
            assert_eq!(d.region_map.category(t), i + 1);
        }
        // category 3 stationary with zero mean; category 2 spectrum unchanged
        assert!(d.true_mean(3).iter().all(|&m| m == 0.0));
        let g = mse_frequency_grid(8);
        let s2 = d.true_log_spectrum(2, &g).unwrap();
        assert_eq!(s2[0], s2[255]);
        let m2 = d.true_mean(2);
        assert_eq!((m2[127], m2[128]), (1.0, -1.0));
    }

    #[test]
    fn stationary_category_lag_one_autocorrelation() {
        let d = SimulationDesign {
            length: 200_000,
            n_series: 4,
            missing_fraction: 0.0,
            ..Default::default()
        };
        let mut rng = RngStream::new(2, 0).rng();
        let x = simulate_series(&d, 3, &mut rng);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((c1 / c0 - 6.0 / 7.0).abs() < 0.02, "{}", c1 / c0);
    }
}
