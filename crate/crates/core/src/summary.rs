//! Posterior surfaces `μ̂(t, u)`, `log f̂(t, ω, u)`, `σ̂²(t, u)` and event
//! probabilities from stored draws, plus the tidy CSV used for export and
//! MSE evaluation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::config::Weighting;
use crate::error::{Error, Result};
use crate::lsbp::{build_design, predictive_design_row, stick_weights, CovariateDesign};
use crate::model::basis_row;
use crate::panel::{format_f64, parse_field};
use crate::predicate::Predicate;
use crate::simulate::{mse_frequency_grid, mse_mean, mse_spec};
use crate::store::{Draw, SampleStore};

/// `2 ∫₀^½ f(ω) dω` by the trapezoid rule, for `log f` on an equispaced
/// grid spanning `[0, ½]`.
pub fn variance_functional(log_f: &[f64]) -> f64 {
    let k = log_f.len();
    assert!(k >= 2, "variance functional needs at least two grid points");
    let h = 0.5 / (k - 1) as f64;
    let inner: f64 = log_f[1..k - 1].iter().map(|v| v.exp()).sum();
    2.0 * h * (0.5 * (log_f[0].exp() + log_f[k - 1].exp()) + inner)
}

/// Where a surface is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryPoint {
    /// Observed series `index` (0-based panel order).
    Series { label: String, index: usize },
    /// Arbitrary covariate value.
    Covariates { label: String, u: Vec<f64> },
}

impl QueryPoint {
    pub fn label(&self) -> &str {
        match self {
            QueryPoint::Series { label, .. } | QueryPoint::Covariates { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceRequest {
    pub points: Vec<QueryPoint>,
    pub freq_grid_size: usize,
    pub weighting: Weighting,
    pub quantiles: Vec<f64>,
    /// `(source text, parsed predicate)`.
    pub predicates: Vec<(String, Predicate)>,
    /// Report `log f̂` rows; these dominate the output size.
    pub spectrum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub label: String,
    pub covariates: Vec<f64>,
    pub mu_mean: Vec<f64>,
    /// `quantiles.len()` rows of length `n`.
    pub mu_quantiles: Vec<Vec<f64>>,
    pub sigma2_mean: Vec<f64>,
    pub sigma2_quantiles: Vec<Vec<f64>>,
    /// `n` rows over the frequency grid; empty when not requested.
    pub log_f_mean: Vec<Vec<f64>>,
    pub event_probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub freq_grid: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub predicates: Vec<String>,
    pub points: Vec<PointSummary>,
    pub n_draws: usize,
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
}

/// Mixture weights of one point in one draw, and the weights to use.
enum PointWeights {
    Indicator(usize),
    Row(DVector<f64>),
}

/// Draw-level surfaces at one point: values on the intervals between
/// consecutive change points of the active components.
struct DrawSurface {
    /// Interval ends (exclusive), last = n.
    ends: Vec<usize>,
    mu: Vec<f64>,
    sigma2: Vec<f64>,
    log_f: Vec<DVector<f64>>,
}

pub struct SurfaceEstimator {
    pub design: CovariateDesign,
    covariates: Vec<Vec<f64>>,
    pub series_length: usize,
    grid: Vec<f64>,
    /// Frequency basis `q(ω_k)'` stacked by row.
    q_grid: DMatrix<f64>,
}

impl SurfaceEstimator {
    pub fn new(
        covariates: &[Vec<f64>],
        n_gp_basis: usize,
        series_length: usize,
        n_basis: usize,
        freq_grid_size: usize,
    ) -> Result<Self> {
        if freq_grid_size < 2 {
            return Err(Error::invalid("frequency grid needs at least 2 points"));
        }
        let design = build_design(covariates, n_gp_basis)?;
        let grid = mse_frequency_grid(freq_grid_size);
        let q_grid = DMatrix::from_fn(freq_grid_size, n_basis + 1, |k, c| {
            basis_row(grid[k], n_basis)[c]
        });
        Ok(SurfaceEstimator {
            design,
            covariates: covariates.to_vec(),
            series_length,
            grid,
            q_grid,
        })
    }

    pub fn from_store(store: &SampleStore, freq_grid_size: usize) -> Result<Self> {
        let m = &store.manifest;
        Self::new(
            &m.covariates,
            m.config.mixture.n_gp_basis,
            m.series_length,
            m.config.prior.n_basis,
            freq_grid_size,
        )
    }

    pub fn freq_grid(&self) -> &[f64] {
        &self.grid
    }

    fn weights_for(
        &self,
        point: &QueryPoint,
        weighting: Weighting,
    ) -> Result<(Vec<f64>, Option<usize>, DVector<f64>)> {
        match point {
            QueryPoint::Series { index, .. } => {
                let raw = self
                    .covariates
                    .get(*index)
                    .ok_or_else(|| {
                        Error::invalid(format!("series index {index} outside the panel"))
                    })?
                    .clone();
                let row = predictive_design_row(&raw, &self.design)?;
                let drawn = (weighting == Weighting::Drawn).then_some(*index);
                Ok((raw, drawn, row))
            }
            QueryPoint::Covariates { u, .. } => {
                let row = predictive_design_row(u, &self.design)?;
                Ok((u.clone(), None, row))
            }
        }
    }

    fn draw_surface(&self, draw: &Draw, weights: &PointWeights) -> Result<DrawSurface> {
        let (active, w): (Vec<usize>, Vec<f64>) = match weights {
            PointWeights::Indicator(j) => {
                let h = *draw
                    .z
                    .get(*j)
                    .ok_or_else(|| Error::invalid("draw has fewer series than the panel"))?;
                (vec![h], vec![1.0])
            }
            PointWeights::Row(row) => {
                let odds: Vec<f64> = draw
                    .beta
                    .iter()
                    .map(|b| b.iter().zip(row.iter()).map(|(x, y)| x * y).sum())
                    .collect();
                let pi = stick_weights(&odds);
                pi.into_iter().enumerate().filter(|(_, v)| *v > 0.0).unzip()
            }
        };
        let n = self.series_length;
        let mut ends: Vec<usize> = active
            .iter()
            .flat_map(|&h| draw.theta[h].cutpoints.iter().copied())
            .collect();
        ends.sort_unstable();
        ends.dedup();
        if ends.last() != Some(&n) {
            return Err(Error::invalid(
                "stored draw does not match the series length",
            ));
        }
        let ncoef = self.q_grid.ncols();
        let mut out = DrawSurface {
            ends: Vec::new(),
            mu: Vec::new(),
            sigma2: Vec::new(),
            log_f: Vec::new(),
        };
        let mut start = 0;
        for &end in &ends {
            let mut mu = 0.0;
            let mut b = DVector::zeros(ncoef);
            for (&h, &wh) in active.iter().zip(&w) {
                let th = &draw.theta[h];
                let s = th.segment_of(start);
                mu += wh * th.means[s];
                let c = &th.spectra[s].coefficients;
                if c.len() != ncoef {
                    return Err(Error::invalid(
                        "stored spline basis size differs from configuration",
                    ));
                }
                for (bk, ck) in b.iter_mut().zip(c) {
                    *bk += wh * ck;
                }
            }
            let lf = &self.q_grid * b;
            out.sigma2.push(variance_functional(lf.as_slice()));
            out.mu.push(mu);
            out.log_f.push(lf);
            out.ends.push(end);
            start = end;
        }
        Ok(out)
    }

    /// Posterior summaries of every requested point over `draws`.
    pub fn estimate(&self, draws: &[Draw], request: &SurfaceRequest) -> Result<Vec<PointSummary>> {
        if draws.is_empty() {
            return Err(Error::invalid("sample store holds no posterior draws"));
        }
        if request.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::invalid("quantiles must lie in [0, 1]"));
        }
        let results = crate::par::map(request.points.len(), |i| {
            self.estimate_point(draws, &request.points[i], request)
        });
        results.into_iter().collect()
    }

    fn estimate_point(
        &self,
        draws: &[Draw],
        point: &QueryPoint,
        request: &SurfaceRequest,
    ) -> Result<PointSummary> {
        let n = self.series_length;
        let g = self.grid.len();
        let (covariates, drawn, row) = self.weights_for(point, request.weighting)?;
        let weights = match drawn {
            Some(j) => PointWeights::Indicator(j),
            None => PointWeights::Row(row),
        };
        let d = draws.len();
        let mut mu_draws = vec![0.0; d * n];
        let mut s2_draws = vec![0.0; d * n];
        let mut log_f_sum = if request.spectrum {
            vec![vec![0.0; g]; n]
        } else {
            Vec::new()
        };
        let mut hits = vec![0usize; request.predicates.len()];
        for (i, draw) in draws.iter().enumerate() {
            let surf = self.draw_surface(draw, &weights)?;
            let mu = &mut mu_draws[i * n..(i + 1) * n];
            let s2 = &mut s2_draws[i * n..(i + 1) * n];
            let mut start = 0;
            for (k, &end) in surf.ends.iter().enumerate() {
                mu[start..end].fill(surf.mu[k]);
                s2[start..end].fill(surf.sigma2[k]);
                if request.spectrum {
                    for row in &mut log_f_sum[start..end] {
                        for (acc, v) in row.iter_mut().zip(surf.log_f[k].iter()) {
                            *acc += v;
                        }
                    }
                }
                start = end;
            }
            for (hit, (_, p)) in hits.iter_mut().zip(&request.predicates) {
                if p.eval(mu, s2) {
                    *hit += 1;
                }
            }
        }
        let inv = 1.0 / d as f64;
        let (mu_mean, mu_quantiles) = column_summaries(&mu_draws, d, n, &request.quantiles);
        let (sigma2_mean, sigma2_quantiles) = column_summaries(&s2_draws, d, n, &request.quantiles);
        for row in &mut log_f_sum {
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(PointSummary {
            label: point.label().to_string(),
            covariates,
            mu_mean,
            mu_quantiles,
            sigma2_mean,
            sigma2_quantiles,
            log_f_mean: log_f_sum,
            event_probabilities: hits.into_iter().map(|h| h as f64 * inv).collect(),
        })
    }
}

/// Column means and quantiles of a row-major `d × n` array.
fn column_summaries(
    values: &[f64],
    d: usize,
    n: usize,
    quantiles: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut mean = vec![0.0; n];
    let mut q = vec![vec![0.0; n]; quantiles.len()];
    let mut col = vec![0.0; d];
    for t in 0..n {
        for i in 0..d {
            col[i] = values[i * n + t];
        }
        mean[t] = col.iter().sum::<f64>() / d as f64;
        if !quantiles.is_empty() {
            col.sort_by(f64::total_cmp);
            for (row, &p) in q.iter_mut().zip(quantiles) {
                row[t] = quantile_sorted(&col, p);
            }
        }
    }
    (mean, q)
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Surfaces and event probabilities for a stored run.
pub fn summarize_store(store: &SampleStore, request: &SurfaceRequest) -> Result<PosteriorSummary> {
    let est = SurfaceEstimator::from_store(store, request.freq_grid_size)?;
    let draws = store.draws()?;
    let points = est.estimate(&draws, request)?;
    let c = &store.manifest.config.chain;
    Ok(PosteriorSummary {
        freq_grid: est.freq_grid().to_vec(),
        quantiles: request.quantiles.clone(),
        predicates: request.predicates.iter().map(|(s, _)| s.clone()).collect(),
        points,
        n_draws: draws.len(),
        iterations: c.iterations,
        burn_in: c.burn_in,
        thin: c.thin,
    })
}

/// Fraction of draws where `predicate` holds at `point`.
pub fn event_probability(
    store: &SampleStore,
    point: &QueryPoint,
    predicate: &Predicate,
    weighting: Weighting,
) -> Result<f64> {
    let est = SurfaceEstimator::from_store(store, 2)?;
    let request = SurfaceRequest {
        points: vec![point.clone()],
        freq_grid_size: 2,
        weighting,
        quantiles: Vec::new(),
        predicates: vec![(String::new(), predicate.clone())],
        spectrum: false,
    };
    Ok(est.estimate(&store.draws()?, &request)?[0].event_probabilities[0])
}

fn quantile_name(prefix: &str, q: f64) -> String {
    format!("{prefix}_q{}", format_f64(q))
}

impl PosteriorSummary {
    /// Tidy CSV `t,omega,point,statistic,value`; `t` is 1-based, `omega` is
    /// empty for time-only statistics and both are empty for event
    /// probabilities.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["t", "omega", "point", "statistic", "value"])
            .map_err(io)?;
        for p in &self.points {
            let n = p.mu_mean.len();
            for t in 0..n {
                let ts = (t + 1).to_string();
                let mut put = |stat: &str, v: f64| {
                    w.write_record([ts.as_str(), "", &p.label, stat, &format_f64(v)])
                };
                put("mu_mean", p.mu_mean[t]).map_err(io)?;
                for (q, row) in self.quantiles.iter().zip(&p.mu_quantiles) {
                    put(&quantile_name("mu", *q), row[t]).map_err(io)?;
                }
                put("sigma2_mean", p.sigma2_mean[t]).map_err(io)?;
                for (q, row) in self.quantiles.iter().zip(&p.sigma2_quantiles) {
                    put(&quantile_name("sigma2", *q), row[t]).map_err(io)?;
                }
            }
            for (t, row) in p.log_f_mean.iter().enumerate() {
                let ts = (t + 1).to_string();
                for (omega, v) in self.freq_grid.iter().zip(row) {
                    w.write_record([
                        ts.as_str(),
                        &format_f64(*omega),
                        &p.label,
                        "log_f_mean",
                        &format_f64(*v),
                    ])
                    .map_err(io)?;
                }
            }
            for (text, v) in self.predicates.iter().zip(&p.event_probabilities) {
                w.write_record(["", "", &p.label, &format!("prob:{text}"), &format_f64(*v)])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One `(t, omega, value)` entry of a tidy table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TidyValue {
    pub t: Option<usize>,
    pub omega: Option<f64>,
    pub value: f64,
}

/// Tidy CSV content keyed by `(point, statistic)`, rows in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TidyTable {
    pub entries: BTreeMap<(String, String), Vec<TidyValue>>,
    /// Points in order of first appearance.
    pub points: Vec<String>,
}

impl TidyTable {
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(input: R, file: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                file: file.into(),
                line: 1,
                column: 1,
                message: e.to_string(),
            })?
            .clone();
        let want = ["t", "omega", "point", "statistic", "value"];
        if header.iter().map(str::trim).ne(want) {
            return Err(Error::Parse {
                file: file.into(),
                line: 1,
                column: 1,
                message: format!("header must be {}", want.join(",")),
            });
        }
        let mut table = TidyTable::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                file: file.into(),
                line: e.position().map_or(0, |p| p.line() as usize),
                column: 1,
                message: e.to_string(),
            })?;
            let t = match rec.get(0).unwrap_or("").trim() {
                "" => None,
                _ => {
                    let v = parse_field(file, &rec, 0, "time")?;
                    if v.fract() != 0.0 || v < 1.0 {
                        return Err(Error::Parse {
                            file: file.into(),
                            line: rec.position().map_or(0, |p| p.line() as usize),
                            column: 1,
                            message: format!("time must be a positive integer, got {v}"),
                        });
                    }
                    Some(v as usize)
                }
            };
            let omega = match rec.get(1).unwrap_or("").trim() {
                "" => None,
                _ => Some(parse_field(file, &rec, 1, "frequency")?),
            };
            let point = rec.get(2).unwrap_or("").trim().to_string();
            let stat = rec.get(3).unwrap_or("").trim().to_string();
            let value = parse_field(file, &rec, 4, "value")?;
            if !table.points.contains(&point) {
                table.points.push(point.clone());
            }
            table
                .entries
                .entry((point, stat))
                .or_default()
                .push(TidyValue { t, omega, value });
        }
        Ok(table)
    }

    pub fn get(&self, point: &str, statistic: &str) -> Option<&[TidyValue]> {
        self.entries
            .get(&(point.to_string(), statistic.to_string()))
            .map(Vec::as_slice)
    }

    /// Time series of a statistic, ordered by `t`.
    pub fn series(&self, point: &str, statistic: &str) -> Result<Vec<(usize, f64)>> {
        let rows = self
            .get(point, statistic)
            .ok_or_else(|| Error::invalid(format!("no {statistic} rows for point {point}")))?;
        let mut v: Vec<(usize, f64)> = rows
            .iter()
            .map(|r| {
                r.t.map(|t| (t, r.value)).ok_or_else(|| {
                    Error::invalid(format!("{statistic} row without time for {point}"))
                })
            })
            .collect::<Result<_>>()?;
        v.sort_by_key(|x| x.0);
        Ok(v)
    }

    /// Surface of a statistic: times ascending, each with `(omega, value)`
    /// ascending in omega.
    pub fn surface(&self, point: &str, statistic: &str) -> Result<Vec<(usize, Vec<(f64, f64)>)>> {
        let rows = self
            .get(point, statistic)
            .ok_or_else(|| Error::invalid(format!("no {statistic} rows for point {point}")))?;
        let mut by_t: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            match (r.t, r.omega) {
                (Some(t), Some(w)) => by_t.entry(t).or_default().push((w, r.value)),
                _ => {
                    return Err(Error::invalid(format!(
                        "{statistic} row for {point} lacks time or frequency"
                    )))
                }
            }
        }
        Ok(by_t
            .into_iter()
            .map(|(t, mut v)| {
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                (t, v)
            })
            .collect())
    }
}

/// Per-point MSE of an estimate against truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMse {
    pub point: String,
    pub mse_mean: f64,
    pub mse_spec: f64,
}

/// MSE of `mu_mean` against truth `mu` and of `log_f_mean` against truth
/// `log_f` for every truth point present in the estimate.
pub fn mse_by_point(estimate: &TidyTable, truth: &TidyTable) -> Result<Vec<PointMse>> {
    let mut out = Vec::new();
    for p in &truth.points {
        if !estimate.points.contains(p) {
            continue;
        }
        let tm = truth.series(p, "mu")?;
        let em = estimate.series(p, "mu_mean")?;
        if tm.iter().map(|x| x.0).ne(em.iter().map(|x| x.0)) {
            return Err(Error::invalid(format!("time grids differ for point {p}")));
        }
        let mse_m = mse_mean(
            &em.iter().map(|x| x.1).collect::<Vec<_>>(),
            &tm.iter().map(|x| x.1).collect::<Vec<_>>(),
        )?;
        let ts = truth.surface(p, "log_f")?;
        let es = estimate.surface(p, "log_f_mean")?;
        if ts.len() != es.len() {
            return Err(Error::invalid(format!(
                "spectrum time grids differ for point {p}"
            )));
        }
        let k_max = ts.first().map_or(0, |r| r.1.len());
        let mut tv = Vec::with_capacity(ts.len());
        let mut ev = Vec::with_capacity(ts.len());
        for ((t1, a), (t2, b)) in ts.iter().zip(&es) {
            if t1 != t2
                || a.len() != b.len()
                || a.iter().zip(b).any(|(x, y)| (x.0 - y.0).abs() > 1e-9)
            {
                return Err(Error::invalid(format!(
                    "frequency grids differ for point {p} at t = {t1}"
                )));
            }
            tv.push(a.iter().map(|x| x.1).collect::<Vec<_>>());
            ev.push(b.iter().map(|x| x.1).collect::<Vec<_>>());
        }
        out.push(PointMse {
            point: p.clone(),
            mse_mean: mse_m,
            mse_spec: mse_spec(&ev, &tv, k_max)?,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("estimate and truth share no points"));
    }
    Ok(out)
}
