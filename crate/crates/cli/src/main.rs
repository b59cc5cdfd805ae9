use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptspecx::config::{RunConfig, Weighting};
use adaptspecx::distributions::RngStream;
use adaptspecx::panel::{format_f64, read_points, Panel};
use adaptspecx::predicate::Predicate;
use adaptspecx::simulate::{simulate_panel, write_evaluation_points, write_truth_csv, MissingPattern, RegionMap, SimulationDesign};
use adaptspecx::store::{self, SampleStore};
use adaptspecx::summary::{mse_by_point, summarize_store, QueryPoint, SurfaceRequest, TidyTable};
use adaptspecx::{with_threads, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Covariate-dependent mixture of piecewise-stationary spectra for panels
/// of time series.
#[derive(Parser)]
#[command(name = "adaptspecx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the four-category AR(2) panel with its true surfaces.
    Simulate(SimulateArgs),
    /// Run the sampler and write a sample store.
    Fit(FitArgs),
    /// Posterior surfaces and event probabilities for observed series.
    Summarize(SummarizeArgs),
    /// Posterior surfaces at covariate points read from a CSV.
    Predict(PredictArgs),
    /// Mean and log-spectrum MSE of a summary against a truth file.
    Mse(MseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for series.csv, covariates.csv, truth.csv and
    /// evaluation_points.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_series: usize,
    #[arg(long, default_value_t = 256)]
    length: usize,
    /// Last time of the first regime; defaults to half the length.
    #[arg(long)]
    change_point: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    missing_fraction: f64,
    /// Remove one contiguous block instead of scattered times.
    #[arg(long)]
    block_missing: bool,
    /// Category grid CSV replacing the built-in region map.
    #[arg(long)]
    region_map: Option<PathBuf>,
    /// Frequencies in the truth file.
    #[arg(long, default_value_t = 128)]
    k_max: usize,
}

#[derive(Args)]
struct FitArgs {
    /// Wide series CSV: time column, one column per series.
    #[arg(long)]
    series: PathBuf,
    /// Covariate CSV: series name, then one column per covariate.
    #[arg(long)]
    covariates: PathBuf,
    /// Sample store directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Divide iterations and burn-in by this factor.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<u64>,
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Continue an interrupted run in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Drawn,
    PlugIn,
}

#[derive(Args)]
struct OutputArgs {
    /// Sample store directory written by `fit`.
    #[arg(long)]
    store: PathBuf,
    /// Tidy summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Event predicate such as "mu(200) < mu(50)"; repeatable.
    #[arg(long = "predicate")]
    predicates: Vec<String>,
    /// Points of the frequency grid on [0, 1/2].
    #[arg(long)]
    freq_grid: Option<usize>,
    /// Omit log-spectrum rows.
    #[arg(long)]
    no_spectrum: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Series to summarize, as NAME or NAME=LABEL; repeatable. Default: all.
    #[arg(long = "series")]
    series: Vec<String>,
    /// Weights for observed series; defaults to the stored configuration.
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// CSV with a label column and one column per covariate, matched by
    /// header name.
    #[arg(long)]
    points: PathBuf,
}

#[derive(Args)]
struct MseArgs {
    /// Summary CSV from `summarize` or `predict`.
    #[arg(long)]
    estimate: PathBuf,
    /// Truth CSV from `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Write `point,mse_mean,mse_spec` here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Summarize(a) => summarize(a),
        Command::Predict(a) => predict(a),
        Command::Mse(a) => mse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut design = SimulationDesign {
        n_series: a.n_series,
        length: a.length,
        change_point: a.change_point.unwrap_or(a.length / 2),
        missing_fraction: a.missing_fraction,
        missing_pattern: if a.block_missing { MissingPattern::Block } else { MissingPattern::Uniform },
        ..Default::default()
    };
    if let Some(p) = &a.region_map {
        design.region_map = RegionMap::read_grid(p)?;
    }
    if a.k_max < 2 {
        return Err(Error::invalid("k_max must be at least 2"));
    }
    let sim = simulate_panel(&design, &mut RngStream::new(a.seed, 0).rng())?;
    fs::create_dir_all(&a.out)?;
    sim.panel.write(&a.out.join("series.csv"), &a.out.join("covariates.csv"))?;
    write_truth_csv(&sim, &design, a.k_max, create(&a.out.join("truth.csv"))?)?;
    write_evaluation_points(&sim, create(&a.out.join("evaluation_points.csv"))?)?;
    eprintln!("simulated {} series of length {} into {}", design.n_series, design.length, a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = a.scale {
        config = config.scaled(f)?;
    }
    let c = &mut config.chain;
    c.iterations = a.iterations.unwrap_or(c.iterations);
    c.burn_in = a.burn_in.unwrap_or(c.burn_in);
    c.thin = a.thin.unwrap_or(c.thin);
    c.seed = a.seed.unwrap_or(c.seed);
    c.chains = a.chains.unwrap_or(c.chains);
    c.threads = a.threads.unwrap_or(c.threads);
    config.validate()?;
    let panel = Panel::read(&a.series, &a.covariates)?;
    for w in config.prior.validate_for_length(panel.series_length())? {
        eprintln!("warning: {w}");
    }
    let chains = store::run(&panel, &config, &a.out, a.resume)?;
    let draws: usize = chains.iter().map(|c| c.n_draws).sum();
    eprintln!("wrote {draws} draws from {} chain(s) to {}", chains.len(), a.out.display());
    Ok(())
}

fn parse_predicates(texts: &[String], n: usize) -> Result<Vec<(String, Predicate)>> {
    texts.iter().map(|t| Ok((t.clone(), Predicate::parse(t, n)?))).collect()
}

fn run_summary(output: &OutputArgs, store: &SampleStore, points: Vec<QueryPoint>, weighting: Weighting) -> Result<()> {
    let s = &store.manifest.config.summary;
    let request = SurfaceRequest {
        points,
        freq_grid_size: output.freq_grid.unwrap_or(s.freq_grid_size),
        weighting,
        quantiles: s.quantiles.clone(),
        predicates: parse_predicates(&output.predicates, store.manifest.series_length)?,
        spectrum: !output.no_spectrum,
    };
    let summary = with_threads(output.threads, || summarize_store(store, &request))??;
    let mut out = create(&output.out)?;
    summary.write_csv(&mut out)?;
    out.flush()?;
    eprintln!("summarized {} point(s) over {} draws into {}", summary.points.len(), summary.n_draws, output.out.display());
    Ok(())
}

fn summarize(a: SummarizeArgs) -> Result<()> {
    let store = SampleStore::open(&a.output.store)?;
    let names = &store.manifest.series_names;
    let points = if a.series.is_empty() {
        names.iter().enumerate().map(|(index, n)| QueryPoint::Series { label: n.clone(), index }).collect()
    } else {
        a.series
            .iter()
            .map(|spec| {
                let (name, label) = spec.split_once('=').unwrap_or((spec, spec));
                let index = names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::invalid(format!("series {name:?} is not in the stored panel")))?;
                Ok(QueryPoint::Series { label: label.to_string(), index })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let weighting = match a.weighting {
        Some(WeightingArg::Drawn) => Weighting::Drawn,
        Some(WeightingArg::PlugIn) => Weighting::PlugIn,
        None => store.manifest.config.summary.weighting,
    };
    run_summary(&a.output, &store, points, weighting)
}

fn predict(a: PredictArgs) -> Result<()> {
    let store = SampleStore::open(&a.output.store)?;
    let (labels, rows) = read_points(&a.points, &store.manifest.covariate_names)?;
    if labels.is_empty() {
        return Err(Error::invalid(format!("{} lists no points", a.points.display())));
    }
    let points = labels.into_iter().zip(rows).map(|(label, u)| QueryPoint::Covariates { label, u }).collect();
    run_summary(&a.output, &store, points, Weighting::PlugIn)
}

fn mse(a: MseArgs) -> Result<()> {
    let estimate = TidyTable::read(&a.estimate)?;
    let truth = TidyTable::read(&a.truth)?;
    let rows = mse_by_point(&estimate, &truth)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "point,mse_mean,mse_spec")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.point, format_f64(r.mse_mean), format_f64(r.mse_spec))?;
    }
    out.flush()?;
    Ok(())
}
