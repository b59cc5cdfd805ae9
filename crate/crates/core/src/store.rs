//! On-disk sample store.
//!
//! ```text
//! <dir>/manifest.json            run metadata, configuration, record schema
//! <dir>/chain_<c>/chain.json     progress: iterations done, chunk list
//! <dir>/chain_<c>/chunk_<k>.msgpack   MessagePack array of draw records
//! <dir>/chain_<c>/diagnostics.csv     one row per iteration
//! <dir>/chain_<c>/checkpoint.msgpack  chain state after the last flush
//! ```
//!
//! Draw records are MessagePack maps with named fields, so chunks can be
//! read without this crate. The manifest's `record_schema` documents them.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::SegmentModel;
use crate::panel::{format_f64, Panel};
use crate::sampler::{ChainState, IterationStats, Sampler};

pub const STORE_FORMAT: &str = "adaptspecx-samples";
pub const STORE_VERSION: u32 = 1;

/// One stored posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: u64,
    pub iteration: u64,
    pub theta: Vec<SegmentModel>,
    pub z: Vec<usize>,
    pub beta: Vec<Vec<f64>>,
    pub tau2: Vec<f64>,
    pub a: Vec<f64>,
}

impl Draw {
    pub fn from_state(chain: u64, state: &ChainState) -> Self {
        Draw {
            chain,
            iteration: state.iteration,
            theta: state.theta.clone(),
            z: state.z.clone(),
            beta: state
                .stick
                .beta
                .iter()
                .map(|b| b.as_slice().to_vec())
                .collect(),
            tau2: state.stick.tau2.clone(),
            a: state.stick.a.clone(),
        }
    }
}

fn record_schema() -> Vec<(String, String)> {
    [
        ("chain", "chain index"),
        ("iteration", "1-based iteration that produced the draw"),
        ("theta", "per component: cutpoints (segment ends, exclusive, last = n), means, spectra {coefficients (alpha0, b_1..b_J), tau2_b}"),
        ("z", "0-based component of each series, in manifest series order"),
        ("beta", "stick-breaking coefficients, H-1 vectors over (intercept, covariates, GP basis)"),
        ("tau2", "GP scale of each stick"),
        ("a", "half-t auxiliary of each stick"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub encoding: String,
    pub record_schema: Vec<(String, String)>,
    /// Run configuration; `chain.threads` is always stored as 0.
    pub config: RunConfig,
    pub series_names: Vec<String>,
    pub series_length: usize,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub file: String,
    pub first_iteration: u64,
    pub last_iteration: u64,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub chain: u64,
    pub iterations_done: u64,
    pub n_draws: usize,
    pub chunks: Vec<ChunkInfo>,
    pub complete: bool,
}

impl Manifest {
    pub fn new(panel: &Panel, config: &RunConfig) -> Self {
        let mut config = config.clone();
        config.chain.threads = 0;
        Manifest {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            encoding: "msgpack".to_string(),
            record_schema: record_schema(),
            config,
            series_names: panel.names.clone(),
            series_length: panel.series_length(),
            covariate_names: panel.covariate_names.clone(),
            covariates: panel.covariates.clone(),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    rmp_serde::to_vec_named(value)
        .map_err(|e| Error::invalid(format!("cannot encode samples: {e}")))
}

fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<T> {
    rmp_serde::from_slice(bytes)
        .map_err(|e| Error::invalid(format!("corrupt sample file {}: {e}", path.display())))
}

fn chain_dir(dir: &Path, chain: u64) -> PathBuf {
    dir.join(format!("chain_{chain}"))
}

fn diagnostics_header(h_n: usize) -> String {
    let mut cols: Vec<String> = [
        "iteration",
        "log_likelihood",
        "occupied",
        "birth_proposed",
        "birth_accepted",
        "death_proposed",
        "death_accepted",
        "within_proposed",
        "within_accepted",
        "hmc_proposed",
        "hmc_accepted",
        "hmc_divergent",
        "mode_failures",
        "swap_h1",
        "swap_h2",
        "swap_accepted",
        "swap_failed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=h_n).map(|h| format!("m_{h}")));
    cols.join(",")
}

fn diagnostics_row(state: &ChainState, s: &IterationStats) -> String {
    let m = &s.moves;
    let mut cols = vec![
        state.iteration.to_string(),
        format_f64(s.log_likelihood),
        s.occupied.to_string(),
    ];
    cols.extend(
        [
            m.birth_proposed,
            m.birth_accepted,
            m.death_proposed,
            m.death_accepted,
            m.within_proposed,
            m.within_accepted,
            m.hmc_proposed,
            m.hmc_accepted,
            m.hmc_divergent,
            m.mode_failures,
        ]
        .iter()
        .map(|v| v.to_string()),
    );
    cols.push((s.swap.h1 + 1).to_string());
    cols.push((s.swap.h2 + 1).to_string());
    cols.push((s.swap.accepted as u8).to_string());
    cols.push((s.swap.failed as u8).to_string());
    cols.extend(state.theta.iter().map(|t| t.n_segments().to_string()));
    cols.join(",")
}

/// Keep the header and the first `rows` data lines of a diagnostics file.
fn truncate_diagnostics(path: &Path, rows: u64) -> Result<()> {
    let kept: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .take(rows as usize + 1)
        .collect::<std::io::Result<_>>()?;
    let mut text = kept.join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Run every configured chain into `dir`. With `resume`, chains continue
/// from their last checkpoint; the stored run must match apart from the
/// iteration count, which may be raised.
pub fn run(
    panel: &Panel,
    config: &RunConfig,
    dir: &Path,
    resume: bool,
) -> Result<Vec<ChainManifest>> {
    check_chain_controls(config)?;
    let manifest = Manifest::new(panel, config);
    let path = dir.join("manifest.json");
    if resume && path.exists() {
        let mut old: Manifest = read_json(&path)?;
        old.config.chain.iterations = manifest.config.chain.iterations;
        if old != manifest {
            return Err(Error::invalid(
                "cannot resume: stored run differs in data or configuration",
            ));
        }
        write_json(&path, &manifest)?;
    } else {
        fs::create_dir_all(dir)?;
        write_json(&path, &manifest)?;
    }
    (0..config.chain.chains)
        .map(|c| run_chain(panel, config, dir, c, resume))
        .collect()
}

fn check_chain_controls(config: &RunConfig) -> Result<()> {
    let c = &config.chain;
    if c.iterations < c.burn_in {
        return Err(Error::invalid("iterations must not be below burn-in"));
    }
    if c.thin == 0 || c.chunk_size == 0 {
        return Err(Error::invalid("thin and chunk_size must be at least 1"));
    }
    Ok(())
}

/// Run one chain, writing its draws under `dir/chain_<chain>`.
pub fn run_chain(
    panel: &Panel,
    config: &RunConfig,
    dir: &Path,
    chain: u64,
    resume: bool,
) -> Result<ChainManifest> {
    check_chain_controls(config)?;
    let sampler = Sampler::new(
        panel,
        config.prior.clone(),
        config.mixture.clone(),
        config.chain.seed,
        chain,
    )?;
    let cdir = chain_dir(dir, chain);
    let progress = cdir.join("chain.json");
    let diag_path = cdir.join("diagnostics.csv");
    let ckpt_path = cdir.join("checkpoint.msgpack");
    crate::par::with_threads(config.chain.threads, || {
        let (mut state, mut cm) = if resume && progress.exists() {
            let cm: ChainManifest = read_json(&progress)?;
            let state: ChainState = decode(&fs::read(&ckpt_path)?, &ckpt_path)?;
            sampler.validate_state(&state)?;
            if state.iteration != cm.iterations_done {
                return Err(Error::invalid("checkpoint and chain progress disagree"));
            }
            truncate_diagnostics(&diag_path, cm.iterations_done)?;
            (state, cm)
        } else {
            fs::create_dir_all(&cdir)?;
            let state = sampler.initial_state()?;
            write_atomic(
                &diag_path,
                format!("{}\n", diagnostics_header(sampler.n_components())).as_bytes(),
            )?;
            let cm = ChainManifest {
                chain,
                iterations_done: 0,
                n_draws: 0,
                chunks: Vec::new(),
                complete: false,
            };
            write_atomic(&ckpt_path, &encode(&state)?)?;
            write_json(&progress, &cm)?;
            (state, cm)
        };
        let c = &config.chain;
        let flush_every = (c.chunk_size as u64).saturating_mul(c.thin);
        let mut buffer: Vec<Draw> = Vec::new();
        let mut rows: Vec<String> = Vec::new();
        while state.iteration < c.iterations {
            let (next, stats) = sampler.iterate(&state)?;
            state = next;
            rows.push(diagnostics_row(&state, &stats));
            let it = state.iteration;
            if it > c.burn_in && (it - c.burn_in) % c.thin == 0 {
                buffer.push(Draw::from_state(chain, &state));
            }
            if buffer.len() >= c.chunk_size || it % flush_every == 0 || it == c.iterations {
                flush(&cdir, &mut cm, &state, &mut buffer, &mut rows)?;
            }
        }
        if !cm.complete || cm.iterations_done != state.iteration {
            cm.complete = true;
            write_json(&progress, &cm)?;
        }
        Ok(cm)
    })?
}

fn flush(
    cdir: &Path,
    cm: &mut ChainManifest,
    state: &ChainState,
    buffer: &mut Vec<Draw>,
    rows: &mut Vec<String>,
) -> Result<()> {
    if !buffer.is_empty() {
        let file = format!("chunk_{:05}.msgpack", cm.chunks.len());
        write_atomic(&cdir.join(&file), &encode(&*buffer)?)?;
        cm.chunks.push(ChunkInfo {
            file,
            first_iteration: buffer[0].iteration,
            last_iteration: buffer[buffer.len() - 1].iteration,
            n_draws: buffer.len(),
        });
        cm.n_draws += buffer.len();
        buffer.clear();
    }
    {
        let mut f = BufWriter::new(
            OpenOptions::new()
                .append(true)
                .open(cdir.join("diagnostics.csv"))?,
        );
        for r in rows.iter() {
            writeln!(f, "{r}")?;
        }
        f.flush()?;
    }
    rows.clear();
    write_atomic(&cdir.join("checkpoint.msgpack"), &encode(state)?)?;
    cm.iterations_done = state.iteration;
    write_json(&cdir.join("chain.json"), cm)
}

/// Read access to a finished or partial store.
#[derive(Debug, Clone)]
pub struct SampleStore {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub chains: Vec<ChainManifest>,
}

impl SampleStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format != STORE_FORMAT || manifest.version != STORE_VERSION {
            return Err(Error::invalid(format!(
                "{} is not a version {STORE_VERSION} sample store",
                dir.display()
            )));
        }
        let mut chains = Vec::new();
        for c in 0..manifest.config.chain.chains {
            let p = chain_dir(dir, c).join("chain.json");
            if p.exists() {
                chains.push(read_json(&p)?);
            }
        }
        Ok(SampleStore {
            dir: dir.to_path_buf(),
            manifest,
            chains,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws).sum()
    }

    /// Every stored draw, chain by chain in iteration order.
    pub fn draws(&self) -> Result<Vec<Draw>> {
        let mut out = Vec::with_capacity(self.n_draws());
        for cm in &self.chains {
            for chunk in &cm.chunks {
                let path = chain_dir(&self.dir, cm.chain).join(&chunk.file);
                let mut draws: Vec<Draw> = decode(&fs::read(&path)?, &path)?;
                if draws.len() != chunk.n_draws {
                    return Err(Error::invalid(format!(
                        "{} holds {} draws, manifest says {}",
                        path.display(),
                        draws.len(),
                        chunk.n_draws
                    )));
                }
                out.append(&mut draws);
            }
        }
        Ok(out)
    }

    pub fn diagnostics_path(&self, chain: u64) -> PathBuf {
        chain_dir(&self.dir, chain).join("diagnostics.csv")
    }
}
