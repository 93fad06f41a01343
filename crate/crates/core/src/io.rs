//! File formats: TOML parameter and configuration files, one-observation-
//! per-line data files, and JSON-lines record streams.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::emissions::Obs;
use crate::error::{Error, Result};
use crate::experiments::{Epsilons, ExperimentConfig, SmoothingSpec, DEFAULT_MC_SAMPLES};
use crate::hmm::HmmParams;
use crate::inference::{GibbsConfig, PriorSpec, DEFAULT_BURN_IN, DEFAULT_THIN};
use crate::metrics::{MetricSpec, DEFAULT_BLOCK_LEN};
use crate::priors::{PmfDescriptor, ScaleLaw};

/// Parses observations, one per line. A file whose tokens are all
/// non-negative integers holds symbols; otherwise every token is read as a
/// real. Blank lines and lines starting with `#` are skipped.
pub fn parse_observations(text: &str) -> Result<Vec<Obs>> {
    let mut reals = Vec::new();
    let mut all_symbols = true;
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() || tok.starts_with('#') {
            continue;
        }
        all_symbols &= tok.parse::<usize>().is_ok();
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => reals.push(v),
            _ => return Err(Error::Parse(format!("line {}: `{tok}` is not an observation", i + 1))),
        }
    }
    Ok(if all_symbols {
        reals.into_iter().map(|v| Obs::Symbol(v as usize)).collect()
    } else {
        reals.into_iter().map(Obs::Real).collect()
    })
}

pub fn read_observations(path: &Path) -> Result<Vec<Obs>> {
    parse_observations(&std::fs::read_to_string(path)?)
}

pub fn write_lines<T: std::fmt::Display>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in items {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations(path: &Path, y: &[Obs]) -> Result<()> {
    write_lines(path, y)
}

pub fn write_states(path: &Path, x: &[usize]) -> Result<()> {
    write_lines(path, x)
}

pub fn params_from_toml(text: &str) -> Result<HmmParams> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn params_to_toml(theta: &HmmParams) -> Result<String> {
    toml::to_string(theta).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_params(path: &Path) -> Result<HmmParams> {
    params_from_toml(&std::fs::read_to_string(path)?)
}

pub fn write_params(path: &Path, theta: &HmmParams) -> Result<()> {
    std::fs::write(path, params_to_toml(theta)?)?;
    Ok(())
}

/// Appends one JSON record per line, flushing after each so that partial
/// output survives a later failure.
pub struct JsonlWriter {
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(JsonlWriter {
            inner: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record).map_err(|e| Error::Parse(e.to_string()))?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSection {
    pub n_iter: usize,
    #[serde(default = "burn_in")]
    pub burn_in: usize,
    #[serde(default = "thin")]
    pub thin: usize,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
}

fn burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn thin() -> usize {
    DEFAULT_THIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Metric identifiers, e.g. `d_l:3`, `aligned_q`, `weak_gap:3:ind:0:1`.
    #[serde(default)]
    pub names: Vec<String>,
    /// Draws per Monte Carlo integral for continuous emissions.
    #[serde(default = "mc_samples")]
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSection {
    pub epsilon: f64,
    pub n_grid: Vec<usize>,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdirSection {
    pub n_draws: usize,
    pub partitions: Vec<Vec<Vec<usize>>>,
    #[serde(default = "three")]
    pub z: f64,
}

fn three() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub epsilon: Epsilons,
    #[serde(default = "block_len")]
    pub l: usize,
    #[serde(default)]
    pub smoothing: Option<SmoothingSpec>,
    #[serde(default = "mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub kl: Option<KlSection>,
    #[serde(default)]
    pub ldir: Option<LdirSection>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            names: Vec::new(),
            mc_samples: mc_samples(),
        }
    }
}

fn block_len() -> usize {
    DEFAULT_BLOCK_LEN
}

fn mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
}

/// Inputs for the prior condition checks. Analytic descriptors override
/// the finite pmfs taken from `truth` and `prior`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "tail_budget")]
    pub tail_budget: usize,
    #[serde(default)]
    pub f_star: Option<Vec<PmfDescriptor>>,
    #[serde(default)]
    pub g0: Option<PmfDescriptor>,
    #[serde(default)]
    pub scale_law: Option<ScaleLaw>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            tail_budget: tail_budget(),
            f_star: None,
            g0: None,
            scale_law: None,
        }
    }
}

fn tail_budget() -> usize {
    10_000
}

/// One file drives every subcommand; each uses the sections it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub truth: Option<HmmParams>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub gibbs: Option<GibbsSection>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub check: CheckSection,
}

fn missing(section: &str) -> Error {
    Error::invalid(format!("config has no [{section}] section"))
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn truth(&self) -> Result<&HmmParams> {
        self.truth.as_ref().ok_or_else(|| missing("truth"))
    }

    pub fn prior(&self) -> Result<&PriorSpec> {
        self.prior.as_ref().ok_or_else(|| missing("prior"))
    }

    pub fn gibbs_config(&self) -> Result<GibbsConfig> {
        let g = self.gibbs.as_ref().ok_or_else(|| missing("gibbs"))?;
        let cfg = GibbsConfig {
            n_iter: g.n_iter,
            burn_in: g.burn_in,
            thin: g.thin,
            seed: self.seed,
            prior: self.prior()?.clone(),
            mu: g.mu.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metric_specs(&self) -> Result<Vec<MetricSpec>> {
        self.metrics.names.iter().map(|s| MetricSpec::parse(s)).collect()
    }

    pub fn experiment_section(&self) -> Result<&ExperimentSection> {
        self.experiment.as_ref().ok_or_else(|| missing("experiment"))
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let e = self.experiment_section()?;
        let cfg = ExperimentConfig {
            truth: self.truth()?.clone(),
            n_grid: e.n_grid.clone(),
            replications: e.replications,
            epsilon: e.epsilon,
            gibbs: self.gibbs_config()?,
            l: e.l,
            smoothing: e.smoothing.clone(),
            mc_samples: e.mc_samples,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
