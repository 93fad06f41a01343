use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use npbhmm::experiments::{consistency_experiment, kl_lemma_experiment, ldir_validation, mass_below, summary_table};
use npbhmm::inference::{run_chain_with, PosteriorSample};
use npbhmm::io::{self as nio, Config, JsonlWriter};
use npbhmm::metrics::{evaluate_samples, MetricRecord};
use npbhmm::priors::{check_b1_base_integral, check_e1, check_t, BaseMeasure, PmfDescriptor, Verdict};
use npbhmm::{Error, HmmParams};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "npbhmm", version, about = "Nonparametric Bayesian HMM toolkit")]
struct Cli {
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw observations and hidden states from the configured truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run Gibbs chains on an observation file.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Configured metrics of one parameter file against the truth.
    Metric {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
    },
    /// Consistency experiment, plus the KL and LDir checks when configured.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Prior condition checks.
    CheckPrior {
        #[command(flatten)]
        common: Common,
    },
    /// Configured metrics over posterior sample files, with posterior masses.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        samples: Vec<PathBuf>,
    },
}

/// Process exit codes.
const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CliResult<T> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
    /// Numerical failures get their own code, bad observations the data code.
    fn run(self) -> CliResult<T>;
}

impl<T> Classify<T> for npbhmm::Result<T> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| Failure { code: EXIT_CONFIG, err: e.into() })
    }

    fn data(self) -> CliResult<T> {
        self.map_err(|e| Failure { code: EXIT_DATA, err: e.into() })
    }

    fn run(self) -> CliResult<T> {
        self.map_err(|e| {
            let code = if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                match innermost(&e) {
                    Error::DomainMismatch(_) | Error::EmptySequence => EXIT_DATA,
                    _ => EXIT_OTHER,
                }
            };
            Failure { code, err: e.into() }
        })
    }
}

fn innermost(e: &Error) -> &Error {
    match e {
        Error::ChainFailure { source, .. } => innermost(source),
        other => other,
    }
}

fn other<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: EXIT_OTHER, err: e.into() }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(other)?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Everything needed to regenerate the outputs: the exact config bytes (by
/// digest), the effective seed, input and output digests. No timestamps, so
/// identical runs give identical manifests.
#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    parallel: bool,
    seed: u64,
    config: FileDigest,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_sha256: Option<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    settings: BTreeMap<String, serde_json::Value>,
}

struct Ctx {
    config: Config,
    config_path: PathBuf,
    out: PathBuf,
    quiet: bool,
    outputs: Vec<String>,
    inputs: Vec<PathBuf>,
    settings: BTreeMap<String, serde_json::Value>,
}

impl Ctx {
    fn new(common: &Common, quiet: bool) -> CliResult<Self> {
        let mut config = Config::load(&common.config)
            .map_err(|e| Failure { code: EXIT_CONFIG, err: anyhow!("{}: {e}", common.config.display()) })?;
        if let Some(s) = common.seed {
            config.seed = s;
        }
        fs::create_dir_all(&common.out)
            .with_context(|| format!("creating {}", common.out.display()))
            .map_err(other)?;
        Ok(Ctx {
            config,
            config_path: common.config.clone(),
            out: common.out.clone(),
            quiet,
            outputs: Vec::new(),
            inputs: Vec::new(),
            settings: BTreeMap::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(other)?;
        let path = self.path(name);
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(other)
    }

    fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display())).map_err(other)
    }

    fn finish(self, command: &'static str) -> CliResult<()> {
        let truth_sha256 = match &self.config.truth {
            Some(t) => Some(sha256_hex(nio::params_to_toml(t).config()?.as_bytes())),
            None => None,
        };
        let digest = |p: &Path, label: String| -> CliResult<FileDigest> {
            Ok(FileDigest {
                path: label,
                sha256: sha256_file(p)?,
            })
        };
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            parallel: npbhmm::par::is_parallel(),
            seed: self.config.seed,
            config: digest(&self.config_path, self.config_path.display().to_string())?,
            truth_sha256,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p, p.display().to_string()))
                .collect::<CliResult<_>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|name| digest(&self.out.join(name), name.clone()))
                .collect::<CliResult<_>>()?,
            settings: self.settings,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(other)?;
        let path = self.out.join("manifest.json");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(other)
    }
}

fn simulate(mut ctx: Ctx) -> CliResult<()> {
    let truth = ctx.config.truth().config()?.clone();
    let n = ctx
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| Failure { code: EXIT_CONFIG, err: anyhow!("config has no [simulate] section") })?
        .n;
    let (x, y) = npbhmm::simulate_seeded(&truth, n, ctx.config.seed).run()?;
    nio::write_observations(&ctx.path("y.txt"), &y).map_err(other)?;
    nio::write_states(&ctx.path("x.txt"), &x).map_err(other)?;
    ctx.settings.insert("n".into(), n.into());
    ctx.say(format!("simulated {n} observations into {}", ctx.out.display()));
    ctx.finish("simulate")
}

fn fit(mut ctx: Ctx, data: &Path, chains: usize) -> CliResult<()> {
    if chains == 0 {
        return Err(Failure { code: EXIT_CONFIG, err: anyhow!("--chains must be at least 1") });
    }
    let gibbs = ctx.config.gibbs_config().config()?;
    let y = nio::read_observations(data).data()?;
    ctx.inputs.push(data.to_path_buf());
    let names: Vec<String> = (0..chains).map(|c| format!("samples_chain{c}.jsonl")).collect();
    let paths: Vec<PathBuf> = names.iter().map(|n| ctx.path(n)).collect();
    // one file per chain, flushed line by line so a failed chain leaves its prefix
    let results = npbhmm::par::map_indexed(chains, |c| -> npbhmm::Result<usize> {
        let mut w = JsonlWriter::create(&paths[c])?;
        let mut count = 0;
        run_chain_with(&y, &gibbs, c as u64, |s| {
            count += 1;
            w.write(&s)
        })?;
        Ok(count)
    });
    let mut counts = Vec::with_capacity(chains);
    for r in results {
        counts.push(r.run()?);
    }
    ctx.settings.insert("chains".into(), chains.into());
    ctx.settings.insert("n_obs".into(), y.len().into());
    ctx.say(format!("{} chains, {:?} samples each, written to {}", chains, counts, ctx.out.display()));
    ctx.finish("fit")
}

fn metric(mut ctx: Ctx, params: &Path) -> CliResult<()> {
    let truth = ctx.config.truth().config()?.clone();
    let specs = ctx.config.metric_specs().config()?;
    let theta = nio::read_params(params).data()?;
    ctx.inputs.push(params.to_path_buf());
    check_k(&theta, &truth)?;
    let records = evaluate_samples(&[theta], &truth, &specs, ctx.config.metrics.mc_samples, ctx.config.seed).run()?;
    nio::write_jsonl(&ctx.path("metrics.jsonl"), &records).map_err(other)?;
    for r in &records {
        ctx.say(format!("{:<18} {:>12.6} +- {:.2e} ({})", label(r), r.value, r.stderr, r.mode));
    }
    ctx.finish("metric")
}

fn label(r: &MetricRecord) -> String {
    match r.l {
        Some(l) => format!("{}@{l}", r.metric),
        None => r.metric.clone(),
    }
}

fn check_k(theta: &HmmParams, truth: &HmmParams) -> CliResult<()> {
    if theta.k() != truth.k() || theta.is_discrete() != truth.is_discrete() {
        return Err(Failure {
            code: EXIT_DATA,
            err: anyhow!(
                "schema mismatch: parameters have k={} ({}), truth has k={} ({})",
                theta.k(),
                family(theta),
                truth.k(),
                family(truth)
            ),
        });
    }
    Ok(())
}

fn family(t: &HmmParams) -> &'static str {
    if t.is_discrete() {
        "discrete"
    } else {
        "continuous"
    }
}

#[derive(Serialize)]
struct MassSummary {
    metric: String,
    l: Option<usize>,
    n_samples: usize,
    mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
}

fn report(mut ctx: Ctx, files: &[PathBuf]) -> CliResult<()> {
    let truth = ctx.config.truth().config()?.clone();
    let specs = ctx.config.metric_specs().config()?;
    let eps = ctx.config.experiment.as_ref().map(|e| e.epsilon).unwrap_or_default();
    let mut thetas = Vec::new();
    for f in files {
        let samples: Vec<PosteriorSample> =
            nio::read_jsonl(f).map_err(|e| Failure { code: EXIT_DATA, err: anyhow!("{}: {e}", f.display()) })?;
        for s in samples {
            check_k(&s.params, &truth)?;
            thetas.push(s.params);
        }
        ctx.inputs.push(f.clone());
    }
    if specs.is_empty() {
        ctx.say("no metrics configured");
        return ctx.finish("report");
    }
    let records = evaluate_samples(&thetas, &truth, &specs, ctx.config.metrics.mc_samples, ctx.config.seed).run()?;
    nio::write_jsonl(&ctx.path("records.jsonl"), &records).map_err(other)?;
    let summary: Vec<MassSummary> = specs
        .iter()
        .map(|spec| {
            let values: Vec<f64> = records.iter().filter(|r| r.metric == spec.name() && r.l == spec.length()).map(|r| r.value).collect();
            let epsilon = match spec.name().as_str() {
                "d_l" => Some(eps.d_l),
                "aligned_q" => Some(eps.q),
                "aligned_emission" => Some(eps.emission),
                _ => None,
            };
            MassSummary {
                metric: spec.name(),
                l: spec.length(),
                n_samples: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                epsilon,
                mass: epsilon.map(|e| mass_below(&values, e)),
            }
        })
        .collect();
    for s in &summary {
        let mass = match (s.epsilon, s.mass) {
            (Some(e), Some(m)) => format!("mass below {e}: {m:.3}"),
            _ => String::new(),
        };
        let name = s.l.map_or(s.metric.clone(), |l| format!("{}@{l}", s.metric));
        ctx.say(format!("{name:<18} mean {:>10.5}  {mass}", s.mean));
    }
    ctx.write_json("summary.json", &summary)?;
    ctx.finish("report")
}

fn experiment(mut ctx: Ctx) -> CliResult<()> {
    let config = ctx.config.experiment_config().config()?;
    let section = ctx.config.experiment_section().config()?.clone();
    let report = consistency_experiment(&config).run()?;
    nio::write_jsonl(&ctx.path("cells.jsonl"), &report.cells).map_err(other)?;
    ctx.write_json("report.json", &report)?;
    let table = summary_table(&report);
    ctx.write_text("summary.txt", &table)?;
    ctx.say(&table);
    if let Some(kl) = &section.kl {
        let r = kl_lemma_experiment(&config.truth, kl.epsilon, &kl.n_grid, kl.n_draws, ctx.config.seed).run()?;
        ctx.say(format!(
            "KL: {} of {} proposals kept, {} bound violations, {} violations of 3eps/q = {:.4}",
            r.accepted, r.proposals, r.bound_violations, r.threshold_violations, r.threshold
        ));
        ctx.write_json("kl.json", &r)?;
    }
    if let Some(ld) = &section.ldir {
        let spec = &ctx.config.prior().config()?.emissions;
        let r = ldir_validation(spec, ld.n_draws, &ld.partitions, ld.z, ctx.config.seed).config()?;
        let failed = r.checks.iter().filter(|c| !c.pass).count();
        ctx.say(format!("LDir: {} moment checks, {failed} outside {} SE", r.checks.len(), r.z));
        ctx.write_json("ldir.json", &r)?;
    }
    ctx.finish("experiment")
}

#[derive(Serialize)]
struct CheckRow {
    condition: &'static str,
    state: Option<usize>,
    verdict: Verdict,
    value: Option<f64>,
    note: String,
}

fn check_prior(mut ctx: Ctx) -> CliResult<()> {
    let truth = ctx.config.truth().config()?.clone();
    let prior = ctx.config.prior().config()?.clone();
    let check = ctx.config.check.clone();
    let k = truth.k();
    let mut rows = Vec::new();

    for (who, floor) in [("truth", truth.q_floor()), ("prior", prior.transitions.q_floor)] {
        let ok = floor * k as f64 <= 1.0;
        rows.push(CheckRow {
            condition: "floor",
            state: None,
            verdict: if ok { Verdict::Holds } else { Verdict::Fails },
            value: Some(floor),
            note: format!("{who} floor {floor} against 1/k = {:.4}", 1.0 / k as f64),
        });
    }

    let f_star: Option<Vec<PmfDescriptor>> = check.f_star.clone().or_else(|| {
        truth
            .emissions()
            .iter()
            .map(|e| e.as_discrete().map(PmfDescriptor::from))
            .collect()
    });
    let g0 = check.g0.clone().or_else(|| match &prior.emissions.base {
        BaseMeasure::Discrete(b) => Some(PmfDescriptor::Finite { pmf: b.masses() }),
        _ => None,
    });
    match (&f_star, &g0) {
        (Some(fs), Some(g)) => {
            for (i, f) in fs.iter().enumerate() {
                let r = check_e1(f, g, check.tail_budget);
                rows.push(CheckRow {
                    condition: "E1",
                    state: Some(i),
                    verdict: r.verdict,
                    value: r.value,
                    note: tail_note(&r.partial_sums),
                });
            }
        }
        _ => rows.push(skipped("E1", "needs a discrete truth and a discrete base")),
    }
    match &f_star {
        Some(fs) => {
            for (i, f) in fs.iter().enumerate() {
                let r = check_t(f, check.tail_budget);
                rows.push(CheckRow {
                    condition: "T",
                    state: Some(i),
                    verdict: r.verdict,
                    value: r.value,
                    note: tail_note(&r.partial_sums),
                });
            }
        }
        None => rows.push(skipped("T", "needs a discrete truth")),
    }
    let law = check.scale_law.clone().or_else(|| prior.emissions.gaussian_base().map(|b| b.scale_law()));
    match law {
        Some(law) => {
            let r = check_b1_base_integral(&law);
            rows.push(CheckRow {
                condition: "eqrk",
                state: None,
                verdict: r.verdict,
                value: r.value,
                note: "integral of 1/sigma under the base".into(),
            });
        }
        None => rows.push(skipped("eqrk", "needs a location-scale base")),
    }

    for r in &rows {
        let state = r.state.map_or("-".to_string(), |s| s.to_string());
        let value = r.value.map_or("-".to_string(), |v| format!("{v:.6}"));
        ctx.say(format!("{:<6} {:>5} {:<13} {:>12}  {}", r.condition, state, r.verdict.to_string(), value, r.note));
    }
    ctx.write_json("check.json", &rows)?;
    ctx.finish("check-prior")
}

fn skipped(condition: &'static str, why: &str) -> CheckRow {
    CheckRow {
        condition,
        state: None,
        verdict: Verdict::Inconclusive,
        value: None,
        note: format!("not applicable: {why}"),
    }
}

fn tail_note(partial: &[(usize, f64)]) -> String {
    match partial.last() {
        Some((n, s)) => format!("partial sum {s:.6} after {n} terms"),
        None => "closed form".into(),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Simulate { common } => simulate(Ctx::new(common, quiet)?),
        Command::Fit { common, data, chains } => fit(Ctx::new(common, quiet)?, data, *chains),
        Command::Metric { common, params } => metric(Ctx::new(common, quiet)?, params),
        Command::Experiment { common } => experiment(Ctx::new(common, quiet)?),
        Command::CheckPrior { common } => check_prior(Ctx::new(common, quiet)?),
        Command::Report { common, samples } => report(Ctx::new(common, quiet)?, samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
