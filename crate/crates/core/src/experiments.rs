//! Experiment drivers: posterior concentration over a grid of sample sizes,
//! smoothing consistency, instance checks of the KL-rate bound, moment
//! checks of the Gamma representation of the discrete DP, and shift recovery
//! for translated emissions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionModel, EvalMode, Obs};
use crate::error::{Error, Result};
use crate::hmm::{simulate, smoothing_exact, stationary_distribution, HmmParams, TransitionMatrix};
use crate::inference::{run_chain, GibbsConfig};
use crate::metrics::{align_label_switching, d_l_pseudometric, emission_kl_term, kl_rate_exact_discrete, kl_rate_upper_bound, relabel};
use crate::par;
use crate::priors::{sample_dp_discrete_gamma, DpSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::Moments;

pub const TREND_SLACK: f64 = 0.05;
pub const FINAL_MASS: f64 = 0.8;
pub const DEFAULT_MC_SAMPLES: usize = 20_000;

/// Neighborhood radii, one per tracked quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilons {
    pub d_l: f64,
    pub q: f64,
    pub emission: f64,
    pub smoothing: f64,
}

impl Default for Epsilons {
    fn default() -> Self {
        Epsilons {
            d_l: 0.2,
            q: 0.15,
            emission: 0.15,
            smoothing: 0.15,
        }
    }
}

/// Which smoothing laws to compare: the block `X_{1:m}` and the marginals
/// at the listed (0-based) times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub m: usize,
    #[serde(default)]
    pub j_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub truth: HmmParams,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub epsilon: Epsilons,
    pub gibbs: GibbsConfig,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub smoothing: Option<SmoothingSpec>,
    /// Draws per Monte Carlo distance for continuous emissions.
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    pub seed: u64,
}

fn default_l() -> usize {
    crate::metrics::DEFAULT_BLOCK_LEN
}

fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truth.q_floor() > 0.0) {
            return Err(Error::invalid("the truth needs a positive floor"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::invalid("n_grid must be a strictly increasing list of positive sizes"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("at least one replication per grid point"));
        }
        let e = self.epsilon;
        if [e.d_l, e.q, e.emission, e.smoothing].iter().any(|&x| !(x > 0.0)) {
            return Err(Error::invalid("neighborhood radii must be positive"));
        }
        if self.l == 0 {
            return Err(Error::invalid("block length must be at least 1"));
        }
        if self.gibbs.prior.k() != self.truth.k() {
            return Err(Error::DimensionMismatch {
                expected: self.truth.k(),
                found: self.gibbs.prior.k(),
            });
        }
        if self.gibbs.prior.is_discrete() != self.truth.is_discrete() {
            return Err(Error::DomainMismatch("prior and truth use different emission families".into()));
        }
        if let Some(s) = &self.smoothing {
            if !self.truth.is_discrete() {
                return Err(Error::invalid("smoothing experiment needs discrete emissions"));
            }
            if s.m == 0 || self.truth.k().pow(s.m as u32) > 64 {
                return Err(Error::invalid("smoothing block needs 1 <= k^m <= 64"));
            }
            if s.m > self.n_grid[0] || s.j_indices.iter().any(|&j| j >= self.n_grid[0]) {
                return Err(Error::invalid("smoothing indices past the smallest n"));
            }
        }
        self.gibbs.validate()
    }
}

/// Per-sample distances to the truth within one grid cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleValues {
    pub d_l: Vec<f64>,
    pub q: Vec<f64>,
    pub emission: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub smoothing: Vec<f64>,
}

/// Fraction of `values` strictly below `eps`.
pub fn mass_below(values: &[f64], eps: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|&&v| v < eps).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Masses {
    pub d_l: f64,
    pub q: f64,
    pub emission: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
}

impl SampleValues {
    pub fn masses(&self, eps: &Epsilons) -> Masses {
        Masses {
            d_l: mass_below(&self.d_l, eps.d_l),
            q: mass_below(&self.q, eps.q),
            emission: mass_below(&self.emission, eps.emission),
            smoothing: (!self.smoothing.is_empty()).then(|| mass_below(&self.smoothing, eps.smoothing)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Masses>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub values: SampleValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackVerdict {
    pub metric: String,
    pub epsilon: f64,
    /// Mean mass across successful replications, one entry per grid size.
    pub masses: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_grid: Vec<usize>,
    pub cells: Vec<CellResult>,
    pub tracks: Vec<TrackVerdict>,
    pub pass: bool,
}

/// Non-decreasing up to `slack` and ending at or above `final_min`.
pub fn trend_passes(masses: &[f64], slack: f64, final_min: f64) -> bool {
    !masses.is_empty()
        && masses.iter().all(|m| m.is_finite())
        && masses.windows(2).all(|w| w[1] >= w[0] - slack)
        && *masses.last().unwrap() >= final_min
}

/// `max_a |P^theta(block = a | y) - P^theta*(block = a | y)|` over the
/// `X_{1:m}` block and the marginals at `j_indices`. Both laws are started
/// from the stationary law of their own transition matrix.
pub fn smoothing_deviation(theta: &HmmParams, truth: &HmmParams, y: &[Obs], spec: &SmoothingSpec) -> Result<f64> {
    let a = smoothing_exact(&theta.with_stationary_start()?, y, spec.m)?;
    let b = smoothing_exact(&truth.with_stationary_start()?, y, spec.m)?;
    let mut dev: f64 = a
        .block()
        .iter()
        .zip(b.block())
        .map(|(x, z)| (x - z).abs())
        .fold(0.0, f64::max);
    for &j in &spec.j_indices {
        for (x, z) in a.marginal(j).iter().zip(b.marginal(j)) {
            dev = dev.max((x - z).abs());
        }
    }
    Ok(dev)
}

fn run_cell(config: &ExperimentConfig, n: usize, replication: usize, seed: u64) -> Result<SampleValues> {
    let truth = &config.truth;
    let sim_truth = truth.with_stationary_start()?;
    let (_, y) = simulate(&sim_truth, n, &mut rng_from_seed(derive_seed(seed, 0)))?;
    let mut gibbs = config.gibbs.clone();
    gibbs.seed = derive_seed(seed, 1);
    let samples = run_chain(&y, &gibbs, replication as u64)?;
    let discrete = truth.is_discrete();
    let per_sample = par::map_indexed(samples.len(), |s| -> Result<[f64; 4]> {
        let theta = &samples[s].params;
        let mode = if discrete {
            EvalMode::Exact
        } else {
            EvalMode::MonteCarlo {
                n_samples: config.mc_samples,
                seed: derive_seed(seed, 2 + s as u64),
            }
        };
        let d = d_l_pseudometric(theta, truth, config.l, mode)?.value;
        let al = align_label_switching(theta, truth, mode)?;
        let sm = match &config.smoothing {
            Some(spec) => smoothing_deviation(&relabel(theta, &al.sigma)?, truth, &y, spec)?,
            None => f64::NAN,
        };
        Ok([d, al.q_distance, al.emission_max(), sm])
    });
    let mut v = SampleValues::default();
    for r in per_sample {
        let [d, q, e, sm] = r?;
        v.d_l.push(d);
        v.q.push(q);
        v.emission.push(e);
        if config.smoothing.is_some() {
            v.smoothing.push(sm);
        }
    }
    Ok(v)
}

fn build_report(config: &ExperimentConfig, cells: Vec<CellResult>) -> ExperimentReport {
    let eps = config.epsilon;
    let mut tracks = Vec::new();
    let mut push = |name: &str, epsilon: f64, pick: &dyn Fn(&Masses) -> Option<f64>| {
        let masses: Vec<f64> = config
            .n_grid
            .iter()
            .map(|&n| {
                let ms: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.n == n)
                    .filter_map(|c| c.masses.as_ref().and_then(pick))
                    .collect();
                if ms.is_empty() {
                    f64::NAN
                } else {
                    ms.iter().sum::<f64>() / ms.len() as f64
                }
            })
            .collect();
        let pass = trend_passes(&masses, TREND_SLACK, FINAL_MASS);
        tracks.push(TrackVerdict {
            metric: name.to_string(),
            epsilon,
            masses,
            pass,
        });
    };
    push(&format!("d_{}", config.l), eps.d_l, &|m| Some(m.d_l));
    push("aligned_q", eps.q, &|m| Some(m.q));
    push("aligned_emission", eps.emission, &|m| Some(m.emission));
    if config.smoothing.is_some() {
        push("smoothing", eps.smoothing, &|m| m.smoothing);
    }
    let pass = tracks.iter().all(|t| t.pass);
    ExperimentReport {
        n_grid: config.n_grid.clone(),
        cells,
        tracks,
        pass,
    }
}

/// Simulates data from the truth for every `(n, replication)` cell, runs the
/// sampler and records the posterior mass of each neighborhood. Cells run
/// concurrently; a failing cell is recorded and left out of the averages.
pub fn consistency_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let reps = config.replications;
    let cells = par::map_indexed(config.n_grid.len() * reps, |c| {
        let (ni, r) = (c / reps, c % reps);
        let n = config.n_grid[ni];
        let seed = derive_seed(config.seed, c as u64);
        match run_cell(config, n, r, seed) {
            Ok(values) => CellResult {
                n,
                replication: r,
                seed,
                n_samples: values.d_l.len(),
                masses: Some(values.masses(&config.epsilon)),
                error: None,
                values,
            },
            Err(e) => CellResult {
                n,
                replication: r,
                seed,
                n_samples: 0,
                masses: None,
                error: Some(e.to_string()),
                values: SampleValues::default(),
            },
        }
    });
    Ok(build_report(config, cells))
}

/// [`consistency_experiment`] with smoothing deviations tracked for the
/// given block length and marginal times.
pub fn smoothing_consistency_experiment(
    config: &ExperimentConfig,
    j_indices: &[usize],
    m: usize,
) -> Result<ExperimentReport> {
    let mut c = config.clone();
    c.smoothing = Some(SmoothingSpec {
        m,
        j_indices: j_indices.to_vec(),
    });
    consistency_experiment(&c)
}

/// Plain-text table of the report.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<18} {:>6}", "metric", "eps"));
    for n in &report.n_grid {
        s.push_str(&format!(" {:>8}", format!("n={n}")));
    }
    s.push_str("  verdict\n");
    for t in &report.tracks {
        s.push_str(&format!("{:<18} {:>6.3}", t.metric, t.epsilon));
        for m in &t.masses {
            s.push_str(&format!(" {m:>8.3}"));
        }
        s.push_str(if t.pass { "  PASS\n" } else { "  FAIL\n" });
    }
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        s.push_str(&format!("{failed} cell(s) failed\n"));
    }
    s
}

// ---------------------------------------------------------------------------
// KL rate on a realized neighborhood
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub draw: usize,
    pub n: usize,
    pub exact: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlLemmaReport {
    pub epsilon: f64,
    pub q_floor: f64,
    /// `3 eps / q`.
    pub threshold: f64,
    pub proposals: usize,
    pub accepted: usize,
    pub rows: Vec<KlRow>,
    pub bound_violations: usize,
    pub threshold_violations: usize,
}

/// Membership in the realized neighborhood: `Q` within `eps` of `Q*` in
/// max-norm and inside the floor, emission term below `eps`, and every
/// symbol charged by the truth charged by some `f_j`.
pub fn in_theta_eps(theta: &HmmParams, theta_star: &HmmParams, eps: f64) -> Result<bool> {
    let q = theta_star.q_floor();
    if theta.transitions().rows().iter().flatten().any(|&x| x < q) {
        return Ok(false);
    }
    if theta.transitions().sup_distance(theta_star.transitions()) >= eps {
        return Ok(false);
    }
    let support = theta.support_len().max(theta_star.support_len());
    for s in 0..support {
        let y = Obs::Symbol(s);
        let star: f64 = theta_star.emissions().iter().map(|e| e.density(y)).sum::<Result<f64>>()?;
        let mine: f64 = theta.emissions().iter().map(|e| e.density(y)).sum::<Result<f64>>()?;
        if star > 0.0 && mine <= 0.0 {
            return Ok(false);
        }
    }
    Ok(emission_kl_term(theta.emissions(), theta_star.emissions(), EvalMode::Exact)?.value < eps)
}

/// Draws from the flat prior restricted to the realized neighborhood, by
/// uniform proposals on a box around the truth followed by the membership
/// check. Transition coordinates move by at most `eps`; emission
/// coordinates by at most `eps * min f*`.
fn propose<R: Rng + ?Sized>(theta_star: &HmmParams, eps: f64, rng: &mut R) -> Result<Option<HmmParams>> {
    let k = theta_star.k();
    let q_star = theta_star.transitions();
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let mut row: Vec<f64> = (0..k - 1).map(|j| q_star.get(i, j) + rng.random_range(-eps..eps)).collect();
        let last = 1.0 - row.iter().sum::<f64>();
        row.push(last);
        if row.iter().any(|&x| x < q_star.q_floor()) {
            return Ok(None);
        }
        rows.push(row);
    }
    let q = TransitionMatrix::new(rows, q_star.q_floor())?;
    let mut emissions = Vec::with_capacity(k);
    for e in theta_star.emissions() {
        let d = e
            .as_discrete()
            .ok_or_else(|| Error::invalid("the KL experiment needs discrete emissions"))?;
        let pmf = d.pmf();
        let positive: Vec<usize> = (0..pmf.len()).filter(|&s| pmf[s] > 0.0).collect();
        let min_pos = positive.iter().map(|&s| pmf[s]).fold(1.0, f64::min);
        let delta = eps * min_pos;
        let mut out = pmf.to_vec();
        let Some((&last, free)) = positive.split_last() else {
            return Err(Error::invalid("empty emission support"));
        };
        for &s in free {
            out[s] += rng.random_range(-delta..delta);
        }
        out[last] = 0.0;
        out[last] = 1.0 - out.iter().sum::<f64>();
        if out.iter().any(|&x| x < 0.0) {
            return Ok(None);
        }
        emissions.push(EmissionModel::discrete(out)?);
    }
    let mu_star = stationary_distribution(q_star)?.probs;
    Ok(Some(HmmParams::new(q, mu_star, emissions)?))
}

/// Exact KL rate against the three-term bound and against `3 eps / q` for
/// `n_draws` parameters from the realized neighborhood, each started from
/// `mu*`.
pub fn kl_lemma_experiment(
    theta_star: &HmmParams,
    epsilon: f64,
    n_grid: &[usize],
    n_draws: usize,
    seed: u64,
) -> Result<KlLemmaReport> {
    let q_floor = theta_star.q_floor();
    if !(q_floor > 0.0) || !theta_star.is_discrete() {
        return Err(Error::invalid("the KL experiment needs a discrete truth with a positive floor"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon must lie in (0, 1)"));
    }
    let truth = theta_star.with_stationary_start()?;
    let budget = n_draws.max(1) * 1000;
    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(n_draws);
    let mut proposals = 0;
    while draws.len() < n_draws && proposals < budget {
        proposals += 1;
        if let Some(theta) = propose(&truth, epsilon, &mut rng)? {
            if in_theta_eps(&theta, &truth, epsilon)? {
                draws.push(theta);
            }
        }
    }
    if draws.len() < n_draws {
        return Err(Error::SamplerExhausted(format!(
            "accepted {} of {n_draws} neighborhood draws in {proposals} proposals",
            draws.len()
        )));
    }
    let threshold = 3.0 * epsilon / q_floor;
    let rows: Vec<Vec<KlRow>> = par::map_indexed(draws.len(), |d| {
        n_grid
            .iter()
            .map(|&n| {
                let exact = kl_rate_exact_discrete(&draws[d], &truth, n)?;
                let bound = kl_rate_upper_bound(&draws[d], &truth, n, Some(epsilon), EvalMode::Exact)?.total;
                Ok(KlRow { draw: d, n, exact, bound })
            })
            .collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let rows: Vec<KlRow> = rows.into_iter().flatten().collect();
    let bound_violations = rows.iter().filter(|r| !(r.exact <= r.bound)).count();
    let threshold_violations = rows.iter().filter(|r| !(r.exact <= threshold)).count();
    Ok(KlLemmaReport {
        epsilon,
        q_floor,
        threshold,
        proposals,
        accepted: draws.len(),
        rows,
        bound_violations,
        threshold_violations,
    })
}

// ---------------------------------------------------------------------------
// Gamma representation of the discrete DP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    pub std_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdirReport {
    pub n_draws: usize,
    pub z: f64,
    pub checks: Vec<MomentCheck>,
    /// Largest `|sum of block masses - 1|` over draws and partitions.
    pub max_sum_error: f64,
    pub pass: bool,
}

fn check(name: String, expected: f64, observed: f64, std_err: f64, z: f64) -> MomentCheck {
    MomentCheck {
        pass: (observed - expected).abs() <= z * std_err,
        name,
        expected,
        observed,
        std_err,
    }
}

/// Sample mean of `x` against `mean`, and sample variance against `var`
/// with the delta-method standard error from the fourth central moment.
fn mean_var_checks(label: &str, x: &[f64], mean: f64, var: f64, z: f64) -> [MomentCheck; 2] {
    let n = x.len() as f64;
    let m: Moments = x.iter().copied().collect();
    let xbar = m.mean();
    let s2 = m.variance();
    let m4 = x.iter().map(|v| (v - xbar).powi(4)).sum::<f64>() / n;
    let var_se = ((m4 - s2 * s2).max(0.0) / n).sqrt();
    [
        check(format!("{label} mean"), mean, xbar, (s2 / n).sqrt(), z),
        check(format!("{label} variance"), var, s2, var_se, z),
    ]
}

/// Draws `n_draws` pmfs from the Gamma representation and compares block
/// masses over each partition with the Dirichlet moments, and the
/// normalizer with the `Gamma(alpha, 1)` moments, at `z` standard errors.
/// Blocks are lists of symbols of the truncated support (tail symbol last).
pub fn ldir_validation(
    spec: &DpSpec,
    n_draws: usize,
    partitions: &[Vec<Vec<usize>>],
    z: f64,
    seed: u64,
) -> Result<LdirReport> {
    let base = spec
        .discrete_base()
        .ok_or_else(|| Error::invalid("the Gamma representation needs a discrete base"))?;
    let masses = base.masses();
    for p in partitions {
        let mut seen = vec![false; masses.len()];
        for &s in p.iter().flatten() {
            if s >= masses.len() || std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid("partition blocks must be disjoint symbols of the support"));
            }
        }
        if seen.iter().any(|&b| !b) {
            return Err(Error::invalid("partition does not cover the truncated support"));
        }
    }
    if n_draws < 2 {
        return Err(Error::invalid("need at least two draws"));
    }
    let chunks = par::chunks(n_draws);
    let drawn = par::map_indexed(chunks.len(), |c| -> Result<Vec<(Vec<f64>, f64)>> {
        let (lo, hi) = chunks[c];
        let mut rng = crate::rng::child_rng(seed, c as u64);
        (lo..hi)
            .map(|_| sample_dp_discrete_gamma(spec, &mut rng).map(|d| (d.emission.pmf().to_vec(), d.normalizer)))
            .collect()
    });
    let mut draws = Vec::with_capacity(n_draws);
    for d in drawn {
        draws.extend(d?);
    }
    let alpha = spec.alpha;
    let mut checks = Vec::new();
    let mut max_sum_error: f64 = 0.0;
    for (pi, part) in partitions.iter().enumerate() {
        let a: Vec<f64> = part.iter().map(|b| alpha * b.iter().map(|&s| masses[s]).sum::<f64>()).collect();
        let blocks: Vec<Vec<f64>> = part
            .iter()
            .map(|b| draws.iter().map(|(pmf, _)| b.iter().map(|&s| pmf[s]).sum()).collect())
            .collect();
        for d in 0..draws.len() {
            let s: f64 = blocks.iter().map(|b| b[d]).sum();
            max_sum_error = max_sum_error.max((s - 1.0).abs());
        }
        let denom = alpha * alpha * (alpha + 1.0);
        for (bi, x) in blocks.iter().enumerate() {
            let mean = a[bi] / alpha;
            let var = a[bi] * (alpha - a[bi]) / denom;
            checks.extend(mean_var_checks(&format!("partition {pi} block {bi}"), x, mean, var, z));
        }
        for bi in 0..blocks.len() {
            for bj in bi + 1..blocks.len() {
                let (x, w) = (&blocks[bi], &blocks[bj]);
                let n = x.len() as f64;
                let (mx, mw) = (x.iter().sum::<f64>() / n, w.iter().sum::<f64>() / n);
                let prods: Moments = x.iter().zip(w).map(|(u, v)| (u - mx) * (v - mw)).collect();
                let cov = prods.sum / (n - 1.0);
                checks.push(check(
                    format!("partition {pi} covariance {bi},{bj}"),
                    -a[bi] * a[bj] / denom,
                    cov,
                    (prods.variance() / n).sqrt(),
                    z,
                ));
            }
        }
    }
    let norms: Vec<f64> = draws.iter().map(|(_, s)| *s).collect();
    checks.extend(mean_var_checks("normalizer", &norms, alpha, alpha, z));
    let pass = checks.iter().all(|c| c.pass) && max_sum_error <= 1e-12;
    Ok(LdirReport {
        n_draws,
        z,
        checks,
        max_sum_error,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Translated emissions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub n: usize,
    pub true_shifts: Vec<f64>,
    /// Posterior mean of each aligned state mean minus the base mean.
    pub posterior_shifts: Vec<f64>,
    /// Posterior mean of `max_i |m_hat_sigma(i) - m_i|`.
    pub mean_shift_error: f64,
    /// Posterior mean of the aligned Monte Carlo emission distance.
    pub mean_emission_l1: f64,
    pub n_samples: usize,
}

/// Fits per-state mixtures to data from a translated-emission truth and
/// measures how well the shifts and emission laws are recovered after
/// alignment.
pub fn translated_recovery(
    truth: &HmmParams,
    n: usize,
    gibbs: &GibbsConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<TranslationReport> {
    let mut shifts = Vec::with_capacity(truth.k());
    let mut base_mean = None;
    for e in truth.emissions() {
        match e {
            EmissionModel::Translated(t) => {
                shifts.push(t.shift);
                base_mean.get_or_insert(t.base.mean());
            }
            _ => return Err(Error::invalid("translated recovery needs translated emissions")),
        }
    }
    let base_mean = base_mean.unwrap_or(0.0);
    let (_, y) = simulate(&truth.with_stationary_start()?, n, &mut rng_from_seed(derive_seed(seed, 0)))?;
    let mut g = gibbs.clone();
    g.seed = derive_seed(seed, 1);
    let samples = run_chain(&y, &g, 0)?;
    let k = truth.k();
    let per = par::map_indexed(samples.len(), |s| -> Result<(Vec<f64>, f64, f64)> {
        let theta = &samples[s].params;
        let mode = EvalMode::MonteCarlo {
            n_samples: mc_samples,
            seed: derive_seed(seed, 2 + s as u64),
        };
        let al = align_label_switching(theta, truth, mode)?;
        let means: Vec<f64> = (0..k)
            .map(|i| match &theta.emissions()[al.sigma[i]] {
                EmissionModel::GaussianMixture(m) => m.mean() - base_mean,
                EmissionModel::Translated(t) => t.shift + t.base.mean() - base_mean,
                EmissionModel::Discrete(_) => f64::NAN,
            })
            .collect();
        let err = means.iter().zip(&shifts).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((means, err, al.emission_max()))
    });
    let mut posterior_shifts = vec![0.0; k];
    let mut err = Moments::default();
    let mut l1 = Moments::default();
    let count = per.len();
    for r in per {
        let (m, e, d) = r?;
        for (acc, v) in posterior_shifts.iter_mut().zip(m) {
            *acc += v / count as f64;
        }
        err.push(e);
        l1.push(d);
    }
    Ok(TranslationReport {
        n,
        true_shifts: shifts,
        posterior_shifts,
        mean_shift_error: err.mean(),
        mean_emission_l1: l1.mean(),
        n_samples: count,
    })
}
