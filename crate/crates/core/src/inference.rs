//! Gibbs sampler for the posterior over `(Q, f_1..f_k)` given one observed
//! sequence. Hidden states are drawn by forward filtering / backward
//! sampling; transition rows and emissions use their conjugate (or
//! floor-truncated conjugate) updates. The initial law `mu` stays fixed.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::emissions::{sample_categorical, EmissionModel, GaussianAtom, GaussianMixtureEmission, Obs};
use crate::error::{Error, Result};
use crate::hmm::{ForwardPass, HmmParams, TransitionMatrix};
use crate::priors::{
    sample_dp_discrete_gamma_with, sample_dpm_gaussian, sample_stick, sample_truncated_dirichlet_row, DpSpec,
    DrawPath, TruncatedDirichletSpec,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_BURN_IN: usize = 2000;
pub const DEFAULT_THIN: usize = 5;

/// Prior on `theta`: i.i.d. truncated Dirichlet rows and i.i.d. DP emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub transitions: TruncatedDirichletSpec,
    pub emissions: DpSpec,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.transitions.validate()?;
        self.emissions.validate()
    }

    pub fn k(&self) -> usize {
        self.transitions.k()
    }

    pub fn is_discrete(&self) -> bool {
        self.emissions.discrete_base().is_some()
    }

    /// One draw of `(Q, f)` with initial law `mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Result<HmmParams> {
        self.validate()?;
        let k = self.k();
        let q = gibbs_update_transitions(&vec![vec![0; k]; k], &self.transitions, rng)?.0;
        let emissions = if self.is_discrete() {
            gibbs_update_emissions_discrete(&vec![Vec::new(); k], &self.emissions, rng)?
        } else {
            (0..k)
                .map(|_| sample_dpm_gaussian(&self.emissions, rng).map(EmissionModel::from))
                .collect::<Result<_>>()?
        };
        HmmParams::new(q, mu.to_vec(), emissions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_iter: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    pub prior: PriorSpec,
    /// Fixed initial law; uniform when absent.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_thin() -> usize {
    DEFAULT_THIN
}

impl GibbsConfig {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize, seed: u64, prior: PriorSpec) -> Result<Self> {
        let c = GibbsConfig {
            n_iter,
            burn_in,
            thin,
            seed,
            prior,
            mu: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning interval must be at least 1"));
        }
        if let Some(mu) = &self.mu {
            if mu.len() != self.prior.k() {
                return Err(Error::DimensionMismatch {
                    expected: self.prior.k(),
                    found: mu.len(),
                });
            }
        }
        self.prior.validate()
    }

    pub fn initial_law(&self) -> Vec<f64> {
        self.mu
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.prior.k() as f64; self.prior.k()])
    }

    /// Number of samples a chain emits.
    pub fn n_samples(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn emits(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub chain_id: u64,
    pub iter: usize,
    pub params: HmmParams,
    pub states: Vec<usize>,
    /// Transition rows drawn through the approximate fallback at this step.
    #[serde(default)]
    pub fallback_rows: usize,
}

/// Exact draw of `X_1..X_n` given `Y_1..Y_n`.
pub fn ffbs_sample_states<R: Rng + ?Sized>(theta: &HmmParams, y: &[Obs], rng: &mut R) -> Result<Vec<usize>> {
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let dens = theta.emission_table(y)?;
    let fwd = ForwardPass::run(theta, theta.mu(), &dens);
    if fwd.zero {
        return Err(Error::ZeroLikelihood);
    }
    let k = theta.k();
    let n = y.len();
    let q = theta.transitions();
    let mut states = vec![0; n];
    states[n - 1] = sample_categorical(fwd.filtered_at(n - 1), rng);
    let mut w = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let next = states[t + 1];
        for (i, (wi, &a)) in w.iter_mut().zip(fwd.filtered_at(t)).enumerate() {
            *wi = a * q.get(i, next);
        }
        states[t] = sample_categorical(&w, rng);
    }
    Ok(states)
}

/// `n_ij` = number of `i -> j` moves along the path.
pub fn transition_counts(states: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut c = vec![vec![0u64; k]; k];
    for w in states.windows(2) {
        c[w[0]][w[1]] += 1;
    }
    c
}

/// Rows drawn independently from the truncated Dirichlet with concentration
/// `alpha + counts_i`. Also returns how many rows used the fallback path.
pub fn gibbs_update_transitions<R: Rng + ?Sized>(
    counts: &[Vec<u64>],
    spec: &TruncatedDirichletSpec,
    rng: &mut R,
) -> Result<(TransitionMatrix, usize)> {
    let k = spec.k();
    if counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: counts.len(),
        });
    }
    let mut rows = Vec::with_capacity(k);
    let mut fallbacks = 0;
    for c in counts {
        let draw = sample_truncated_dirichlet_row(&spec.posterior(c)?, rng)?;
        if draw.path == DrawPath::AffineFallback {
            fallbacks += 1;
        }
        rows.push(draw.row);
    }
    Ok((TransitionMatrix::new(rows, spec.q_floor)?, fallbacks))
}

/// `f_i ~ DP(alpha G_0 + sum_l counts_i(l) delta_l)` on the truncated
/// support, one draw per state. `counts[i]` may be shorter than the support.
pub fn gibbs_update_emissions_discrete<R: Rng + ?Sized>(
    counts: &[Vec<u64>],
    spec: &DpSpec,
    rng: &mut R,
) -> Result<Vec<EmissionModel>> {
    counts
        .iter()
        .map(|c| {
            sample_dp_discrete_gamma_with(spec, Some(c), rng).map(|d| EmissionModel::Discrete(d.emission))
        })
        .collect()
}

/// Symbol counts per state.
pub fn symbol_counts(states: &[usize], y: &[Obs], k: usize, support: usize) -> Result<Vec<Vec<u64>>> {
    let mut c = vec![vec![0u64; support]; k];
    for (&x, &obs) in states.iter().zip(y) {
        match obs {
            Obs::Symbol(s) if s < support => c[x][s] += 1,
            Obs::Symbol(s) => {
                return Err(Error::DomainMismatch(format!(
                    "symbol {s} outside the truncated support of size {support}"
                )))
            }
            Obs::Real(v) => {
                return Err(Error::DomainMismatch(format!(
                    "real observation {v} under a discrete prior"
                )))
            }
        }
    }
    Ok(c)
}

/// One block-Gibbs sweep of a truncated stick-breaking mixture given the
/// observations currently assigned to it: allocations, sticks, then atoms
/// from their normal-inverse-gamma posteriors.
fn dpm_sweep<R: Rng + ?Sized>(
    current: &GaussianMixtureEmission,
    ys: &[f64],
    spec: &DpSpec,
    rng: &mut R,
) -> Result<GaussianMixtureEmission> {
    let base = spec
        .gaussian_base()
        .ok_or_else(|| Error::invalid("mixture update needs a normal-inverse-gamma base"))?;
    let atoms = current.atoms();
    let depth = atoms.len();
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut w = vec![0.0; depth];
    for &y in ys {
        for (wr, a) in w.iter_mut().zip(atoms) {
            let u = (y - a.loc) / a.scale;
            *wr = a.weight * (-0.5 * u * u).exp() / a.scale;
        }
        if w.iter().sum::<f64>() <= 0.0 {
            // far out in every tail: compare on the log scale instead
            let lw: Vec<f64> = atoms
                .iter()
                .map(|a| a.weight.ln() - 0.5 * ((y - a.loc) / a.scale).powi(2) - a.scale.ln())
                .collect();
            let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (wr, l) in w.iter_mut().zip(&lw) {
                *wr = (l - m).exp();
            }
        }
        members[sample_categorical(&w, rng)].push(y);
    }
    let n_r: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut weights = Vec::with_capacity(depth);
    let mut rest = 1.0;
    let mut after: usize = n_r.iter().sum();
    for &nr in n_r.iter().take(depth - 1) {
        after -= nr;
        let v = if nr == 0 && after == 0 {
            sample_stick(spec.alpha, rng)
        } else {
            Beta::new(1.0 + nr as f64, spec.alpha + after as f64)
                .map_err(|e| Error::invalid(format!("stick update: {e}")))?
                .sample(rng)
        };
        weights.push(rest * v);
        rest *= 1.0 - v;
    }
    let used: f64 = weights.iter().sum();
    weights.push((1.0 - used).max(0.0));
    let new_atoms = weights
        .into_iter()
        .zip(&members)
        .map(|(weight, ys_r)| {
            let (loc, scale) = base.posterior(ys_r).sample(rng);
            GaussianAtom { weight, loc, scale }
        })
        .collect();
    GaussianMixtureEmission::new(new_atoms)
}

/// Block-Gibbs update of each state's mixture. `assigned[i]` holds the
/// observations currently allocated to state `i`; `current` supplies the
/// mixtures being updated (fresh prior draws when `None`).
pub fn gibbs_update_emissions_dpm<R: Rng + ?Sized>(
    assigned: &[Vec<f64>],
    spec: &DpSpec,
    current: Option<&[GaussianMixtureEmission]>,
    rng: &mut R,
) -> Result<Vec<GaussianMixtureEmission>> {
    spec.validate()?;
    if let Some(cur) = current {
        if cur.len() != assigned.len() {
            return Err(Error::DimensionMismatch {
                expected: assigned.len(),
                found: cur.len(),
            });
        }
    }
    assigned
        .iter()
        .enumerate()
        .map(|(i, ys)| {
            let start = match current {
                Some(cur) if cur[i].atoms().len() == spec.truncation => cur[i].clone(),
                _ => sample_dpm_gaussian(spec, rng)?,
            };
            dpm_sweep(&start, ys, spec, rng)
        })
        .collect()
}

fn mixtures_of(theta: &HmmParams) -> Option<Vec<GaussianMixtureEmission>> {
    theta
        .emissions()
        .iter()
        .map(|e| match e {
            EmissionModel::GaussianMixture(g) => Some(g.clone()),
            _ => None,
        })
        .collect()
}

/// Current state of a chain.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub params: HmmParams,
    pub states: Vec<usize>,
    pub fallback_rows: usize,
}

/// One full sweep: states, transitions, emissions.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    current: &HmmParams,
    y: &[Obs],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<GibbsState> {
    let k = prior.k();
    let states = ffbs_sample_states(current, y, rng)?;
    let (q, fallback_rows) = gibbs_update_transitions(&transition_counts(&states, k), &prior.transitions, rng)?;
    let emissions = if let Some(base) = prior.emissions.discrete_base() {
        let counts = symbol_counts(&states, y, k, base.draw_len())?;
        gibbs_update_emissions_discrete(&counts, &prior.emissions, rng)?
    } else {
        let mut assigned = vec![Vec::new(); k];
        for (&x, &obs) in states.iter().zip(y) {
            match obs {
                Obs::Real(v) => assigned[x].push(v),
                Obs::Symbol(s) => {
                    return Err(Error::DomainMismatch(format!(
                        "symbol {s} under a continuous prior"
                    )))
                }
            }
        }
        let cur = mixtures_of(current);
        gibbs_update_emissions_dpm(&assigned, &prior.emissions, cur.as_deref(), rng)?
            .into_iter()
            .map(EmissionModel::from)
            .collect()
    };
    let params = HmmParams::new(q, current.mu().to_vec(), emissions)?;
    Ok(GibbsState {
        params,
        states,
        fallback_rows,
    })
}

/// Rejects observations the prior cannot generate before any sampling.
fn check_domain(y: &[Obs], prior: &PriorSpec) -> Result<()> {
    match prior.emissions.discrete_base() {
        Some(base) => symbol_counts(&vec![0; y.len()], y, 1, base.draw_len()).map(|_| ()),
        None => match y.iter().find(|o| matches!(o, Obs::Symbol(_))) {
            Some(Obs::Symbol(s)) => Err(Error::DomainMismatch(format!("symbol {s} under a continuous prior"))),
            _ => Ok(()),
        },
    }
}

/// Runs one chain, handing each emitted sample to `sink` as it is produced.
pub fn run_chain_with<F>(y: &[Obs], config: &GibbsConfig, chain_id: u64, mut sink: F) -> Result<()>
where
    F: FnMut(PosteriorSample) -> Result<()>,
{
    config.validate()?;
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let fail = |iter: usize, e: Error| Error::ChainFailure {
        chain: chain_id,
        iter,
        source: Box::new(e),
    };
    check_domain(y, &config.prior)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, chain_id));
    let mu = config.initial_law();
    // start from a prior draw that explains the data
    let mut params = None;
    for _ in 0..1000 {
        let p = config.prior.sample(&mu, &mut rng).map_err(|e| fail(0, e))?;
        if crate::hmm::log_likelihood_forward(&p, y).map_err(|e| fail(0, e))? > f64::NEG_INFINITY {
            params = Some(p);
            break;
        }
    }
    let mut params = params.ok_or_else(|| fail(0, Error::ZeroLikelihood))?;
    for iter in 0..config.n_iter {
        let st = gibbs_sweep(&params, y, &config.prior, &mut rng).map_err(|e| fail(iter, e))?;
        params = st.params;
        if config.emits(iter) {
            sink(PosteriorSample {
                chain_id,
                iter,
                params: params.clone(),
                states: st.states,
                fallback_rows: st.fallback_rows,
            })?;
        }
    }
    Ok(())
}

pub fn run_chain(y: &[Obs], config: &GibbsConfig, chain_id: u64) -> Result<Vec<PosteriorSample>> {
    let mut out = Vec::with_capacity(config.n_samples());
    run_chain_with(y, config, chain_id, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

/// Independent chains `0..n_chains`, concurrently when the `parallel`
/// feature is on. Results are in chain order.
pub fn run_chains(y: &[Obs], config: &GibbsConfig, n_chains: usize) -> Result<Vec<Vec<PosteriorSample>>> {
    crate::par::map_indexed(n_chains, |c| run_chain(y, config, c as u64))
        .into_iter()
        .collect()
}
