//! Finite-state HMM parameters, stationary law, forward likelihood,
//! forward-backward smoothing (exact and window-truncated) and simulation.
//!
//! All recursions use per-step normalization: the filtered vector is kept as
//! a probability vector and the log of each normalizing constant is
//! accumulated, which is O(n k^2) and free of underflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emissions::{sample_categorical, EmissionModel, Obs};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Tolerance used when validating constructed parameters.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for algorithmic outputs (normalization, stationarity).
pub const ALGORITHM_TOL: f64 = 1e-10;

const DIRECT_SOLVE_MAX_K: usize = 64;
const POWER_ITER_BUDGET: usize = 200_000;
const MAX_BLOCKS: usize = 1 << 20;

/// Row-stochastic `k x k` matrix whose entries are all at least `q_floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
    q_floor: f64,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>, q_floor: f64) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::invalid("transition matrix has no rows"));
        }
        if !(0.0..=1.0).contains(&q_floor) || q_floor * k as f64 > 1.0 + CONSTRUCTION_TOL {
            return Err(Error::invalid(format!(
                "floor {q_floor} outside [0, 1/{k}]: the constraint set is empty"
            )));
        }
        let mut entries = Vec::with_capacity(k * k);
        let upper = 1.0 - (k as f64 - 1.0) * q_floor;
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: row.len(),
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > CONSTRUCTION_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}")));
            }
            for &q in &row {
                if !q.is_finite() || q < q_floor - CONSTRUCTION_TOL || q > upper + CONSTRUCTION_TOL {
                    return Err(Error::invalid(format!(
                        "row {i} has entry {q} outside [{q_floor}, {upper}]"
                    )));
                }
            }
            entries.extend(row);
        }
        Ok(TransitionMatrix {
            k,
            entries,
            q_floor,
        })
    }

    /// Matrix with every row equal to the uniform law.
    pub fn uniform(k: usize, q_floor: f64) -> Result<Self> {
        Self::new(vec![vec![1.0 / k as f64; k]; k], q_floor)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q_floor(&self) -> f64 {
        self.q_floor
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Same entries, different floor (revalidated).
    pub fn with_floor(&self, q_floor: f64) -> Result<Self> {
        Self::new(self.rows(), q_floor)
    }

    /// `max_{i,j} |Q_ij - R_ij|`.
    pub fn sup_distance(&self, other: &TransitionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unique invariant law of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw {
    pub probs: Vec<f64>,
}

/// Left eigenvector of `q` for eigenvalue 1, normalized to sum to one.
///
/// Solves `(Q^T - I) mu = 0` with the last equation replaced by
/// `sum(mu) = 1` for `k <= 64`, and falls back to power iteration above.
pub fn stationary_distribution(q: &TransitionMatrix) -> Result<StationaryLaw> {
    let k = q.k();
    let probs = if k <= DIRECT_SOLVE_MAX_K {
        let mut a = DMatrix::from_fn(k, k, |i, j| q.get(j, i) - if i == j { 1.0 } else { 0.0 });
        for j in 0..k {
            a[(k - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(k);
        b[k - 1] = 1.0;
        let x = a.lu().solve(&b).ok_or(Error::NonConvergence {
            residual: f64::INFINITY,
        })?;
        x.iter().copied().collect::<Vec<_>>()
    } else {
        let mut mu = vec![1.0 / k as f64; k];
        for _ in 0..POWER_ITER_BUDGET {
            let next = left_multiply(&mu, q);
            let delta = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            mu = next;
            if delta < 1e-15 {
                break;
            }
        }
        mu
    };
    let residual = left_multiply(&probs, q)
        .iter()
        .zip(&probs)
        .map(|(a, b)| (a - b).abs())
        .fold((probs.iter().sum::<f64>() - 1.0).abs(), f64::max);
    if !(residual <= CONSTRUCTION_TOL) {
        return Err(Error::NonConvergence { residual });
    }
    let lo = q.q_floor() - ALGORITHM_TOL;
    let hi = 1.0 - (k as f64 - 1.0) * q.q_floor() + ALGORITHM_TOL;
    if probs.iter().any(|&p| p < lo || p > hi) {
        return Err(Error::NonConvergence { residual });
    }
    Ok(StationaryLaw { probs })
}

fn left_multiply(v: &[f64], q: &TransitionMatrix) -> Vec<f64> {
    let k = q.k();
    let mut out = vec![0.0; k];
    for (i, &vi) in v.iter().enumerate() {
        for (o, &qij) in out.iter_mut().zip(q.row(i)) {
            *o += vi * qij;
        }
    }
    out
}

/// Transition matrix, initial law and one emission model per hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct HmmParams {
    q: TransitionMatrix,
    mu: Vec<f64>,
    emissions: Vec<EmissionModel>,
}

/// Plain-data form of [`HmmParams`] used by the parameter-file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub k: usize,
    pub q_floor: f64,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    /// Omitted or empty: the stationary law of `Q`.
    #[serde(default)]
    pub mu: Vec<f64>,
    pub emissions: Vec<EmissionModel>,
}

impl TryFrom<RawParams> for HmmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        if raw.q.len() != raw.k {
            return Err(Error::DimensionMismatch {
                expected: raw.k,
                found: raw.q.len(),
            });
        }
        let q = TransitionMatrix::new(raw.q, raw.q_floor)?;
        if raw.mu.is_empty() {
            HmmParams::stationary(q, raw.emissions)
        } else {
            HmmParams::new(q, raw.mu, raw.emissions)
        }
    }
}

impl From<HmmParams> for RawParams {
    fn from(p: HmmParams) -> Self {
        RawParams {
            k: p.k(),
            q_floor: p.q.q_floor(),
            q: p.q.rows(),
            mu: p.mu,
            emissions: p.emissions,
        }
    }
}

impl HmmParams {
    pub fn new(q: TransitionMatrix, mu: Vec<f64>, emissions: Vec<EmissionModel>) -> Result<Self> {
        let k = q.k();
        if mu.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: mu.len(),
            });
        }
        if emissions.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: emissions.len(),
            });
        }
        let s: f64 = mu.iter().sum();
        if (s - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::invalid(format!("initial law sums to {s}")));
        }
        if let Some(m) = mu.iter().find(|&&m| !(m >= q.q_floor() - CONSTRUCTION_TOL)) {
            return Err(Error::invalid(format!(
                "initial probability {m} below the floor {}",
                q.q_floor()
            )));
        }
        if emissions.iter().any(|e| !e.same_domain(&emissions[0])) {
            return Err(Error::invalid("emissions mix discrete and continuous families"));
        }
        Ok(HmmParams { q, mu, emissions })
    }

    /// Parameters started from the stationary law of their own transition matrix.
    pub fn stationary(q: TransitionMatrix, emissions: Vec<EmissionModel>) -> Result<Self> {
        let mu = stationary_distribution(&q)?.probs;
        Self::new(q, mu, emissions)
    }

    pub fn k(&self) -> usize {
        self.q.k()
    }

    pub fn transitions(&self) -> &TransitionMatrix {
        &self.q
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn emissions(&self) -> &[EmissionModel] {
        &self.emissions
    }

    pub fn q_floor(&self) -> f64 {
        self.q.q_floor()
    }

    pub fn is_discrete(&self) -> bool {
        self.emissions[0].is_discrete()
    }

    /// Largest discrete support length among the emissions (0 if continuous).
    pub fn support_len(&self) -> usize {
        self.emissions
            .iter()
            .filter_map(EmissionModel::as_discrete)
            .map(|d| d.support_len())
            .max()
            .unwrap_or(0)
    }

    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self> {
        Self::new(self.q.clone(), mu, self.emissions.clone())
    }

    pub fn with_transitions(&self, q: TransitionMatrix) -> Result<Self> {
        Self::new(q, self.mu.clone(), self.emissions.clone())
    }

    pub fn with_emissions(&self, emissions: Vec<EmissionModel>) -> Result<Self> {
        Self::new(self.q.clone(), self.mu.clone(), emissions)
    }

    /// Same model started from `mu^Q`.
    pub fn with_stationary_start(&self) -> Result<Self> {
        self.with_mu(stationary_distribution(&self.q)?.probs)
    }

    /// `f_i(y_t)` laid out row-major as `n x k`.
    pub fn emission_table(&self, y: &[Obs]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(y.len() * self.k());
        for &obs in y {
            for e in &self.emissions {
                out.push(e.density(obs)?);
            }
        }
        Ok(out)
    }
}

/// Incremental normalized forward filter. Feeding observations one at a
/// time accumulates `log p(y_1..y_t)`; the filter can be continued after
/// any prefix.
#[derive(Debug, Clone)]
pub struct ForwardFilter<'a> {
    params: &'a HmmParams,
    init: Vec<f64>,
    filtered: Vec<f64>,
    log_lik: f64,
    steps: usize,
}

impl<'a> ForwardFilter<'a> {
    pub fn new(params: &'a HmmParams) -> Self {
        Self::with_initial(params, params.mu.clone())
    }

    pub fn with_initial(params: &'a HmmParams, init: Vec<f64>) -> Self {
        ForwardFilter {
            params,
            filtered: vec![0.0; init.len()],
            init,
            log_lik: 0.0,
            steps: 0,
        }
    }

    /// Consumes one observation and returns `log p(y_t | y_1..y_{t-1})`.
    pub fn step(&mut self, y: Obs) -> Result<f64> {
        let k = self.params.k();
        let mut dens = Vec::with_capacity(k);
        for e in &self.params.emissions {
            dens.push(e.density(y)?);
        }
        let c = if self.steps == 0 {
            predict_update(&self.init, None, &dens, &mut self.filtered)
        } else {
            let prev = self.filtered.clone();
            predict_update(&prev, Some(&self.params.q), &dens, &mut self.filtered)
        };
        self.steps += 1;
        let lc = if c > 0.0 { c.ln() } else { f64::NEG_INFINITY };
        self.log_lik += lc;
        Ok(lc)
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    pub fn filtered(&self) -> &[f64] {
        &self.filtered
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// One forward step. `prev` is the filtered law at `t-1` (or the initial law
/// when `q` is `None`). Writes the normalized filtered law into `out` and
/// returns the normalizing constant.
#[inline]
fn predict_update(prev: &[f64], q: Option<&TransitionMatrix>, dens: &[f64], out: &mut [f64]) -> f64 {
    let k = dens.len();
    match q {
        None => {
            for j in 0..k {
                out[j] = prev[j] * dens[j];
            }
        }
        Some(q) => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, &p) in prev.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, &qij) in out.iter_mut().zip(q.row(i)) {
                    *o += p * qij;
                }
            }
            for j in 0..k {
                out[j] *= dens[j];
            }
        }
    }
    let c: f64 = out.iter().sum();
    if c > 0.0 {
        out.iter_mut().for_each(|o| *o /= c);
    }
    c
}

/// Normalized forward quantities for a whole sequence.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    pub k: usize,
    pub n: usize,
    /// Filtered laws `P(X_t = . | y_1..y_t)`, `n x k` row-major.
    pub filtered: Vec<f64>,
    /// Normalizing constants `c_t = p(y_t | y_1..y_{t-1})`.
    pub scales: Vec<f64>,
    pub zero: bool,
}

impl ForwardPass {
    pub fn run(params: &HmmParams, init: &[f64], dens: &[f64]) -> ForwardPass {
        let k = params.k();
        let n = dens.len() / k;
        let mut filtered = vec![0.0; n * k];
        let mut scales = Vec::with_capacity(n);
        let mut zero = false;
        for t in 0..n {
            let (done, rest) = filtered.split_at_mut(t * k);
            let out = &mut rest[..k];
            let d = &dens[t * k..(t + 1) * k];
            let c = if t == 0 {
                predict_update(init, None, d, out)
            } else {
                predict_update(&done[(t - 1) * k..], Some(&params.q), d, out)
            };
            scales.push(c);
            if c <= 0.0 {
                zero = true;
                break;
            }
        }
        ForwardPass {
            k,
            n,
            filtered,
            scales,
            zero,
        }
    }

    pub fn log_likelihood(&self) -> f64 {
        if self.zero {
            f64::NEG_INFINITY
        } else {
            self.scales.iter().map(|c| c.ln()).sum()
        }
    }

    pub fn filtered_at(&self, t: usize) -> &[f64] {
        &self.filtered[t * self.k..(t + 1) * self.k]
    }
}

/// `log p_n^{theta,mu}(y_1..y_n)`, or `-inf` when the sequence has
/// probability zero.
pub fn log_likelihood_forward(theta: &HmmParams, y: &[Obs]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let dens = theta.emission_table(y)?;
    Ok(ForwardPass::run(theta, &theta.mu, &dens).log_likelihood())
}

/// `log p_l^theta(y)`: the block density under the stationary initial law.
pub fn log_marginal_density(theta: &HmmParams, y: &[Obs]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mu = stationary_distribution(theta.transitions())?.probs;
    let dens = theta.emission_table(y)?;
    Ok(ForwardPass::run(theta, &mu, &dens).log_likelihood())
}

/// `p_l^theta(y)`: the block density under the stationary initial law.
pub fn marginal_density(theta: &HmmParams, y: &[Obs]) -> Result<f64> {
    log_marginal_density(theta, y).map(f64::exp)
}

/// Posterior state laws given a whole observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingTable {
    n: usize,
    k: usize,
    block_len: usize,
    marginals: Vec<Vec<f64>>,
    block: Vec<f64>,
}

impl SmoothingTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `P(X_t = . | Y_{1:n})` for 0-based `t`.
    pub fn marginal(&self, t: usize) -> &[f64] {
        &self.marginals[t]
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }

    /// `P(X_{1:m} = a | Y_{1:n})` for every `a`, indexed with the first state
    /// as the most significant base-`k` digit.
    pub fn block(&self) -> &[f64] {
        &self.block
    }

    pub fn block_prob(&self, states: &[usize]) -> f64 {
        self.block[block_index(states, self.k)]
    }
}

pub(crate) fn block_index(states: &[usize], k: usize) -> usize {
    states.iter().fold(0, |acc, &s| acc * k + s)
}

/// Normalized backward quantities `beta_t / prod_{s>t} c_s`, `n x k`.
fn backward_pass(params: &HmmParams, dens: &[f64], fwd: &ForwardPass) -> Vec<f64> {
    let (k, n) = (fwd.k, fwd.n);
    let q = params.transitions();
    let mut beta = vec![0.0; n * k];
    beta[(n - 1) * k..].iter_mut().for_each(|b| *b = 1.0);
    for t in (0..n - 1).rev() {
        let c = fwd.scales[t + 1];
        let (head, tail) = beta.split_at_mut((t + 1) * k);
        let next = &tail[..k];
        let d = &dens[(t + 1) * k..(t + 2) * k];
        for i in 0..k {
            head[t * k + i] = q
                .row(i)
                .iter()
                .zip(d)
                .zip(next)
                .map(|((qij, dj), bj)| qij * dj * bj)
                .sum::<f64>()
                / c;
        }
    }
    beta
}

/// Exact smoothing by forward-backward: every single-index marginal and the
/// joint law of the first `m` states.
pub fn smoothing_exact(theta: &HmmParams, y: &[Obs], m: usize) -> Result<SmoothingTable> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("block length {m} not in 1..={n}")));
    }
    let k = theta.k();
    let n_blocks = (k as u128).pow(m as u32);
    if n_blocks > MAX_BLOCKS as u128 {
        return Err(Error::BudgetExceeded {
            what: "block smoothing table",
            needed: n_blocks,
            limit: MAX_BLOCKS as u128,
        });
    }
    let dens = theta.emission_table(y)?;
    let fwd = ForwardPass::run(theta, &theta.mu, &dens);
    if fwd.zero {
        return Err(Error::ZeroLikelihood);
    }
    let beta = backward_pass(theta, &dens, &fwd);

    let marginals = (0..n)
        .map(|t| {
            let mut g: Vec<f64> = fwd
                .filtered_at(t)
                .iter()
                .zip(&beta[t * k..(t + 1) * k])
                .map(|(a, b)| a * b)
                .collect();
            let s: f64 = g.iter().sum();
            g.iter_mut().for_each(|x| *x /= s);
            g
        })
        .collect();

    // weights of partial paths a_{1:t}, rescaled by c_1..c_t so they sum to one
    let q = theta.transitions();
    let mut weights: Vec<f64> = (0..k).map(|i| theta.mu[i] * dens[i] / fwd.scales[0]).collect();
    for t in 1..m {
        let d = &dens[t * k..(t + 1) * k];
        let c = fwd.scales[t];
        let mut next = Vec::with_capacity(weights.len() * k);
        for (idx, &w) in weights.iter().enumerate() {
            let last = idx % k;
            next.extend((0..k).map(|j| w * q.get(last, j) * d[j] / c));
        }
        weights = next;
    }
    let beta_m = &beta[(m - 1) * k..m * k];
    let mut block: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(idx, w)| w * beta_m[idx % k])
        .collect();
    let s: f64 = block.iter().sum();
    block.iter_mut().for_each(|x| *x /= s);

    Ok(SmoothingTable {
        n,
        k,
        block_len: m,
        marginals,
        block,
    })
}

/// `2 (1-q)^g / (q + (1-q)^g)` with `g = N + 1 - j` the distance from the
/// smoothed index to one past the end of the window.
pub fn forgetting_bound(q_floor: f64, gap: usize) -> f64 {
    let r = (1.0 - q_floor).powi(gap as i32);
    2.0 * r / (q_floor + r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSmoothing {
    pub probs: Vec<f64>,
    pub error_bound: f64,
}

/// `P(X_j = . | Y_{1:N})` for 0-based `j` and window length `N`
/// (`j < N <= n`), with the exponential-forgetting bound on its distance
/// from `P(X_j = . | Y_{1:n})`.
pub fn smoothing_windowed(
    theta: &HmmParams,
    y: &[Obs],
    j: usize,
    window_end: usize,
) -> Result<WindowedSmoothing> {
    if theta.q_floor() <= 0.0 {
        return Err(Error::VacuousBound);
    }
    if j >= window_end || window_end > y.len() {
        return Err(Error::invalid(format!(
            "need j < N <= n, got j={j}, N={window_end}, n={}",
            y.len()
        )));
    }
    let table = smoothing_exact(theta, &y[..window_end], 1)?;
    Ok(WindowedSmoothing {
        probs: table.marginal(j).to_vec(),
        // 1-based: N + 1 - (j + 1)
        error_bound: forgetting_bound(theta.q_floor(), window_end - j),
    })
}

/// Draws `(x_{1:n}, y_{1:n})` from the model.
pub fn simulate<R: Rng + ?Sized>(theta: &HmmParams, n: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<Obs>)> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut x = sample_categorical(&theta.mu, rng);
    for t in 0..n {
        if t > 0 {
            x = sample_categorical(theta.q.row(x), rng);
        }
        states.push(x);
        obs.push(theta.emissions[x].sample(rng));
    }
    Ok((states, obs))
}

/// [`simulate`] with a fresh generator seeded by `seed`.
pub fn simulate_seeded(theta: &HmmParams, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<Obs>)> {
    simulate(theta, n, &mut rng_from_seed(seed))
}
