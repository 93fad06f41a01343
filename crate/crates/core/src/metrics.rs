//! Distances between parameters: the block pseudometric `D_l`, alignment
//! over label permutations, the KL-rate bound with its exact discrete
//! counterpart, and gaps on a fixed dictionary of bounded test functions.

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emissions::{l1_distance, EmissionModel, EvalMode, Obs};
use crate::error::{Error, Result};
use crate::hmm::{stationary_distribution, HmmParams, TransitionMatrix};
use crate::par;
use crate::rng::child_rng;
use crate::stats::{Estimate, Moments};

/// Largest number of observation blocks enumerated in exact mode.
pub const MAX_EXACT_BLOCKS: u128 = 10_000_000;
/// Largest `k` for the exhaustive search over permutations.
pub const MAX_ALIGN_K: usize = 8;
pub const DEFAULT_BLOCK_LEN: usize = 3;

const FLOOR_TOL: f64 = 1e-12;

fn check_pair(theta: &HmmParams, theta_star: &HmmParams) -> Result<()> {
    if theta.k() != theta_star.k() {
        return Err(Error::DimensionMismatch {
            expected: theta_star.k(),
            found: theta.k(),
        });
    }
    if theta.is_discrete() != theta_star.is_discrete() {
        return Err(Error::DomainMismatch(
            "comparing discrete and continuous emission families".into(),
        ));
    }
    Ok(())
}

fn block_budget(support: usize, l: usize) -> Result<()> {
    let needed = (support as u128).checked_pow(l as u32).unwrap_or(u128::MAX);
    if needed > MAX_EXACT_BLOCKS {
        return Err(Error::BudgetExceeded {
            what: "block enumeration",
            needed,
            limit: MAX_EXACT_BLOCKS,
        });
    }
    Ok(())
}

/// One side of a block enumeration: transitions, initial law and the
/// per-symbol emission column `dens[s * k + i] = f_i(s)`.
struct BlockModel<'a> {
    q: &'a TransitionMatrix,
    init: Vec<f64>,
    dens: Vec<f64>,
}

impl<'a> BlockModel<'a> {
    fn new(theta: &'a HmmParams, init: Vec<f64>, support: usize) -> Result<Self> {
        let symbols: Vec<Obs> = (0..support).map(Obs::Symbol).collect();
        Ok(BlockModel {
            q: theta.transitions(),
            init,
            dens: theta.emission_table(&symbols)?,
        })
    }

    /// Unnormalized forward vector after appending symbol `s`.
    fn advance(&self, prev: Option<&[f64]>, s: usize, out: &mut [f64]) {
        let k = out.len();
        let d = &self.dens[s * k..(s + 1) * k];
        match prev {
            None => {
                for i in 0..k {
                    out[i] = self.init[i] * d[i];
                }
            }
            Some(prev) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &a) in prev.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &qij) in out.iter_mut().zip(self.q.row(i)) {
                        *o += a * qij;
                    }
                }
                for i in 0..k {
                    out[i] *= d[i];
                }
            }
        }
    }
}

/// Visits every block `y_{1:l}` over `{0..support}` with its probability
/// under both models. The first symbol is split across workers; each worker
/// folds its blocks in lexicographic order and the partial results are
/// combined in order.
fn fold_blocks<T, F, G>(
    a: &BlockModel<'_>,
    b: &BlockModel<'_>,
    k: usize,
    support: usize,
    l: usize,
    init: T,
    visit: F,
    combine: G,
) -> T
where
    T: Clone + Send + Sync,
    F: Fn(&mut T, &[usize], f64, f64) + Sync + Send,
    G: Fn(T, T) -> T,
{
    let parts = par::map_indexed(support, |s0| {
        let mut acc = init.clone();
        let mut block = vec![s0; l];
        let mut fa = vec![0.0; k * l];
        let mut fb = vec![0.0; k * l];
        a.advance(None, s0, &mut fa[..k]);
        b.advance(None, s0, &mut fb[..k]);
        descend(a, b, k, support, l, 1, &mut block, &mut fa, &mut fb, &mut acc, &visit);
        acc
    });
    parts.into_iter().fold(init, combine)
}

#[allow(clippy::too_many_arguments)]
fn descend<T, F>(
    a: &BlockModel<'_>,
    b: &BlockModel<'_>,
    k: usize,
    support: usize,
    l: usize,
    depth: usize,
    block: &mut [usize],
    fa: &mut [f64],
    fb: &mut [f64],
    acc: &mut T,
    visit: &F,
) where
    F: Fn(&mut T, &[usize], f64, f64),
{
    if depth == l {
        let pa: f64 = fa[(l - 1) * k..].iter().sum();
        let pb: f64 = fb[(l - 1) * k..].iter().sum();
        visit(acc, block, pa, pb);
        return;
    }
    for s in 0..support {
        block[depth] = s;
        {
            let (done, rest) = fa.split_at_mut(depth * k);
            a.advance(Some(&done[(depth - 1) * k..]), s, &mut rest[..k]);
        }
        {
            let (done, rest) = fb.split_at_mut(depth * k);
            b.advance(Some(&done[(depth - 1) * k..]), s, &mut rest[..k]);
        }
        descend(a, b, k, support, l, depth + 1, block, fa, fb, acc, visit);
    }
}

fn stationary_probs(theta: &HmmParams) -> Result<Vec<f64>> {
    Ok(stationary_distribution(theta.transitions())?.probs)
}

fn common_support(theta: &HmmParams, theta_star: &HmmParams) -> usize {
    theta.support_len().max(theta_star.support_len())
}

/// Importance draws for block integrals: each draw is a block from the
/// equal mixture of the two stationary block laws, returned with both
/// densities. `sink` receives `(block, p, p_star)`.
fn mixture_block_draws<F>(
    theta: &HmmParams,
    theta_star: &HmmParams,
    l: usize,
    n_samples: usize,
    seed: u64,
    sink: F,
) -> Result<Moments>
where
    F: Fn(&[Obs], f64, f64) -> f64 + Sync + Send,
{
    if n_samples == 0 {
        return Err(Error::invalid("Monte Carlo estimate with zero samples"));
    }
    let a = theta.with_stationary_start()?;
    let b = theta_star.with_stationary_start()?;
    let chunks = par::chunks(n_samples);
    let parts = par::map_indexed(chunks.len(), |c| -> Result<Moments> {
        let (lo, hi) = chunks[c];
        let mut rng = child_rng(seed, c as u64);
        let mut m = Moments::default();
        for _ in lo..hi {
            let src = if rng.random::<bool>() { &a } else { &b };
            let (_, y) = crate::hmm::simulate(src, l, &mut rng)?;
            let pa = crate::hmm::marginal_density(&a, &y)?;
            let pb = crate::hmm::marginal_density(&b, &y)?;
            m.push(sink(&y, pa, pb));
        }
        Ok(m)
    });
    parts
        .into_iter()
        .try_fold(Moments::default(), |acc, m| Ok(acc.merge(m?)))
}

/// `D_l(theta, theta*) = ∫ |p_l^theta - p_l^theta*|`, both block laws started
/// from the stationary law of their own transition matrix.
pub fn d_l_pseudometric(theta: &HmmParams, theta_star: &HmmParams, l: usize, mode: EvalMode) -> Result<Estimate> {
    check_pair(theta, theta_star)?;
    if l == 0 {
        return Err(Error::invalid("block length must be at least 1"));
    }
    match mode {
        EvalMode::Exact => {
            if !theta.is_discrete() {
                return Err(Error::ExactUnavailable("continuous emissions"));
            }
            let support = common_support(theta, theta_star);
            block_budget(support, l)?;
            let a = BlockModel::new(theta, stationary_probs(theta)?, support)?;
            let b = BlockModel::new(theta_star, stationary_probs(theta_star)?, support)?;
            let v = fold_blocks(
                &a,
                &b,
                theta.k(),
                support,
                l,
                0.0,
                |acc, _, pa, pb| *acc += (pa - pb).abs(),
                |x, y| x + y,
            );
            Ok(Estimate::exact(v))
        }
        EvalMode::MonteCarlo { n_samples, seed } => {
            let m = mixture_block_draws(theta, theta_star, l, n_samples, seed, |_, pa, pb| {
                let mix = 0.5 * (pa + pb);
                if mix > 0.0 {
                    (pa - pb).abs() / mix
                } else {
                    0.0
                }
            })?;
            Ok(m.estimate())
        }
    }
}

/// Terms of the bound `D_l <= ||mu - mu*||_1 + k (l-1) ||Q - Q*|| + l d(f, f*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionBound {
    pub mu_term: f64,
    pub q_term: f64,
    pub emission_term: f64,
    pub total: f64,
}

pub fn d_l_decomposition_bound(
    theta: &HmmParams,
    theta_star: &HmmParams,
    l: usize,
    mode: EvalMode,
) -> Result<DecompositionBound> {
    check_pair(theta, theta_star)?;
    let mu = stationary_probs(theta)?;
    let mu_star = stationary_probs(theta_star)?;
    let mu_term = mu.iter().zip(&mu_star).map(|(a, b)| (a - b).abs()).sum();
    let q_term = (theta.k() * l.saturating_sub(1)) as f64 * theta.transitions().sup_distance(theta_star.transitions());
    let emission_term = l as f64 * crate::emissions::emission_d(theta.emissions(), theta_star.emissions(), mode)?.value;
    Ok(DecompositionBound {
        mu_term,
        q_term,
        emission_term,
        total: mu_term + q_term + emission_term,
    })
}

// ---------------------------------------------------------------------------
// Label switching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `sigma[i]` is the label of `theta` matched to state `i` of `theta*`.
    pub sigma: Vec<usize>,
    /// `max_{ij} |Q_{sigma(i) sigma(j)} - Q*_{ij}|`.
    pub q_distance: f64,
    /// `||f_{sigma(i)} - f*_i||_1` for each `i`.
    pub emission_distances: Vec<f64>,
}

impl AlignmentResult {
    pub fn emission_max(&self) -> f64 {
        self.emission_distances.iter().cloned().fold(0.0, f64::max)
    }

    pub fn score(&self) -> f64 {
        self.q_distance + self.emission_max()
    }
}

/// `theta` with state `i` renamed from `sigma[i]`: `Q'_{ij} = Q_{sigma(i) sigma(j)}`,
/// `f'_i = f_{sigma(i)}`, `mu'_i = mu_{sigma(i)}`.
pub fn relabel(theta: &HmmParams, sigma: &[usize]) -> Result<HmmParams> {
    let k = theta.k();
    let mut seen = vec![false; k];
    if sigma.len() != k || !sigma.iter().all(|&s| s < k && !std::mem::replace(&mut seen[s], true)) {
        return Err(Error::invalid("relabeling is not a permutation"));
    }
    let q = theta.transitions();
    let rows = sigma
        .iter()
        .map(|&si| sigma.iter().map(|&sj| q.get(si, sj)).collect())
        .collect();
    HmmParams::new(
        TransitionMatrix::new(rows, q.q_floor())?,
        sigma.iter().map(|&s| theta.mu()[s]).collect(),
        sigma.iter().map(|&s| theta.emissions()[s].clone()).collect(),
    )
}

/// Exhaustive search over `S_k` for the relabeling of `theta` closest to
/// `theta*` in `||sigma Q - Q*|| + max_i ||f_{sigma(i)} - f*_i||_1`. Ties go to
/// the lexicographically smallest permutation.
pub fn align_label_switching(theta: &HmmParams, theta_star: &HmmParams, mode: EvalMode) -> Result<AlignmentResult> {
    check_pair(theta, theta_star)?;
    let k = theta.k();
    if k > MAX_ALIGN_K {
        return Err(Error::invalid(format!(
            "alignment searches all {k}! permutations; limited to k <= {MAX_ALIGN_K}"
        )));
    }
    // l1[a * k + i] = ||f_a - f*_i||
    let mut l1 = vec![0.0; k * k];
    for a in 0..k {
        for i in 0..k {
            l1[a * k + i] = l1_distance(
                &theta.emissions()[a],
                &theta_star.emissions()[i],
                mode.reseeded((a * k + i) as u64),
            )?
            .value;
        }
    }
    let q = theta.transitions();
    let qs = theta_star.transitions();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for sigma in (0..k).permutations(k) {
        let mut qd: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                qd = qd.max((q.get(sigma[i], sigma[j]) - qs.get(i, j)).abs());
            }
        }
        let ed = (0..k).map(|i| l1[sigma[i] * k + i]).fold(0.0, f64::max);
        let score = qd + ed;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, sigma));
        }
    }
    let (_, sigma) = best.expect("S_k is non-empty");
    let mut q_distance: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            q_distance = q_distance.max((q.get(sigma[i], sigma[j]) - qs.get(i, j)).abs());
        }
    }
    let emission_distances = (0..k).map(|i| l1[sigma[i] * k + i]).collect();
    Ok(AlignmentResult {
        sigma,
        q_distance,
        emission_distances,
    })
}

// ---------------------------------------------------------------------------
// KL rate
// ---------------------------------------------------------------------------

/// Terms of the bound on `(1/n) KL(p*_n, p_n^{theta,mu})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBound {
    pub mu_term: f64,
    pub q_term: f64,
    pub emission_term: f64,
    pub total: f64,
    /// `3 eps / q` when a neighborhood radius was supplied.
    pub conclusion: Option<f64>,
}

/// `max_i ∫ f*_i max_j log(f*_j / f_j)`. Infinite when some `f_j` vanishes
/// where `f*_j` charges mass that `f*_i` also charges.
pub fn emission_kl_term(f: &[EmissionModel], f_star: &[EmissionModel], mode: EvalMode) -> Result<Estimate> {
    if f.len() != f_star.len() {
        return Err(Error::DimensionMismatch {
            expected: f_star.len(),
            found: f.len(),
        });
    }
    let log_ratio_max = |y: Obs| -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for (a, b) in f.iter().zip(f_star) {
            let (pa, pb) = (a.density(y)?, b.density(y)?);
            let r = if pb == 0.0 {
                f64::NEG_INFINITY
            } else if pa == 0.0 {
                f64::INFINITY
            } else {
                (pb / pa).ln()
            };
            m = m.max(r);
        }
        Ok(m)
    };
    let mut best = Estimate::exact(f64::NEG_INFINITY);
    for (i, fi) in f_star.iter().enumerate() {
        let e = match mode {
            EvalMode::Exact => {
                let EmissionModel::Discrete(d) = fi else {
                    return Err(Error::ExactUnavailable("continuous emissions"));
                };
                let mut s = 0.0;
                for (y, &p) in d.pmf().iter().enumerate() {
                    if p > 0.0 {
                        s += p * log_ratio_max(Obs::Symbol(y))?;
                    }
                }
                Estimate::exact(s)
            }
            EvalMode::MonteCarlo { n_samples, seed } => {
                let seed = crate::rng::derive_seed(seed, i as u64);
                let chunks = par::chunks(n_samples.max(1));
                let parts = par::map_indexed(chunks.len(), |c| -> Result<Moments> {
                    let (lo, hi) = chunks[c];
                    let mut rng = child_rng(seed, c as u64);
                    let mut m = Moments::default();
                    for _ in lo..hi {
                        m.push(log_ratio_max(fi.sample(&mut rng))?);
                    }
                    Ok(m)
                });
                parts
                    .into_iter()
                    .try_fold(Moments::default(), |acc, m| Ok::<_, Error>(acc.merge(m?)))?
                    .estimate()
            }
        };
        if e.value > best.value || e.value.is_nan() {
            best = e;
        }
    }
    Ok(best)
}

/// The three-term bound on the KL rate, with `mu*` the stationary law of
/// `Q*` and `q` the floor of `theta*`. `theta` must respect the same floor
/// in both `Q` and `mu`.
pub fn kl_rate_upper_bound(
    theta: &HmmParams,
    theta_star: &HmmParams,
    n: usize,
    epsilon: Option<f64>,
    mode: EvalMode,
) -> Result<KlBound> {
    check_pair(theta, theta_star)?;
    if n == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let q = theta_star.q_floor();
    if !(q > 0.0) {
        return Err(Error::invalid("the KL bound needs a positive floor"));
    }
    let below = |x: f64| x < q - FLOOR_TOL;
    if theta.transitions().rows().iter().flatten().any(|&x| below(x)) || theta.mu().iter().any(|&x| below(x)) {
        return Err(Error::invalid(format!("theta does not respect the floor {q}")));
    }
    let mu_star = stationary_probs(theta_star)?;
    let max_mu = theta
        .mu()
        .iter()
        .zip(&mu_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let nf = n as f64;
    let mu_term = max_mu / (nf * q);
    let q_term = (nf - 1.0) / (nf * q) * theta.transitions().sup_distance(theta_star.transitions());
    let emission_term = emission_kl_term(theta.emissions(), theta_star.emissions(), mode)?.value;
    Ok(KlBound {
        mu_term,
        q_term,
        emission_term,
        total: mu_term + q_term + emission_term,
        conclusion: epsilon.map(|e| 3.0 * e / q),
    })
}

/// `(1/n) KL(p*_n, p_n^{theta,mu})` by summing over all `support^n` blocks;
/// `p*_n` starts from the stationary law of `Q*`, `p_n^{theta,mu}` from `theta.mu`.
pub fn kl_rate_exact_discrete(theta: &HmmParams, theta_star: &HmmParams, n: usize) -> Result<f64> {
    check_pair(theta, theta_star)?;
    if !theta.is_discrete() {
        return Err(Error::ExactUnavailable("continuous emissions"));
    }
    if n == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let support = common_support(theta, theta_star);
    block_budget(support, n)?;
    let a = BlockModel::new(theta, theta.mu().to_vec(), support)?;
    let b = BlockModel::new(theta_star, stationary_probs(theta_star)?, support)?;
    let kl = fold_blocks(
        &a,
        &b,
        theta.k(),
        support,
        n,
        0.0,
        |acc, _, p, p_star| {
            if p_star > 0.0 {
                *acc += if p > 0.0 {
                    p_star * (p_star / p).ln()
                } else {
                    f64::INFINITY
                };
            }
        },
        |x, y| x + y,
    );
    Ok(kl / n as f64)
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Bounded test functions on blocks `y_{1:l}`. Coordinates are 0-based.
/// Discrete observations enter the smooth families through their symbol
/// value. Every member satisfies `sup |h| <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant,
    /// `1{y_t = s}`.
    Indicator { t: usize, s: usize },
    /// `1{y_t = s, y_u = v}`.
    PairIndicator { t: usize, s: usize, u: usize, v: usize },
    /// `1 / (1 + exp(-(y_t - c) / w))`.
    Sigmoid { t: usize, c: f64, w: f64 },
    /// `max(0, 1 - ((y_t - c) / w)^2)^2`.
    Bump { t: usize, c: f64, w: f64 },
    /// Product of two unit-width sigmoids.
    SigmoidPair { t: usize, c: f64, u: usize, d: f64 },
}

fn real(y: Obs) -> f64 {
    match y {
        Obs::Symbol(s) => s as f64,
        Obs::Real(v) => v,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl TestFunction {
    /// Largest coordinate read.
    fn max_coord(&self) -> usize {
        match *self {
            TestFunction::Constant => 0,
            TestFunction::Indicator { t, .. } | TestFunction::Sigmoid { t, .. } | TestFunction::Bump { t, .. } => t,
            TestFunction::PairIndicator { t, u, .. } | TestFunction::SigmoidPair { t, u, .. } => t.max(u),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        1.0
    }

    pub fn eval(&self, y: &[Obs]) -> f64 {
        let sym = |t: usize| match y[t] {
            Obs::Symbol(s) => Some(s),
            Obs::Real(_) => None,
        };
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Indicator { t, s } => f64::from(u8::from(sym(t) == Some(s))),
            TestFunction::PairIndicator { t, s, u, v } => f64::from(u8::from(sym(t) == Some(s) && sym(u) == Some(v))),
            TestFunction::Sigmoid { t, c, w } => sigmoid((real(y[t]) - c) / w),
            TestFunction::Bump { t, c, w } => {
                let z = (real(y[t]) - c) / w;
                (1.0 - z * z).max(0.0).powi(2)
            }
            TestFunction::SigmoidPair { t, c, u, d } => sigmoid(real(y[t]) - c) * sigmoid(real(y[u]) - d),
        }
    }

    /// Parses identifiers such as `const`, `ind:0:1`, `pair:0:1:2:0`,
    /// `sigmoid:1:0.5:2`, `bump:0:0:1`, `sigpair:0:0:1:0`.
    pub fn parse(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownTestFunction(id.to_string());
        let mut parts = id.split(':');
        let head = parts.next().ok_or_else(unknown)?;
        let rest: Vec<&str> = parts.collect();
        let u = |i: usize| rest.get(i).and_then(|s| s.parse::<usize>().ok()).ok_or_else(unknown);
        let f = |i: usize| {
            rest.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(unknown)
        };
        let arity = |n: usize| if rest.len() == n { Ok(()) } else { Err(unknown()) };
        let h = match head {
            "const" => {
                arity(0)?;
                TestFunction::Constant
            }
            "ind" => {
                arity(2)?;
                TestFunction::Indicator { t: u(0)?, s: u(1)? }
            }
            "pair" => {
                arity(4)?;
                TestFunction::PairIndicator {
                    t: u(0)?,
                    s: u(1)?,
                    u: u(2)?,
                    v: u(3)?,
                }
            }
            "sigmoid" | "bump" => {
                arity(3)?;
                let (t, c, w) = (u(0)?, f(1)?, f(2)?);
                if !(w > 0.0) {
                    return Err(unknown());
                }
                if head == "sigmoid" {
                    TestFunction::Sigmoid { t, c, w }
                } else {
                    TestFunction::Bump { t, c, w }
                }
            }
            "sigpair" => {
                arity(4)?;
                TestFunction::SigmoidPair {
                    t: u(0)?,
                    c: f(1)?,
                    u: u(2)?,
                    d: f(3)?,
                }
            }
            _ => return Err(unknown()),
        };
        Ok(h)
    }

    pub fn id(&self) -> String {
        match *self {
            TestFunction::Constant => "const".into(),
            TestFunction::Indicator { t, s } => format!("ind:{t}:{s}"),
            TestFunction::PairIndicator { t, s, u, v } => format!("pair:{t}:{s}:{u}:{v}"),
            TestFunction::Sigmoid { t, c, w } => format!("sigmoid:{t}:{c}:{w}"),
            TestFunction::Bump { t, c, w } => format!("bump:{t}:{c}:{w}"),
            TestFunction::SigmoidPair { t, c, u, d } => format!("sigpair:{t}:{c}:{u}:{d}"),
        }
    }
}

/// Built-in dictionary for blocks of length `l`: indicators of every symbol
/// at every coordinate plus adjacent pairs when `support` is given, smooth
/// bumps and sigmoids otherwise.
pub fn dictionary(l: usize, support: Option<usize>) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::Constant];
    match support {
        Some(m) => {
            for t in 0..l {
                for s in 0..m {
                    out.push(TestFunction::Indicator { t, s });
                }
            }
            for t in 0..l.saturating_sub(1) {
                for s in 0..m {
                    for v in 0..m {
                        out.push(TestFunction::PairIndicator { t, s, u: t + 1, v });
                    }
                }
            }
        }
        None => {
            for t in 0..l {
                for c in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                    out.push(TestFunction::Sigmoid { t, c, w: 1.0 });
                    out.push(TestFunction::Bump { t, c, w: 1.5 });
                }
            }
            for t in 0..l.saturating_sub(1) {
                out.push(TestFunction::SigmoidPair { t, c: 0.0, u: t + 1, d: 0.0 });
            }
        }
    }
    out
}

/// `|∫ h dP_l^theta - ∫ h dP_l^theta*|` under stationary starts. The Monte
/// Carlo estimate reuses the mixture draws of [`d_l_pseudometric`], so with
/// equal seeds it never exceeds `sup|h|` times the `D_l` estimate.
pub fn weak_functional_gap(
    theta: &HmmParams,
    theta_star: &HmmParams,
    l: usize,
    h: &TestFunction,
    mode: EvalMode,
) -> Result<Estimate> {
    check_pair(theta, theta_star)?;
    if l == 0 || h.max_coord() >= l {
        return Err(Error::invalid(format!(
            "test function `{}` reads past a block of length {l}",
            h.id()
        )));
    }
    match mode {
        EvalMode::Exact => {
            if !theta.is_discrete() {
                return Err(Error::ExactUnavailable("continuous emissions"));
            }
            let support = common_support(theta, theta_star);
            block_budget(support, l)?;
            let a = BlockModel::new(theta, stationary_probs(theta)?, support)?;
            let b = BlockModel::new(theta_star, stationary_probs(theta_star)?, support)?;
            let v = fold_blocks(
                &a,
                &b,
                theta.k(),
                support,
                l,
                0.0,
                |acc, block, pa, pb| {
                    let y: Vec<Obs> = block.iter().map(|&s| Obs::Symbol(s)).collect();
                    *acc += h.eval(&y) * (pa - pb);
                },
                |x, y| x + y,
            );
            Ok(Estimate::exact(v.abs()))
        }
        EvalMode::MonteCarlo { n_samples, seed } => {
            let m = mixture_block_draws(theta, theta_star, l, n_samples, seed, |y, pa, pb| {
                let mix = 0.5 * (pa + pb);
                if mix > 0.0 {
                    h.eval(y) * (pa - pb) / mix
                } else {
                    0.0
                }
            })?;
            let e = m.estimate();
            Ok(Estimate {
                value: e.value.abs(),
                std_err: e.std_err,
            })
        }
    }
}

pub fn weak_functional_gap_by_id(
    theta: &HmmParams,
    theta_star: &HmmParams,
    l: usize,
    h_id: &str,
    mode: EvalMode,
) -> Result<Estimate> {
    weak_functional_gap(theta, theta_star, l, &TestFunction::parse(h_id)?, mode)
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

/// A metric to evaluate against the truth for every posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricSpec {
    DL { l: usize },
    AlignedQ,
    AlignedEmission,
    KlBound { n: usize },
    KlExact { n: usize },
    WeakGap { l: usize, h: String },
}

impl MetricSpec {
    pub fn name(&self) -> String {
        match self {
            MetricSpec::DL { .. } => "d_l".into(),
            MetricSpec::AlignedQ => "aligned_q".into(),
            MetricSpec::AlignedEmission => "aligned_emission".into(),
            MetricSpec::KlBound { .. } => "kl_bound".into(),
            MetricSpec::KlExact { .. } => "kl_exact".into(),
            MetricSpec::WeakGap { h, .. } => format!("weak_gap:{h}"),
        }
    }

    /// The string [`MetricSpec::parse`] reads back.
    pub fn id(&self) -> String {
        match self {
            MetricSpec::DL { l } => format!("d_l:{l}"),
            MetricSpec::KlBound { n } => format!("kl_bound:{n}"),
            MetricSpec::KlExact { n } => format!("kl_exact:{n}"),
            MetricSpec::WeakGap { l, h } => format!("weak_gap:{l}:{h}"),
            _ => self.name(),
        }
    }

    /// Block length or sequence length the metric is computed at.
    pub fn length(&self) -> Option<usize> {
        match *self {
            MetricSpec::DL { l } | MetricSpec::WeakGap { l, .. } => Some(l),
            MetricSpec::KlBound { n } | MetricSpec::KlExact { n } => Some(n),
            _ => None,
        }
    }

    /// Parses `d_l:3`, `aligned_q`, `aligned_emission`, `kl_bound:10`,
    /// `kl_exact:6`, `weak_gap:3:<test function id>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown metric `{s}`"));
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let num = |r: &str| r.parse::<usize>().map_err(|_| bad());
        Ok(match head {
            "d_l" => MetricSpec::DL { l: num(rest)? },
            "aligned_q" if rest.is_empty() => MetricSpec::AlignedQ,
            "aligned_emission" if rest.is_empty() => MetricSpec::AlignedEmission,
            "kl_bound" => MetricSpec::KlBound { n: num(rest)? },
            "kl_exact" => MetricSpec::KlExact { n: num(rest)? },
            "weak_gap" => {
                let (l, h) = rest.split_once(':').ok_or_else(bad)?;
                TestFunction::parse(h)?;
                MetricSpec::WeakGap {
                    l: num(l)?,
                    h: h.to_string(),
                }
            }
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub metric: String,
    pub l: Option<usize>,
    pub mode: String,
    pub value: f64,
    pub stderr: f64,
}

fn mode_name(mode: EvalMode) -> String {
    match mode {
        EvalMode::Exact => "exact".into(),
        EvalMode::MonteCarlo { .. } => "monte_carlo".into(),
    }
}

/// Evaluates one metric on one sample. `mode` is reseeded by the caller.
pub fn evaluate_metric(theta: &HmmParams, truth: &HmmParams, spec: &MetricSpec, mode: EvalMode) -> Result<Estimate> {
    match spec {
        MetricSpec::DL { l } => d_l_pseudometric(theta, truth, *l, mode),
        MetricSpec::AlignedQ => Ok(Estimate::exact(align_label_switching(theta, truth, mode)?.q_distance)),
        MetricSpec::AlignedEmission => Ok(Estimate::exact(align_label_switching(theta, truth, mode)?.emission_max())),
        MetricSpec::KlBound { n } => Ok(Estimate::exact(kl_rate_upper_bound(theta, truth, *n, None, mode)?.total)),
        MetricSpec::KlExact { n } => kl_rate_exact_discrete(theta, truth, *n).map(Estimate::exact),
        MetricSpec::WeakGap { l, h } => weak_functional_gap_by_id(theta, truth, *l, h, mode),
    }
}

/// Every metric on every sample, in parallel over samples. Records come out
/// ordered by sample, then by metric. Continuous emissions use `mc_samples`
/// draws per integral, seeded from `(seed, sample, metric)` only.
pub fn evaluate_samples(
    samples: &[HmmParams],
    truth: &HmmParams,
    metrics: &[MetricSpec],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    let per_sample = par::map_indexed(samples.len(), |i| -> Result<Vec<MetricRecord>> {
        metrics
            .iter()
            .enumerate()
            .map(|(m, spec)| {
                let tag = ((i as u64) << 16) | m as u64;
                let mode = if truth.is_discrete() {
                    EvalMode::Exact
                } else {
                    EvalMode::MonteCarlo {
                        n_samples: mc_samples,
                        seed: crate::rng::derive_seed(seed, tag),
                    }
                };
                let e = evaluate_metric(&samples[i], truth, spec, mode)?;
                Ok(MetricRecord {
                    sample_id: i,
                    metric: spec.name(),
                    l: spec.length(),
                    mode: mode_name(mode),
                    value: e.value,
                    stderr: e.std_err,
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in per_sample {
        out.extend(r?);
    }
    Ok(out)
}
