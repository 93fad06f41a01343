//! Emission families and the L1 distances between them.
//!
//! Three families are supported: a pmf over the non-negative integers, a
//! finite location-scale mixture of Gaussians, and a translated density
//! `g(y - m)` whose base `g` is itself a Gaussian mixture. Densities are
//! taken with respect to counting measure (discrete) or Lebesgue measure.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::child_rng;
use crate::stats::{Estimate, Moments};

const SUM_TOL: f64 = 1e-12;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Default number of draws for Monte Carlo L1 estimates.
pub const DEFAULT_L1_SAMPLES: usize = 200_000;

/// One observation: a symbol for discrete emissions, a real otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Obs {
    Symbol(usize),
    Real(f64),
}

impl Obs {
    pub fn as_real(self) -> f64 {
        match self {
            Obs::Symbol(s) => s as f64,
            Obs::Real(y) => y,
        }
    }
}

impl std::fmt::Display for Obs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Obs::Symbol(s) => write!(f, "{s}"),
            Obs::Real(y) => write!(f, "{y:?}"),
        }
    }
}

/// Draws an index from a probability vector by inversion.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Probability mass function on `{0, 1, ..., len-1}`.
///
/// When produced by a truncated Dirichlet-process draw the last symbol holds
/// the folded tail mass; `tail_symbol` records that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEmission {
    pmf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail_symbol: Option<usize>,
}

impl DiscreteEmission {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        check_probabilities(&pmf, "pmf")?;
        Ok(DiscreteEmission {
            pmf,
            tail_symbol: None,
        })
    }

    /// A pmf whose last symbol stands for all of the truncated tail.
    pub fn with_tail(pmf: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(pmf)?;
        e.tail_symbol = Some(e.pmf.len() - 1);
        Ok(e)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn support_len(&self) -> usize {
        self.pmf.len()
    }

    pub fn tail_symbol(&self) -> Option<usize> {
        self.tail_symbol
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        self.pmf.get(symbol).copied().unwrap_or(0.0)
    }

    /// Point mass on `symbol`, padded to `len` symbols.
    pub fn point_mass(symbol: usize, len: usize) -> Result<Self> {
        if symbol >= len {
            return Err(Error::invalid("point mass symbol outside support"));
        }
        let mut pmf = vec![0.0; len];
        pmf[symbol] = 1.0;
        Self::new(pmf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianAtom {
    pub weight: f64,
    pub loc: f64,
    pub scale: f64,
}

/// `y -> sum_r w_r * phi_{sigma_r}(y - z_r)`: a Gaussian convolved with a
/// finite atomic mixing measure over (location, scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureEmission {
    atoms: Vec<GaussianAtom>,
}

impl GaussianMixtureEmission {
    pub fn new(atoms: Vec<GaussianAtom>) -> Result<Self> {
        let w: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
        check_probabilities(&w, "mixture weights")?;
        if atoms
            .iter()
            .any(|a| !(a.scale > 0.0) || !a.scale.is_finite() || !a.loc.is_finite())
        {
            return Err(Error::invalid("mixture atom with non-positive scale or non-finite location"));
        }
        Ok(GaussianMixtureEmission { atoms })
    }

    pub fn normal(loc: f64, scale: f64) -> Result<Self> {
        Self::new(vec![GaussianAtom {
            weight: 1.0,
            loc,
            scale,
        }])
    }

    pub fn atoms(&self) -> &[GaussianAtom] {
        &self.atoms
    }

    pub fn density(&self, y: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let u = (y - a.loc) / a.scale;
                a.weight * INV_SQRT_2PI * (-0.5 * u * u).exp() / a.scale
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.loc).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let w: Vec<f64> = self.atoms.iter().map(|a| a.weight).collect();
        let a = &self.atoms[sample_categorical(&w, rng)];
        let z: f64 = StandardNormal.sample(rng);
        a.loc + a.scale * z
    }
}

/// `y -> g(y - shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatedEmission {
    pub base: GaussianMixtureEmission,
    pub shift: f64,
}

impl TranslatedEmission {
    pub fn new(base: GaussianMixtureEmission, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::invalid("non-finite shift"));
        }
        Ok(TranslatedEmission { base, shift })
    }
}

/// Checks the ordering `0 = m_1 < m_2 < ... < m_k` required of the shifts of
/// a translated-emission model.
pub fn shifts_are_ordered(emissions: &[EmissionModel]) -> bool {
    let shifts: Option<Vec<f64>> = emissions
        .iter()
        .map(|e| match e {
            EmissionModel::Translated(t) => Some(t.shift),
            _ => None,
        })
        .collect();
    match shifts {
        Some(m) => m.first() == Some(&0.0) && m.windows(2).all(|w| w[0] < w[1]),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EmissionModel {
    Discrete(DiscreteEmission),
    GaussianMixture(GaussianMixtureEmission),
    Translated(TranslatedEmission),
}

impl From<DiscreteEmission> for EmissionModel {
    fn from(e: DiscreteEmission) -> Self {
        EmissionModel::Discrete(e)
    }
}

impl From<GaussianMixtureEmission> for EmissionModel {
    fn from(e: GaussianMixtureEmission) -> Self {
        EmissionModel::GaussianMixture(e)
    }
}

impl From<TranslatedEmission> for EmissionModel {
    fn from(e: TranslatedEmission) -> Self {
        EmissionModel::Translated(e)
    }
}

impl EmissionModel {
    pub fn discrete(pmf: Vec<f64>) -> Result<Self> {
        DiscreteEmission::new(pmf).map(Into::into)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, EmissionModel::Discrete(_))
    }

    pub fn as_discrete(&self) -> Option<&DiscreteEmission> {
        match self {
            EmissionModel::Discrete(d) => Some(d),
            _ => None,
        }
    }

    /// Pointwise density. Discrete families only accept symbols and
    /// continuous families only accept reals.
    pub fn density(&self, y: Obs) -> Result<f64> {
        match (self, y) {
            (EmissionModel::Discrete(d), Obs::Symbol(s)) => Ok(d.prob(s)),
            (EmissionModel::GaussianMixture(g), Obs::Real(y)) => Ok(g.density(y)),
            (EmissionModel::Translated(t), Obs::Real(y)) => Ok(t.base.density(y - t.shift)),
            (EmissionModel::Discrete(_), Obs::Real(y)) => Err(Error::DomainMismatch(format!(
                "real observation {y} given to a discrete emission"
            ))),
            (_, Obs::Symbol(s)) => Err(Error::DomainMismatch(format!(
                "symbol {s} given to a continuous emission"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Obs {
        match self {
            EmissionModel::Discrete(d) => Obs::Symbol(sample_categorical(&d.pmf, rng)),
            EmissionModel::GaussianMixture(g) => Obs::Real(g.sample(rng)),
            EmissionModel::Translated(t) => Obs::Real(t.shift + t.base.sample(rng)),
        }
    }

    pub(crate) fn same_domain(&self, other: &EmissionModel) -> bool {
        self.is_discrete() == other.is_discrete()
    }
}

/// How an integral over the observation space is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    MonteCarlo { n_samples: usize, seed: u64 },
}

impl EvalMode {
    pub fn monte_carlo(seed: u64) -> Self {
        EvalMode::MonteCarlo {
            n_samples: DEFAULT_L1_SAMPLES,
            seed,
        }
    }

    /// Exact for discrete families, default Monte Carlo otherwise.
    pub fn natural(discrete: bool, seed: u64) -> Self {
        if discrete {
            EvalMode::Exact
        } else {
            EvalMode::monte_carlo(seed)
        }
    }

    pub(crate) fn reseeded(self, tag: u64) -> Self {
        match self {
            EvalMode::Exact => EvalMode::Exact,
            EvalMode::MonteCarlo { n_samples, seed } => EvalMode::MonteCarlo {
                n_samples,
                seed: crate::rng::derive_seed(seed, tag),
            },
        }
    }
}

/// `∫ |f - g| dλ`, a value in `[0, 2]`.
///
/// Exact mode sums over the discrete support. Monte Carlo mode draws from
/// the equal mixture `(f + g) / 2` and averages `|f - g| / ((f + g) / 2)`.
pub fn l1_distance(f: &EmissionModel, g: &EmissionModel, mode: EvalMode) -> Result<Estimate> {
    if !f.same_domain(g) {
        return Err(Error::DomainMismatch(
            "L1 distance between a discrete and a continuous emission".into(),
        ));
    }
    match mode {
        EvalMode::Exact => match (f, g) {
            (EmissionModel::Discrete(a), EmissionModel::Discrete(b)) => {
                let len = a.support_len().max(b.support_len());
                Ok(Estimate::exact(
                    (0..len).map(|s| (a.prob(s) - b.prob(s)).abs()).sum(),
                ))
            }
            _ => Err(Error::ExactUnavailable("continuous emissions")),
        },
        EvalMode::MonteCarlo { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::invalid("Monte Carlo L1 with zero samples"));
            }
            let chunks = par::chunks(n_samples);
            let parts = par::map_indexed(chunks.len(), |c| {
                let (lo, hi) = chunks[c];
                let mut rng = child_rng(seed, c as u64);
                let mut m = Moments::default();
                for _ in lo..hi {
                    let y = if rng.random::<bool>() {
                        f.sample(&mut rng)
                    } else {
                        g.sample(&mut rng)
                    };
                    // domains already checked
                    let (pf, pg) = (f.density(y).unwrap(), g.density(y).unwrap());
                    let mix = 0.5 * (pf + pg);
                    m.push(if mix > 0.0 { (pf - pg).abs() / mix } else { 0.0 });
                }
                m
            });
            Ok(parts
                .into_iter()
                .fold(Moments::default(), Moments::merge)
                .estimate())
        }
    }
}

/// `d(f, g) = max_j ||f_j - g_j||_1`. The reported standard error is that of
/// the maximizing component.
pub fn emission_d(f: &[EmissionModel], g: &[EmissionModel], mode: EvalMode) -> Result<Estimate> {
    if f.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            found: g.len(),
        });
    }
    if f.is_empty() {
        return Err(Error::invalid("empty emission vectors"));
    }
    let mut best = Estimate::exact(f64::NEG_INFINITY);
    for (j, (a, b)) in f.iter().zip(g).enumerate() {
        let e = l1_distance(a, b, mode.reseeded(j as u64))?;
        if e.value > best.value {
            best = e;
        }
    }
    Ok(best)
}
