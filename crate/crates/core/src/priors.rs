//! Prior constructions: floor-truncated Dirichlet rows for transition
//! matrices, Dirichlet processes on the integers (via normalized Gamma
//! variables) and on Gaussian location-scale mixtures (via stick-breaking),
//! plus numeric checkers for the summability conditions on the truth and
//! the base measure.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::emissions::{DiscreteEmission, GaussianAtom, GaussianMixtureEmission};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Rejection attempts before falling back to the affine reparameterization.
pub const REJECTION_BUDGET: usize = 10_000;
/// Fallback is refused when less than this fraction of the simplex is left
/// after the floor is imposed (`1 - k q`).
pub const NEAR_DEGENERATE_SLACK: f64 = 0.01;
/// Resampling attempts for a Gamma-normalized draw that came out all zero.
pub const ZERO_DRAW_BUDGET: usize = 100;
pub const DEFAULT_DISCRETE_TRUNCATION: usize = 200;
pub const DEFAULT_STICK_DEPTH: usize = 50;

/// Dirichlet(`alpha`) restricted to `{x : min_j x_j >= q_floor}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDirichletSpec {
    pub alpha: Vec<f64>,
    pub q_floor: f64,
}

impl TruncatedDirichletSpec {
    pub fn new(alpha: Vec<f64>, q_floor: f64) -> Result<Self> {
        let spec = TruncatedDirichletSpec { alpha, q_floor };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("Dirichlet concentrations must be positive"));
        }
        if !(self.q_floor >= 0.0) || self.q_floor * self.k() as f64 > 1.0 + SUM_TOL {
            return Err(Error::invalid(format!(
                "floor {} leaves an empty constraint set for k = {}",
                self.q_floor,
                self.k()
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Same floor, concentrations shifted by `counts` (the row posterior).
    pub fn posterior(&self, counts: &[u64]) -> Result<Self> {
        if counts.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: counts.len(),
            });
        }
        Ok(TruncatedDirichletSpec {
            alpha: self.alpha.iter().zip(counts).map(|(a, &c)| a + c as f64).collect(),
            q_floor: self.q_floor,
        })
    }

    fn slack(&self) -> f64 {
        1.0 - self.k() as f64 * self.q_floor
    }
}

/// How a truncated-Dirichlet draw was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawPath {
    /// The constraint set is the single point `(1/k, ..., 1/k)`.
    Degenerate,
    /// Flat concentrations: the affine image of a uniform draw, exact.
    Affine,
    /// Accepted from the unrestricted Dirichlet, exact.
    Rejection,
    /// Rejection budget exhausted: affine image of an unrestricted draw.
    /// Approximate for non-flat concentrations.
    AffineFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDirichletDraw {
    pub row: Vec<f64>,
    pub path: DrawPath,
}

/// Dirichlet draw through independent Gamma variables. Zero shapes give
/// zero components.
pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..ZERO_DRAW_BUDGET {
        let z = gamma_vector(alpha, rng)?;
        let s: f64 = z.iter().sum();
        if s > 0.0 && s.is_finite() {
            return Ok(z.into_iter().map(|x| x / s).collect());
        }
    }
    Err(Error::SamplerExhausted(
        "every Gamma component drew zero".into(),
    ))
}

fn gamma_vector<R: Rng + ?Sized>(shapes: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    shapes
        .iter()
        .map(|&a| {
            if a == 0.0 {
                Ok(0.0)
            } else {
                Gamma::new(a, 1.0)
                    .map(|g| g.sample(rng))
                    .map_err(|e| Error::invalid(format!("Gamma shape {a}: {e}")))
            }
        })
        .collect()
}

/// One row of a floor-constrained transition matrix.
///
/// Flat concentrations are sampled exactly as `q 1 + (1 - k q) w` with `w`
/// uniform on the simplex. Otherwise the unrestricted Dirichlet is sampled
/// until a draw clears the floor; after [`REJECTION_BUDGET`] failures the
/// affine map is applied to an unrestricted draw instead, unless the
/// constraint set is nearly a point, in which case the call fails.
pub fn sample_truncated_dirichlet_row<R: Rng + ?Sized>(
    spec: &TruncatedDirichletSpec,
    rng: &mut R,
) -> Result<TruncatedDirichletDraw> {
    spec.validate()?;
    let k = spec.k();
    let slack = spec.slack();
    if slack <= SUM_TOL {
        return Ok(TruncatedDirichletDraw {
            row: vec![1.0 / k as f64; k],
            path: DrawPath::Degenerate,
        });
    }
    let affine = |w: Vec<f64>| -> Vec<f64> {
        let mut row: Vec<f64> = w.iter().map(|&x| spec.q_floor + slack * x).collect();
        // put the rounding residue on the largest entry so the floor stays exact
        let s: f64 = row.iter().sum();
        let imax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        row[imax] += 1.0 - s;
        row
    };
    if spec.alpha.iter().all(|&a| a == 1.0) {
        let w = sample_dirichlet(&spec.alpha, rng)?;
        return Ok(TruncatedDirichletDraw {
            row: affine(w),
            path: DrawPath::Affine,
        });
    }
    for _ in 0..REJECTION_BUDGET {
        let x = sample_dirichlet(&spec.alpha, rng)?;
        if x.iter().all(|&v| v >= spec.q_floor) {
            return Ok(TruncatedDirichletDraw {
                row: x,
                path: DrawPath::Rejection,
            });
        }
    }
    if slack < NEAR_DEGENERATE_SLACK {
        return Err(Error::SamplerExhausted(format!(
            "truncated Dirichlet rejection failed {REJECTION_BUDGET} times with floor {} near 1/{k}",
            spec.q_floor
        )));
    }
    let w = sample_dirichlet(&spec.alpha, rng)?;
    Ok(TruncatedDirichletDraw {
        row: affine(w),
        path: DrawPath::AffineFallback,
    })
}

/// A log density known only up to an additive constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnnormalizedLogDensity {
    pub value: f64,
    pub normalized: bool,
}

/// `sum_j (alpha_j - 1) log x_j` on the constraint set, `-inf` outside it.
pub fn truncated_dirichlet_logpdf(spec: &TruncatedDirichletSpec, x: &[f64]) -> UnnormalizedLogDensity {
    let feasible = x.len() == spec.k() && x.iter().all(|&v| v >= spec.q_floor);
    let value = if feasible {
        spec.alpha
            .iter()
            .zip(x)
            .map(|(&a, &v)| if a == 1.0 { 0.0 } else { (a - 1.0) * v.ln() })
            .sum()
    } else {
        f64::NEG_INFINITY
    };
    UnnormalizedLogDensity {
        value,
        normalized: false,
    }
}

/// Base measure on the integers, cut at `pmf.len()` symbols with the
/// remaining mass kept as `tail_mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBase {
    pub pmf: Vec<f64>,
    #[serde(default)]
    pub tail_mass: f64,
}

impl DiscreteBase {
    pub fn new(pmf: Vec<f64>, tail_mass: f64) -> Result<Self> {
        let b = DiscreteBase { pmf, tail_mass };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::new(vec![1.0 / len as f64; len], 0.0)
    }

    /// `G(l) = (1 - r) r^l` cut after `truncation` symbols.
    pub fn geometric(ratio: f64, truncation: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::invalid("geometric ratio must lie in [0, 1)"));
        }
        let pmf: Vec<f64> = (0..truncation).map(|l| (1.0 - ratio) * ratio.powi(l as i32)).collect();
        let tail = ratio.powi(truncation as i32);
        Self::new(pmf, tail)
    }

    fn validate(&self) -> Result<()> {
        if self.pmf.is_empty() {
            return Err(Error::invalid("empty base measure"));
        }
        if self.pmf.iter().chain([&self.tail_mass]).any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("negative base mass"));
        }
        let s = self.pmf.iter().sum::<f64>() + self.tail_mass;
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("base measure sums to {s}")));
        }
        Ok(())
    }

    pub fn truncation(&self) -> usize {
        self.pmf.len()
    }

    /// Number of symbols in a draw: the cut plus one tail symbol if needed.
    pub fn draw_len(&self) -> usize {
        self.pmf.len() + usize::from(self.tail_mass > 0.0)
    }

    /// Base masses per draw symbol, tail last.
    pub fn masses(&self) -> Vec<f64> {
        let mut m = self.pmf.clone();
        if self.tail_mass > 0.0 {
            m.push(self.tail_mass);
        }
        m
    }
}

/// Conjugate base on (location, scale): `sigma^2 ~ InvGamma(shape, scale)`,
/// `z | sigma ~ N(mean, sigma^2 / kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalInverseGamma {
    pub mean: f64,
    pub kappa: f64,
    pub shape: f64,
    pub scale: f64,
}

impl NormalInverseGamma {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.shape > 0.0 && self.scale > 0.0) || !self.mean.is_finite() {
            return Err(Error::invalid("normal-inverse-gamma hyperparameters must be positive"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let precision = Gamma::new(self.shape, 1.0 / self.scale).unwrap().sample(rng);
        let sigma = precision.sqrt().recip();
        let z = Normal::new(self.mean, sigma / self.kappa.sqrt()).unwrap().sample(rng);
        (z, sigma)
    }

    /// Posterior given observations all drawn from the same atom.
    pub fn posterior(&self, ys: &[f64]) -> NormalInverseGamma {
        if ys.is_empty() {
            return *self;
        }
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let ss: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
        let kappa = self.kappa + n;
        NormalInverseGamma {
            mean: (self.kappa * self.mean + n * ybar) / kappa,
            kappa,
            shape: self.shape + 0.5 * n,
            scale: self.scale + 0.5 * ss + self.kappa * n * (ybar - self.mean).powi(2) / (2.0 * kappa),
        }
    }

    pub fn scale_law(&self) -> ScaleLaw {
        ScaleLaw::InverseGammaVariance {
            shape: self.shape,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMeasure {
    Discrete(DiscreteBase),
    NormalInverseGamma(NormalInverseGamma),
}

/// `DP(alpha G_0)` with a truncation level: the support cut for discrete
/// bases (carried by the base itself) or the stick-breaking depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSpec {
    pub alpha: f64,
    pub base: BaseMeasure,
    #[serde(default = "default_depth")]
    pub truncation: usize,
}

fn default_depth() -> usize {
    DEFAULT_STICK_DEPTH
}

impl DpSpec {
    pub fn discrete(alpha: f64, base: DiscreteBase) -> Result<Self> {
        let truncation = base.truncation();
        let s = DpSpec {
            alpha,
            base: BaseMeasure::Discrete(base),
            truncation,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian(alpha: f64, base: NormalInverseGamma, depth: usize) -> Result<Self> {
        let s = DpSpec {
            alpha,
            base: BaseMeasure::NormalInverseGamma(base),
            truncation: depth,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("DP concentration must be positive"));
        }
        match &self.base {
            BaseMeasure::Discrete(b) => b.validate(),
            BaseMeasure::NormalInverseGamma(b) => {
                if self.truncation == 0 {
                    return Err(Error::invalid("stick-breaking depth must be at least 1"));
                }
                b.validate()
            }
        }
    }

    pub fn discrete_base(&self) -> Option<&DiscreteBase> {
        match &self.base {
            BaseMeasure::Discrete(b) => Some(b),
            _ => None,
        }
    }

    pub fn gaussian_base(&self) -> Option<&NormalInverseGamma> {
        match &self.base {
            BaseMeasure::NormalInverseGamma(b) => Some(b),
            _ => None,
        }
    }
}

/// A Gamma-normalized DP draw together with its normalizer `sum_l Z_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpDiscreteDraw {
    pub emission: DiscreteEmission,
    pub normalizer: f64,
}

/// `f(l) = Z_l / sum Z` with independent `Z_l ~ Gamma(alpha G_0(l) + extra_l, 1)`.
/// The truncated tail is one block with shape `alpha G_0(tail)`. `extra`
/// adds observation counts per symbol (posterior draws).
pub fn sample_dp_discrete_gamma_with<R: Rng + ?Sized>(
    spec: &DpSpec,
    extra: Option<&[u64]>,
    rng: &mut R,
) -> Result<DpDiscreteDraw> {
    spec.validate()?;
    let base = spec
        .discrete_base()
        .ok_or_else(|| Error::invalid("Gamma representation needs a discrete base"))?;
    let mut shapes: Vec<f64> = base.masses().into_iter().map(|m| spec.alpha * m).collect();
    if let Some(counts) = extra {
        if counts.len() > shapes.len() {
            return Err(Error::DomainMismatch(format!(
                "counts cover {} symbols but the truncated support has {}",
                counts.len(),
                shapes.len()
            )));
        }
        for (s, &c) in shapes.iter_mut().zip(counts) {
            *s += c as f64;
        }
    }
    for _ in 0..ZERO_DRAW_BUDGET {
        let z = gamma_vector(&shapes, rng)?;
        let total: f64 = z.iter().sum();
        if total > 0.0 && total.is_finite() {
            let mut pmf: Vec<f64> = z.iter().map(|x| x / total).collect();
            // exact unit mass
            let s: f64 = pmf.iter().sum();
            if let Some(imax) = pmf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) {
                pmf[imax] += 1.0 - s;
            }
            let emission = if base.tail_mass > 0.0 {
                DiscreteEmission::with_tail(pmf)?
            } else {
                DiscreteEmission::new(pmf)?
            };
            return Ok(DpDiscreteDraw {
                emission,
                normalizer: total,
            });
        }
    }
    Err(Error::SamplerExhausted(
        "Gamma-normalized DP draw was zero on every attempt".into(),
    ))
}

pub fn sample_dp_discrete_gamma<R: Rng + ?Sized>(spec: &DpSpec, rng: &mut R) -> Result<DpDiscreteDraw> {
    sample_dp_discrete_gamma_with(spec, None, rng)
}

/// `v ~ Beta(1, alpha)` by inversion, stable for tiny `alpha`.
pub(crate) fn sample_stick<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    1.0 - u.powf(1.0 / alpha)
}

/// Stick-breaking weights of depth `depth`; the last weight takes the
/// remaining mass.
pub fn stick_breaking_weights<R: Rng + ?Sized>(alpha: f64, depth: usize, rng: &mut R) -> Vec<f64> {
    let mut w = Vec::with_capacity(depth);
    let mut rest = 1.0;
    for _ in 0..depth.saturating_sub(1) {
        let v = sample_stick(alpha, rng);
        w.push(rest * v);
        rest *= 1.0 - v;
    }
    let used: f64 = w.iter().sum();
    w.push((1.0 - used).max(0.0));
    w
}

/// Truncated stick-breaking draw of a DP mixture of Gaussians.
pub fn sample_dpm_gaussian<R: Rng + ?Sized>(spec: &DpSpec, rng: &mut R) -> Result<GaussianMixtureEmission> {
    spec.validate()?;
    let base = spec
        .gaussian_base()
        .ok_or_else(|| Error::invalid("stick-breaking mixture needs a (location, scale) base"))?;
    let weights = stick_breaking_weights(spec.alpha, spec.truncation, rng);
    let atoms = weights
        .into_iter()
        .map(|weight| {
            let (loc, scale) = base.sample(rng);
            GaussianAtom { weight, loc, scale }
        })
        .collect();
    GaussianMixtureEmission::new(atoms)
}

// ---------------------------------------------------------------------------
// Condition checkers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub verdict: Verdict,
    /// Value of the series or integral when it is known to be finite.
    pub value: Option<f64>,
    /// `(number of terms, partial sum)` checkpoints.
    pub partial_sums: Vec<(usize, f64)>,
}

impl ConditionReport {
    fn exact(verdict: Verdict, value: Option<f64>) -> Self {
        ConditionReport {
            verdict,
            value,
            partial_sums: Vec::new(),
        }
    }
}

/// A pmf on the integers, finite or with an analytic tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PmfDescriptor {
    Finite { pmf: Vec<f64> },
    /// `p(l) = (1 - ratio) ratio^l`, `l >= 0`.
    Geometric { ratio: f64 },
    Poisson { rate: f64 },
}

impl From<&DiscreteEmission> for PmfDescriptor {
    fn from(e: &DiscreteEmission) -> Self {
        PmfDescriptor::Finite { pmf: e.pmf().to_vec() }
    }
}

impl PmfDescriptor {
    fn ln_prob(&self, l: usize) -> f64 {
        match self {
            PmfDescriptor::Finite { pmf } => pmf.get(l).map_or(f64::NEG_INFINITY, |p| p.ln()),
            PmfDescriptor::Geometric { ratio } => (1.0 - ratio).ln() + l as f64 * ratio.ln(),
            PmfDescriptor::Poisson { rate } => {
                -rate + l as f64 * rate.ln() - ln_gamma(l as f64 + 1.0)
            }
        }
    }

    fn finite_support(&self) -> Option<usize> {
        match self {
            PmfDescriptor::Finite { pmf } => Some(pmf.len()),
            PmfDescriptor::Geometric { ratio } if *ratio == 0.0 => Some(1),
            _ => None,
        }
    }
}

/// Partial sums of `term(l)` for `l < budget`, checkpointed at powers of two.
/// A tail of non-decreasing positive terms is read as divergence.
fn partial_sum_verdict(budget: usize, term: impl Fn(usize) -> f64) -> ConditionReport {
    let budget = budget.max(4);
    let terms: Vec<f64> = (0..budget).map(term).collect();
    let mut partial_sums = Vec::new();
    let mut acc = 0.0;
    for (l, t) in terms.iter().enumerate() {
        acc += t;
        if (l + 1).is_power_of_two() || l + 1 == budget {
            partial_sums.push((l + 1, acc));
        }
    }
    let tail = &terms[budget / 2..];
    let growing = !acc.is_finite()
        || (tail[0] > 0.0 && tail.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
    ConditionReport {
        verdict: if growing { Verdict::Fails } else { Verdict::Inconclusive },
        value: None,
        partial_sums,
    }
}

/// Summability of `f*(l) / G_0(l)` over the integers.
pub fn check_e1(f_star: &PmfDescriptor, g0: &PmfDescriptor, tail_budget: usize) -> ConditionReport {
    use PmfDescriptor::*;
    if let Some(len) = f_star.finite_support() {
        let mut sum = 0.0;
        for l in 0..len {
            let lf = f_star.ln_prob(l);
            if lf == f64::NEG_INFINITY {
                continue;
            }
            let lg = g0.ln_prob(l);
            if lg == f64::NEG_INFINITY {
                return ConditionReport::exact(Verdict::Fails, None);
            }
            sum += (lf - lg).exp();
        }
        return ConditionReport::exact(Verdict::Holds, Some(sum));
    }
    if g0.finite_support().is_some() {
        // infinite support of f* against a finitely supported base
        return ConditionReport::exact(Verdict::Fails, None);
    }
    if let (Geometric { ratio: rf }, Geometric { ratio: rg }) = (f_star, g0) {
        let mut report = partial_sum_verdict(tail_budget, |l| {
            (f_star.ln_prob(l) - g0.ln_prob(l)).exp()
        });
        if rf < rg {
            report.verdict = Verdict::Holds;
            report.value = Some((1.0 - rf) / ((1.0 - rg) * (1.0 - rf / rg)));
        } else {
            report.verdict = Verdict::Fails;
        }
        return report;
    }
    partial_sum_verdict(tail_budget, |l| (f_star.ln_prob(l) - g0.ln_prob(l)).exp())
}

/// Summability of `f*(l) (-log f*(l))`.
pub fn check_t(f_star: &PmfDescriptor, tail_budget: usize) -> ConditionReport {
    let entropy_term = |lp: f64| if lp == f64::NEG_INFINITY { 0.0 } else { -lp * lp.exp() };
    match f_star {
        PmfDescriptor::Finite { pmf } => {
            let h = (0..pmf.len()).map(|l| entropy_term(f_star.ln_prob(l))).sum();
            ConditionReport::exact(Verdict::Holds, Some(h))
        }
        PmfDescriptor::Geometric { ratio } => {
            let r = *ratio;
            let h = if r == 0.0 {
                0.0
            } else {
                -(1.0 - r).ln() - r * r.ln() / (1.0 - r)
            };
            ConditionReport::exact(Verdict::Holds, Some(h))
        }
        PmfDescriptor::Poisson { .. } => {
            partial_sum_verdict(tail_budget, |l| entropy_term(f_star.ln_prob(l)))
        }
    }
}

/// Law of the kernel scale `sigma` under a base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleLaw {
    /// Finitely many `(weight, sigma)` atoms.
    Atomic { atoms: Vec<(f64, f64)> },
    /// `sigma ~ InvGamma(shape, scale)`.
    InverseGamma { shape: f64, scale: f64 },
    /// `sigma^2 ~ InvGamma(shape, scale)` (the conjugate base).
    InverseGammaVariance { shape: f64, scale: f64 },
    /// `log sigma ~ N(mu, s^2)`.
    LogNormal { mu: f64, s: f64 },
    /// `sigma ~ Uniform(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Anything outside the catalog.
    Unsupported { description: String },
}

/// `∫ 1/sigma dG_0`, closed form where the catalog allows it.
pub fn check_b1_base_integral(law: &ScaleLaw) -> ConditionReport {
    let finite = |v: f64| {
        if v.is_finite() {
            ConditionReport::exact(Verdict::Holds, Some(v))
        } else {
            ConditionReport::exact(Verdict::Fails, None)
        }
    };
    match law {
        ScaleLaw::Atomic { atoms } => {
            if atoms.iter().any(|&(w, s)| w > 0.0 && !(s > 0.0)) {
                return ConditionReport::exact(Verdict::Fails, None);
            }
            finite(atoms.iter().map(|&(w, s)| if w > 0.0 { w / s } else { 0.0 }).sum())
        }
        // E[1/sigma] for sigma ~ IG(a, b) is the Gamma(a, rate b) mean
        ScaleLaw::InverseGamma { shape, scale } => finite(shape / scale),
        ScaleLaw::InverseGammaVariance { shape, scale } => {
            finite((ln_gamma(shape + 0.5) - ln_gamma(*shape)).exp() / scale.sqrt())
        }
        ScaleLaw::LogNormal { mu, s } => finite((-mu + 0.5 * s * s).exp()),
        ScaleLaw::Uniform { lo, hi } => {
            if *lo <= 0.0 {
                ConditionReport::exact(Verdict::Fails, None)
            } else {
                finite((hi / lo).ln() / (hi - lo))
            }
        }
        ScaleLaw::Unsupported { .. } => ConditionReport::exact(Verdict::Inconclusive, None),
    }
}
