//! Brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here calls the forward or backward passes of
//! the library.
#![allow(dead_code)]

use npbhmm::{EmissionModel, GaussianAtom, GaussianMixtureEmission, HmmParams, Obs, TransitionMatrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dirichlet_flat<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).unwrap();
    let v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// `floor + (1 - k floor) * Dir(1, .., 1)`, so every entry respects the floor.
pub fn floored_simplex<R: Rng>(k: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = dirichlet_flat(k, rng).into_iter().map(|x| floor + (1.0 - k as f64 * floor) * x).collect();
    // exact unit sum so construction tolerances never bite
    let last = k - 1;
    v[last] = 0.0;
    v[last] = 1.0 - v.iter().sum::<f64>();
    v
}

pub fn random_q<R: Rng>(k: usize, floor: f64, rng: &mut R) -> TransitionMatrix {
    let rows = (0..k).map(|_| floored_simplex(k, floor, rng)).collect();
    TransitionMatrix::new(rows, floor).unwrap()
}

pub fn random_discrete<R: Rng>(support: usize, rng: &mut R) -> EmissionModel {
    let mut p = dirichlet_flat(support, rng);
    // keep every symbol charged
    for x in p.iter_mut() {
        *x = 0.02 / support as f64 + 0.98 * *x;
    }
    let last = support - 1;
    p[last] = 0.0;
    p[last] = 1.0 - p.iter().sum::<f64>();
    EmissionModel::discrete(p).unwrap()
}

pub fn random_gaussian<R: Rng>(rng: &mut R) -> EmissionModel {
    let n_atoms = rng.random_range(1..=2);
    let w = dirichlet_flat(n_atoms, rng);
    let loc = Normal::new(0.0, 2.0).unwrap();
    let atoms = w
        .into_iter()
        .map(|weight| GaussianAtom {
            weight,
            loc: loc.sample(rng),
            scale: rng.random_range(0.5..2.0),
        })
        .collect();
    EmissionModel::from(GaussianMixtureEmission::new(atoms).unwrap())
}

/// Random parameter with an arbitrary (floor-respecting) initial law.
pub fn random_params<R: Rng>(k: usize, floor: f64, discrete: bool, support: usize, rng: &mut R) -> HmmParams {
    let q = random_q(k, floor, rng);
    let mu = floored_simplex(k, floor, rng);
    let emissions = (0..k)
        .map(|_| if discrete { random_discrete(support, rng) } else { random_gaussian(rng) })
        .collect();
    HmmParams::new(q, mu, emissions).unwrap()
}

pub fn random_stationary<R: Rng>(k: usize, floor: f64, support: usize, rng: &mut R) -> HmmParams {
    let q = random_q(k, floor, rng);
    let emissions = (0..k).map(|_| random_discrete(support, rng)).collect();
    HmmParams::stationary(q, emissions).unwrap()
}

pub fn sample_obs<R: Rng>(theta: &HmmParams, n: usize, rng: &mut R) -> Vec<Obs> {
    let draw = |p: &[f64], rng: &mut R| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut x = draw(theta.mu(), rng);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 {
            x = draw(theta.transitions().row(x), rng);
        }
        out.push(theta.emissions()[x].sample(rng));
    }
    out
}

/// Calls `visit(path, weight)` for every hidden path, where `weight` is the
/// joint density `mu(x_1) f(y_1) prod Q f`.
pub fn for_each_path(theta: &HmmParams, y: &[Obs], mut visit: impl FnMut(&[usize], f64)) {
    let k = theta.k();
    let n = y.len();
    let dens: Vec<Vec<f64>> = y
        .iter()
        .map(|&o| theta.emissions().iter().map(|e| e.density(o).unwrap()).collect())
        .collect();
    let mut path = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for t in (0..n).rev() {
            path[t] = c % k;
            c /= k;
        }
        let mut w = theta.mu()[path[0]] * dens[0][path[0]];
        for t in 1..n {
            w *= theta.transitions().get(path[t - 1], path[t]) * dens[t][path[t]];
        }
        visit(&path, w);
    }
}

pub fn brute_log_likelihood(theta: &HmmParams, y: &[Obs]) -> f64 {
    let mut s = 0.0;
    for_each_path(theta, y, |_, w| s += w);
    s.ln()
}

/// `(marginals[t][i], block[a])` where the block is `X_{1:m}` indexed with
/// the first state most significant.
pub fn brute_smoothing(theta: &HmmParams, y: &[Obs], m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = theta.k();
    let mut marg = vec![vec![0.0; k]; y.len()];
    let mut block = vec![0.0; k.pow(m as u32)];
    let mut z = 0.0;
    for_each_path(theta, y, |path, w| {
        z += w;
        for (t, &x) in path.iter().enumerate() {
            marg[t][x] += w;
        }
        let idx = path[..m].iter().fold(0, |acc, &s| acc * k + s);
        block[idx] += w;
    });
    marg.iter_mut().flatten().for_each(|v| *v /= z);
    block.iter_mut().for_each(|v| *v /= z);
    (marg, block)
}

/// Stationary law by power iteration on `Q`, independent of the library's
/// linear solve.
pub fn power_stationary(q: &TransitionMatrix) -> Vec<f64> {
    let k = q.k();
    let mut p = vec![1.0 / k as f64; k];
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..k).map(|j| (0..k).map(|i| p[i] * q.get(i, j)).sum()).collect();
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < 1e-16 {
            break;
        }
    }
    p
}

/// `l`-block pmf from the stationary start by path enumeration.
pub fn brute_block_pmf(theta: &HmmParams, l: usize) -> Vec<f64> {
    let s = theta.support_len();
    let stat = HmmParams::new(
        theta.transitions().clone(),
        power_stationary(theta.transitions()),
        theta.emissions().to_vec(),
    )
    .unwrap();
    let mut out = vec![0.0; s.pow(l as u32)];
    let mut y = vec![Obs::Symbol(0); l];
    for code in 0..out.len() {
        let mut c = code;
        for t in (0..l).rev() {
            y[t] = Obs::Symbol(c % s);
            c /= s;
        }
        let mut p = 0.0;
        for_each_path(&stat, &y, |_, w| p += w);
        out[code] = p;
    }
    out
}

pub fn brute_d_l(a: &HmmParams, b: &HmmParams, l: usize) -> f64 {
    brute_block_pmf(a, l)
        .iter()
        .zip(brute_block_pmf(b, l))
        .map(|(x, y)| (x - y).abs())
        .sum()
}
