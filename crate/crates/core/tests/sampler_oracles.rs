mod common;

use common::*;
use npbhmm::inference::{gibbs_sweep, run_chain, GibbsConfig, PriorSpec};
use npbhmm::priors::{
    check_e1, sample_truncated_dirichlet_row, stick_breaking_weights, DiscreteBase, DpSpec, DrawPath,
    NormalInverseGamma, PmfDescriptor, TruncatedDirichletSpec,
};
use npbhmm::stats::Moments;
use npbhmm::*;
use statrs::distribution::{Beta, ContinuousCDF};

/// Pearson statistic of `xs` against `cdf` on `bins` equiprobable bins.
fn chi_square(xs: &[f64], cdf: impl Fn(f64) -> f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &x in xs {
        let u = cdf(x);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let e = xs.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

// 99.9% quantile of chi-square with 9 degrees of freedom
const CHI2_9_999: f64 = 27.877;

#[test]
fn truncated_dirichlet_rejection_path_has_the_right_law() {
    // first coordinate of Dir(2, 3) restricted to [0.2, 0.8]
    let spec = TruncatedDirichletSpec::new(vec![2.0, 3.0], 0.2).unwrap();
    let beta = Beta::new(2.0, 3.0).unwrap();
    let (lo, hi) = (beta.cdf(0.2), beta.cdf(0.8));
    let mut r = rng(21);
    let xs: Vec<f64> = (0..20_000)
        .map(|_| {
            let d = sample_truncated_dirichlet_row(&spec, &mut r).unwrap();
            assert_eq!(d.path, DrawPath::Rejection);
            d.row[0]
        })
        .collect();
    let stat = chi_square(&xs, |x| (beta.cdf(x) - lo) / (hi - lo), 10);
    assert!(stat < CHI2_9_999, "chi-square {stat}");
}

#[test]
fn truncated_dirichlet_flat_path_has_the_right_law() {
    // flat on {x >= q}: x_0 = q + (1 - 3q) B with B ~ Beta(1, 2)
    let q = 0.1;
    let spec = TruncatedDirichletSpec::new(vec![1.0; 3], q).unwrap();
    let beta = Beta::new(1.0, 2.0).unwrap();
    let mut r = rng(22);
    let xs: Vec<f64> = (0..20_000).map(|_| sample_truncated_dirichlet_row(&spec, &mut r).unwrap().row[0]).collect();
    let stat = chi_square(&xs, |x| beta.cdf((x - q) / (1.0 - 3.0 * q)), 10);
    assert!(stat < CHI2_9_999, "chi-square {stat}");
}

#[test]
fn stick_breaking_first_weight_moments() {
    // W_1 ~ Beta(1, alpha)
    let alpha = 1.5;
    let mut r = rng(23);
    let m: Moments = (0..20_000).map(|_| stick_breaking_weights(alpha, 30, &mut r)[0]).collect();
    let mean = 1.0 / (1.0 + alpha);
    let var = alpha / ((1.0 + alpha).powi(2) * (2.0 + alpha));
    let e = m.estimate();
    assert!((e.value - mean).abs() < 4.0 * e.std_err, "{} vs {mean}", e.value);
    assert!((m.variance() - var).abs() < 0.05 * var);
}

#[test]
fn e1_partial_sums_match_direct_summation() {
    let f = PmfDescriptor::Geometric { ratio: 0.3 };
    let g = PmfDescriptor::Geometric { ratio: 0.5 };
    let report = check_e1(&f, &g, 512);
    assert!(!report.partial_sums.is_empty());
    for &(terms, sum) in &report.partial_sums {
        let direct: f64 = (0..terms).map(|l| 0.7 / 0.5 * 0.6f64.powi(l as i32)).sum();
        assert!((sum - direct).abs() < 1e-12 * direct.max(1.0), "{terms}: {sum} vs {direct}");
    }
    let limit = 0.7 / 0.5 / 0.4;
    assert!((report.value.unwrap() - limit).abs() < 1e-12);
}

/// Posterior cell probabilities of a two-state binary model with five
/// observations, by midpoint integration over
/// `(Q_00, Q_11, f_0(0), f_1(0))`, against the Gibbs chain's occupation
/// frequencies. The prior is flat on `[q, 1 - q]^2 x [0, 1]^2`.
#[test]
fn gibbs_chain_matches_grid_posterior() {
    let q = 0.1;
    let y: Vec<Obs> = [0, 1, 1, 0, 0].iter().map(|&s| Obs::Symbol(s)).collect();
    let prior = PriorSpec {
        transitions: TruncatedDirichletSpec::new(vec![1.0, 1.0], q).unwrap(),
        emissions: DpSpec::discrete(2.0, DiscreteBase::uniform(2).unwrap()).unwrap(),
    };
    let q_bin = |x: f64| (((x - q) / (1.0 - 2.0 * q) * 3.0) as usize).min(2);
    let f_bin = |x: f64| usize::from(x >= 0.5);
    let cell = |a: f64, b: f64, f0: f64, f1: f64| ((q_bin(a) * 3 + q_bin(b)) * 2 + f_bin(f0)) * 2 + f_bin(f1);

    let g = 24;
    let qs: Vec<f64> = (0..g).map(|i| q + (1.0 - 2.0 * q) * (i as f64 + 0.5) / g as f64).collect();
    let fs: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
    let mut grid = vec![0.0; 36];
    for &a in &qs {
        for &b in &qs {
            let tm = TransitionMatrix::new(vec![vec![a, 1.0 - a], vec![1.0 - b, b]], q).unwrap();
            for &f0 in &fs {
                for &f1 in &fs {
                    let theta = HmmParams::new(
                        tm.clone(),
                        vec![0.5, 0.5],
                        vec![
                            EmissionModel::discrete(vec![f0, 1.0 - f0]).unwrap(),
                            EmissionModel::discrete(vec![f1, 1.0 - f1]).unwrap(),
                        ],
                    )
                    .unwrap();
                    grid[cell(a, b, f0, f1)] += brute_log_likelihood(&theta, &y).exp();
                }
            }
        }
    }
    let z: f64 = grid.iter().sum();
    grid.iter_mut().for_each(|p| *p /= z);

    let mut r = rng(24);
    let mut theta = prior.sample(&[0.5, 0.5], &mut r).unwrap();
    let mut freq = vec![0.0; 36];
    let (burn, iters) = (1_000, 200_000);
    for it in 0..burn + iters {
        theta = gibbs_sweep(&theta, &y, &prior, &mut r).unwrap().params;
        if it >= burn {
            let t = theta.transitions();
            let f = |i: usize| theta.emissions()[i].as_discrete().unwrap().pmf()[0];
            freq[cell(t.get(0, 0), t.get(1, 1), f(0), f(1))] += 1.0 / iters as f64;
        }
    }
    let tv: f64 = 0.5 * grid.iter().zip(&freq).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn gaussian_chain_recovers_separated_means() {
    let truth = HmmParams::stationary(
        TransitionMatrix::new(vec![vec![0.8, 0.2], vec![0.3, 0.7]], 0.1).unwrap(),
        vec![
            GaussianMixtureEmission::normal(-3.0, 1.0).unwrap().into(),
            GaussianMixtureEmission::normal(3.0, 1.0).unwrap().into(),
        ],
    )
    .unwrap();
    let (_, y) = simulate_seeded(&truth, 400, 25).unwrap();
    let prior = PriorSpec {
        transitions: TruncatedDirichletSpec::new(vec![1.0, 1.0], 0.1).unwrap(),
        emissions: DpSpec::gaussian(
            1.0,
            NormalInverseGamma {
                mean: 0.0,
                kappa: 0.1,
                shape: 2.0,
                scale: 2.0,
            },
            20,
        )
        .unwrap(),
    };
    let config = GibbsConfig::new(800, 300, 5, 3, prior).unwrap();
    let samples = run_chain(&y, &config, 0).unwrap();
    assert_eq!(samples.len(), config.n_samples());
    let mean_of = |e: &EmissionModel| match e {
        EmissionModel::GaussianMixture(g) => g.mean(),
        _ => unreachable!(),
    };
    let mut lo = Moments::default();
    let mut hi = Moments::default();
    for s in &samples {
        let (a, b) = (mean_of(&s.params.emissions()[0]), mean_of(&s.params.emissions()[1]));
        lo.push(a.min(b));
        hi.push(a.max(b));
    }
    assert!((lo.mean() + 3.0).abs() < 0.5, "low mean {}", lo.mean());
    assert!((hi.mean() - 3.0).abs() < 0.5, "high mean {}", hi.mean());
}
