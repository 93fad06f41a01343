//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits non-zero if any of them fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use itertools::Itertools;
use npbhmm::experiments::{consistency_experiment, kl_lemma_experiment, ldir_validation, summary_table};
use npbhmm::inference::{ffbs_sample_states, gibbs_sweep, PriorSpec};
use npbhmm::io::Config;
use npbhmm::metrics::{
    align_label_switching, d_l_decomposition_bound, d_l_pseudometric, kl_rate_exact_discrete, kl_rate_upper_bound,
    relabel,
};
use npbhmm::priors::{
    check_b1_base_integral, check_e1, check_t, DiscreteBase, DpSpec, PmfDescriptor, ScaleLaw, TruncatedDirichletSpec,
    Verdict,
};
use npbhmm::stats::{batch_means, Moments};
use npbhmm::*;
use rand::Rng;

use common::*;

type Outcome = std::result::Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(limit: Duration, start: Instant, ok: bool, detail: String) -> Outcome {
    let el = start.elapsed();
    verdict(ok && el < limit, format!("{detail}, {:.2}s (limit {}s)", el.as_secs_f64(), limit.as_secs()))
}

fn likelihood_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let k = rng.random_range(1..=3);
        let floor = rng.random_range(0.0..0.9 / k as f64);
        let discrete = case % 2 == 0;
        let theta = random_params(k, floor, discrete, rng.random_range(2..=4), &mut rng);
        let y = sample_obs(&theta, rng.random_range(1..=8), &mut rng);
        let got = log_likelihood_forward(&theta, &y).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_log_likelihood(&theta, &y)).abs());
    }
    timed(Duration::from_secs(10), start, worst <= 1e-10, format!("200 instances, max |diff| {worst:.2e}"))
}

fn smoothing_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let k = rng.random_range(1..=3);
        let floor = rng.random_range(0.0..0.9 / k as f64);
        let theta = random_params(k, floor, case % 2 == 0, rng.random_range(2..=4), &mut rng);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=n.min(3));
        let y = sample_obs(&theta, n, &mut rng);
        let table = smoothing_exact(&theta, &y, m).map_err(|e| e.to_string())?;
        let (marg, block) = brute_smoothing(&theta, &y, m);
        for t in 0..n {
            for (a, b) in table.marginal(t).iter().zip(&marg[t]) {
                worst = worst.max((a - b).abs());
            }
        }
        for (a, b) in table.block().iter().zip(&block) {
            worst = worst.max((a - b).abs());
        }
    }
    timed(Duration::from_secs(10), start, worst <= 1e-12, format!("100 instances, max |diff| {worst:.2e}"))
}

fn windowed_bound() -> Outcome {
    let mut rng = rng(3);
    let (mut pairs, mut violations) = (0usize, 0usize);
    let mut tightest = f64::INFINITY;
    for case in 0..100 {
        let k = rng.random_range(2..=3);
        let floor = rng.random_range(0.05..=0.3);
        let theta = random_params(k, floor, case % 2 == 0, 3, &mut rng);
        let n = rng.random_range(2..=30);
        let y = sample_obs(&theta, n, &mut rng);
        let exact = smoothing_exact(&theta, &y, 1).map_err(|e| e.to_string())?;
        for end in 1..=n {
            for j in 0..end {
                let w = smoothing_windowed(&theta, &y, j, end).map_err(|e| e.to_string())?;
                let gap: f64 = w.probs.iter().zip(exact.marginal(j)).map(|(a, b)| (a - b).abs()).sum();
                pairs += 1;
                if gap > w.error_bound {
                    violations += 1;
                }
                tightest = tightest.min(w.error_bound - gap);
            }
        }
    }
    verdict(
        violations == 0,
        format!("{pairs} (j, N) pairs over 100 instances, {violations} violations, min slack {tightest:.2e}"),
    )
}

fn kl_lemma() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(4);
    let floor = 0.1;
    let mut violations = 0;
    for _ in 0..100 {
        let k = rng.random_range(2..=3);
        let support = rng.random_range(2..=3);
        let star = random_stationary(k, floor, support, &mut rng);
        let theta = random_params(k, floor, true, support, &mut rng);
        let n = rng.random_range(1..=8);
        let exact = kl_rate_exact_discrete(&theta, &star, n).map_err(|e| e.to_string())?;
        let bound = kl_rate_upper_bound(&theta, &star, n, None, EvalMode::Exact).map_err(|e| e.to_string())?;
        if exact > bound.total {
            violations += 1;
        }
    }
    let star = HmmParams::stationary(
        TransitionMatrix::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]], 0.2).unwrap(),
        vec![
            EmissionModel::discrete(vec![0.9, 0.1]).unwrap(),
            EmissionModel::discrete(vec![0.2, 0.8]).unwrap(),
        ],
    )
    .unwrap();
    let grid: Vec<usize> = (4..=10).collect();
    let report = kl_lemma_experiment(&star, 0.01, &grid, 50, 41).map_err(|e| e.to_string())?;
    let max_rate = report.rows.iter().map(|r| r.exact).fold(0.0, f64::max);
    let ok = violations == 0
        && report.accepted > 0
        && report.bound_violations == 0
        && report.threshold_violations == 0;
    timed(
        Duration::from_secs(60),
        start,
        ok,
        format!(
            "random pairs: {violations}/100 bound violations; realized neighborhood: {} of {} proposals kept, \
             {} rows, max rate {max_rate:.3e} vs {:.2}, {} bound / {} threshold violations",
            report.accepted,
            report.proposals,
            report.rows.len(),
            report.threshold,
            report.bound_violations,
            report.threshold_violations
        ),
    )
}

fn decomposition() -> Outcome {
    let mut rng = rng(5);
    let mut violations = 0;
    let mut oracle_gap: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(1..=3);
        let support = rng.random_range(2..=3);
        let floor = rng.random_range(0.0..0.9 / k as f64);
        let a = random_stationary(k, floor, support, &mut rng);
        let b = random_stationary(k, floor, support, &mut rng);
        let d = d_l_pseudometric(&a, &b, 3, EvalMode::Exact).map_err(|e| e.to_string())?.value;
        let bound = d_l_decomposition_bound(&a, &b, 3, EvalMode::Exact).map_err(|e| e.to_string())?;
        if d > bound.total + 1e-10 {
            violations += 1;
        }
        oracle_gap = oracle_gap.max((d - brute_d_l(&a, &b, 3)).abs());
    }
    verdict(
        violations == 0 && oracle_gap < 1e-10,
        format!("200 instances, {violations} violations, D_3 vs enumeration max |diff| {oracle_gap:.2e}"),
    )
}

fn ldir() -> Outcome {
    let spec = DpSpec::discrete(2.5, DiscreteBase::geometric(0.6, 8).unwrap()).map_err(|e| e.to_string())?;
    // 8 symbols plus the tail symbol
    let partitions = vec![
        vec![vec![0], vec![1], (2..9).collect()],
        vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7]],
        vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]],
    ];
    let report = ldir_validation(&spec, 10_000, &partitions, 3.0, 6).map_err(|e| e.to_string())?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let worst = report
        .checks
        .iter()
        .map(|c| (c.observed - c.expected).abs() / c.std_err)
        .fold(0.0, f64::max);
    verdict(
        report.pass,
        format!(
            "{} checks, worst {worst:.2} SE, sum error {:.1e}, failed {failed:?}",
            report.checks.len(),
            report.max_sum_error
        ),
    )
}

const GEWEKE_N: usize = 8;

fn geweke_stats(theta: &HmmParams, y: &[Obs]) -> [f64; 6] {
    let sym: Vec<usize> = y.iter().map(|o| if let Obs::Symbol(s) = o { *s } else { unreachable!() }).collect();
    let pmf = |i: usize| theta.emissions()[i].as_discrete().unwrap().pmf().to_vec();
    let n = sym.len() as f64;
    [
        theta.transitions().get(0, 0),
        theta.transitions().get(1, 1),
        pmf(0)[0],
        pmf(1)[2],
        sym.iter().filter(|&&s| s == 0).count() as f64 / n,
        sym.windows(2).filter(|w| w[0] == w[1]).count() as f64 / (n - 1.0),
    ]
}

fn geweke() -> std::result::Result<String, String> {
    let prior = PriorSpec {
        transitions: TruncatedDirichletSpec::new(vec![1.0, 1.0], 0.1).unwrap(),
        emissions: DpSpec::discrete(2.0, DiscreteBase::uniform(3).unwrap()).unwrap(),
    };
    let mu = [0.5, 0.5];
    let draws = 100_000;
    let mut rng = rng(7);

    let mut forward = [Moments::default(); 6];
    for _ in 0..draws {
        let theta = prior.sample(&mu, &mut rng).map_err(|e| e.to_string())?;
        let y = sample_obs(&theta, GEWEKE_N, &mut rng);
        for (m, g) in forward.iter_mut().zip(geweke_stats(&theta, &y)) {
            m.push(g);
        }
    }

    let mut theta = prior.sample(&mu, &mut rng).map_err(|e| e.to_string())?;
    let mut y = sample_obs(&theta, GEWEKE_N, &mut rng);
    let mut series = vec![Vec::with_capacity(draws); 6];
    for _ in 0..draws {
        let st = gibbs_sweep(&theta, &y, &prior, &mut rng).map_err(|e| e.to_string())?;
        theta = st.params;
        y = st.states.iter().map(|&x| theta.emissions()[x].sample(&mut rng)).collect();
        for (s, g) in series.iter_mut().zip(geweke_stats(&theta, &y)) {
            s.push(g);
        }
    }

    let names = ["Q00", "Q11", "f0(0)", "f1(2)", "freq(y=0)", "freq(repeat)"];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for i in 0..6 {
        let a = forward[i].estimate();
        let b = batch_means(&series[i], 50);
        let z = (a.value - b.value).abs() / (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        worst = worst.max(z);
        parts.push(format!("{} z={z:.2}", names[i]));
    }
    if worst > 3.0 {
        return Err(format!("Geweke: {}", parts.join(", ")));
    }
    Ok(format!("Geweke: {}", parts.join(", ")))
}

fn ffbs_marginals() -> Outcome {
    let mut rng = rng(8);
    let theta = random_params(3, 0.05, true, 3, &mut rng);
    let y = sample_obs(&theta, 6, &mut rng);
    let exact = smoothing_exact(&theta, &y, 2).map_err(|e| e.to_string())?;
    let draws = 40_000;
    let mut marg = vec![vec![0usize; 3]; y.len()];
    let mut block = vec![0usize; 9];
    for _ in 0..draws {
        let x = ffbs_sample_states(&theta, &y, &mut rng).map_err(|e| e.to_string())?;
        for (t, &s) in x.iter().enumerate() {
            marg[t][s] += 1;
        }
        block[x[0] * 3 + x[1]] += 1;
    }
    let z = |count: usize, p: f64| {
        let f = count as f64 / draws as f64;
        (f - p).abs() / (p * (1.0 - p) / draws as f64).sqrt().max(1e-300)
    };
    let mut worst: f64 = 0.0;
    for t in 0..y.len() {
        for i in 0..3 {
            worst = worst.max(z(marg[t][i], exact.marginal(t)[i]));
        }
    }
    for (a, &c) in block.iter().enumerate() {
        worst = worst.max(z(c, exact.block()[a]));
    }
    verdict(worst <= 3.0, format!("FFBS: 27 cells, worst z={worst:.2}"))
}

fn sampler() -> Outcome {
    let g = geweke();
    let f = ffbs_marginals();
    let detail = format!(
        "{}; {}",
        g.as_ref().unwrap_or_else(|e| e),
        f.as_ref().unwrap_or_else(|e| e)
    );
    verdict(g.is_ok() && f.is_ok(), detail)
}

fn golden() -> Outcome {
    let start = Instant::now();
    let config = Config::from_toml(include_str!("../../../configs/golden.toml"))
        .and_then(|c| c.experiment_config())
        .map_err(|e| e.to_string())?;
    let report = consistency_experiment(&config).map_err(|e| e.to_string())?;
    println!("{}", summary_table(&report));
    let tracks: Vec<String> = report
        .tracks
        .iter()
        .map(|t| {
            let m: Vec<String> = t.masses.iter().map(|x| format!("{x:.3}")).collect();
            format!("{} [{}] {}", t.metric, m.join(", "), if t.pass { "ok" } else { "fails" })
        })
        .collect();
    let failed_cells = report.cells.iter().filter(|c| c.error.is_some()).count();
    timed(
        Duration::from_secs(30 * 60),
        start,
        report.pass && report.tracks.len() == 4 && failed_cells == 0,
        format!("{}; {failed_cells} failed cells", tracks.join("; ")),
    )
}

fn label_switching() -> Outcome {
    let mut rng = rng(10);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for k in 1..=4 {
        for _ in 0..5 {
            let theta = random_params(k, 0.0, true, 3, &mut rng);
            for sigma in (0..k).permutations(k) {
                let moved = relabel(&theta, &sigma).map_err(|e| e.to_string())?;
                let al = align_label_switching(&moved, &theta, EvalMode::Exact).map_err(|e| e.to_string())?;
                worst = worst.max(al.score());
                checked += 1;
            }
        }
    }
    let theta = random_params(3, 0.0, false, 0, &mut rng);
    for sigma in (0..3).permutations(3) {
        let moved = relabel(&theta, &sigma).map_err(|e| e.to_string())?;
        let al = align_label_switching(&moved, &theta, EvalMode::monte_carlo(3)).map_err(|e| e.to_string())?;
        worst = worst.max(al.score());
        checked += 1;
    }

    let uniform = TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 0.0).unwrap();
    let disc = |p: Vec<f64>| EmissionModel::discrete(p).unwrap();
    let sharp = HmmParams::stationary(uniform.clone(), vec![disc(vec![1.0, 0.0]), disc(vec![0.0, 1.0])]).unwrap();
    let flat = HmmParams::stationary(uniform, vec![disc(vec![0.5, 0.5]), disc(vec![0.5, 0.5])]).unwrap();
    let d1 = d_l_pseudometric(&sharp, &flat, 1, EvalMode::Exact).map_err(|e| e.to_string())?.value;
    verdict(
        worst == 0.0 && d1 == 0.0,
        format!("{checked} relabelings, max score {worst:e}; D_1 of the non-identifiable pair {d1:e}"),
    )
}

fn checkers() -> Outcome {
    use PmfDescriptor::*;
    let budget = 10_000;
    let finite = |p: &[f64]| Finite { pmf: p.to_vec() };
    let cases: Vec<(&str, Verdict, Verdict)> = vec![
        ("E1 finite f* vs uniform G0", check_e1(&finite(&[0.5, 0.3, 0.2]), &finite(&[1.0 / 3.0; 3]), budget).verdict, Verdict::Holds),
        ("E1 f* outside G0 support", check_e1(&finite(&[0.5, 0.5]), &finite(&[1.0]), budget).verdict, Verdict::Fails),
        ("E1 geometric f* lighter than G0", check_e1(&Geometric { ratio: 0.3 }, &Geometric { ratio: 0.6 }, budget).verdict, Verdict::Holds),
        ("E1 geometric f* heavier than G0", check_e1(&Geometric { ratio: 0.6 }, &Geometric { ratio: 0.3 }, budget).verdict, Verdict::Fails),
        ("E1 geometric f* equal to G0", check_e1(&Geometric { ratio: 0.5 }, &Geometric { ratio: 0.5 }, budget).verdict, Verdict::Fails),
        ("E1 infinite f* vs finite G0", check_e1(&Geometric { ratio: 0.4 }, &finite(&[0.2; 5]), budget).verdict, Verdict::Fails),
        ("T finite f*", check_t(&finite(&[0.25; 4]), budget).verdict, Verdict::Holds),
        ("T geometric f*", check_t(&Geometric { ratio: 0.9 }, budget).verdict, Verdict::Holds),
        ("T point mass", check_t(&Geometric { ratio: 0.0 }, budget).verdict, Verdict::Holds),
        ("eqrk inverse-gamma sigma", check_b1_base_integral(&ScaleLaw::InverseGamma { shape: 2.0, scale: 1.0 }).verdict, Verdict::Holds),
        (
            "eqrk inverse-gamma variance",
            check_b1_base_integral(&ScaleLaw::InverseGammaVariance { shape: 3.0, scale: 2.0 }).verdict,
            Verdict::Holds,
        ),
        ("eqrk uniform sigma from 0", check_b1_base_integral(&ScaleLaw::Uniform { lo: 0.0, hi: 1.0 }).verdict, Verdict::Fails),
    ];
    let wrong: Vec<&str> = cases.iter().filter(|(_, got, want)| got != want).map(|(n, _, _)| *n).collect();
    // values against closed forms where they exist
    let v_geo = check_e1(&Geometric { ratio: 0.3 }, &Geometric { ratio: 0.6 }, budget).value.unwrap_or(f64::NAN);
    let brute: f64 = (0..2000).map(|l| 0.7 / 0.4 * 0.5f64.powi(l)).sum();
    let v_ig = check_b1_base_integral(&ScaleLaw::InverseGamma { shape: 2.0, scale: 1.0 }).value.unwrap_or(f64::NAN);
    let values_ok = (v_geo - brute).abs() < 1e-9 * brute && (v_ig - 2.0).abs() < 1e-12;
    verdict(
        wrong.is_empty() && values_ok,
        format!(
            "{}/{} verdicts correct{}; geometric E1 sum {v_geo:.6} (direct {brute:.6}), IG integral {v_ig}",
            cases.len() - wrong.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(", wrong: {wrong:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("likelihood matches path enumeration", likelihood_oracle),
        ("smoothing matches path enumeration", smoothing_oracle),
        ("windowed smoothing within forgetting bound", windowed_bound),
        ("KL rate below three-term bound", kl_lemma),
        ("D_l below decomposition bound", decomposition),
        ("Gamma-normalized DP moments", ldir),
        ("sampler correctness", sampler),
        ("golden consistency experiment", golden),
        ("label switching and D_1 non-identifiability", label_switching),
        ("condition checker catalog", checkers),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match out {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1)
            }
        }
    }
    println!("acceptance: {}/10 criteria pass", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
