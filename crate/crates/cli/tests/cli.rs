use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npbhmm::inference::PosteriorSample;
use npbhmm::io::{read_jsonl, write_jsonl, write_params, Config};
use npbhmm::metrics::{d_l_pseudometric, MetricRecord};
use npbhmm::EvalMode;
use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"
seed = 11

[truth]
k = 2
q_floor = 0.15
Q = [[0.7, 0.3], [0.4, 0.6]]

[[truth.emissions]]
family = "discrete"
pmf = [0.9, 0.1]

[[truth.emissions]]
family = "discrete"
pmf = [0.2, 0.8]

[prior.transitions]
alpha = [1.0, 1.0]
q_floor = 0.15

[prior.emissions]
alpha = 2.0
base = { kind = "discrete", pmf = [0.5, 0.5] }

[gibbs]
n_iter = 60
burn_in = 20
thin = 4

[metrics]
names = ["d_l:3", "aligned_q", "aligned_emission"]

[simulate]
n = 10
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npbhmm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_n_lines_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--quiet"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--quiet"]);
    assert_eq!(lines(&a.join("y.txt")).len(), 10);
    assert_eq!(lines(&a.join("x.txt")).len(), 10);
    assert_eq!(fs::read(a.join("y.txt")).unwrap(), fs::read(b.join("y.txt")).unwrap());
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_eq!(manifest(&a)["seed"], 11);

    let c = tmp.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "12", "--quiet"]);
    assert_eq!(manifest(&c)["seed"], 12);
    assert_ne!(manifest(&a)["outputs"], manifest(&c)["outputs"]);
}

#[test]
fn point_mass_single_state_emits_its_state() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
seed = 3
[truth]
k = 1
q_floor = 0.0
Q = [[1.0]]
[[truth.emissions]]
family = "discrete"
pmf = [1.0]
[simulate]
n = 25
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(lines(&out.join("y.txt")), lines(&out.join("x.txt")));
}

#[test]
fn fit_emits_the_configured_samples_per_chain() {
    let tmp = TempDir::new().unwrap();
    let text = BASE.replace("n_iter = 60", "n_iter = 24");
    let cfg = write_config(tmp.path(), &text);
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--quiet"]);
    let data = sim.join("y.txt");

    // burn_in + thin iterations give exactly one sample
    let fit = tmp.path().join("fit");
    ok(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&fit), "--chains", "2", "--quiet"]);
    let mut ids = Vec::new();
    for c in 0..2 {
        let samples: Vec<PosteriorSample> = read_jsonl(&fit.join(format!("samples_chain{c}.jsonl"))).unwrap();
        assert_eq!(samples.len(), 1);
        ids.push(samples[0].chain_id);
    }
    assert_eq!(ids, vec![0, 1]);

    let again = tmp.path().join("again");
    ok(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&again), "--chains", "2", "--quiet"]);
    assert_eq!(manifest(&fit)["outputs"], manifest(&again)["outputs"]);
    assert_eq!(manifest(&fit)["inputs"][0]["sha256"], manifest(&sim)["outputs"][0]["sha256"]);
}

#[test]
fn report_on_the_truth_gives_zero_distances() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let truth = Config::from_toml(BASE).unwrap().truth().unwrap().clone();
    let samples: Vec<PosteriorSample> = (0..4)
        .map(|i| PosteriorSample {
            chain_id: 0,
            iter: i,
            params: truth.clone(),
            states: vec![0; 3],
            fallback_rows: 0,
        })
        .collect();
    let file = tmp.path().join("samples.jsonl");
    write_jsonl(&file, &samples).unwrap();
    let out = tmp.path().join("rep");
    ok(&["report", "--config", s(&cfg), "--out", s(&out), "--samples", s(&file), "--quiet"]);
    let records: Vec<MetricRecord> = read_jsonl(&out.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(|r| r.value == 0.0));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for row in summary.as_array().unwrap() {
        assert_eq!(row["mass"], 1.0);
    }
}

#[test]
fn report_without_metrics_writes_only_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let text = BASE.replace(r#"names = ["d_l:3", "aligned_q", "aligned_emission"]"#, "names = []");
    let cfg = write_config(tmp.path(), &text);
    let truth = Config::from_toml(BASE).unwrap().truth().unwrap().clone();
    let file = tmp.path().join("samples.jsonl");
    write_jsonl(
        &file,
        &[PosteriorSample {
            chain_id: 0,
            iter: 0,
            params: truth,
            states: vec![],
            fallback_rows: 0,
        }],
    )
    .unwrap();
    let out = tmp.path().join("rep");
    ok(&["report", "--config", s(&cfg), "--out", s(&out), "--samples", s(&file), "--quiet"]);
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, vec!["manifest.json".to_string()]);
}

#[test]
fn report_rejects_a_state_count_mismatch() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let single = npbhmm::io::params_from_toml(
        "k = 1\nq_floor = 0.0\nQ = [[1.0]]\n[[emissions]]\nfamily = \"discrete\"\npmf = [0.5, 0.5]\n",
    )
    .unwrap();
    let file = tmp.path().join("samples.jsonl");
    write_jsonl(
        &file,
        &[PosteriorSample {
            chain_id: 0,
            iter: 0,
            params: single,
            states: vec![],
            fallback_rows: 0,
        }],
    )
    .unwrap();
    let out = run(&["report", "--config", s(&cfg), "--out", s(&tmp.path().join("r")), "--samples", s(&file)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn metric_matches_the_library_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let truth = Config::from_toml(BASE).unwrap().truth().unwrap().clone();
    let theta = npbhmm::io::params_from_toml(
        "k = 2\nq_floor = 0.1\nQ = [[0.6, 0.4], [0.25, 0.75]]\n\
         [[emissions]]\nfamily = \"discrete\"\npmf = [0.8, 0.2]\n\
         [[emissions]]\nfamily = \"discrete\"\npmf = [0.35, 0.65]\n",
    )
    .unwrap();
    let params = tmp.path().join("theta.toml");
    write_params(&params, &theta).unwrap();
    let out = tmp.path().join("m");
    ok(&["metric", "--config", s(&cfg), "--params", s(&params), "--out", s(&out), "--quiet"]);
    let records: Vec<MetricRecord> = read_jsonl(&out.join("metrics.jsonl")).unwrap();
    let reread = npbhmm::io::read_params(&params).unwrap();
    assert_eq!(reread, theta);
    let direct = d_l_pseudometric(&reread, &truth, 3, EvalMode::Exact).unwrap().value;
    assert_eq!(records[0].metric, "d_l");
    assert_eq!(records[0].value.to_bits(), direct.to_bits());
}

#[test]
fn check_prior_verdicts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let out = tmp.path().join("c");
    ok(&["check-prior", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    let rows: Value = serde_json::from_str(&fs::read_to_string(out.join("check.json")).unwrap()).unwrap();
    let verdicts = |rows: &Value, cond: &str| -> Vec<String> {
        rows.as_array()
            .unwrap()
            .iter()
            .filter(|r| r["condition"] == cond)
            .map(|r| r["verdict"].as_str().unwrap().to_string())
            .collect()
    };
    assert!(verdicts(&rows, "E1").iter().chain(&verdicts(&rows, "T")).chain(&verdicts(&rows, "floor")).all(|v| v == "holds"));

    let text = BASE.replace("[prior.transitions]\nalpha = [1.0, 1.0]\nq_floor = 0.15", "[prior.transitions]\nalpha = [1.0, 1.0]\nq_floor = 0.6")
        + "\n[check]\nf_star = [{ kind = \"geometric\", ratio = 0.6 }, { kind = \"geometric\", ratio = 0.2 }]\ng0 = { kind = \"geometric\", ratio = 0.3 }\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("d");
    ok(&["check-prior", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    let rows: Value = serde_json::from_str(&fs::read_to_string(out.join("check.json")).unwrap()).unwrap();
    assert_eq!(verdicts(&rows, "floor"), vec!["holds", "fails"]);
    assert_eq!(verdicts(&rows, "E1"), vec!["fails", "holds"]);
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.toml");
    assert_eq!(run(&["simulate", "--config", s(&missing)]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), &(BASE.to_string() + "\nbogus = 1\n"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), BASE);
    let data = tmp.path().join("y.txt");
    fs::write(&data, "0\n1\n7\n").unwrap();
    let out = run(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("f"))]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(&data, "0\nx\n").unwrap();
    let out = run(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("f"))]);
    assert_eq!(out.status.code(), Some(3));
}
