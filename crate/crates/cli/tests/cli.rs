use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn bayesbt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayesbt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_args(set: &str) -> Vec<String> {
    let d = fixture(set);
    vec![
        "--indicators".into(),
        d.join("indicators.csv").display().to_string(),
        "--polarity".into(),
        d.join("polarity.csv").display().to_string(),
        "--income".into(),
        d.join("income.csv").display().to_string(),
    ]
}

fn run_with(cmd: &str, set: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(data_args(set));
    args.extend(["--out".into(), s(out).into()]);
    args.extend(extra.iter().map(|x| x.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    bayesbt(&refs)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_mle(path: &Path) -> Vec<(String, f64, usize)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[1].parse().unwrap(), rec[2].parse().unwrap())
        })
        .collect()
}

fn fit_six_states(out: &Path) -> Output {
    let cfg = fixture("six_states/fit.toml");
    bayesbt(&["fit", "--config", s(&cfg), "--out", s(out), "--iterations", "6000"])
}

#[test]
fn fit_writes_every_artifact_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = fit_six_states(a.path());
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(fit_six_states(b.path()).status.success());

    let files = [
        "win_matrix.csv",
        "prior_covariance.csv",
        "chain.csv",
        "diagnostics.json",
        "kendall.csv",
        "traces.csv",
        "acf.csv",
        "ranking.csv",
        "ranking.json",
    ];
    for f in files {
        let x = std::fs::read(a.path().join(f)).unwrap_or_else(|_| panic!("{f} missing"));
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs between identical runs");
    }

    let j: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("ranking.json")).unwrap()).unwrap();
    assert_eq!(j["entities"].as_array().unwrap().len(), 6);
    let d: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["n_kept"].as_u64().unwrap(), 4000);
    let acc = d["acceptance_rate"].as_f64().unwrap();
    assert!(acc > 0.0 && acc < 1.0);

    let mut r = csv::Reader::from_path(a.path().join("ranking.csv")).unwrap();
    let mut ranks: Vec<usize> = r.records().map(|x| x.unwrap()[6].parse().unwrap()).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=6).collect::<Vec<_>>());
}

#[test]
fn different_seeds_give_different_chains() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("six_states/fit.toml");
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = bayesbt(&["fit", "--config", s(&cfg), "--out", s(dir.path()), "--iterations", "3000", "--seed", seed]);
        assert!(o.status.success());
    }
    let x = std::fs::read(a.path().join("chain.csv")).unwrap();
    let y = std::fs::read(b.path().join("chain.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn diagnose_reproduces_fit_diagnostics() {
    let fit = tempfile::tempdir().unwrap();
    assert!(fit_six_states(fit.path()).status.success());
    let again = tempfile::tempdir().unwrap();
    let cfg = fixture("six_states/fit.toml");
    let chain = fit.path().join("chain.csv");
    let o = bayesbt(&["diagnose", s(&chain), "--config", s(&cfg), "--out", s(again.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["diagnostics.json", "kendall.csv", "traces.csv", "acf.csv"] {
        assert_eq!(
            std::fs::read(fit.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }

    let o = bayesbt(&["diagnose", s(&chain), "--bandwidth", "1", "--out", s(again.path())]);
    assert!(o.status.success());
    let d: serde_json::Value =
        serde_json::from_slice(&std::fs::read(again.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["bandwidth"].as_u64(), Some(1));
}

#[test]
fn diagnose_rejects_truncated_chain() {
    let fit = tempfile::tempdir().unwrap();
    let cfg = fixture("six_states/fit.toml");
    let o = bayesbt(&["fit", "--config", s(&cfg), "--out", s(fit.path()), "--iterations", "1500"]);
    assert!(o.status.success());
    let chain = fit.path().join("chain.csv");
    let text = std::fs::read_to_string(&chain).unwrap();
    let cut: Vec<&str> = text.lines().collect();
    let short = fit.path().join("short.csv");
    std::fs::write(&short, cut[..cut.len() - 10].join("\n")).unwrap();
    let o = bayesbt(&["diagnose", s(&short)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("short.csv"), "{}", stderr(&o));
}

#[test]
fn missing_polarity_file_is_an_io_error() {
    let out = tempfile::tempdir().unwrap();
    let d = fixture("six_states");
    let gone = out.path().join("nope.csv");
    let o = bayesbt(&[
        "mle",
        "--indicators",
        s(&d.join("indicators.csv")),
        "--polarity",
        s(&gone),
        "--income",
        s(&d.join("income.csv")),
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn mle_two_entities_gap_is_log_three() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("mle", "two_entity", out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_mle(&out.path().join("mle_ranking.csv"));
    let a = rows.iter().find(|r| r.0 == "A").unwrap();
    let b = rows.iter().find(|r| r.0 == "B").unwrap();
    assert!((a.1 - b.1 - 3f64.ln()).abs() < 1e-8);
    assert!((a.1 + b.1).abs() < 1e-12);
    assert_eq!((a.2, b.2), (1, 2));
}

#[test]
fn mle_all_ties_gives_equal_merits() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("mle", "all_ties", out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for (_, m, _) in read_mle(&out.path().join("mle_ranking.csv")) {
        assert!(m.abs() < 1e-12);
    }
}

#[test]
fn mle_refuses_entity_without_wins() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("mle", "zero_wins", out.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('Z'), "{}", stderr(&o));
}

#[test]
fn fit_still_runs_when_mle_does_not_exist() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("fit", "zero_wins", out.path(), &["--iterations", "1500", "--beta", "0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.path().join("ranking.csv").exists());
}

#[test]
fn zone_subset_restricts_entities() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("mle", "six_states", out.path(), &["--zones", "low"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = read_mle(&out.path().join("mle_ranking.csv")).into_iter().map(|r| r.0).collect();
    assert_eq!(names, ["Avanti", "Bhadra"]);

    let o = run_with("mle", "six_states", out.path(), &["--zones", "sideways"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "iterations = 100\nbetta = 0.1\n").unwrap();
    let o = bayesbt(&["fit", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("betta"), "{}", stderr(&o));

    let o = bayesbt(&["fit", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(3));

    let o = bayesbt(&["fit", "--beta", "2.0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bayesbt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bayesbt(&["--help"]).status.code(), Some(0));
}

fn sim_spec(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("study.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL_STUDY: &str = "m = 6\nk_comparisons = 50\nreplications = 3\nlength_scales = [0.09, 0.5]\nk_large = 2000\n\n[sampler]\nbeta = 0.2\niterations = 3000\n";

#[test]
fn simulate_writes_study_tables() {
    let dir = tempfile::tempdir().unwrap();
    let spec = sim_spec(dir.path(), SMALL_STUDY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bayesbt(&["simulate", s(&spec), "--seed", "5", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let study = std::fs::read_to_string(a.join("study.csv")).unwrap();
    // Three methods per replication and length scale.
    assert_eq!(study.lines().count(), 1 + 3 * 2 * 3);
    let est = std::fs::read_to_string(a.join("study_estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 1 + 3 * 2 * 3 * 6);
    assert_eq!(study, std::fs::read_to_string(b.join("study.csv")).unwrap());
}

#[test]
fn simulate_validates_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = sim_spec(dir.path(), "k_comparisons = 0\n");
    let o = bayesbt(&["simulate", s(&spec), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));

    let spec = sim_spec(dir.path(), "replications = 2\nseed_value = 3\n");
    let o = bayesbt(&["simulate", s(&spec), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
