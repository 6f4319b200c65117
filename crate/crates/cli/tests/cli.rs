use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocluster"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("COCLUSTER_THREADS").output().expect("spawn cocluster")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "cocluster {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join("data");
    ok(&["simulate", "--n", "40", "--p", "50", "--k", "2", "--sites", "5", "--seed", &seed.to_string(), "--out", s(&data)]);
    data
}

fn fit(data: &Path, out: &Path) {
    ok(&[
        "fit",
        "--counts",
        s(&data.join("counts.csv")),
        "--covariates",
        s(&data.join("covariates.csv")),
        "--out",
        s(out),
        "--k",
        "2",
        "--iterations",
        "120",
        "--burn-in",
        "40",
        "--replicates",
        "2",
        "--set",
        "map_max_iter=100",
    ]);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), 3);
    let b = simulate(&dir.path().join("b"), 3);
    for f in ["counts.csv", "covariates.csv", "sites.csv", "attributes.csv", "truth_gamma.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = simulate(&dir.path().join("c"), 4);
    assert_ne!(fs::read(a.join("counts.csv")).unwrap(), fs::read(c.join("counts.csv")).unwrap());
}

#[test]
fn missing_input_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run(&["fit", "--counts", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn bad_setting_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 1);
    let out = run(&[
        "fit",
        "--counts",
        s(&data.join("counts.csv")),
        "--out",
        s(&dir.path().join("run")),
        "--set",
        "no_such_key=3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["fit", "--counts", s(&data.join("counts.csv")), "--out", s(&dir.path().join("run")), "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_directory_records_config_and_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 2);
    let cfg = dir.path().join("settings.txt");
    fs::write(&cfg, "# overridden by the flag below\nk = 5\ntau2 = 2.5\n").unwrap();
    let out = dir.path().join("fit");
    ok(&[
        "--config",
        s(&cfg),
        "fit",
        "--counts",
        s(&data.join("counts.csv")),
        "--out",
        s(&out),
        "--k",
        "2",
        "--map-only",
        "--set",
        "map_max_iter=50",
    ]);
    assert!(!out.join("INCOMPLETE").exists());
    assert_eq!(fs::read_to_string(out.join("schema_version.txt")).unwrap().trim(), "1");
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.starts_with("command = fit\n"));
    assert!(config.lines().any(|l| l.replace(' ', "") == "k=2"), "{config}");
    assert!(config.lines().any(|l| l.replace(' ', "") == "tau2=2.5"), "{config}");
    let fp = fs::read_to_string(out.join("fingerprints.csv")).unwrap();
    assert!(fp.starts_with("input,path,sha256\n"));
    let line = fp.lines().nth(1).unwrap();
    let hash = line.rsplit(',').next().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn failed_command_leaves_incomplete_marker() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 5);
    // a covariate file that does not cover the samples fails after the run
    // directory exists
    let bad = dir.path().join("bad_cov.csv");
    fs::write(&bad, "sample_id,x1\nnobody,1.0\n").unwrap();
    let out = dir.path().join("fit");
    let res = run(&[
        "fit",
        "--counts",
        s(&data.join("counts.csv")),
        "--covariates",
        s(&bad),
        "--out",
        s(&out),
        "--map-only",
    ]);
    assert!(!res.status.success());
    assert!(out.join("INCOMPLETE").exists());
}

#[test]
fn end_to_end_pipeline_emits_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, 11);
    let fit_dir = d.join("fit");
    fit(&data, &fit_dir);
    for f in ["omega_mean.csv", "gamma_mean.csv", "beta_mean.csv", "diagnostics.csv", "sparsity.csv", "trace.svg", "summaries"] {
        assert!(fit_dir.join(f).exists(), "fit/{f}");
    }

    let dec = d.join("dec");
    ok(&["decouple", "--summaries", s(&fit_dir.join("summaries")), "--out", s(&dec), "--sites", s(&data.join("sites.csv"))]);
    for f in ["g_hat.csv", "lambda_path.csv", "subcommunities.csv", "support.csv", "clusters.csv", "site_consistency.csv"] {
        assert!(dec.join(f).exists(), "decouple/{f}");
    }
    let path = fs::read_to_string(dec.join("lambda_path.csv")).unwrap();
    assert_eq!(path.lines().filter(|l| l.ends_with(",true")).count(), 1);

    let ind = d.join("ind");
    ok(&[
        "indicators",
        "--summaries",
        s(&fit_dir.join("summaries")),
        "--attributes",
        s(&data.join("attributes.csv")),
        "--out",
        s(&ind),
        "--top",
        "3",
    ]);
    let table = fs::read_to_string(ind.join("indicators_all.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 3);

    let new_cov = d.join("new_cov.csv");
    let cov = fs::read_to_string(data.join("covariates.csv")).unwrap();
    fs::write(&new_cov, cov.lines().take(6).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let pred = d.join("pred");
    let pred_args = |out: &Path| {
        vec![
            "predict".to_string(),
            "--summaries".into(),
            s(&fit_dir.join("summaries")).into(),
            "--covariates".into(),
            s(&new_cov).into(),
            "--indicators".into(),
            s(&ind.join("indicators_all.csv")).into(),
            "--indicator-counts".into(),
            s(&data.join("counts.csv")).into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let args = pred_args(&pred);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let probs = fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert!(probs.lines().count() > 1);
    for line in probs.lines().skip(1) {
        let p: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    let ev = d.join("ev");
    ok(&[
        "evaluate",
        "--counts",
        s(&data.join("counts.csv")),
        "--covariates",
        s(&data.join("covariates.csv")),
        "--sites",
        s(&data.join("sites.csv")),
        "--attributes",
        s(&data.join("attributes.csv")),
        "--summaries",
        s(&fit_dir.join("summaries")),
        "--out",
        s(&ev),
        "--folds",
        "2",
        "--indicators",
        "2",
        "--strategies",
        "all",
        "--k",
        "2",
        "--iterations",
        "80",
        "--burn-in",
        "30",
        "--replicates",
        "1",
        "--set",
        "map_max_iter=60",
    ]);
    for f in ["folds.csv", "auc_species.csv", "auc_strata.csv", "auc_strata.svg", "waic.csv", "ppc_rows.csv", "ppc_cols.csv", "ppc_coverage.csv"] {
        assert!(ev.join(f).exists(), "evaluate/{f}");
    }

    ok(&["report", "--run", s(&dec)]);
    assert!(dec.join("figures/loadings.svg").exists());
    ok(&["report", "--run", s(&ev)]);
    assert!(ev.join("figures/auc_strata.svg").exists());

    // the same inputs and settings reproduce every table
    let fit2 = d.join("fit2");
    fit(&data, &fit2);
    for f in ["omega_mean.csv", "gamma_mean.csv", "beta_mean.csv"] {
        assert_eq!(fs::read(fit_dir.join(f)).unwrap(), fs::read(fit2.join(f)).unwrap(), "{f}");
    }
    let pred2 = d.join("pred2");
    let args = pred_args(&pred2);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fs::read(pred.join("predictions.csv")).unwrap(), fs::read(pred2.join("predictions.csv")).unwrap());
}

#[test]
fn sequential_flag_gives_identical_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 8);
    let par = dir.path().join("par");
    fit(&data, &par);
    let seq = dir.path().join("seq");
    ok(&[
        "fit",
        "--counts",
        s(&data.join("counts.csv")),
        "--covariates",
        s(&data.join("covariates.csv")),
        "--out",
        s(&seq),
        "--k",
        "2",
        "--iterations",
        "120",
        "--burn-in",
        "40",
        "--replicates",
        "2",
        "--set",
        "map_max_iter=100",
        "--sequential",
    ]);
    assert_eq!(fs::read(par.join("gamma_mean.csv")).unwrap(), fs::read(seq.join("gamma_mean.csv")).unwrap());
}
