use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ddid");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs the binary inside `dir` so that echoed paths stay relative.
fn ddid(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["toy_panel.csv", "toy_truth.json", "toy_sim.toml"] {
        std::fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Compares an output directory with its frozen copy. `UPDATE_GOLDEN=1` rewrites the copy.
fn check_golden(name: &str, out: &Path) {
    let golden = golden_dir(name);
    let got = read_dir(out);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = std::fs::remove_dir_all(&golden);
        std::fs::create_dir_all(&golden).unwrap();
        for (f, bytes) in &got {
            std::fs::write(golden.join(f), bytes).unwrap();
        }
        return;
    }
    let want = read_dir(&golden);
    assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>(), "{name}: file set");
    for (f, bytes) in &want {
        assert!(got[f] == *bytes, "{name}/{f} differs from the golden copy");
    }
}

const ESTIMATE: &[&str] = &[
    "estimate",
    "--input",
    "toy_panel.csv",
    "--covariates",
    "x1",
    "--estimator",
    "dr",
    "--bootstrap",
    "20",
    "--seed",
    "5",
    "--out",
    "out",
];

const DIAGNOSE: &[&str] = &[
    "diagnose",
    "--input",
    "toy_panel.csv",
    "--covariates",
    "x1",
    "--truth",
    "toy_truth.json",
    "--bootstrap",
    "20",
    "--bootstrap-method",
    "multiplier",
    "--seed",
    "5",
    "--out",
    "out",
];

const SIMULATE: &[&str] = &["simulate", "--config", "toy_sim.toml", "--bootstrap", "10", "--out", "out"];

fn golden_run(name: &str, args: &[&str]) {
    let dir = workspace();
    let o = ddid(dir.path(), args);
    assert!(o.status.success(), "{}", stderr(&o));
    check_golden(name, &dir.path().join("out"));
}

#[test]
fn estimate_matches_golden() {
    golden_run("estimate", ESTIMATE);
}

#[test]
fn diagnose_matches_golden() {
    golden_run("diagnose", DIAGNOSE);
}

#[test]
fn simulate_matches_golden() {
    golden_run("simulate", SIMULATE);
}

fn with_threads(args: &[&str], n: &str) -> Vec<String> {
    let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    v.extend(["--threads".into(), n.into()]);
    v
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    for args in [ESTIMATE, DIAGNOSE, SIMULATE] {
        let runs: Vec<_> = ["1", "4"]
            .iter()
            .map(|n| {
                let dir = workspace();
                let a = with_threads(args, n);
                let o = ddid(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
                assert!(o.status.success(), "{}", stderr(&o));
                read_dir(&dir.path().join("out"))
            })
            .collect();
        assert!(runs[0] == runs[1], "{} differs across thread counts", args[0]);
    }
}

#[test]
fn dynamic_table_has_the_event_study_columns() {
    let dir = workspace();
    let o = ddid(
        dir.path(),
        &["estimate", "--input", "toy_panel.csv", "--estimator", "unc", "--control", "never", "--agg", "dynamic", "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/dynamic.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("e1,att1,se,ci_lo,ci_hi"), "{header}");
    assert!(text.lines().count() > 2);
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.starts_with("dynamic,")));
}

#[test]
fn missing_column_exits_2_and_names_it() {
    let dir = workspace();
    let o = ddid(dir.path(), &["estimate", "--input", "toy_panel.csv", "--covariates", "income", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("income"), "{}", stderr(&o));

    let o = ddid(dir.path(), &["diagnose", "--input", "toy_panel.csv", "--outcome-col", "wage", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wage"));
}

#[test]
fn unreadable_input_exits_2() {
    let dir = workspace();
    let o = ddid(dir.path(), &["estimate", "--input", "nope.csv", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn bootstrap_and_simulate_require_a_seed() {
    let dir = workspace();
    let o = ddid(dir.path(), &["estimate", "--input", "toy_panel.csv", "--bootstrap", "10", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
    let o = ddid(dir.path(), &["simulate", "--out", "sim"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("sim").exists());
}

#[test]
fn invalid_simulation_config_exits_2() {
    let dir = workspace();
    let o = ddid(dir.path(), &["simulate", "--config", "toy_sim.toml", "--units", "0", "--out", "sim"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nunknown_key = 3\n").unwrap();
    let o = ddid(dir.path(), &["simulate", "--config", "bad.toml", "--out", "sim"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown_key"));
}

#[test]
fn no_estimable_cell_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("unit,period,y,d1,d2\n");
    for u in 1..=6 {
        for t in 1..=4 {
            let d1 = u8::from(u == 1 && t >= 3);
            let d2 = u8::from(u == 2 && t >= 2);
            csv.push_str(&format!("{u},{t},{},{d1},{d2}\n", f64::from(u) * 0.1 + f64::from(t)));
        }
    }
    std::fs::write(dir.path().join("p.csv"), csv).unwrap();
    let o = ddid(dir.path(), &["estimate", "--input", "p.csv", "--out", "out"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("run.toml"),
        "input = \"toy_panel.csv\"\nestimator = \"ipw\"\naggregations = [\"overall\"]\n[schema]\ncovariates = [\"x1\"]\n",
    )
    .unwrap();
    let o = ddid(dir.path(), &["estimate", "--config", "run.toml", "--estimator", "or", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/run_config.json")).unwrap()).unwrap();
    assert_eq!(echo["config"]["estimator"], "or");
    assert_eq!(echo["config"]["aggregations"], serde_json::json!(["overall"]));
    assert_eq!(echo["config"]["schema"]["covariates"], serde_json::json!(["x1"]));
    let sha = echo["input_sha256"].as_str().unwrap();
    assert_eq!(sha, ddid::commands::sha256_hex(&std::fs::read(dir.path().join("toy_panel.csv")).unwrap()));
}

#[test]
fn simulation_without_noise_is_reproducible() {
    let dir = workspace();
    let cfg = std::fs::read_to_string(dir.path().join("toy_sim.toml")).unwrap();
    std::fs::write(dir.path().join("quiet.toml"), cfg.replace("[dgp]\n", "[dgp]\nnoise_sd = 0.0\n")).unwrap();
    let args = ["simulate", "--config", "quiet.toml", "--mc", "0", "--out", "sim"];
    let a = ddid(dir.path(), &args);
    assert!(a.status.success(), "{}", stderr(&a));
    let first = read_dir(&dir.path().join("sim"));
    assert!(ddid(dir.path(), &args).status.success());
    assert!(first == read_dir(&dir.path().join("sim")));
    let panel = String::from_utf8(first["panel.csv"].clone()).unwrap();
    let seeds: Vec<_> = ["11", "12"]
        .iter()
        .map(|s| {
            let out = format!("s{s}");
            assert!(ddid(dir.path(), &["simulate", "--config", "quiet.toml", "--mc", "0", "--seed", s, "--out", &out]).status.success());
            std::fs::read(dir.path().join(out).join("panel.csv")).unwrap()
        })
        .collect();
    assert_eq!(seeds[0], panel.as_bytes());
    assert_ne!(seeds[0], seeds[1]);
}

#[test]
fn mc_table_has_fixed_columns() {
    let dir = workspace();
    let o = ddid(dir.path(), &["simulate", "--config", "toy_sim.toml", "--out", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sim/mc.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let want: Vec<&str> = ddid::tables::MC_HEADER.to_vec();
    assert_eq!(header, want);
}
