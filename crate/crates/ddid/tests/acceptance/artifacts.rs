//! Criteria about the command-line artifacts: reproducibility and speed.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use crate::{verdict, Verdict};

const BIN: &str = env!("CARGO_BIN_EXE_ddid");

fn ddid(dir: &Path, args: &[&str]) {
    let o = Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs");
    assert!(o.status.success(), "ddid {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

const SIM: &str = r#"
seed = 42
mc = 8
estimator = "dr"
[bootstrap]
replications = 20
[dgp]
n_units = 3000
n_periods = 7
k_covariates = 2
att1 = { kind = "event_time", intercept = 1.0, slope = 0.2 }
att2 = { kind = "constant", value = 2.0 }
selection = { shift = 0.4, trend_linear = 0.3 }
[dgp.cohort_law]
kind = "copula"
rho = 0.5
g1 = [{ period = 3, prob = 0.2 }, { period = 5, prob = 0.2 }]
g2 = [{ period = 2, prob = 0.15 }, { period = 4, prob = 0.2 }, { period = 6, prob = 0.2 }]
"#;

/// Runs every command once per thread count, each time into the same relative
/// output directory of a fresh workspace, and compares all bytes written.
pub fn determinism() -> Verdict {
    let commands: [&[&str]; 4] = [
        &["simulate", "--config", "sim.toml", "--out", "out"],
        &["estimate", "--input", "panel.csv", "--covariates", "x1,x2", "--bootstrap", "50", "--seed", "9", "--out", "out"],
        &[
            "diagnose", "--input", "panel.csv", "--covariates", "x1,x2", "--truth", "truth.json", "--bootstrap", "50",
            "--bootstrap-method", "multiplier", "--seed", "9", "--out", "out",
        ],
        &["estimate", "--input", "panel.csv", "--estimator", "ipw", "--covariates", "x1", "--control", "never", "--out", "out"],
    ];
    let source = tempfile::tempdir().unwrap();
    std::fs::write(source.path().join("sim.toml"), SIM).unwrap();
    ddid(source.path(), &["simulate", "--config", "sim.toml", "--mc", "0", "--out", "data"]);

    let mut files = 0;
    for (i, cmd) in commands.iter().enumerate() {
        let outputs: Vec<_> = ["1", "2", "4", "1"]
            .iter()
            .map(|threads| {
                let dir = tempfile::tempdir().unwrap();
                std::fs::write(dir.path().join("sim.toml"), SIM).unwrap();
                for f in ["panel.csv", "truth.json"] {
                    std::fs::copy(source.path().join("data").join(f), dir.path().join(f)).unwrap();
                }
                let mut args = cmd.to_vec();
                args.extend(["--threads", threads]);
                ddid(dir.path(), &args);
                snapshot(&dir.path().join("out"))
            })
            .collect();
        if outputs.iter().any(|o| *o != outputs[0]) {
            return Verdict::Fail(format!("command {} ({}) differs across runs or thread counts", i + 1, cmd[0]));
        }
        files += outputs[0].len();
    }
    verdict(true, format!("{files} CSV/JSON files byte-identical across 2 repeats and 1/2/4 threads"))
}

const SCALE: &str = r#"
seed = 5
[dgp]
n_units = 50000
n_periods = 12
k_covariates = 2
att1 = { kind = "constant", value = 1.0 }
att2 = { kind = "constant", value = 2.0 }
[dgp.cohort_law]
kind = "copula"
rho = 0.4
g1 = [{ period = 3, prob = 0.12 }, { period = 5, prob = 0.12 }, { period = 7, prob = 0.12 }, { period = 9, prob = 0.12 }, { period = 11, prob = 0.12 }]
g2 = [{ period = 4, prob = 0.12 }, { period = 6, prob = 0.12 }, { period = 8, prob = 0.12 }, { period = 10, prob = 0.12 }, { period = 12, prob = 0.12 }]
"#;

fn timed(dir: &Path, args: &[&str]) -> f64 {
    let start = Instant::now();
    ddid(dir, args);
    start.elapsed().as_secs_f64()
}

/// Default estimator (doubly robust, two covariates) with the default
/// resampling bootstrap. Replicates are independent, so the projection for
/// eight cores divides the bootstrap part of the measured time by eight.
pub fn scale() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scale.toml"), SCALE).unwrap();
    ddid(dir.path(), &["simulate", "--config", "scale.toml", "--out", "data"]);
    let base = ["estimate", "--input", "data/panel.csv", "--covariates", "x1,x2", "--agg", "dynamic"];
    let point = timed(dir.path(), &[&base[..], &["--out", "point"]].concat());
    let full = timed(dir.path(), &[&base[..], &["--bootstrap", "200", "--seed", "1", "--out", "full"]].concat());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let projected = point + (full - point).max(0.0) * cores.min(8) as f64 / 8.0;
    let detail = format!(
        "N=50000, T=12, 5+5 cohorts, dr, B=200: {full:.1}s on {cores} core(s) (point estimate {point:.1}s); \
         projected 8-core time {projected:.1}s (limit 60s)"
    );
    if cores >= 8 {
        verdict(full < 60.0, detail)
    } else if projected < 60.0 {
        Verdict::Unverified(detail)
    } else {
        Verdict::Fail(detail)
    }
}
