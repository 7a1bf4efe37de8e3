//! The `estimate`, `diagnose` and `simulate` commands, independent of argument parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ddid_core::aggregate::Summary;
use ddid_core::diagnostics::{aggregate_diagnostic, bias_decomposition, relative_bias};
use ddid_core::doubledid::CohortMass;
use ddid_core::inference::{run_pipeline, BootstrapReport, PipelineResult, PipelineSpec};
use ddid_core::moments::{EstimationOptions, Estimator, Sample};
use ddid_core::panel::{Cohort, CohortMap, ControlType, Panel};
use ddid_core::simulate::{gen_panel, DgpConfig, SimTruth};
use ddid_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{AggKind, BootstrapSettings, RunConfig};
use crate::io::{load_panel, write_panel};
use crate::{parallel, tables, AppError};

/// What a finished `estimate` or `diagnose` run produced.
pub struct RunOutput {
    pub panel: Panel,
    pub result: PipelineResult,
    pub report: Option<BootstrapReport>,
    pub files: Vec<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::Output(format!("{}: {e}", dir.display())))
}

fn estimation(e: Error) -> AppError {
    AppError::Estimation(e.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads the input, estimates, bootstraps and writes every table.
pub fn estimate(cfg: &RunConfig, diagnose: bool) -> Result<RunOutput, AppError> {
    cfg.validate()?;
    let input = cfg.input.as_ref().expect("validated");
    let bytes = std::fs::read(input).map_err(|e| AppError::Data(format!("{}: {e}", input.display())))?;
    let panel = load_panel(bytes.as_slice(), &cfg.schema)?;
    let cohorts = CohortMap::derive(&panel);
    let sample = Sample::new(&panel, &cohorts);
    let mass = CohortMass::from_sample(&sample);
    let spec = cfg.pipeline(&mass, diagnose);

    let pool = parallel::thread_pool(cfg.threads)?;
    let (result, report) = match cfg.bootstrap_config() {
        Some(b) => {
            let (p, r) = pool.install(|| parallel::bootstrap(&sample, &spec, &b)).map_err(estimation)?;
            (p, Some(r))
        }
        None => (run_pipeline(&sample, &spec), None),
    };
    if !result.cells.records().any(|r| r.status.has_value()) {
        return Err(AppError::Estimation("no estimable cell".into()));
    }

    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let out = |name: &str| cfg.out.join(name);
    let report_ref = report.as_ref();

    tables::write_csv(&out("cells.csv"), &tables::CELLS_HEADER, &tables::cells_table(&panel, &result, report_ref))?;
    files.push(out("cells.csv"));
    tables::write_csv(&out("dd.csv"), &tables::DD_HEADER, &tables::dd_table(&panel, &result, report_ref))?;
    files.push(out("dd.csv"));
    tables::write_json(&out("dd_components.json"), &tables::dd_components(&panel, &result))?;
    files.push(out("dd_components.json"));
    if !spec.summaries.is_empty() {
        tables::write_csv(&out("summary.csv"), &tables::SUMMARY_HEADER, &tables::summary_table(&panel, &result, report_ref))?;
        files.push(out("summary.csv"));
    }
    if cfg.aggregations.contains(&AggKind::Dynamic) {
        tables::write_csv(&out("dynamic.csv"), &tables::DYNAMIC_HEADER, &tables::dynamic_table(&result, report_ref))?;
        files.push(out("dynamic.csv"));
    }
    if diagnose {
        let rows = tables::diagnostics_table(&panel, cfg.control, &result, report_ref);
        tables::write_csv(&out("diagnostics.csv"), &tables::DIAGNOSTICS_HEADER, &rows)?;
        files.push(out("diagnostics.csv"));
        tables::write_csv(&out("diagnostics_summary.csv"), &AGG_DIAG_HEADER, &aggregated_diagnostics(&result))?;
        files.push(out("diagnostics_summary.csv"));
        if let Some(path) = &cfg.truth {
            let truth = tables::read_truth(path)?;
            tables::write_json(&out("decomposition.json"), &decomposition(&panel, &sample, &truth, &result, cfg.control))?;
            files.push(out("decomposition.json"));
        }
    }
    if let Some(r) = &report {
        tables::write_json(&out("bootstrap.json"), &tables::bootstrap_json(r))?;
        files.push(out("bootstrap.json"));
    }
    let run = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": if diagnose { "diagnose" } else { "estimate" },
        "input_sha256": sha256_hex(&bytes),
        "n_units": panel.n_units(),
        "n_periods": panel.n_periods(),
        "config": cfg,
    });
    tables::write_json(&out("run_config.json"), &run)?;
    files.push(out("run_config.json"));
    Ok(RunOutput { panel, result, report, files })
}

const AGG_DIAG_HEADER: [&str; 5] = ["label", "gamma12", "naive_att", "dd_att", "gap"];

/// Group-time diagnostics averaged with the weights of each available summary.
fn aggregated_diagnostics(res: &PipelineResult) -> Vec<Vec<String>> {
    let by_cell: BTreeMap<(u32, u32), _> = res.diagnostics.iter().map(|d| ((d.g1, d.t), d)).collect();
    let mut rows = Vec::new();
    for (s, r) in &res.summaries {
        let Ok(r) = r else { continue };
        if matches!(s, Summary::GroupTime { .. }) {
            continue;
        }
        let lookup = |pick: fn(&ddid_core::inference::DiagnosticRow) -> f64| {
            aggregate_diagnostic(&r.targets, |g, t| by_cell.get(&(g, t)).map(|d| pick(d)).ok_or(Error::NoAvailableCell))
        };
        let gamma = lookup(|d| d.gamma12).ok();
        let naive = lookup(|d| d.naive_att).ok();
        let label = match s {
            Summary::Dynamic { e1 } => format!("dynamic({e1})"),
            Summary::DynamicStaggered { e1, s12 } => format!("dynamic_staggered({e1},{s12})"),
            _ => s.label().to_string(),
        };
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        rows.push(vec![
            label,
            num(gamma),
            num(naive),
            r.estimate.theta.to_string(),
            num(naive.map(|n| n - r.estimate.theta)),
        ]);
    }
    rows
}

fn decomposition(
    panel: &Panel,
    sample: &Sample,
    truth: &SimTruth,
    res: &PipelineResult,
    control: ControlType,
) -> serde_json::Value {
    let att2 = truth.cells.iter().find(|(c, _)| c.g2.treated_at(c.t)).map_or(0.0, |(_, v)| v.att2);
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for d in &res.diagnostics {
        match bias_decomposition(sample, truth, d.g1, d.t, control) {
            Ok(b) => entries.push((b, relative_bias(b.gamma12, att2, b.target))),
            Err(e) => skipped.push(json!({ "g1": panel.period_label(d.g1), "t": panel.period_label(d.t), "reason": e.to_string() })),
        }
    }
    let mut v = tables::decomposition_json(panel, control, &entries);
    v["skipped"] = serde_json::Value::Array(skipped);
    v
}

/// Settings of the `simulate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dgp: DgpConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Monte Carlo replications; 0 writes a single panel.
    pub mc: usize,
    pub estimator: Estimator,
    pub control: ControlType,
    pub aggregations: Vec<AggKind>,
    pub bootstrap: BootstrapSettings,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub estimation: EstimationOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dgp: DgpConfig::default(),
            out: PathBuf::from("ddid_sim"),
            seed: None,
            mc: 0,
            estimator: Estimator::Dr,
            control: ControlType::NotYet,
            aggregations: AggKind::ALL.to_vec(),
            bootstrap: BootstrapSettings::default(),
            threads: None,
            estimation: EstimationOptions::default(),
        }
    }
}

impl SimConfig {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            input: Some(PathBuf::new()),
            estimator: self.estimator,
            control: self.control,
            aggregations: self.aggregations.clone(),
            bootstrap: self.bootstrap,
            seed: self.seed,
            threads: self.threads,
            estimation: self.estimation,
            ..Default::default()
        }
    }

    /// Cohort mass implied by the cohort law, used to fix the summary set.
    fn population_mass(&self) -> Result<CohortMass, AppError> {
        let table = self.dgp.cohort_law.implied_table().map_err(|e| AppError::Config(e.to_string()))?;
        let counts = table.into_iter().filter(|c| c.prob > 0.0).map(|c| ((Cohort::from(c.g1), Cohort::from(c.g2)), c.prob));
        Ok(CohortMass::from_counts(counts, self.dgp.n_periods))
    }
}

pub struct SimOutput {
    pub files: Vec<PathBuf>,
    pub mc_rows: usize,
}

/// Writes one simulated panel and its truth, plus a Monte Carlo table when `mc > 0`.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, AppError> {
    let seed = cfg.seed.ok_or_else(|| AppError::Config("--seed is required for simulate".into()))?;
    let run = cfg.run_config();
    run.validate()?;
    let mut dgp = cfg.dgp.clone();
    dgp.seed = seed;
    dgp.validate().map_err(|e| AppError::Config(e.to_string()))?;

    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let (panel, truth) = gen_panel(&dgp).map_err(estimation)?;
    let path = cfg.out.join("panel.csv");
    let file = std::fs::File::create(&path).map_err(|e| AppError::Output(format!("{}: {e}", path.display())))?;
    write_panel(&panel, std::io::BufWriter::new(file)).map_err(|e| AppError::Output(e.to_string()))?;
    files.push(path);
    tables::write_json(&cfg.out.join("truth.json"), &tables::truth_json(&truth))?;
    files.push(cfg.out.join("truth.json"));

    let mut mc_rows = 0;
    if cfg.mc > 0 {
        let mass = cfg.population_mass()?;
        let spec: PipelineSpec = run.pipeline(&mass, true);
        let boot = run.bootstrap_config();
        let pool = parallel::thread_pool(cfg.threads)?;
        let (reps, rows) = pool.install(|| parallel::mc_study(&dgp, &spec, boot.as_ref(), cfg.mc, seed));
        let failed = reps.iter().filter(|r| r.error.is_some()).count();
        if failed == reps.len() {
            return Err(AppError::Estimation("every Monte Carlo replication failed".into()));
        }
        tables::write_csv(&cfg.out.join("mc.csv"), &tables::MC_HEADER, &tables::mc_table(&rows))?;
        files.push(cfg.out.join("mc.csv"));
        mc_rows = rows.len();
    }
    let resolved = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "simulate",
        "config": SimConfig { seed: Some(seed), dgp, ..cfg.clone() },
    });
    tables::write_json(&cfg.out.join("run_config.json"), &resolved)?;
    files.push(cfg.out.join("run_config.json"));
    Ok(SimOutput { files, mc_rows })
}
