use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddid::commands::{self, SimConfig};
use ddid::config::{read_config, AggKind, RunConfig};
use ddid::io::Treatment;
use ddid::AppError;
use ddid_core::inference::BootstrapMethod;
use ddid_core::moments::Estimator;
use ddid_core::panel::ControlType;
use ddid_core::simulate::Violation;

#[derive(Parser)]
#[command(name = "ddid", version, about = "Double difference-in-differences for two staggered events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate cell, target and summary effects from a panel CSV.
    Estimate(EstimateArgs),
    /// Estimate and additionally report the naive comparison and the omitted-event diagnostics.
    Diagnose(DiagnoseArgs),
    /// Draw a panel from a configured data generating process, optionally as a Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum MethodArg {
    Nonparametric,
    Multiplier,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON file with defaults; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Option<Estimator>,
    #[arg(long, value_parser = parse_control)]
    control: Option<ControlType>,
    /// Summaries to report; repeat or separate with commas.
    #[arg(long, value_enum, value_delimiter = ',')]
    agg: Vec<AggKind>,
    /// Bootstrap replications; 0 disables inference.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, value_enum)]
    bootstrap_method: Option<MethodArg>,
    #[arg(long)]
    ci_level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    unit_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    outcome_col: Option<String>,
    /// Event indicator columns, as `d1,d2`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    treatment_cols: Option<Vec<String>>,
    /// First-treated period columns, as `g1,g2`; 0 or empty means never treated.
    #[arg(long, value_delimiter = ',', num_args = 2, conflicts_with = "treatment_cols")]
    cohort_cols: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// truth.json from `simulate`, enabling the bias decomposition.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    periods: Option<u32>,
    /// Monte Carlo replications.
    #[arg(long)]
    mc: Option<usize>,
    /// One of nonparallel_trends, nonparallel_treatment_effects, nonadditive.
    #[arg(long, requires = "strength")]
    violation: Option<String>,
    #[arg(long)]
    strength: Option<f64>,
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|_| format!("unknown estimator `{s}` (unc, ipw, or, dr)"))
}

fn parse_control(s: &str) -> Result<ControlType, String> {
    s.parse().map_err(|_| format!("unknown control group `{s}` (never, not_yet)"))
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.estimator {
            cfg.estimator = v;
        }
        if let Some(v) = self.control {
            cfg.control = v;
        }
        if !self.agg.is_empty() {
            cfg.aggregations = self.agg.clone();
        }
        if let Some(v) = self.bootstrap {
            cfg.bootstrap.replications = v;
        }
        if let Some(m) = self.bootstrap_method {
            cfg.bootstrap.method = match m {
                MethodArg::Nonparametric => BootstrapMethod::NonparametricCluster,
                MethodArg::Multiplier => BootstrapMethod::MultiplierRademacher,
            };
        }
        if let Some(v) = self.ci_level {
            cfg.bootstrap.ci_level = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = Some(v);
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
    }
}

impl EstimateArgs {
    fn resolve(&self) -> Result<RunConfig, AppError> {
        let mut cfg: RunConfig = match &self.common.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        self.common.apply(&mut cfg);
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        let s = &mut cfg.schema;
        if let Some(v) = &self.unit_col {
            s.unit = v.clone();
        }
        if let Some(v) = &self.time_col {
            s.time = v.clone();
        }
        if let Some(v) = &self.outcome_col {
            s.outcome = v.clone();
        }
        if let Some(v) = &self.treatment_cols {
            s.treatment = Treatment::Indicators { d1: v[0].clone(), d2: v[1].clone() };
        }
        if let Some(v) = &self.cohort_cols {
            s.treatment = Treatment::Cohorts { g1: v[0].clone(), g2: v[1].clone() };
        }
        if let Some(v) = &self.covariates {
            s.covariates = v.iter().filter(|c| !c.is_empty()).cloned().collect();
        }
        Ok(cfg)
    }
}

impl SimulateArgs {
    fn resolve(&self) -> Result<SimConfig, AppError> {
        let mut cfg: SimConfig = match &self.common.config {
            Some(p) => read_config(p)?,
            None => SimConfig::default(),
        };
        let mut run = RunConfig {
            out: cfg.out.clone(),
            estimator: cfg.estimator,
            control: cfg.control,
            aggregations: cfg.aggregations.clone(),
            bootstrap: cfg.bootstrap,
            seed: cfg.seed,
            threads: cfg.threads,
            ..Default::default()
        };
        self.common.apply(&mut run);
        cfg.out = run.out;
        cfg.estimator = run.estimator;
        cfg.control = run.control;
        cfg.aggregations = run.aggregations;
        cfg.bootstrap = run.bootstrap;
        cfg.seed = run.seed;
        cfg.threads = run.threads;
        if let Some(v) = self.units {
            cfg.dgp.n_units = v;
        }
        if let Some(v) = self.periods {
            cfg.dgp.n_periods = v;
        }
        if let Some(v) = self.mc {
            cfg.mc = v;
        }
        if let (Some(tag), Some(strength)) = (&self.violation, self.strength) {
            cfg.dgp.violation = Some(Violation::parse(tag, strength).map_err(|e| AppError::Config(e.to_string()))?);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Estimate(a) => {
            let out = commands::estimate(&a.resolve()?, false)?;
            report_run(&out);
        }
        Command::Diagnose(a) => {
            let mut cfg = a.estimate.resolve()?;
            if let Some(t) = a.truth {
                cfg.truth = Some(t);
            }
            let out = commands::estimate(&cfg, true)?;
            report_run(&out);
        }
        Command::Simulate(a) => {
            let out = commands::simulate(&a.resolve()?)?;
            list_files(&out.files);
        }
    }
    Ok(())
}

// status lines go to stdout; a closed pipe is not an error
fn list_files(files: &[PathBuf]) {
    let mut out = std::io::stdout().lock();
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
}

fn report_run(out: &commands::RunOutput) {
    let ok = out.result.cells.records().filter(|r| r.status.has_value()).count();
    let targets = out.result.targets.values().filter(|t| t.att1.is_some()).count();
    let _ = writeln!(
        std::io::stdout().lock(),
        "{} units, {} periods: {ok} of {} cells estimated, {targets} of {} event-1 targets identified",
        out.panel.n_units(),
        out.panel.n_periods(),
        out.result.cells.len(),
        out.result.targets.len()
    );
    if let Some(r) = &out.report {
        let unreliable = r.stats.values().filter(|s| s.unreliable).count();
        if unreliable > 0 {
            eprintln!("warning: {unreliable} estimates dropped too many bootstrap replicates (see bootstrap.json)");
        }
    }
    list_files(&out.files);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
