use std::path::{Path, PathBuf};

use ddid_core::aggregate::Summary;
use ddid_core::doubledid::CohortMass;
use ddid_core::inference::{BootstrapConfig, BootstrapMethod, PipelineSpec};
use ddid_core::moments::{EstimationOptions, Estimator};
use ddid_core::panel::ControlType;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::io::Schema;
use crate::AppError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AggKind {
    GroupTime,
    Dynamic,
    DynamicStaggered,
    Overall,
}

impl AggKind {
    pub const ALL: [AggKind; 4] = [AggKind::GroupTime, AggKind::Dynamic, AggKind::DynamicStaggered, AggKind::Overall];

    fn label(self) -> &'static str {
        match self {
            AggKind::GroupTime => "group_time",
            AggKind::Dynamic => "dynamic",
            AggKind::DynamicStaggered => "dynamic_staggered",
            AggKind::Overall => "overall",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replications: usize,
    pub method: BootstrapMethod,
    pub ci_level: f64,
    pub max_drop_rate: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { replications: 0, method: BootstrapMethod::NonparametricCluster, ci_level: 0.95, max_drop_rate: 0.1 }
    }
}

/// Everything an `estimate` or `diagnose` run depends on besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub schema: Schema,
    pub estimator: Estimator,
    pub control: ControlType,
    pub aggregations: Vec<AggKind>,
    pub bootstrap: BootstrapSettings,
    pub seed: Option<u64>,
    /// Worker threads; all available cores when absent. Not echoed.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub estimation: EstimationOptions,
    /// Simulation truth for the bias decomposition in `diagnose`.
    pub truth: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            out: PathBuf::from("ddid_out"),
            schema: Schema::default(),
            estimator: Estimator::Dr,
            control: ControlType::NotYet,
            aggregations: AggKind::ALL.to_vec(),
            bootstrap: BootstrapSettings::default(),
            seed: None,
            threads: None,
            estimation: EstimationOptions::default(),
            truth: None,
        }
    }
}

impl RunConfig {
    /// Checks the cross-field rules; randomness must always be seeded.
    pub fn validate(&self) -> Result<(), AppError> {
        if self.input.is_none() {
            return Err(AppError::Config("no input file given".into()));
        }
        if self.bootstrap.replications > 0 && self.seed.is_none() {
            return Err(AppError::Config("--seed is required when --bootstrap is positive".into()));
        }
        if self.threads == Some(0) {
            return Err(AppError::Config("--threads must be at least 1".into()));
        }
        if let Some(b) = self.bootstrap_config() {
            b.validate().map_err(|e| AppError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn bootstrap_config(&self) -> Option<BootstrapConfig> {
        (self.bootstrap.replications > 0).then(|| BootstrapConfig {
            replications: self.bootstrap.replications,
            seed: self.seed.unwrap_or(0),
            ci_level: self.bootstrap.ci_level,
            method: self.bootstrap.method,
            max_drop_rate: self.bootstrap.max_drop_rate,
        })
    }

    /// Requested summaries that the cohort mass can support.
    pub fn summaries(&self, mass: &CohortMass) -> Vec<Summary> {
        Summary::standard_set(mass)
            .into_iter()
            .filter(|s| self.aggregations.iter().any(|a| a.label() == s.label()))
            .collect()
    }

    pub fn pipeline(&self, mass: &CohortMass, diagnostics: bool) -> PipelineSpec {
        PipelineSpec {
            estimator: self.estimator,
            control: self.control,
            options: self.estimation,
            summaries: self.summaries(mass),
            diagnostics,
        }
    }
}

/// Reads a TOML or JSON file, chosen by extension.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }
}
