use alloc::string::String;
use core::fmt;

use crate::panel::CellIndex;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong between ingesting a panel and producing a
/// summary parameter.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    EmptyPanel,
    DuplicateObservation { unit: i64, period: i64 },
    UnbalancedUnit { unit: i64, found: usize, expected: usize },
    NonMonotoneTreatment { unit: i64, event: u8 },
    TreatedInFirstPeriod { unit: i64, event: u8 },
    NonFiniteOutcome { unit: i64, period: i64 },
    CovariateWidth { expected: usize, found: usize },
    CovariateVaries { unit: i64, column: usize },
    EmptyTreated(CellIndex),
    EmptyControl(CellIndex),
    BasePeriodOutOfRange(CellIndex),
    PerfectSeparation,
    NoVariation,
    RankDeficientDesign,
    InsufficientControls { needed: usize, found: usize },
    PropensityAtBoundary(CellIndex),
    MissingComponentCell(CellIndex),
    NoControlCohort(CellIndex),
    MissingCell(CellIndex),
    NoAvailableCell,
    EmptyGroup { g1: u32, t: u32 },
    HeterogeneousTruth,
    DivisionByZero,
    InvalidConfig(String),
    UnknownViolation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyPanel => write!(f, "panel has no observations"),
            Error::DuplicateObservation { unit, period } => {
                write!(f, "duplicate observation for unit {unit} in period {period}")
            }
            Error::UnbalancedUnit { unit, found, expected } => write!(
                f,
                "unit {unit} has {found} periods, expected {expected} (balanced panel required)"
            ),
            Error::NonMonotoneTreatment { unit, event } => {
                write!(f, "non-monotone treatment: unit {unit} switches event {event} off")
            }
            Error::TreatedInFirstPeriod { unit, event } => write!(
                f,
                "unit {unit} is treated by event {event} in the first sample period; trim it before estimation"
            ),
            Error::NonFiniteOutcome { unit, period } => {
                write!(f, "non-finite outcome for unit {unit} in period {period}")
            }
            Error::CovariateWidth { expected, found } => {
                write!(f, "expected {expected} covariates, got {found}")
            }
            Error::CovariateVaries { unit, column } => {
                write!(f, "covariate {column} varies over time within unit {unit}")
            }
            Error::EmptyTreated(c) => write!(f, "no treated units for cell {c}"),
            Error::EmptyControl(c) => write!(f, "no control units for cell {c}"),
            Error::BasePeriodOutOfRange(c) => write!(f, "base period out of range for cell {c}"),
            Error::PerfectSeparation => write!(f, "perfect separation in propensity model"),
            Error::NoVariation => write!(f, "propensity sample contains a single class"),
            Error::RankDeficientDesign => write!(f, "rank-deficient regression design"),
            Error::InsufficientControls { needed, found } => {
                write!(f, "outcome regression needs {needed} controls, found {found}")
            }
            Error::PropensityAtBoundary(c) => {
                write!(f, "all comparison propensities at the trim boundary for cell {c}")
            }
            Error::MissingComponentCell(c) => write!(f, "missing component cell {c}"),
            Error::NoControlCohort(c) => write!(f, "no control cohort with positive share for {c}"),
            Error::MissingCell(c) => write!(f, "weighting scheme references missing cell {c}"),
            Error::NoAvailableCell => write!(f, "no cell with an available control group"),
            Error::EmptyGroup { g1, t } => write!(f, "empty comparison group for g1={g1}, t={t}"),
            Error::HeterogeneousTruth => {
                write!(f, "bias decomposition requires homogeneous effect surfaces")
            }
            Error::DivisionByZero => write!(f, "division by zero"),
            Error::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            Error::UnknownViolation(m) => write!(f, "unknown violation tag `{m}`"),
        }
    }
}

impl core::error::Error for Error {}
