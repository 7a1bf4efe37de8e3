//! Double-group-time ATT estimation with the unconditional, inverse
//! probability weighted, outcome regression and doubly robust moments.
//!
//! Every cell `(g1, g2, t)` compares the long difference `Y_t - Y_b`, with
//! the universal base `b = min(g1, g2) - 1`, between the double cohort and a
//! comparison group that is untreated by either event (see
//! [`is_control_pair`]). All sums accept optional per-unit frequency weights
//! so the same code path serves point estimates and resampling replicates.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::panel::{is_control_pair, CellIndex, Cohort, CohortMap, ControlType, Panel};
use crate::regression::{fit_logit, fit_logit_from, fit_wls, Gram, LogitFit, NewtonSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Estimator {
    Unc,
    Ipw,
    Or,
    Dr,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Unc, Estimator::Ipw, Estimator::Or, Estimator::Dr];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Unc => "unc",
            Estimator::Ipw => "ipw",
            Estimator::Or => "or",
            Estimator::Dr => "dr",
        }
    }

    fn uses_propensity(self) -> bool {
        matches!(self, Estimator::Ipw | Estimator::Dr)
    }

    fn uses_outcome_model(self) -> bool {
        matches!(self, Estimator::Or | Estimator::Dr)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unc" => Ok(Estimator::Unc),
            "ipw" => Ok(Estimator::Ipw),
            "or" => Ok(Estimator::Or),
            "dr" => Ok(Estimator::Dr),
            other => Err(Error::InvalidConfig(alloc::format!("unknown estimator `{other}`"))),
        }
    }
}

/// Which effect a double-group-time cell measures, by the ordering of
/// `(g1, g2, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Estimand {
    Combined,
    TargetOnly,
    ConfoundingOnly,
    Pre,
}

impl Estimand {
    pub fn of(cell: &CellIndex) -> Self {
        match (cell.g1.treated_at(cell.t), cell.g2.treated_at(cell.t)) {
            (true, true) => Estimand::Combined,
            (true, false) => Estimand::TargetOnly,
            (false, true) => Estimand::ConfoundingOnly,
            (false, false) => Estimand::Pre,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Combined => "combined",
            Estimand::TargetOnly => "target_only",
            Estimand::ConfoundingOnly => "confounding_only",
            Estimand::Pre => "pre",
        }
    }
}

/// Tuning constants of cell estimation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct EstimationOptions {
    pub newton: NewtonSettings,
    /// Comparison units with fitted propensity above this are dropped.
    pub trim: f64,
    pub min_treated: usize,
    pub min_control: usize,
    /// Keep per-unit contributions and influence terms on every estimate.
    pub keep_unit_terms: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            newton: NewtonSettings::default(),
            trim: 0.995,
            min_treated: 2,
            min_control: 2,
            keep_unit_terms: false,
        }
    }
}

/// Data plus optional per-unit frequency weights.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub panel: &'a Panel,
    pub cohorts: &'a CohortMap,
    pub weights: Option<&'a [f64]>,
}

impl<'a> Sample<'a> {
    pub fn new(panel: &'a Panel, cohorts: &'a CohortMap) -> Self {
        Sample { panel, cohorts, weights: None }
    }

    pub fn weighted(panel: &'a Panel, cohorts: &'a CohortMap, weights: &'a [f64]) -> Self {
        Sample { panel, cohorts, weights: Some(weights) }
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    /// Weighted number of units in double cohort `(g1, g2)`.
    pub fn pair_mass(&self, g1: Cohort, g2: Cohort) -> f64 {
        self.cohorts.pair_units(g1, g2).iter().map(|&u| self.weight(u as usize)).sum()
    }

    fn long_difference(&self, i: usize, t: u32, b: u32) -> f64 {
        self.panel.outcome(i, t) - self.panel.outcome(i, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellEstimate {
    pub cell: CellIndex,
    pub att: f64,
    pub estimand: Estimand,
    /// Moment actually used (differs from the request after a fallback).
    pub estimator: Estimator,
    pub n_treat: usize,
    pub n_control: usize,
    pub n_trimmed: usize,
    /// Per-unit terms summing to `att` (empty unless requested).
    pub contributions: Vec<(u32, f64)>,
    /// Per-unit linearization `att* - att = sum(xi_i * influence_i)` with
    /// nuisance models held at their fitted values, apart from the
    /// outcome-regression coefficients (empty unless requested).
    pub influence: Vec<(u32, f64)>,
    /// Propensity coefficients, empty when no propensity model was fit.
    pub logit_coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Ok,
    /// Propensity fit failed by separation; estimated with the unconditional moment.
    SeparationFallback,
    TooFewTreated,
    TooFewControls,
    Failed(Error),
}

impl CellStatus {
    pub fn has_value(&self) -> bool {
        matches!(self, CellStatus::Ok | CellStatus::SeparationFallback)
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::SeparationFallback => f.write_str("fallback_unc:perfect_separation"),
            CellStatus::TooFewTreated => f.write_str("skipped:too_few_treated"),
            CellStatus::TooFewControls => f.write_str("skipped:too_few_controls"),
            CellStatus::Failed(e) => write!(f, "error:{e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub cell: CellIndex,
    pub estimand: Estimand,
    pub status: CellStatus,
    pub n_treat: usize,
    pub n_control: usize,
    pub estimate: Option<CellEstimate>,
}

/// All double-group-time cells of a panel, keyed by `(g1, g2, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTable {
    pub estimator: Estimator,
    pub control: ControlType,
    records: BTreeMap<CellIndex, CellRecord>,
}

impl CellTable {
    pub fn new(estimator: Estimator, control: ControlType) -> Self {
        CellTable { estimator, control, records: BTreeMap::new() }
    }

    pub fn insert(&mut self, record: CellRecord) {
        self.records.insert(record.cell, record);
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&CellRecord> {
        self.records.get(cell)
    }

    pub fn estimate(&self, cell: &CellIndex) -> Option<&CellEstimate> {
        self.records.get(cell).and_then(|r| r.estimate.as_ref())
    }

    pub fn value(&self, cell: &CellIndex) -> Option<f64> {
        self.estimate(cell).map(|e| e.att)
    }

    pub fn records(&self) -> impl Iterator<Item = &CellRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Fitted nuisance models of one cell, aligned with `units`.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceFit {
    pub units: Vec<u32>,
    /// Fitted `p(X)` for every pooled unit (empty for outcome fits).
    pub propensity: Vec<f64>,
    /// Fitted `m(X)` for every pooled unit (empty for propensity fits).
    pub outcome_reg: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub max_propensity: f64,
}

/// Treated units first, then comparison units; zero-weight units are left out.
struct Pooled {
    units: Vec<u32>,
    dy: Vec<f64>,
    w: Vec<f64>,
    n_treat: usize,
}

impl Pooled {
    fn n_control(&self) -> usize {
        self.units.len() - self.n_treat
    }
}

fn checked_base(panel: &Panel, cell: &CellIndex) -> Result<u32> {
    let b = cell.base_period().ok_or(Error::BasePeriodOutOfRange(*cell))?;
    if b < 1 || cell.t < 1 || cell.t > panel.n_periods() {
        return Err(Error::BasePeriodOutOfRange(*cell));
    }
    Ok(b)
}

fn gather(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<Pooled> {
    let b = checked_base(sample.panel, cell)?;
    let mut pooled = Pooled { units: Vec::new(), dy: Vec::new(), w: Vec::new(), n_treat: 0 };
    let push = |p: &mut Pooled, u: u32| {
        let w = sample.weight(u as usize);
        if w > 0.0 {
            p.units.push(u);
            p.dy.push(sample.long_difference(u as usize, cell.t, b));
            p.w.push(w);
        }
    };
    for &u in sample.cohorts.pair_units(cell.g1, cell.g2) {
        push(&mut pooled, u);
    }
    pooled.n_treat = pooled.units.len();
    for (&(a1, a2), units) in sample.cohorts.pairs() {
        if is_control_pair(a1, a2, cell, control) {
            for &u in units {
                push(&mut pooled, u);
            }
        }
    }
    if pooled.n_treat == 0 {
        return Err(Error::EmptyTreated(*cell));
    }
    if pooled.n_control() == 0 {
        return Err(Error::EmptyControl(*cell));
    }
    Ok(pooled)
}

fn design(sample: &Sample, units: &[u32]) -> Vec<f64> {
    let k = sample.panel.n_covariates();
    let mut x = Vec::with_capacity(units.len() * (k + 1));
    for &u in units {
        x.push(1.0);
        x.extend_from_slice(sample.panel.covariates(u as usize));
    }
    x
}

/// Positive-weight treated and comparison counts of a cell.
pub fn cell_sizes(sample: &Sample, cell: &CellIndex, control: ControlType) -> (usize, usize) {
    let count = |units: &[u32]| units.iter().filter(|&&u| sample.weight(u as usize) > 0.0).count();
    let n_treat = count(sample.cohorts.pair_units(cell.g1, cell.g2));
    let n_control = sample
        .cohorts
        .pairs()
        .iter()
        .filter(|((a1, a2), _)| is_control_pair(*a1, *a2, cell, control))
        .map(|(_, units)| count(units))
        .sum();
    (n_treat, n_control)
}

/// Logistic model of double-cohort membership on `(1, X)` over the pooled
/// treated and comparison units.
pub fn fit_propensity(
    sample: &Sample,
    cell: &CellIndex,
    control: ControlType,
    settings: &NewtonSettings,
) -> Result<NuisanceFit> {
    let pooled = gather(sample, cell, control)?;
    let p = sample.panel.n_covariates() + 1;
    let x = design(sample, &pooled.units);
    let y: Vec<f64> = (0..pooled.units.len()).map(|j| (j < pooled.n_treat) as u8 as f64).collect();
    let fit = fit_logit(&x, p, &y, &pooled.w, settings)?;
    let max_propensity = fit.fitted.iter().copied().fold(0.0, f64::max);
    Ok(NuisanceFit {
        units: pooled.units,
        propensity: fit.fitted,
        outcome_reg: Vec::new(),
        coefficients: fit.coefficients,
        converged: fit.converged,
        max_propensity,
    })
}

/// Least-squares control function of the long difference on `(1, X)` over
/// the comparison units, evaluated for every pooled unit.
pub fn fit_outcome_reg(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<NuisanceFit> {
    let pooled = gather(sample, cell, control)?;
    let p = sample.panel.n_covariates() + 1;
    let x = design(sample, &pooled.units);
    let nt = pooled.n_treat;
    let fit = fit_wls(&x[nt * p..], p, &pooled.dy[nt..], &pooled.w[nt..])?;
    let outcome_reg = x.chunks_exact(p).map(|row| fit.predict(row)).collect();
    Ok(NuisanceFit {
        units: pooled.units,
        propensity: Vec::new(),
        outcome_reg,
        coefficients: fit.coefficients,
        converged: true,
        max_propensity: 0.0,
    })
}

pub fn att_unc(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<CellEstimate> {
    estimate_cell(sample, cell, Estimator::Unc, control, &EstimationOptions::default())
}

pub fn att_ipw(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<CellEstimate> {
    estimate_cell(sample, cell, Estimator::Ipw, control, &EstimationOptions::default())
}

pub fn att_or(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<CellEstimate> {
    estimate_cell(sample, cell, Estimator::Or, control, &EstimationOptions::default())
}

pub fn att_dr(sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<CellEstimate> {
    estimate_cell(sample, cell, Estimator::Dr, control, &EstimationOptions::default())
}

/// Estimates one cell with the requested moment.
///
/// A separated propensity model surfaces as [`Error::PerfectSeparation`];
/// [`estimate_all_cells`] turns that into the unconditional fallback.
pub fn estimate_cell(
    sample: &Sample,
    cell: &CellIndex,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
) -> Result<CellEstimate> {
    estimate_cell_from(sample, cell, estimator, control, opts, None)
}

/// [`estimate_cell`] with the propensity fit started at `start`.
pub fn estimate_cell_from(
    sample: &Sample,
    cell: &CellIndex,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
    start: Option<&[f64]>,
) -> Result<CellEstimate> {
    estimate_cell_cached(sample, cell, estimator, control, opts, start, &mut Shared::new(sample))
}

/// Propensity fits keyed by treated pair and comparison horizon. The model
/// does not involve outcomes, so cells pooling the same units share it.
type PropensityCache = BTreeMap<((Cohort, Cohort), u32), Result<LogitFit>>;

fn comparison_horizon(cell: &CellIndex, control: ControlType) -> u32 {
    match control {
        ControlType::Never => 0,
        ControlType::NotYet => cell.combined().period().map_or(cell.t, |g| g.max(cell.t)),
    }
}

fn estimate_cell_cached(
    sample: &Sample,
    cell: &CellIndex,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
    start: Option<&[f64]>,
    shared: &mut Shared,
) -> Result<CellEstimate> {
    if estimator == Estimator::Unc && !opts.keep_unit_terms {
        return shared.totals.unc(sample, cell, control);
    }
    let pooled = gather(sample, cell, control)?;
    let nt = pooled.n_treat;
    let n = pooled.units.len();
    let p = sample.panel.n_covariates() + 1;
    let needs_design = estimator != Estimator::Unc;
    let x = if needs_design { design(sample, &pooled.units) } else { Vec::new() };

    // Comparison weights: plain frequency weights, or w p/(1-p) after trimming.
    let mut comp_w: Vec<f64> = pooled.w[nt..].to_vec();
    let mut n_trimmed = 0;
    let mut logit_coefficients = Vec::new();
    if estimator.uses_propensity() {
        let run = || {
            let y: Vec<f64> = (0..n).map(|j| (j < nt) as u8 as f64).collect();
            fit_logit_from(&x, p, &y, &pooled.w, &opts.newton, start)
        };
        let fit = shared
            .propensity
            .entry(((cell.g1, cell.g2), comparison_horizon(cell, control)))
            .or_insert_with(run)
            .clone()?;
        logit_coefficients = fit.coefficients;
        for (j, cw) in comp_w.iter_mut().enumerate() {
            let ps = fit.fitted[nt + j];
            if ps > opts.trim {
                *cw = 0.0;
                n_trimmed += 1;
            } else {
                *cw *= ps / (1.0 - ps);
            }
        }
        if comp_w.iter().all(|&c| c == 0.0) {
            return Err(Error::PropensityAtBoundary(*cell));
        }
    }

    let ols = if estimator.uses_outcome_model() {
        let (xc, wc) = (&x[nt * p..], &pooled.w[nt..]);
        let gram = shared
            .gram
            .entry(comparison_horizon(cell, control))
            .or_insert_with(|| Gram::new(xc, p, wc))
            .clone()?;
        Some(gram.fit(xc, &pooled.dy[nt..], wc))
    } else {
        None
    };
    let fitted_m = |j: usize| ols.as_ref().map_or(0.0, |f| f.predict(&x[j * p..(j + 1) * p]));

    let w_treat: f64 = pooled.w[..nt].iter().sum();
    let w_comp: f64 = comp_w.iter().sum();
    let resid: Vec<f64> = (0..n).map(|j| pooled.dy[j] - fitted_m(j)).collect();
    let mu_treat = (0..nt).map(|j| pooled.w[j] * resid[j]).sum::<f64>() / w_treat;
    let comp_term = if estimator == Estimator::Or {
        0.0
    } else {
        (0..n - nt).map(|j| comp_w[j] * resid[nt + j]).sum::<f64>() / w_comp
    };
    let att = mu_treat - comp_term;

    let mut estimate = CellEstimate {
        cell: *cell,
        att,
        estimand: Estimand::of(cell),
        estimator,
        n_treat: nt,
        n_control: n - nt,
        n_trimmed,
        contributions: Vec::new(),
        influence: Vec::new(),
        logit_coefficients,
    };
    if !opts.keep_unit_terms {
        return Ok(estimate);
    }

    // Sensitivity of att to the regression coefficients, mapped through
    // (X'WX)^{-1}: d att / d beta = -xbar_treat (+ xbar_comp for dr).
    let gram_dir: Option<Vec<f64>> = ols.as_ref().map(|fit| {
        let mut dir = alloc::vec![0.0; p];
        for j in 0..nt {
            for a in 0..p {
                dir[a] -= pooled.w[j] * x[j * p + a] / w_treat;
            }
        }
        if estimator == Estimator::Dr {
            for j in 0..n - nt {
                for a in 0..p {
                    dir[a] += comp_w[j] * x[(nt + j) * p + a] / w_comp;
                }
            }
        }
        fit.solve_gram(&dir)
    });
    let along = |j: usize| -> f64 {
        gram_dir
            .as_ref()
            .map_or(0.0, |v| v.iter().zip(&x[j * p..(j + 1) * p]).map(|(a, b)| a * b).sum())
    };

    let mut contributions = Vec::with_capacity(n);
    let mut influence = Vec::with_capacity(n);
    for j in 0..nt {
        let u = pooled.units[j];
        let w = pooled.w[j];
        let raw = if ols.is_some() { pooled.dy[j] } else { resid[j] };
        contributions.push((u, w * raw / w_treat));
        influence.push((u, w * (resid[j] - mu_treat) / w_treat));
    }
    for j in 0..n - nt {
        let u = pooled.units[nt + j];
        let w = pooled.w[nt + j];
        let dy = pooled.dy[nt + j];
        let (ipw_contrib, ipw_infl) = if estimator == Estimator::Or {
            (0.0, 0.0)
        } else {
            (-comp_w[j] * dy / w_comp, -comp_w[j] * (resid[nt + j] - comp_term) / w_comp)
        };
        let reg = along(nt + j) * w;
        contributions.push((u, ipw_contrib + reg * dy));
        influence.push((u, ipw_infl + reg * resid[nt + j]));
    }
    estimate.contributions = contributions;
    estimate.influence = influence;
    Ok(estimate)
}

/// Positive-weight count, total weight and weighted outcome sum per period
/// of one double cohort.
struct PairTotal {
    n: usize,
    w: f64,
    y: Vec<f64>,
}

/// Per-double-cohort totals, enough for cell sizes and the unconditional
/// moment without revisiting units.
struct PairTotals(BTreeMap<(Cohort, Cohort), PairTotal>);

impl PairTotals {
    fn new(sample: &Sample) -> Self {
        let t_max = sample.panel.n_periods() as usize;
        let mut map = BTreeMap::new();
        for (&pair, units) in sample.cohorts.pairs() {
            let mut tot = PairTotal { n: 0, w: 0.0, y: alloc::vec![0.0; t_max] };
            for &u in units {
                let w = sample.weight(u as usize);
                if w > 0.0 {
                    tot.n += 1;
                    tot.w += w;
                    for (acc, y) in tot.y.iter_mut().zip(sample.panel.outcomes(u as usize)) {
                        *acc += w * y;
                    }
                }
            }
            map.insert(pair, tot);
        }
        PairTotals(map)
    }

    fn treated(&self, cell: &CellIndex) -> Option<&PairTotal> {
        self.0.get(&(cell.g1, cell.g2))
    }

    fn controls<'a>(&'a self, cell: &'a CellIndex, control: ControlType) -> impl Iterator<Item = &'a PairTotal> + 'a {
        self.0.iter().filter(move |((a1, a2), _)| is_control_pair(*a1, *a2, cell, control)).map(|(_, t)| t)
    }

    fn sizes(&self, cell: &CellIndex, control: ControlType) -> (usize, usize) {
        (self.treated(cell).map_or(0, |t| t.n), self.controls(cell, control).map(|t| t.n).sum())
    }

    fn unc(&self, sample: &Sample, cell: &CellIndex, control: ControlType) -> Result<CellEstimate> {
        let b = checked_base(sample.panel, cell)? as usize;
        let t = cell.t as usize;
        let diff = |p: &PairTotal| p.y[t - 1] - p.y[b - 1];
        let treat = self.treated(cell).filter(|p| p.n > 0).ok_or(Error::EmptyTreated(*cell))?;
        let (mut n_c, mut w_c, mut s_c) = (0, 0.0, 0.0);
        for p in self.controls(cell, control) {
            n_c += p.n;
            w_c += p.w;
            s_c += diff(p);
        }
        if n_c == 0 {
            return Err(Error::EmptyControl(*cell));
        }
        Ok(CellEstimate {
            cell: *cell,
            att: diff(treat) / treat.w - s_c / w_c,
            estimand: Estimand::of(cell),
            estimator: Estimator::Unc,
            n_treat: treat.n,
            n_control: n_c,
            n_trimmed: 0,
            contributions: Vec::new(),
            influence: Vec::new(),
            logit_coefficients: Vec::new(),
        })
    }
}

/// State shared by the cells of one sample.
struct Shared {
    totals: PairTotals,
    propensity: PropensityCache,
    /// Comparison-group Gram matrices by horizon; they do not depend on the treated pair.
    gram: BTreeMap<u32, Result<Gram>>,
}

impl Shared {
    fn new(sample: &Sample) -> Self {
        Shared { totals: PairTotals::new(sample), propensity: PropensityCache::new(), gram: BTreeMap::new() }
    }
}

/// The cells enumerated for a panel: every realized double cohort other than
/// never/never, crossed with `t = 2..=T`.
pub fn cell_grid(cohorts: &CohortMap) -> Vec<CellIndex> {
    let t_max = cohorts.n_periods();
    cohorts
        .pairs()
        .keys()
        .filter(|(a, b)| !(a.is_never() && b.is_never()))
        .flat_map(|&(g1, g2)| (2..=t_max).map(move |t| CellIndex::new(g1, g2, t)))
        .collect()
}

pub fn estimate_record(
    sample: &Sample,
    cell: CellIndex,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
) -> CellRecord {
    estimate_record_from(sample, cell, estimator, control, opts, None, &mut Shared::new(sample))
}

fn estimate_record_from(
    sample: &Sample,
    cell: CellIndex,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
    start: Option<&[f64]>,
    shared: &mut Shared,
) -> CellRecord {
    let (n_treat, n_control) = shared.totals.sizes(&cell, control);
    let mut record = CellRecord {
        cell,
        estimand: Estimand::of(&cell),
        status: CellStatus::Ok,
        n_treat,
        n_control,
        estimate: None,
    };
    if n_treat < opts.min_treated.max(1) {
        record.status = CellStatus::TooFewTreated;
        return record;
    }
    if n_control < opts.min_control.max(1) {
        record.status = CellStatus::TooFewControls;
        return record;
    }
    match estimate_cell_cached(sample, &cell, estimator, control, opts, start, shared) {
        Ok(est) => record.estimate = Some(est),
        Err(Error::PerfectSeparation) => {
            match estimate_cell_cached(sample, &cell, Estimator::Unc, control, opts, None, shared) {
                Ok(est) => {
                    record.status = CellStatus::SeparationFallback;
                    record.estimate = Some(est);
                }
                Err(e) => record.status = CellStatus::Failed(e),
            }
        }
        Err(e) => record.status = CellStatus::Failed(e),
    }
    record
}

/// Estimates every cell of [`cell_grid`]. Per-cell failures are recorded in
/// the table rather than propagated.
pub fn estimate_all_cells(
    sample: &Sample,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
) -> CellTable {
    estimate_all_cells_from(sample, estimator, control, opts, None)
}

/// [`estimate_all_cells`] with propensity fits started from the
/// coefficients of a previous table, as in bootstrap replicates.
pub fn estimate_all_cells_from(
    sample: &Sample,
    estimator: Estimator,
    control: ControlType,
    opts: &EstimationOptions,
    warm: Option<&CellTable>,
) -> CellTable {
    let mut table = CellTable::new(estimator, control);
    let mut shared = Shared::new(sample);
    for cell in cell_grid(sample.cohorts) {
        let start = warm.and_then(|w| w.estimate(&cell)).map(|e| e.logit_coefficients.as_slice());
        table.insert(estimate_record_from(sample, cell, estimator, control, opts, start, &mut shared));
    }
    table
}
