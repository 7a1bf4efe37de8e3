//! Target-event effects in confounded periods.
//!
//! Before the confounding event the combined cell is the target effect. After
//! it, treated-then-confounded cohorts (`g1 < g2`) impute the target effect
//! from same-`g1` cohorts not yet hit by event 2, and confounded-then-treated
//! cohorts (`g1 > g2`) difference out the confounding trend using same-`g2`
//! cohorts not yet hit by event 1.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::moments::{CellTable, Sample};
use crate::panel::{CellIndex, Cohort, CohortMap};

/// Weighted size of every realized double cohort.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CohortMass {
    mass: BTreeMap<(Cohort, Cohort), f64>,
    n_periods: u32,
}

impl CohortMass {
    pub fn unweighted(cohorts: &CohortMap) -> Self {
        let mass = cohorts.pairs().iter().map(|(&k, v)| (k, v.len() as f64)).collect();
        CohortMass { mass, n_periods: cohorts.n_periods() }
    }

    pub fn from_sample(sample: &Sample) -> Self {
        let mass = sample
            .cohorts
            .pairs()
            .iter()
            .map(|(&k, units)| (k, units.iter().map(|&u| sample.weight(u as usize)).sum()))
            .collect();
        CohortMass { mass, n_periods: sample.cohorts.n_periods() }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = ((Cohort, Cohort), f64)>, n_periods: u32) -> Self {
        CohortMass { mass: counts.into_iter().collect(), n_periods }
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    pub fn get(&self, g1: Cohort, g2: Cohort) -> f64 {
        self.mass.get(&(g1, g2)).copied().unwrap_or(0.0)
    }

    /// Pairs with positive mass.
    pub fn pairs(&self) -> impl Iterator<Item = ((Cohort, Cohort), f64)> + '_ {
        self.mass.iter().filter(|(_, &m)| m > 0.0).map(|(&k, &m)| (k, m))
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }
}

/// Latest-cohort maxima that bound where a not-yet-confounded comparison
/// cohort exists.
#[derive(Clone, Debug, PartialEq)]
pub struct Availability {
    pub gbar2_of_g1: BTreeMap<Cohort, Cohort>,
    pub gbar1_of_g2: BTreeMap<Cohort, Cohort>,
}

impl Availability {
    pub fn new(mass: &CohortMass) -> Self {
        let mut gbar2_of_g1: BTreeMap<Cohort, Cohort> = BTreeMap::new();
        let mut gbar1_of_g2: BTreeMap<Cohort, Cohort> = BTreeMap::new();
        for ((a, b), _) in mass.pairs() {
            let e = gbar2_of_g1.entry(a).or_insert(b);
            *e = (*e).max(b);
            let e = gbar1_of_g2.entry(b).or_insert(a);
            *e = (*e).max(a);
        }
        Availability { gbar2_of_g1, gbar1_of_g2 }
    }

    /// `A(g1, g2, t)`.
    pub fn available(&self, g1: Cohort, g2: Cohort, t: u32) -> bool {
        if !g1.treated_at(t) {
            return false;
        }
        if g1 < g2 {
            self.gbar2_of_g1.get(&g1).is_some_and(|g| g.after(t))
        } else if g1 > g2 {
            self.gbar1_of_g2.get(&g2).is_some_and(|g| g.after(t))
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Method {
    Direct,
    Imputation,
    Did,
    Unidentified,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Imputation => "imputation",
            Method::Did => "did",
            Method::Unidentified => "unidentified",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetEstimate {
    pub cell: CellIndex,
    pub method: Method,
    pub att1: Option<f64>,
    /// Combined-event cells and the weights they enter with.
    pub components: Vec<(CellIndex, f64)>,
    pub error: Option<Error>,
    /// Per-unit terms summing to `att1`, when the cell table carries them.
    pub contributions: Vec<(u32, f64)>,
}

impl TargetEstimate {
    fn unidentified(cell: CellIndex, error: Option<Error>) -> Self {
        TargetEstimate {
            cell,
            method: Method::Unidentified,
            att1: None,
            components: Vec::new(),
            error,
            contributions: Vec::new(),
        }
    }

    pub fn status(&self) -> TargetStatus<'_> {
        TargetStatus(self)
    }
}

pub struct TargetStatus<'a>(&'a TargetEstimate);

impl fmt::Display for TargetStatus<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.0;
        match (&e.error, e.method) {
            (Some(Error::MissingComponentCell(c)), _) => write!(f, "missing_component:{c}"),
            (Some(Error::NoControlCohort(_)), _) => f.write_str("unidentified:no_control_cohort"),
            (Some(err), _) => write!(f, "error:{err}"),
            (None, Method::Unidentified) if e.cell.g1 == e.cell.g2 => {
                f.write_str("unidentified:simultaneous_events")
            }
            (None, Method::Unidentified) => f.write_str("unidentified:no_control_cohort"),
            (None, _) => f.write_str("ok"),
        }
    }
}

fn normalized(pool: Vec<(Cohort, f64)>) -> Vec<(Cohort, f64)> {
    let total: f64 = pool.iter().map(|p| p.1).sum();
    pool.into_iter().map(|(c, m)| (c, m / total)).collect()
}

/// Event-2 cohorts `s2 > t` sharing event-1 cohort `g1`, with their shares
/// `P(G2 = s2 | G1 = g1, D2_t = 0)`.
pub fn imputation_pool(mass: &CohortMass, g1: Cohort, t: u32) -> Vec<(Cohort, f64)> {
    normalized(
        mass.pairs()
            .filter(|((a, b), _)| *a == g1 && b.after(t))
            .map(|((_, b), m)| (b, m))
            .collect(),
    )
}

/// Event-1 cohorts sharing event-2 cohort `g2` and untreated by event 1 at
/// both `t` and `g1 - 1`, with their shares among that pool.
pub fn did_pool(mass: &CohortMass, g1: Cohort, g2: Cohort, t: u32) -> Vec<(Cohort, f64)> {
    let horizon = t.max(g1.period().map_or(t, |g| g - 1));
    normalized(
        mass.pairs()
            .filter(|((a, b), _)| *b == g2 && *a != g1 && a.after(horizon))
            .map(|((a, _), m)| (a, m))
            .collect(),
    )
}

/// Which construction identifies the target effect at `cell`.
pub fn method_for(mass: &CohortMass, cell: &CellIndex) -> Method {
    let CellIndex { g1, g2, t } = *cell;
    if g1.is_never() {
        return Method::Unidentified;
    }
    if !g2.treated_at(t) {
        return Method::Direct;
    }
    if g1 < g2 {
        if imputation_pool(mass, g1, t).is_empty() {
            Method::Unidentified
        } else {
            Method::Imputation
        }
    } else if g1 > g2 {
        if did_pool(mass, g1, g2, t).is_empty() {
            Method::Unidentified
        } else {
            Method::Did
        }
    } else {
        Method::Unidentified
    }
}

fn value(cells: &CellTable, cell: CellIndex) -> Result<f64> {
    cells.value(&cell).ok_or(Error::MissingComponentCell(cell))
}

fn merge_contributions(cells: &CellTable, components: &[(CellIndex, f64)]) -> Vec<(u32, f64)> {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for (c, w) in components {
        let Some(est) = cells.estimate(c) else { return Vec::new() };
        if est.contributions.is_empty() {
            return Vec::new();
        }
        for &(u, v) in &est.contributions {
            *acc.entry(u).or_insert(0.0) += w * v;
        }
    }
    acc.into_iter().collect()
}

fn finish(cells: &CellTable, cell: CellIndex, method: Method, att1: f64, components: Vec<(CellIndex, f64)>) -> TargetEstimate {
    let contributions = merge_contributions(cells, &components);
    TargetEstimate { cell, method, att1: Some(att1), components, error: None, contributions }
}

/// Difference-in-differences construction for `g1 > g2`, `t >= g2`.
pub fn att_did_cell(cells: &CellTable, mass: &CohortMass, cell: &CellIndex) -> Result<TargetEstimate> {
    let CellIndex { g1, g2, t } = *cell;
    let pre = g1.period().ok_or(Error::BasePeriodOutOfRange(*cell))? - 1;
    let pool = did_pool(mass, g1, g2, t);
    if pool.is_empty() {
        return Err(Error::NoControlCohort(*cell));
    }
    let own_now = value(cells, *cell)?;
    let own_pre = value(cells, CellIndex::new(g1, g2, pre))?;
    let mut trend = 0.0;
    let mut components = alloc::vec![(*cell, 1.0), (CellIndex::new(g1, g2, pre), -1.0)];
    for &(s1, p) in &pool {
        let now = CellIndex::new(s1, g2, t);
        let before = CellIndex::new(s1, g2, pre);
        trend += p * (value(cells, now)? - value(cells, before)?);
        components.push((now, -p));
        components.push((before, p));
    }
    Ok(finish(cells, *cell, Method::Did, own_now - own_pre - trend, components))
}

/// Imputation construction for `g1 < g2`, `t >= g2`.
pub fn att_imp_cell(cells: &CellTable, mass: &CohortMass, cell: &CellIndex) -> Result<TargetEstimate> {
    let CellIndex { g1, g2, t } = *cell;
    let pre = g2.period().ok_or(Error::BasePeriodOutOfRange(*cell))? - 1;
    let pool = imputation_pool(mass, g1, t);
    if pool.is_empty() {
        return Err(Error::NoControlCohort(*cell));
    }
    let level_cell = CellIndex::new(g1, g2, pre);
    let level = value(cells, level_cell)?;
    let mut trend = 0.0;
    let mut components = alloc::vec![(level_cell, 1.0)];
    for &(s2, p) in &pool {
        let now = CellIndex::new(g1, s2, t);
        let before = CellIndex::new(g1, s2, pre);
        trend += p * (value(cells, now)? - value(cells, before)?);
        components.push((now, p));
        components.push((before, -p));
    }
    Ok(finish(cells, *cell, Method::Imputation, level + trend, components))
}

/// Dispatches to the direct, imputation or DiD construction. Failures are
/// carried on the returned estimate with `method = unidentified`.
pub fn att_dd(cells: &CellTable, mass: &CohortMass, cell: &CellIndex) -> TargetEstimate {
    let outcome = match method_for(mass, cell) {
        Method::Direct => value(cells, *cell).map(|v| finish(cells, *cell, Method::Direct, v, alloc::vec![(*cell, 1.0)])),
        Method::Imputation => att_imp_cell(cells, mass, cell),
        Method::Did => att_did_cell(cells, mass, cell),
        Method::Unidentified => return TargetEstimate::unidentified(*cell, None),
    };
    outcome.unwrap_or_else(|e| TargetEstimate::unidentified(*cell, Some(e)))
}

/// Placebo estimates at every `t < g1` for one double cohort.
pub fn pre_trend_dd(cells: &CellTable, mass: &CohortMass, g1: Cohort, g2: Cohort) -> Vec<TargetEstimate> {
    let Some(g) = g1.period() else { return Vec::new() };
    (2..g).map(|t| att_dd(cells, mass, &CellIndex::new(g1, g2, t))).collect()
}

/// Target cells: realized pairs with a finite event-1 cohort, `t = 2..=T`.
pub fn target_grid(mass: &CohortMass) -> Vec<CellIndex> {
    let t_max = mass.n_periods();
    mass.pairs()
        .filter(|((a, _), _)| !a.is_never())
        .flat_map(|((a, b), _)| (2..=t_max).map(move |t| CellIndex::new(a, b, t)))
        .collect()
}

/// `att_dd` over the whole target grid.
pub fn estimate_targets(cells: &CellTable, mass: &CohortMass) -> BTreeMap<CellIndex, TargetEstimate> {
    target_grid(mass).into_iter().map(|c| (c, att_dd(cells, mass, &c))).collect()
}
