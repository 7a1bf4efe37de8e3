//! Summary parameters as weighted sums of double-group-time cells.
//!
//! Summaries are built in two steps. A target-level scheme puts weights on
//! target-effect cells `ATT1(g1, g2, t)`; [`expand`] then pushes each target
//! weight through the imputation or DiD scheme of that cell, giving a scheme
//! over combined-event cells that [`evaluate`] applies to a [`CellTable`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::doubledid::{method_for, CohortMass, Method};
use crate::error::{Error, Result};
use crate::moments::CellTable;
use crate::panel::{CellIndex, Cohort};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightScheme {
    pub label: String,
    pub weights: BTreeMap<CellIndex, f64>,
    /// Share of the intended cohort mass left out because its cells are unidentified.
    pub excluded_mass: f64,
}

impl WeightScheme {
    pub fn new(label: impl Into<String>) -> Self {
        WeightScheme { label: label.into(), ..Default::default() }
    }

    pub fn point(label: impl Into<String>, cell: CellIndex) -> Self {
        let mut s = Self::new(label);
        s.add(cell, 1.0);
        s
    }

    pub fn add(&mut self, cell: CellIndex, w: f64) {
        *self.weights.entry(cell).or_insert(0.0) += w;
    }

    /// Adds `a * other` to this scheme.
    pub fn add_scaled(&mut self, other: &WeightScheme, a: f64) {
        for (&c, &w) in &other.weights {
            self.add(c, a * w);
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn prune(mut self) -> Self {
        self.weights.retain(|_, w| *w != 0.0);
        self
    }

    pub fn n_cells(&self) -> usize {
        self.weights.values().filter(|w| **w != 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEstimate {
    pub label: String,
    pub theta: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n_cells: usize,
    pub excluded_mass: f64,
    /// Per-unit terms summing to `theta`, when every cell carries them.
    pub contributions: Vec<(u32, f64)>,
}

/// `theta = sum_c w(c) ATT(c)`.
pub fn evaluate(scheme: &WeightScheme, cells: &CellTable) -> Result<SummaryEstimate> {
    let mut theta = 0.0;
    let mut contrib: Option<BTreeMap<u32, f64>> = Some(BTreeMap::new());
    for (cell, &w) in &scheme.weights {
        if w == 0.0 {
            continue;
        }
        let est = cells.estimate(cell).ok_or(Error::MissingCell(*cell))?;
        theta += w * est.att;
        match (&mut contrib, est.contributions.is_empty()) {
            (Some(acc), false) => {
                for &(u, v) in &est.contributions {
                    *acc.entry(u).or_insert(0.0) += w * v;
                }
            }
            _ => contrib = None,
        }
    }
    Ok(SummaryEstimate {
        label: scheme.label.clone(),
        theta,
        se: None,
        ci: None,
        n_cells: scheme.n_cells(),
        excluded_mass: scheme.excluded_mass,
        contributions: contrib.map(|m| m.into_iter().collect()).unwrap_or_default(),
    })
}

/// Target-level counterpart of [`evaluate`] for known effect surfaces.
pub fn evaluate_with(scheme: &WeightScheme, value: impl Fn(&CellIndex) -> Option<f64>) -> Result<f64> {
    scheme
        .weights
        .iter()
        .filter(|(_, w)| **w != 0.0)
        .map(|(c, w)| value(c).map(|v| w * v).ok_or(Error::MissingCell(*c)))
        .sum()
}

/// Imputation scheme of target cell `(g1~, g2~, t~)` with `g1~ < g2~ <= t~`.
pub fn scheme_imp(target: &CellIndex, mass: &CohortMass) -> WeightScheme {
    let CellIndex { g1, g2, t } = *target;
    let mut s = WeightScheme::new(alloc::format!("imp{target}"));
    let Some(pre) = g2.period().map(|g| g - 1) else { return s };
    s.add(CellIndex::new(g1, g2, pre), 1.0);
    let later: Vec<(Cohort, f64)> = mass
        .pairs()
        .filter(|((a, b), _)| *a == g1 && !b.treated_at(t))
        .map(|((_, b), m)| (b, m))
        .collect();
    let denom: f64 = later.iter().map(|x| x.1).sum();
    for (b, m) in later {
        let p = m / denom;
        s.add(CellIndex::new(g1, b, t), p);
        s.add(CellIndex::new(g1, b, pre), -p);
    }
    s
}

/// DiD scheme of target cell `(g1~, g2~, t~)` with `g2~ < g1~`, `g2~ <= t~`.
pub fn scheme_did(target: &CellIndex, mass: &CohortMass) -> WeightScheme {
    let CellIndex { g1, g2, t } = *target;
    let mut s = WeightScheme::new(alloc::format!("did{target}"));
    let Some(pre) = g1.period().map(|g| g - 1) else { return s };
    s.add(*target, 1.0);
    s.add(CellIndex::new(g1, g2, pre), -1.0);
    let later: Vec<(Cohort, f64)> = mass
        .pairs()
        .filter(|((a, b), _)| *b == g2 && *a != g1 && !a.treated_at(t) && !a.treated_at(pre))
        .map(|((a, _), m)| (a, m))
        .collect();
    let denom: f64 = later.iter().map(|x| x.1).sum();
    for (a, m) in later {
        let p = m / denom;
        s.add(CellIndex::new(a, g2, t), -p);
        s.add(CellIndex::new(a, g2, pre), p);
    }
    s.prune()
}

/// Combined-cell scheme reproducing `att_dd` at `target`, or `None` when the
/// target is unidentified.
pub fn scheme_dd(target: &CellIndex, mass: &CohortMass) -> Option<WeightScheme> {
    match method_for(mass, target) {
        Method::Direct => Some(WeightScheme::point(alloc::format!("direct{target}"), *target)),
        Method::Imputation => Some(scheme_imp(target, mass)),
        Method::Did => Some(scheme_did(target, mass)),
        Method::Unidentified => None,
    }
}

/// Pushes target-level weights through the per-cell schemes.
pub fn expand(targets: &WeightScheme, mass: &CohortMass) -> Result<WeightScheme> {
    let mut out = WeightScheme::new(targets.label.clone());
    out.excluded_mass = targets.excluded_mass;
    for (cell, &w) in &targets.weights {
        let s = scheme_dd(cell, mass).ok_or(Error::MissingComponentCell(*cell))?;
        out.add_scaled(&s, w);
    }
    Ok(out.prune())
}

/// Which target cells may enter summaries. Cells are always also required
/// to have an identifying construction under the cohort mass.
pub trait Include {
    fn include(&self, cell: &CellIndex) -> bool;
}

impl<F: Fn(&CellIndex) -> bool> Include for F {
    fn include(&self, cell: &CellIndex) -> bool {
        self(cell)
    }
}

pub struct All;

impl Include for All {
    fn include(&self, _: &CellIndex) -> bool {
        true
    }
}

fn usable(cell: &CellIndex, mass: &CohortMass, include: &dyn Include) -> bool {
    method_for(mass, cell) != Method::Unidentified && include.include(cell)
}

fn in_range(t: i64, mass: &CohortMass) -> bool {
    t >= 2 && t <= mass.n_periods() as i64
}

/// Target-level group-time scheme `ATT1(g1, t)`: shares of `g2` within `g1`
/// among cells with an available comparison group.
pub fn targets_group_time(g1: u32, t: u32, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    let g = Cohort::Period(g1);
    let mut s = WeightScheme::new(alloc::format!("group_time({g1},{t})"));
    let mut all = 0.0;
    let mut kept = 0.0;
    for ((a, b), m) in mass.pairs() {
        if a != g {
            continue;
        }
        all += m;
        let cell = CellIndex::new(a, b, t);
        if usable(&cell, mass, include) {
            kept += m;
            s.add(cell, m);
        }
    }
    if kept == 0.0 {
        return Err(Error::NoAvailableCell);
    }
    for w in s.weights.values_mut() {
        *w /= kept;
    }
    s.excluded_mass = 1.0 - kept / all;
    Ok(s)
}

/// Event-study scheme at event time `e1 = t - g1` over event-1 cohorts with
/// `2 <= g1 + e1 <= T`, weighted by cohort size.
pub fn targets_dynamic(e1: i64, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    let (s, _) = dynamic_with_mass(e1, mass, include)?;
    Ok(s)
}

fn dynamic_with_mass(e1: i64, mass: &CohortMass, include: &dyn Include) -> Result<(WeightScheme, f64)> {
    let mut cohort_mass: BTreeMap<u32, f64> = BTreeMap::new();
    for ((a, _), m) in mass.pairs() {
        if let Some(g) = a.period() {
            if in_range(g as i64 + e1, mass) {
                *cohort_mass.entry(g).or_insert(0.0) += m;
            }
        }
    }
    let all: f64 = cohort_mass.values().sum();
    let mut s = WeightScheme::new(alloc::format!("dynamic({e1})"));
    let mut kept = 0.0;
    let mut kept_inner = 0.0;
    for (&g, &m) in &cohort_mass {
        let t = (g as i64 + e1) as u32;
        if let Ok(gt) = targets_group_time(g, t, mass, include) {
            kept += m;
            kept_inner += m * (1.0 - gt.excluded_mass);
            s.add_scaled(&gt, m);
        }
    }
    if kept == 0.0 {
        return Err(Error::NoAvailableCell);
    }
    for w in s.weights.values_mut() {
        *w /= kept;
    }
    s.excluded_mass = 1.0 - kept_inner / all;
    Ok((s, kept))
}

/// Dynamic scheme restricted to cohort pairs with timing gap `s12 = g1 - g2`,
/// weighted by pair size.
pub fn targets_dynamic_staggered(e1: i64, s12: i64, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    let mut s = WeightScheme::new(alloc::format!("dynamic_staggered({e1},{s12})"));
    let mut all = 0.0;
    let mut kept = 0.0;
    for ((a, b), m) in mass.pairs() {
        let (Some(g1), Some(g2)) = (a.period(), b.period()) else { continue };
        if g1 as i64 - g2 as i64 != s12 || !in_range(g1 as i64 + e1, mass) {
            continue;
        }
        all += m;
        let cell = CellIndex::new(a, b, (g1 as i64 + e1) as u32);
        if usable(&cell, mass, include) {
            kept += m;
            s.add(cell, m);
        }
    }
    if kept == 0.0 {
        return Err(Error::NoAvailableCell);
    }
    for w in s.weights.values_mut() {
        *w /= kept;
    }
    s.excluded_mass = 1.0 - kept / all;
    Ok(s)
}

/// Average of the dynamic schemes over `e1 >= 0`, each weighted by the
/// cohort mass it covers.
pub fn targets_overall(mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    let mut s = WeightScheme::new("overall");
    let mut total = 0.0;
    let mut excluded = 0.0;
    for e1 in 0..mass.n_periods() as i64 {
        if let Ok((d, m)) = dynamic_with_mass(e1, mass, include) {
            s.add_scaled(&d, m);
            total += m;
            excluded += m * d.excluded_mass;
        }
    }
    if total == 0.0 {
        return Err(Error::NoAvailableCell);
    }
    for w in s.weights.values_mut() {
        *w /= total;
    }
    s.excluded_mass = excluded / total;
    Ok(s)
}

/// Group-time scheme over combined-event cells.
pub fn scheme_group_time(g1: u32, t: u32, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    expand(&targets_group_time(g1, t, mass, include)?, mass)
}

pub fn scheme_dynamic(e1: i64, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    expand(&targets_dynamic(e1, mass, include)?, mass)
}

pub fn scheme_dynamic_staggered(e1: i64, s12: i64, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    expand(&targets_dynamic_staggered(e1, s12, mass, include)?, mass)
}

pub fn scheme_overall(mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
    expand(&targets_overall(mass, include)?, mass)
}

/// A summary parameter by name, resolvable against any cohort mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum Summary {
    GroupTime { g1: u32, t: u32 },
    Dynamic { e1: i64 },
    DynamicStaggered { e1: i64, s12: i64 },
    Overall,
}

impl Summary {
    pub fn targets(&self, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
        match *self {
            Summary::GroupTime { g1, t } => targets_group_time(g1, t, mass, include),
            Summary::Dynamic { e1 } => targets_dynamic(e1, mass, include),
            Summary::DynamicStaggered { e1, s12 } => targets_dynamic_staggered(e1, s12, mass, include),
            Summary::Overall => targets_overall(mass, include),
        }
    }

    pub fn scheme(&self, mass: &CohortMass, include: &dyn Include) -> Result<WeightScheme> {
        expand(&self.targets(mass, include)?, mass)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Summary::GroupTime { .. } => "group_time",
            Summary::Dynamic { .. } => "dynamic",
            Summary::DynamicStaggered { .. } => "dynamic_staggered",
            Summary::Overall => "overall",
        }
    }

    /// Every group-time, dynamic, dynamic-staggered and overall summary the
    /// cohort mass can support.
    pub fn standard_set(mass: &CohortMass) -> Vec<Summary> {
        let t_max = mass.n_periods();
        let mut out = Vec::new();
        let g1s: alloc::collections::BTreeSet<u32> = mass.pairs().filter_map(|((a, _), _)| a.period()).collect();
        for &g in &g1s {
            for t in 2..=t_max {
                out.push(Summary::GroupTime { g1: g, t });
            }
        }
        let span = t_max as i64;
        for e1 in -span..span {
            out.push(Summary::Dynamic { e1 });
        }
        let gaps: alloc::collections::BTreeSet<i64> = mass
            .pairs()
            .filter_map(|((a, b), _)| Some(a.period()? as i64 - b.period()? as i64))
            .collect();
        for &s12 in &gaps {
            for e1 in -span..span {
                out.push(Summary::DynamicStaggered { e1, s12 });
            }
        }
        out.push(Summary::Overall);
        out
    }
}
