//! Balanced long-format panels with two irreversible events, their cohort
//! structure, and the treated/control membership of double-group-time cells.
//!
//! Periods are re-indexed to the contiguous range `1..=T`; the original
//! labels are kept on the [`Panel`] for reporting. A unit's cohort for an
//! event is the first period in which it is treated, or [`Cohort::Never`].

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// First-treatment period of a unit for one event. `Never` compares greater
/// than every finite period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(from = "Option<u32>", into = "Option<u32>")
)]
pub enum Cohort {
    Period(u32),
    Never,
}

impl Cohort {
    /// `D_t = 1` for a unit in this cohort.
    #[inline]
    pub fn treated_at(self, t: u32) -> bool {
        matches!(self, Cohort::Period(g) if g <= t)
    }

    /// The cohort is strictly later than `t` (not yet treated at `t`).
    #[inline]
    pub fn after(self, t: u32) -> bool {
        !self.treated_at(t)
    }

    pub fn period(self) -> Option<u32> {
        match self {
            Cohort::Period(g) => Some(g),
            Cohort::Never => None,
        }
    }

    pub fn is_never(self) -> bool {
        self == Cohort::Never
    }

    /// Cohort-column encoding: first treated period, `0` for never.
    pub fn to_code(self) -> u32 {
        self.period().unwrap_or(0)
    }

    pub fn from_code(code: u32) -> Self {
        if code == 0 {
            Cohort::Never
        } else {
            Cohort::Period(code)
        }
    }
}

impl From<Option<u32>> for Cohort {
    fn from(v: Option<u32>) -> Self {
        v.map_or(Cohort::Never, Cohort::Period)
    }
}

impl From<Cohort> for Option<u32> {
    fn from(c: Cohort) -> Self {
        c.period()
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cohort::Period(g) => write!(f, "{g}"),
            Cohort::Never => f.write_str("inf"),
        }
    }
}

/// A double-group-time index `(g1, g2, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellIndex {
    pub g1: Cohort,
    pub g2: Cohort,
    pub t: u32,
}

impl CellIndex {
    pub const fn new(g1: Cohort, g2: Cohort, t: u32) -> Self {
        CellIndex { g1, g2, t }
    }

    /// Combined-event cohort `min(g1, g2)`.
    pub fn combined(&self) -> Cohort {
        self.g1.min(self.g2)
    }

    /// Universal base period `min(g1, g2) - 1`; `None` for the never/never pair.
    pub fn base_period(&self) -> Option<u32> {
        self.combined().period().map(|g| g - 1)
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.g1, self.g2, self.t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum ControlType {
    Never,
    NotYet,
}

impl ControlType {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlType::Never => "never",
            ControlType::NotYet => "not_yet",
        }
    }
}

impl FromStr for ControlType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "never" => Ok(ControlType::Never),
            "not_yet" | "notyet" | "not-yet" => Ok(ControlType::NotYet),
            other => Err(Error::InvalidConfig(alloc::format!("unknown control type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Treated,
    Control,
}

/// A validated balanced panel.
///
/// Outcomes are stored unit-major: row `i` holds periods `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    unit_ids: Vec<i64>,
    period_labels: Vec<i64>,
    outcomes: Vec<f64>,
    first1: Vec<Cohort>,
    first2: Vec<Cohort>,
    covariates: Vec<f64>,
    n_covariates: usize,
}

impl Panel {
    /// Assembles a panel from already-indexed parts.
    ///
    /// `first1`/`first2` hold internal period indices (`2..=T`) or `Never`.
    pub fn from_parts(
        unit_ids: Vec<i64>,
        period_labels: Vec<i64>,
        outcomes: Vec<f64>,
        first1: Vec<Cohort>,
        first2: Vec<Cohort>,
        covariates: Vec<f64>,
        n_covariates: usize,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = period_labels.len();
        if n == 0 || t == 0 {
            return Err(Error::EmptyPanel);
        }
        if outcomes.len() != n * t || first1.len() != n || first2.len() != n {
            return Err(Error::InvalidConfig("panel part lengths disagree".into()));
        }
        if covariates.len() != n * n_covariates {
            return Err(Error::CovariateWidth {
                expected: n * n_covariates,
                found: covariates.len(),
            });
        }
        if period_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("period labels must be strictly increasing".into()));
        }
        for (i, &id) in unit_ids.iter().enumerate() {
            for (event, g) in [(1u8, first1[i]), (2u8, first2[i])] {
                match g {
                    Cohort::Period(p) if p <= 1 => {
                        return Err(Error::TreatedInFirstPeriod { unit: id, event })
                    }
                    Cohort::Period(p) if p as usize > t => {
                        return Err(Error::InvalidConfig(alloc::format!(
                            "unit {id}: cohort {p} beyond the last period"
                        )))
                    }
                    _ => {}
                }
            }
            for (s, y) in outcomes[i * t..(i + 1) * t].iter().enumerate() {
                if !y.is_finite() {
                    return Err(Error::NonFiniteOutcome { unit: id, period: period_labels[s] });
                }
            }
        }
        Ok(Panel { unit_ids, period_labels, outcomes, first1, first2, covariates, n_covariates })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> u32 {
        self.period_labels.len() as u32
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn unit_id(&self, i: usize) -> i64 {
        self.unit_ids[i]
    }

    pub fn unit_ids(&self) -> &[i64] {
        &self.unit_ids
    }

    /// Original label of internal period `t` (1-based).
    pub fn period_label(&self, t: u32) -> i64 {
        self.period_labels[t as usize - 1]
    }

    pub fn period_labels(&self) -> &[i64] {
        &self.period_labels
    }

    /// Internal index of an original period label.
    pub fn period_index(&self, label: i64) -> Option<u32> {
        self.period_labels.binary_search(&label).ok().map(|p| p as u32 + 1)
    }

    /// Outcome of unit `i` in internal period `t` (1-based).
    #[inline]
    pub fn outcome(&self, i: usize, t: u32) -> f64 {
        self.outcomes[i * self.period_labels.len() + t as usize - 1]
    }

    pub fn outcomes(&self, i: usize) -> &[f64] {
        let t = self.period_labels.len();
        &self.outcomes[i * t..(i + 1) * t]
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    pub fn d1(&self, i: usize, t: u32) -> bool {
        self.first1[i].treated_at(t)
    }

    pub fn d2(&self, i: usize, t: u32) -> bool {
        self.first2[i].treated_at(t)
    }

    pub fn first_treated(&self, event: u8, i: usize) -> Cohort {
        if event == 1 {
            self.first1[i]
        } else {
            self.first2[i]
        }
    }

    /// Cohort expressed as an original period label.
    pub fn cohort_label(&self, c: Cohort) -> Option<i64> {
        c.period().map(|g| self.period_label(g))
    }

    /// Long-format rows in (unit, period) order.
    pub fn rows(&self) -> impl Iterator<Item = PanelRow<'_>> + '_ {
        let t = self.n_periods();
        (0..self.n_units()).flat_map(move |i| {
            (1..=t).map(move |s| PanelRow {
                unit: self.unit_ids[i],
                period: self.period_label(s),
                outcome: self.outcome(i, s),
                d1: self.d1(i, s),
                d2: self.d2(i, s),
                covariates: self.covariates(i),
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanelRow<'a> {
    pub unit: i64,
    pub period: i64,
    pub outcome: f64,
    pub d1: bool,
    pub d2: bool,
    pub covariates: &'a [f64],
}

/// Collects long-format observations and validates them into a [`Panel`].
#[derive(Debug, Default)]
pub struct PanelBuilder {
    n_covariates: usize,
    rows: Vec<(i64, i64, f64, bool, bool)>,
    covariates: Vec<f64>,
}

impl PanelBuilder {
    pub fn new(n_covariates: usize) -> Self {
        PanelBuilder { n_covariates, ..Default::default() }
    }

    pub fn with_capacity(n_covariates: usize, rows: usize) -> Self {
        PanelBuilder {
            n_covariates,
            rows: Vec::with_capacity(rows),
            covariates: Vec::with_capacity(rows * n_covariates),
        }
    }

    pub fn push(
        &mut self,
        unit: i64,
        period: i64,
        outcome: f64,
        d1: bool,
        d2: bool,
        covariates: &[f64],
    ) -> Result<()> {
        if covariates.len() != self.n_covariates {
            return Err(Error::CovariateWidth {
                expected: self.n_covariates,
                found: covariates.len(),
            });
        }
        if !outcome.is_finite() {
            return Err(Error::NonFiniteOutcome { unit, period });
        }
        self.rows.push((unit, period, outcome, d1, d2));
        self.covariates.extend_from_slice(covariates);
        Ok(())
    }

    pub fn build(self) -> Result<Panel> {
        let PanelBuilder { n_covariates: k, rows, covariates } = self;
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let mut labels: Vec<i64> = rows.iter().map(|r| r.1).collect();
        labels.sort_unstable();
        labels.dedup();
        let t = labels.len();

        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_unstable_by(|&a, &b| match rows[a].0.cmp(&rows[b].0) {
            Ordering::Equal => rows[a].1.cmp(&rows[b].1),
            o => o,
        });
        for w in order.windows(2) {
            let (a, b) = (&rows[w[0]], &rows[w[1]]);
            if a.0 == b.0 && a.1 == b.1 {
                return Err(Error::DuplicateObservation { unit: a.0, period: a.1 });
            }
        }

        let n = rows.len() / t;
        let mut unit_ids = Vec::with_capacity(n);
        let mut outcomes = Vec::with_capacity(rows.len());
        let mut first1 = Vec::with_capacity(n);
        let mut first2 = Vec::with_capacity(n);
        let mut unit_cov = Vec::with_capacity(n * k);

        let mut start = 0;
        while start < order.len() {
            let unit = rows[order[start]].0;
            let mut end = start;
            while end < order.len() && rows[order[end]].0 == unit {
                end += 1;
            }
            if end - start != t {
                return Err(Error::UnbalancedUnit { unit, found: end - start, expected: t });
            }
            let block = &order[start..end];
            first1.push(first_period(unit, 1, block.iter().map(|&r| rows[r].3))?);
            first2.push(first_period(unit, 2, block.iter().map(|&r| rows[r].4))?);
            let x0 = &covariates[block[0] * k..(block[0] + 1) * k];
            for &r in &block[1..] {
                let x = &covariates[r * k..(r + 1) * k];
                if let Some(column) = (0..k).find(|&j| x[j] != x0[j]) {
                    return Err(Error::CovariateVaries { unit, column });
                }
            }
            unit_ids.push(unit);
            outcomes.extend(block.iter().map(|&r| rows[r].2));
            unit_cov.extend_from_slice(x0);
            start = end;
        }

        Panel::from_parts(unit_ids, labels, outcomes, first1, first2, unit_cov, k)
    }
}

fn first_period(unit: i64, event: u8, path: impl Iterator<Item = bool>) -> Result<Cohort> {
    let mut first = Cohort::Never;
    for (s, d) in path.enumerate() {
        match (first, d) {
            (Cohort::Never, true) => {
                if s == 0 {
                    return Err(Error::TreatedInFirstPeriod { unit, event });
                }
                first = Cohort::Period(s as u32 + 1);
            }
            (Cohort::Period(_), false) => return Err(Error::NonMonotoneTreatment { unit, event }),
            _ => {}
        }
    }
    Ok(first)
}

/// Per-unit cohorts for event 1, event 2 and the combined event, plus the
/// unit lists of every realized cohort and double cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortMap {
    pub g1: Vec<Cohort>,
    pub g2: Vec<Cohort>,
    pub g_combined: Vec<Cohort>,
    n_periods: u32,
    lists1: BTreeMap<Cohort, Vec<u32>>,
    lists2: BTreeMap<Cohort, Vec<u32>>,
    lists_combined: BTreeMap<Cohort, Vec<u32>>,
    pairs: BTreeMap<(Cohort, Cohort), Vec<u32>>,
}

impl CohortMap {
    pub fn derive(panel: &Panel) -> Self {
        let n = panel.n_units();
        let g1: Vec<Cohort> = (0..n).map(|i| panel.first_treated(1, i)).collect();
        let g2: Vec<Cohort> = (0..n).map(|i| panel.first_treated(2, i)).collect();
        Self::from_cohorts(g1, g2, panel.n_periods())
    }

    pub fn from_cohorts(g1: Vec<Cohort>, g2: Vec<Cohort>, n_periods: u32) -> Self {
        let g_combined: Vec<Cohort> = g1.iter().zip(&g2).map(|(a, b)| *a.min(b)).collect();
        let mut lists1: BTreeMap<Cohort, Vec<u32>> = BTreeMap::new();
        let mut lists2: BTreeMap<Cohort, Vec<u32>> = BTreeMap::new();
        let mut lists_combined: BTreeMap<Cohort, Vec<u32>> = BTreeMap::new();
        let mut pairs: BTreeMap<(Cohort, Cohort), Vec<u32>> = BTreeMap::new();
        for i in 0..g1.len() {
            let u = i as u32;
            lists1.entry(g1[i]).or_default().push(u);
            lists2.entry(g2[i]).or_default().push(u);
            lists_combined.entry(g_combined[i]).or_default().push(u);
            pairs.entry((g1[i], g2[i])).or_default().push(u);
        }
        CohortMap { g1, g2, g_combined, n_periods, lists1, lists2, lists_combined, pairs }
    }

    pub fn n_units(&self) -> usize {
        self.g1.len()
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    /// Units of each realized cohort of `event` (1, 2, or 0 for combined).
    pub fn cohort_lists(&self, event: u8) -> &BTreeMap<Cohort, Vec<u32>> {
        match event {
            1 => &self.lists1,
            2 => &self.lists2,
            _ => &self.lists_combined,
        }
    }

    /// Realized double cohorts with their unit lists, in `(g1, g2)` order.
    pub fn pairs(&self) -> &BTreeMap<(Cohort, Cohort), Vec<u32>> {
        &self.pairs
    }

    pub fn pair_units(&self, g1: Cohort, g2: Cohort) -> &[u32] {
        self.pairs.get(&(g1, g2)).map_or(&[], Vec::as_slice)
    }

    /// Latest event-2 cohort among units whose event-1 cohort is `g1`.
    pub fn gbar2_of_g1(&self, g1: Cohort) -> Option<Cohort> {
        self.pairs.keys().filter(|(a, _)| *a == g1).map(|&(_, b)| b).max()
    }

    /// Latest event-1 cohort among units whose event-2 cohort is `g2`.
    pub fn gbar1_of_g2(&self, g2: Cohort) -> Option<Cohort> {
        self.pairs.keys().filter(|(_, b)| *b == g2).map(|&(a, _)| a).max()
    }
}

/// Whether double cohort `(a1, a2)` belongs to the comparison group of `cell`.
///
/// Not-yet-treated comparisons must be untreated by either event at the
/// evaluation period and at the cell's own combined cohort, so no other
/// double cohort sharing that combined cohort enters a pre-period comparison.
#[inline]
pub fn is_control_pair(a1: Cohort, a2: Cohort, cell: &CellIndex, control: ControlType) -> bool {
    match control {
        ControlType::Never => a1.is_never() && a2.is_never(),
        ControlType::NotYet => {
            let horizon = cell.combined().period().map_or(cell.t, |g| g.max(cell.t));
            a1.min(a2).after(horizon)
        }
    }
}

/// Units playing `role` in `cell`, in ascending unit order.
pub fn cell_membership(
    cohorts: &CohortMap,
    cell: &CellIndex,
    role: Role,
    control: ControlType,
) -> Vec<u32> {
    debug_assert!(cell.t >= 2);
    let mut out: Vec<u32> = match role {
        Role::Treated => cohorts.pair_units(cell.g1, cell.g2).to_vec(),
        Role::Control => cohorts
            .pairs()
            .iter()
            .filter(|((a1, a2), _)| is_control_pair(*a1, *a2, cell, control))
            .flat_map(|(_, units)| units.iter().copied())
            .collect(),
    };
    out.sort_unstable();
    out
}
