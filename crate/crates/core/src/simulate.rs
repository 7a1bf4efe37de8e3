//! Synthetic two-event staggered panels with known effect surfaces.
//!
//! Outcomes follow
//! `Y_it = a_i + trend t + s(x_i) t + att1 D1 + att2 D2 + interaction D1 D2 + e_it`,
//! with every unit in a double cohort receiving that cohort's effects, so
//! cell-level truths are exact. Untreated trends are common across cohorts
//! given `x`, which makes the maintained parallel-trend assumptions hold by
//! construction unless a [`Violation`] is injected.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{CellIndex, Cohort, Panel};
use crate::stats::{bvn_cdf, norm_cdf, norm_ppf};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortProb {
    #[cfg_attr(feature = "serde", serde(default))]
    pub g1: Option<u32>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub g2: Option<u32>,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginalProb {
    pub period: u32,
    pub prob: f64,
}

/// Joint law of `(G1, G2)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum CohortLaw {
    /// Explicit probabilities over double cohorts; absent `g` means never.
    Table { cells: Vec<CohortProb> },
    /// Marginal adoption probabilities per period (the remainder is never)
    /// coupled by a Gaussian copula with correlation `rho`. Low latent draws
    /// adopt early.
    Copula { rho: f64, g1: Vec<MarginalProb>, g2: Vec<MarginalProb> },
}

impl CohortLaw {
    /// The exact probability table the law induces.
    pub fn implied_table(&self) -> Result<Vec<CohortProb>> {
        match self {
            CohortLaw::Table { cells } => Ok(cells.clone()),
            CohortLaw::Copula { rho, g1, g2 } => {
                let b1 = bins(g1)?;
                let b2 = bins(g2)?;
                let mut out = Vec::new();
                for (c1, lo1, hi1) in &b1 {
                    for (c2, lo2, hi2) in &b2 {
                        let p = bvn_cdf_ext(*hi1, *hi2, *rho) - bvn_cdf_ext(*lo1, *hi2, *rho)
                            - bvn_cdf_ext(*hi1, *lo2, *rho)
                            + bvn_cdf_ext(*lo1, *lo2, *rho);
                        out.push(CohortProb { g1: c1.period(), g2: c2.period(), prob: p.max(0.0) });
                    }
                }
                Ok(out)
            }
        }
    }

    fn validate(&self, n_periods: u32) -> Result<()> {
        let check_period = |p: Option<u32>| match p {
            Some(g) if g < 2 || g > n_periods => Err(Error::InvalidConfig(alloc::format!(
                "cohort period {g} outside 2..={n_periods}"
            ))),
            _ => Ok(()),
        };
        match self {
            CohortLaw::Table { cells } => {
                let mut total = 0.0;
                for c in cells {
                    check_period(c.g1)?;
                    check_period(c.g2)?;
                    if !(c.prob >= 0.0) {
                        return Err(Error::InvalidConfig("negative cohort probability".into()));
                    }
                    total += c.prob;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "cohort probabilities sum to {total}, not 1"
                    )));
                }
            }
            CohortLaw::Copula { rho, g1, g2 } => {
                if !(-1.0..=1.0).contains(rho) {
                    return Err(Error::InvalidConfig(alloc::format!("rho {rho} outside [-1, 1]")));
                }
                for m in g1.iter().chain(g2) {
                    check_period(Some(m.period))?;
                }
                bins(g1)?;
                bins(g2)?;
            }
        }
        Ok(())
    }
}

fn bvn_cdf_ext(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        0.0
    } else if h == f64::INFINITY {
        norm_cdf(k)
    } else if k == f64::INFINITY {
        norm_cdf(h)
    } else {
        bvn_cdf(h, k, r)
    }
}

fn latent_cut(c: f64) -> f64 {
    if c <= 0.0 {
        f64::NEG_INFINITY
    } else if c >= 1.0 {
        f64::INFINITY
    } else {
        norm_ppf(c)
    }
}

/// Latent-scale intervals `(cohort, lo, hi]` in adoption order, never last.
fn bins(marginal: &[MarginalProb]) -> Result<Vec<(Cohort, f64, f64)>> {
    let mut sorted = marginal.to_vec();
    sorted.sort_by_key(|m| m.period);
    if sorted.windows(2).any(|w| w[0].period == w[1].period) {
        return Err(Error::InvalidConfig("duplicate period in cohort marginal".into()));
    }
    let mut out = Vec::new();
    let mut cum = 0.0;
    let mut lo = f64::NEG_INFINITY;
    for m in sorted {
        if !(m.prob >= 0.0) {
            return Err(Error::InvalidConfig("negative cohort probability".into()));
        }
        cum += m.prob;
        let hi = latent_cut(cum);
        out.push((Cohort::Period(m.period), lo, hi));
        lo = hi;
    }
    if cum > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(alloc::format!("cohort marginal sums to {cum} > 1")));
    }
    out.push((Cohort::Never, lo, f64::INFINITY));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfaceCell {
    #[cfg_attr(feature = "serde", serde(default))]
    pub g1: Option<u32>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub g2: Option<u32>,
    pub t: u32,
    pub value: f64,
}

/// Effect of one event once it is active, as a function of the cell.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum EffectSurface {
    Constant { value: f64 },
    /// `intercept + slope * (t - g)` with `g` the event's own cohort.
    EventTime { intercept: f64, slope: f64 },
    /// Explicit values; unlisted active cells get 0.
    Table { cells: Vec<SurfaceCell> },
}

impl Default for EffectSurface {
    fn default() -> Self {
        EffectSurface::Constant { value: 0.0 }
    }
}

impl EffectSurface {
    fn value(&self, cell: &CellIndex, own: Cohort) -> f64 {
        let Some(g) = own.period() else { return 0.0 };
        if cell.t < g {
            return 0.0;
        }
        match self {
            EffectSurface::Constant { value } => *value,
            EffectSurface::EventTime { intercept, slope } => intercept + slope * (cell.t - g) as f64,
            EffectSurface::Table { cells } => cells
                .iter()
                .find(|c| Cohort::from(c.g1) == cell.g1 && Cohort::from(c.g2) == cell.g2 && c.t == cell.t)
                .map_or(0.0, |c| c.value),
        }
    }
}

/// Covariate-driven selection. Units with a finite combined cohort draw
/// `x1 ~ N(shift, scale^2)`, everyone else `x1 ~ N(0, 1)`; the untreated
/// trend gains `t (trend_linear x1 + trend_quadratic (x1^2 - 1))`.
///
/// With `scale = 1` cohort membership given `x1` is logistic-linear in `x1`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct Selection {
    pub shift: f64,
    pub scale: f64,
    pub trend_linear: f64,
    pub trend_quadratic: f64,
}

impl Default for Selection {
    fn default() -> Self {
        Selection { shift: 0.0, scale: 1.0, trend_linear: 0.0, trend_quadratic: 0.0 }
    }
}

/// One injected assumption failure.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum Violation {
    /// Units ever treated by event 1 get an extra untreated trend `strength * t`.
    NonparallelTrends { strength: f64 },
    /// The event-2 effect grows by `strength (t - g2 + 1)(1 - g1/(T+1))`,
    /// so its path differs across event-1 cohorts.
    NonparallelTreatmentEffects { strength: f64 },
    /// Adds `strength` to the interaction of the two effects.
    Nonadditive { strength: f64 },
}

impl Violation {
    pub fn parse(tag: &str, strength: f64) -> Result<Self> {
        match tag {
            "nonparallel_trends" => Ok(Violation::NonparallelTrends { strength }),
            "nonparallel_treatment_effects" => Ok(Violation::NonparallelTreatmentEffects { strength }),
            "nonadditive" => Ok(Violation::Nonadditive { strength }),
            other => Err(Error::UnknownViolation(other.into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: u32,
    pub cohort_law: CohortLaw,
    pub att1: EffectSurface,
    pub att2: EffectSurface,
    pub interaction: f64,
    pub unit_fe_sd: f64,
    pub time_trend: f64,
    pub noise_sd: f64,
    pub k_covariates: usize,
    pub selection: Option<Selection>,
    pub violation: Option<Violation>,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_units: 1000,
            n_periods: 6,
            cohort_law: CohortLaw::Table { cells: alloc::vec![CohortProb { g1: None, g2: None, prob: 1.0 }] },
            att1: EffectSurface::default(),
            att2: EffectSurface::default(),
            interaction: 0.0,
            unit_fe_sd: 1.0,
            time_trend: 0.0,
            noise_sd: 1.0,
            k_covariates: 0,
            selection: None,
            violation: None,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidConfig("n_units must be positive".into()));
        }
        if self.n_periods < 2 {
            return Err(Error::InvalidConfig("n_periods must be at least 2".into()));
        }
        if self.selection.is_some() && self.k_covariates == 0 {
            return Err(Error::InvalidConfig("selection needs k_covariates >= 1".into()));
        }
        for v in [self.interaction, self.unit_fe_sd, self.time_trend, self.noise_sd] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig("non-finite DGP parameter".into()));
            }
        }
        self.cohort_law.validate(self.n_periods)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrueCell {
    /// Effect of event 1 alone (zero before `g1`).
    pub att1: f64,
    /// Effect of event 2 alone (zero before `g2`).
    pub att2: f64,
    /// Interaction added when both are active.
    pub interaction: f64,
    /// The double-group-time effect actually realized in the cell.
    pub att: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub n_periods: u32,
    pub cells: BTreeMap<CellIndex, TrueCell>,
    /// `Y_it(0, 0)`, unit-major, aligned with the panel.
    pub untreated: Vec<f64>,
}

impl SimTruth {
    pub fn cell(&self, cell: &CellIndex) -> Option<&TrueCell> {
        self.cells.get(cell)
    }

    pub fn att1(&self, cell: &CellIndex) -> Option<f64> {
        self.cells.get(cell).map(|c| c.att1)
    }
}

fn true_cell(cfg: &DgpConfig, violation: Option<&Violation>, cell: &CellIndex) -> TrueCell {
    let on1 = cell.g1.treated_at(cell.t);
    let on2 = cell.g2.treated_at(cell.t);
    let att1 = cfg.att1.value(cell, cell.g1);
    let mut att2 = cfg.att2.value(cell, cell.g2);
    let mut interaction = cfg.interaction;
    match violation {
        Some(Violation::NonparallelTreatmentEffects { strength }) if on2 => {
            if let (Some(g1), Some(g2)) = (cell.g1.period(), cell.g2.period()) {
                let h = 1.0 - g1 as f64 / (cfg.n_periods as f64 + 1.0);
                att2 += strength * (cell.t - g2 + 1) as f64 * h;
            }
        }
        Some(Violation::Nonadditive { strength }) => interaction += strength,
        _ => {}
    }
    let att = if on1 { att1 } else { 0.0 }
        + if on2 { att2 } else { 0.0 }
        + if on1 && on2 { interaction } else { 0.0 };
    TrueCell { att1, att2, interaction, att }
}

fn sample_cohorts<R: Rng>(law: &CohortLaw, prepared: &Prepared, rng: &mut R) -> (Cohort, Cohort) {
    match law {
        CohortLaw::Table { cells } => {
            let u: f64 = rng.random();
            let i = prepared.cumulative.partition_point(|&c| c <= u).min(cells.len() - 1);
            (cells[i].g1.into(), cells[i].g2.into())
        }
        CohortLaw::Copula { rho, .. } => {
            let z1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z2 = rho * z1 + libm::sqrt((1.0 - rho * rho).max(0.0)) * e;
            (bin_of(&prepared.bins1, z1), bin_of(&prepared.bins2, z2))
        }
    }
}

fn bin_of(bins: &[(Cohort, f64, f64)], z: f64) -> Cohort {
    bins.iter().find(|(_, lo, hi)| z > *lo && z <= *hi).map_or(Cohort::Never, |b| b.0)
}

struct Prepared {
    cumulative: Vec<f64>,
    bins1: Vec<(Cohort, f64, f64)>,
    bins2: Vec<(Cohort, f64, f64)>,
}

fn prepare(law: &CohortLaw) -> Result<Prepared> {
    Ok(match law {
        CohortLaw::Table { cells } => {
            let mut acc = 0.0;
            let cumulative = cells
                .iter()
                .map(|c| {
                    acc += c.prob;
                    acc
                })
                .collect();
            Prepared { cumulative, bins1: Vec::new(), bins2: Vec::new() }
        }
        CohortLaw::Copula { g1, g2, .. } => Prepared { cumulative: Vec::new(), bins1: bins(g1)?, bins2: bins(g2)? },
    })
}

/// Draws a panel with the configured violation (if any) and seed.
pub fn gen_panel(cfg: &DgpConfig) -> Result<(Panel, SimTruth)> {
    generate(cfg, cfg.violation.as_ref(), cfg.seed)
}

/// Draws a panel with exactly one injected violation, overriding any in `cfg`.
pub fn gen_violation_panel(cfg: &DgpConfig, violation: Violation) -> Result<(Panel, SimTruth)> {
    generate(cfg, Some(&violation), cfg.seed)
}

/// Draws a panel from an explicit seed.
pub fn generate(cfg: &DgpConfig, violation: Option<&Violation>, seed: u64) -> Result<(Panel, SimTruth)> {
    cfg.validate()?;
    let prepared = prepare(&cfg.cohort_law)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_units;
    let tt = cfg.n_periods;
    let k = cfg.k_covariates;
    let sel = cfg.selection.unwrap_or_default();

    let mut first1 = Vec::with_capacity(n);
    let mut first2 = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n * k);
    let mut outcomes = Vec::with_capacity(n * tt as usize);
    let mut untreated = Vec::with_capacity(n * tt as usize);
    let mut truths: BTreeMap<(Cohort, Cohort), Vec<TrueCell>> = BTreeMap::new();

    for _ in 0..n {
        let (g1, g2) = sample_cohorts(&cfg.cohort_law, &prepared, &mut rng);
        first1.push(g1);
        first2.push(g2);
        let fe: f64 = cfg.unit_fe_sd * rng.sample::<f64, _>(StandardNormal);
        let mut x1 = 0.0;
        for j in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 && cfg.selection.is_some() && !g1.min(g2).is_never() {
                sel.shift + sel.scale * z
            } else {
                z
            };
            if j == 0 {
                x1 = v;
            }
            covariates.push(v);
        }
        let slope_x = if cfg.selection.is_some() {
            sel.trend_linear * x1 + sel.trend_quadratic * (x1 * x1 - 1.0)
        } else {
            0.0
        };
        let extra_trend = match violation {
            Some(Violation::NonparallelTrends { strength }) if !g1.is_never() => *strength,
            _ => 0.0,
        };
        let effects = truths.entry((g1, g2)).or_insert_with(|| {
            (1..=tt).map(|t| true_cell(cfg, violation, &CellIndex::new(g1, g2, t))).collect()
        });
        for t in 1..=tt {
            let tf = t as f64;
            let y0 = fe + (cfg.time_trend + slope_x + extra_trend) * tf;
            let noise: f64 = if cfg.noise_sd > 0.0 {
                cfg.noise_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            untreated.push(y0 + noise);
            outcomes.push(y0 + noise + effects[(t - 1) as usize].att);
        }
    }

    let mut cells = BTreeMap::new();
    for (&(g1, g2), v) in &truths {
        for t in 2..=tt {
            cells.insert(CellIndex::new(g1, g2, t), v[(t - 1) as usize]);
        }
    }
    let panel = Panel::from_parts(
        (1..=n as i64).collect(),
        (1..=tt as i64).collect(),
        outcomes,
        first1,
        first2,
        covariates,
        k,
    )?;
    Ok((panel, SimTruth { n_periods: tt, cells, untreated }))
}

/// Weight-sum of the true target-effect surface under a target-level scheme.
pub fn true_summary(truth: &SimTruth, scheme: &crate::aggregate::WeightScheme) -> Result<f64> {
    crate::aggregate::evaluate_with(scheme, |c| truth.att1(c))
}
