//! End-to-end estimation pipeline, unit-cluster bootstrap and Monte Carlo
//! studies.
//!
//! Replicate `r` draws its weights from `ChaCha8(seed)` on stream `r`, so a
//! replicate's result depends only on `(data, spec, seed, r)`. Reductions run
//! in replicate order; callers may compute replicates in any order or in
//! parallel and get identical output.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{evaluate, scheme_dd, Summary, SummaryEstimate, WeightScheme};
use crate::diagnostics::{gamma12_contrast, naive_contrast, Contrast};
use crate::doubledid::{att_dd, estimate_targets, CohortMass, TargetEstimate};
use crate::error::{Error, Result};
use crate::moments::{estimate_all_cells, estimate_all_cells_from, CellTable, EstimationOptions, Estimator, Sample};
use crate::panel::{CellIndex, Cohort, CohortMap, ControlType};
use crate::simulate::{generate, DgpConfig, SimTruth};
use crate::stats::{norm_ppf, percentile_interval, sample_sd};

/// What to estimate.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct PipelineSpec {
    pub estimator: Estimator,
    pub control: ControlType,
    pub options: EstimationOptions,
    pub summaries: Vec<Summary>,
    /// Compute the naive estimator, `Gamma12` and their gap to the double DiD
    /// group-time estimate for every `(g1, t)`.
    pub diagnostics: bool,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            estimator: Estimator::Dr,
            control: ControlType::NotYet,
            options: EstimationOptions::default(),
            summaries: Vec::new(),
            diagnostics: false,
        }
    }
}

/// Identifies one scalar estimate produced by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimateKey {
    Cell(CellIndex),
    Target(CellIndex),
    Summary(Summary),
    Naive { g1: u32, t: u32 },
    Gamma { g1: u32, t: u32 },
    /// Naive minus double DiD group-time estimate.
    Gap { g1: u32, t: u32 },
}

impl fmt::Display for EstimateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateKey::Cell(c) => write!(f, "cell{c}"),
            EstimateKey::Target(c) => write!(f, "att1{c}"),
            EstimateKey::Summary(s) => match s {
                Summary::GroupTime { g1, t } => write!(f, "group_time({g1},{t})"),
                Summary::Dynamic { e1 } => write!(f, "dynamic({e1})"),
                Summary::DynamicStaggered { e1, s12 } => write!(f, "dynamic_staggered({e1},{s12})"),
                Summary::Overall => f.write_str("overall"),
            },
            EstimateKey::Naive { g1, t } => write!(f, "naive({g1},{t})"),
            EstimateKey::Gamma { g1, t } => write!(f, "gamma12({g1},{t})"),
            EstimateKey::Gap { g1, t } => write!(f, "gap({g1},{t})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub g1: u32,
    pub t: u32,
    pub gamma12: f64,
    pub naive_att: f64,
    pub dd_att: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryResult {
    pub summary: Summary,
    /// Weights over target cells.
    pub targets: WeightScheme,
    /// The same summary as weights over combined-event cells.
    pub scheme: WeightScheme,
    pub estimate: SummaryEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub cells: CellTable,
    pub mass: CohortMass,
    pub targets: BTreeMap<CellIndex, TargetEstimate>,
    pub summaries: BTreeMap<Summary, core::result::Result<SummaryResult, Error>>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub estimates: BTreeMap<EstimateKey, f64>,
    /// Target cells allowed into summaries.
    pub included: BTreeSet<CellIndex>,
}

fn diagnostic_values(
    sample: &Sample,
    spec: &PipelineSpec,
    cells: &CellTable,
    mass: &CohortMass,
    included: &BTreeSet<CellIndex>,
    (g1, t): (u32, u32),
) -> Option<(Contrast, Contrast, Option<f64>)> {
    let naive = naive_contrast(sample, g1, t, spec.control, false).ok()?;
    let gamma = gamma12_contrast(sample, g1, t, spec.control, false).ok()?;
    let include = |c: &CellIndex| included.contains(c);
    let dd = Summary::GroupTime { g1, t }
        .scheme(mass, &include)
        .ok()
        .and_then(|s| evaluate(&s, cells).ok().map(|e| e.theta));
    Some((naive, gamma, dd))
}

fn event1_cohorts(cohorts: &CohortMap) -> Vec<u32> {
    cohorts.cohort_lists(1).keys().filter_map(|c| c.period()).collect()
}

/// Point estimates for every cell, target cell, requested summary and
/// diagnostic.
pub fn run_pipeline(sample: &Sample, spec: &PipelineSpec) -> PipelineResult {
    let cells = estimate_all_cells(sample, spec.estimator, spec.control, &spec.options);
    let mass = CohortMass::from_sample(sample);
    let targets = estimate_targets(&cells, &mass);
    let included: BTreeSet<CellIndex> =
        targets.iter().filter(|(_, e)| e.att1.is_some()).map(|(c, _)| *c).collect();
    let include = |c: &CellIndex| included.contains(c);

    let mut estimates = BTreeMap::new();
    for r in cells.records() {
        if let Some(e) = &r.estimate {
            estimates.insert(EstimateKey::Cell(r.cell), e.att);
        }
    }
    for (c, e) in &targets {
        if let Some(v) = e.att1 {
            estimates.insert(EstimateKey::Target(*c), v);
        }
    }
    let mut summaries = BTreeMap::new();
    for s in &spec.summaries {
        let res = s.targets(&mass, &include).and_then(|targets| {
            let scheme = crate::aggregate::expand(&targets, &mass)?;
            let estimate = evaluate(&scheme, &cells)?;
            Ok(SummaryResult { summary: *s, targets, scheme, estimate })
        });
        if let Ok(r) = &res {
            estimates.insert(EstimateKey::Summary(*s), r.estimate.theta);
        }
        summaries.insert(*s, res);
    }
    let mut diagnostics = Vec::new();
    if spec.diagnostics {
        for g1 in event1_cohorts(sample.cohorts) {
            for t in 2..=sample.panel.n_periods() {
                let Some((naive, gamma, dd)) =
                    diagnostic_values(sample, spec, &cells, &mass, &included, (g1, t))
                else {
                    continue;
                };
                estimates.insert(EstimateKey::Naive { g1, t }, naive.value);
                estimates.insert(EstimateKey::Gamma { g1, t }, gamma.value);
                let dd_att = dd;
                if let Some(d) = dd_att {
                    estimates.insert(EstimateKey::Gap { g1, t }, naive.value - d);
                }
                diagnostics.push(DiagnosticRow {
                    g1,
                    t,
                    gamma12: gamma.value,
                    naive_att: naive.value,
                    dd_att,
                    gap: dd_att.map(|d| naive.value - d),
                });
            }
        }
    }
    PipelineResult { cells, mass, targets, summaries, diagnostics, estimates, included }
}

/// Re-estimates every key of a point result on a reweighted sample. Keys
/// that cannot be computed on this replicate are left out.
pub fn replicate(sample: &Sample, spec: &PipelineSpec, point: &PipelineResult) -> BTreeMap<EstimateKey, f64> {
    let mut opts = spec.options;
    opts.keep_unit_terms = false;
    let cells = estimate_all_cells_from(sample, spec.estimator, spec.control, &opts, Some(&point.cells));
    let mass = CohortMass::from_sample(sample);
    let include = |c: &CellIndex| point.included.contains(c);
    let mut out = BTreeMap::new();
    for key in point.estimates.keys() {
        let v = match *key {
            EstimateKey::Cell(c) => cells.value(&c),
            EstimateKey::Target(c) => att_dd(&cells, &mass, &c).att1,
            EstimateKey::Summary(s) => s.scheme(&mass, &include).and_then(|sch| evaluate(&sch, &cells)).ok().map(|e| e.theta),
            EstimateKey::Naive { g1, t } => naive_contrast(sample, g1, t, spec.control, false).ok().map(|c| c.value),
            EstimateKey::Gamma { g1, t } => gamma12_contrast(sample, g1, t, spec.control, false).ok().map(|c| c.value),
            EstimateKey::Gap { g1, t } => {
                let naive = naive_contrast(sample, g1, t, spec.control, false).ok();
                let dd = Summary::GroupTime { g1, t }
                    .scheme(&mass, &include)
                    .and_then(|s| evaluate(&s, &cells))
                    .ok();
                naive.zip(dd).map(|(n, d)| n.value - d.theta)
            }
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            out.insert(*key, v);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum BootstrapMethod {
    /// Resample units with replacement and rerun the whole pipeline.
    #[default]
    NonparametricCluster,
    /// Perturb per-unit influence terms with Rademacher signs.
    MultiplierRademacher,
}

impl BootstrapMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMethod::NonparametricCluster => "nonparametric_cluster",
            BootstrapMethod::MultiplierRademacher => "multiplier_rademacher",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub method: BootstrapMethod,
    /// Estimates dropped in a larger share of replicates are flagged unreliable.
    pub max_drop_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 999,
            seed: 0,
            ci_level: 0.95,
            method: BootstrapMethod::NonparametricCluster,
            max_drop_rate: 0.1,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("bootstrap replications must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        Ok(())
    }
}

/// Generator for replicate `r`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Multinomial resampling counts: `n` units drawn with replacement.
pub fn resample_counts(seed: u64, r: u64, n: usize) -> Vec<f64> {
    let mut rng = replicate_rng(seed, r);
    let mut w = alloc::vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// Independent `+-1` multipliers, one per unit.
pub fn rademacher(seed: u64, r: u64, n: usize) -> Vec<f64> {
    let mut rng = replicate_rng(seed, r);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let bits = rng.next_u64();
        for b in 0..64.min(n - out.len()) {
            out.push(if bits >> b & 1 == 1 { 1.0 } else { -1.0 });
        }
    }
    out
}

/// Per-unit influence terms of every key, for the multiplier bootstrap.
/// Requires a point result estimated with `keep_unit_terms`.
pub fn influence_terms(sample: &Sample, spec: &PipelineSpec, point: &PipelineResult) -> BTreeMap<EstimateKey, Vec<(u32, f64)>> {
    let n = sample.panel.n_units();
    let sparse = |acc: Vec<f64>, touched: Vec<bool>| -> Vec<(u32, f64)> {
        acc.into_iter().zip(touched).enumerate().filter(|(_, (_, t))| *t).map(|(u, (v, _))| (u as u32, v)).collect()
    };
    let through = |scheme: &WeightScheme| -> Option<Vec<(u32, f64)>> {
        let mut acc = alloc::vec![0.0; n];
        let mut touched = alloc::vec![false; n];
        for (c, &w) in &scheme.weights {
            let e = point.cells.estimate(c)?;
            if e.influence.is_empty() {
                return None;
            }
            for &(u, v) in &e.influence {
                acc[u as usize] += w * v;
                touched[u as usize] = true;
            }
        }
        Some(sparse(acc, touched))
    };
    let mut out = BTreeMap::new();
    for key in point.estimates.keys() {
        let terms = match *key {
            EstimateKey::Cell(c) => point.cells.estimate(&c).map(|e| e.influence.clone()),
            EstimateKey::Target(c) => scheme_dd(&c, &point.mass).and_then(|s| through(&s)),
            EstimateKey::Summary(s) => point.summaries.get(&s).and_then(|r| r.as_ref().ok()).and_then(|r| through(&r.scheme)),
            EstimateKey::Naive { g1, t } => naive_contrast(sample, g1, t, spec.control, true).ok().map(|c| c.influence),
            EstimateKey::Gamma { g1, t } => gamma12_contrast(sample, g1, t, spec.control, true).ok().map(|c| c.influence),
            EstimateKey::Gap { g1, t } => {
                let naive = naive_contrast(sample, g1, t, spec.control, true).ok();
                let include = |c: &CellIndex| point.included.contains(c);
                let dd = Summary::GroupTime { g1, t }.scheme(&point.mass, &include).ok().and_then(|s| through(&s));
                naive.zip(dd).map(|(nv, d)| {
                    let mut acc = alloc::vec![0.0; n];
                    let mut touched = alloc::vec![false; n];
                    for (u, v) in nv.influence {
                        acc[u as usize] += v;
                        touched[u as usize] = true;
                    }
                    for (u, v) in d {
                        acc[u as usize] -= v;
                        touched[u as usize] = true;
                    }
                    sparse(acc, touched)
                })
            }
        };
        if let Some(t) = terms {
            out.insert(*key, t);
        }
    }
    out
}

/// Replicate `r` of the multiplier bootstrap.
pub fn multiplier_replicate(
    point: &PipelineResult,
    influence: &BTreeMap<EstimateKey, Vec<(u32, f64)>>,
    seed: u64,
    r: u64,
    n_units: usize,
) -> BTreeMap<EstimateKey, f64> {
    let xi = rademacher(seed, r, n_units);
    influence
        .iter()
        .map(|(k, terms)| {
            let delta: f64 = terms.iter().map(|&(u, v)| xi[u as usize] * v).sum();
            (*k, point.estimates[k] + delta)
        })
        .collect()
}

/// Replicate `r` of whichever bootstrap `config` selects.
pub fn bootstrap_replicate(
    sample: &Sample,
    spec: &PipelineSpec,
    point: &PipelineResult,
    influence: Option<&BTreeMap<EstimateKey, Vec<(u32, f64)>>>,
    config: &BootstrapConfig,
    r: u64,
) -> BTreeMap<EstimateKey, f64> {
    let n = sample.panel.n_units();
    match (config.method, influence) {
        (BootstrapMethod::MultiplierRademacher, Some(infl)) => multiplier_replicate(point, infl, config.seed, r, n),
        _ => {
            let mut w = resample_counts(config.seed, r, n);
            if let Some(base) = sample.weights {
                for (wi, bi) in w.iter_mut().zip(base) {
                    *wi *= bi;
                }
            }
            let s = Sample::weighted(sample.panel, sample.cohorts, &w);
            replicate(&s, spec, point)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapStat {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub ci_normal: Option<(f64, f64)>,
    pub n_valid: usize,
    pub n_dropped: usize,
    pub drop_rate: f64,
    pub unreliable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapReport {
    pub config: BootstrapConfig,
    pub stats: BTreeMap<EstimateKey, BootstrapStat>,
    /// Replicates in which at least one estimate could not be computed.
    pub degenerate_replicates: usize,
}

impl BootstrapReport {
    pub fn max_drop_rate(&self) -> f64 {
        self.stats.values().map(|s| s.drop_rate).fold(0.0, f64::max)
    }
}

/// Reduces replicates, given in replicate order, to standard errors and
/// intervals.
pub fn reduce(point: &PipelineResult, replicates: &[BTreeMap<EstimateKey, f64>], config: &BootstrapConfig) -> BootstrapReport {
    let b = replicates.len();
    let z = norm_ppf(0.5 + config.ci_level / 2.0);
    let mut stats = BTreeMap::new();
    for (key, &est) in &point.estimates {
        let draws: Vec<f64> = replicates.iter().filter_map(|r| r.get(key).copied()).collect();
        let n_valid = draws.len();
        let n_dropped = b - n_valid;
        let drop_rate = if b == 0 { 0.0 } else { n_dropped as f64 / b as f64 };
        let (se, ci, ci_normal) = if n_valid >= 2 {
            let se = sample_sd(&draws);
            (Some(se), Some(percentile_interval(&draws, config.ci_level)), Some((est - z * se, est + z * se)))
        } else {
            (None, None, None)
        };
        stats.insert(
            *key,
            BootstrapStat {
                estimate: est,
                se,
                ci,
                ci_normal,
                n_valid,
                n_dropped,
                drop_rate,
                unreliable: drop_rate > config.max_drop_rate,
            },
        );
    }
    let degenerate_replicates = replicates.iter().filter(|r| r.len() < point.estimates.len()).count();
    BootstrapReport { config: *config, stats, degenerate_replicates }
}

/// Point estimates plus a sequential bootstrap.
pub fn bootstrap(sample: &Sample, spec: &PipelineSpec, config: &BootstrapConfig) -> Result<(PipelineResult, BootstrapReport)> {
    config.validate()?;
    let mut spec = spec.clone();
    if config.method == BootstrapMethod::MultiplierRademacher {
        spec.options.keep_unit_terms = true;
    }
    let point = run_pipeline(sample, &spec);
    let influence = (config.method == BootstrapMethod::MultiplierRademacher).then(|| influence_terms(sample, &spec, &point));
    let reps: Vec<_> = (0..config.replications as u64)
        .map(|r| bootstrap_replicate(sample, &spec, &point, influence.as_ref(), config, r))
        .collect();
    let report = reduce(&point, &reps, config);
    Ok((point, report))
}

/// True value of an estimate key on simulated data, if it has one.
pub fn true_value(key: &EstimateKey, truth: &SimTruth, point: &PipelineResult) -> Option<f64> {
    match *key {
        EstimateKey::Cell(c) => truth.cell(&c).map(|v| v.att),
        EstimateKey::Target(c) => truth.att1(&c),
        EstimateKey::Summary(s) => {
            let include = |c: &CellIndex| point.included.contains(c);
            let targets = s.targets(&point.mass, &include).ok()?;
            crate::simulate::true_summary(truth, &targets).ok()
        }
        EstimateKey::Naive { g1, t } => {
            // group-time target effect over every event-2 cohort of g1
            let g = Cohort::Period(g1);
            let mut num = 0.0;
            let mut den = 0.0;
            for ((a, b), m) in point.mass.pairs() {
                if a == g {
                    num += m * truth.att1(&CellIndex::new(a, b, t))?;
                    den += m;
                }
            }
            (den > 0.0).then(|| num / den)
        }
        EstimateKey::Gamma { .. } | EstimateKey::Gap { .. } => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McValue {
    pub estimate: f64,
    pub truth: Option<f64>,
    /// Whether the bootstrap percentile interval covered the truth.
    pub covered: Option<bool>,
    pub se: Option<f64>,
}

/// Outcome of one Monte Carlo replication.
#[derive(Clone, Debug, PartialEq)]
pub struct McRep {
    pub seed: u64,
    pub values: BTreeMap<EstimateKey, McValue>,
    /// Omitted-event plus interaction bias predicted for naive keys.
    pub theory_bias: BTreeMap<EstimateKey, f64>,
    pub error: Option<Error>,
}

/// Seed of the panel drawn in Monte Carlo replication `r`.
pub fn mc_seed(seed: u64, r: u64) -> u64 {
    replicate_rng(seed, r).next_u64()
}

/// Simulates, estimates and optionally bootstraps replication `r`.
pub fn mc_replication(
    dgp: &DgpConfig,
    spec: &PipelineSpec,
    boot: Option<&BootstrapConfig>,
    seed: u64,
    r: u64,
) -> McRep {
    let panel_seed = mc_seed(seed, r);
    let mut rep = McRep { seed: panel_seed, values: BTreeMap::new(), theory_bias: BTreeMap::new(), error: None };
    let (panel, truth) = match generate(dgp, dgp.violation.as_ref(), panel_seed) {
        Ok(x) => x,
        Err(e) => {
            rep.error = Some(e);
            return rep;
        }
    };
    let cohorts = CohortMap::derive(&panel);
    let sample = Sample::new(&panel, &cohorts);
    let (point, report) = match boot {
        Some(b) => {
            let b = BootstrapConfig { seed: panel_seed ^ 0x9e37_79b9_7f4a_7c15, ..*b };
            match bootstrap(&sample, spec, &b) {
                Ok((p, r)) => (p, Some(r)),
                Err(e) => {
                    rep.error = Some(e);
                    return rep;
                }
            }
        }
        None => (run_pipeline(&sample, spec), None),
    };
    for (key, &est) in &point.estimates {
        let truth_v = true_value(key, &truth, &point);
        let stat = report.as_ref().and_then(|r| r.stats.get(key));
        let covered = stat.and_then(|s| s.ci).zip(truth_v).map(|((lo, hi), tv)| lo <= tv && tv <= hi);
        rep.values.insert(*key, McValue { estimate: est, truth: truth_v, covered, se: stat.and_then(|s| s.se) });
        if let EstimateKey::Naive { g1, t } = *key {
            if let Ok(b) = crate::diagnostics::bias_decomposition(&sample, &truth, g1, t, spec.control) {
                rep.theory_bias.insert(*key, b.omitted_event_bias + b.interaction_bias);
            }
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McRow {
    pub key: String,
    pub n_reps: usize,
    pub mean_truth: Option<f64>,
    pub mean_estimate: f64,
    pub mean_bias: Option<f64>,
    /// Standard error of the mean bias across replications.
    pub mc_se: Option<f64>,
    pub rmse: Option<f64>,
    pub sd_estimate: Option<f64>,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    pub theory_bias: Option<f64>,
}

/// Aggregates replications, in replication order, into one row per key.
pub fn mc_reduce(reps: &[McRep]) -> BTreeMap<EstimateKey, McRow> {
    let mut keys: BTreeSet<EstimateKey> = BTreeSet::new();
    for r in reps {
        keys.extend(r.values.keys().copied());
    }
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    keys.into_iter()
        .map(|key| {
            let vals: Vec<_> = reps.iter().filter_map(|r| r.values.get(&key)).collect();
            let est: Vec<f64> = vals.iter().map(|v| v.estimate).collect();
            let truth: Vec<f64> = vals.iter().filter_map(|v| v.truth).collect();
            let bias: Vec<f64> = vals.iter().filter_map(|v| v.truth.map(|t| v.estimate - t)).collect();
            let cover: Vec<f64> = vals.iter().filter_map(|v| v.covered.map(|c| c as u8 as f64)).collect();
            let ses: Vec<f64> = vals.iter().filter_map(|v| v.se).collect();
            let theory: Vec<f64> = reps.iter().filter_map(|r| r.theory_bias.get(&key).copied()).collect();
            let n = est.len();
            let row = McRow {
                key: alloc::format!("{key}"),
                n_reps: n,
                mean_truth: mean(&truth),
                mean_estimate: mean(&est).unwrap_or(f64::NAN),
                mean_bias: mean(&bias),
                mc_se: (bias.len() >= 2).then(|| sample_sd(&bias) / libm::sqrt(bias.len() as f64)),
                rmse: mean(&bias.iter().map(|b| b * b).collect::<Vec<_>>()).map(libm::sqrt),
                sd_estimate: (n >= 2).then(|| sample_sd(&est)),
                mean_se: mean(&ses),
                coverage: mean(&cover),
                theory_bias: mean(&theory),
            };
            (key, row)
        })
        .collect()
}

/// Sequential Monte Carlo study.
pub fn mc_study(
    dgp: &DgpConfig,
    spec: &PipelineSpec,
    boot: Option<&BootstrapConfig>,
    replications: usize,
    seed: u64,
) -> (Vec<McRep>, BTreeMap<EstimateKey, McRow>) {
    let reps: Vec<McRep> = (0..replications as u64).map(|r| mc_replication(dgp, spec, boot, seed, r)).collect();
    let rows = mc_reduce(&reps);
    (reps, rows)
}
