//! Criteria judged by Monte Carlo studies on the simulator.

use std::collections::BTreeMap;

use ddid::parallel::mc_study;
use ddid_core::aggregate::Summary;
use ddid_core::doubledid::CohortMass;
use ddid_core::inference::{BootstrapConfig, BootstrapMethod, EstimateKey, McRep, McRow, PipelineSpec};
use ddid_core::moments::{EstimationOptions, Estimator};
use ddid_core::panel::{Cohort, ControlType};
use ddid_core::simulate::{CohortLaw, DgpConfig, EffectSurface, Violation};

use crate::common::marginal;
use crate::{verdict, Verdict};

const REPS: usize = 500;

fn population_mass(dgp: &DgpConfig) -> CohortMass {
    let table = dgp.cohort_law.implied_table().unwrap();
    let counts = table.into_iter().filter(|c| c.prob > 0.0).map(|c| ((Cohort::from(c.g1), Cohort::from(c.g2)), c.prob));
    CohortMass::from_counts(counts, dgp.n_periods)
}

fn spec(estimator: Estimator, summaries: Vec<Summary>, diagnostics: bool) -> PipelineSpec {
    PipelineSpec { estimator, control: ControlType::NotYet, options: EstimationOptions::default(), summaries, diagnostics }
}

fn dynamic_only(dgp: &DgpConfig) -> Vec<Summary> {
    Summary::standard_set(&population_mass(dgp)).into_iter().filter(|s| matches!(s, Summary::Dynamic { .. })).collect()
}

fn run(
    dgp: &DgpConfig,
    spec: &PipelineSpec,
    boot: Option<&BootstrapConfig>,
    reps: usize,
    seed: u64,
) -> (Vec<McRep>, BTreeMap<EstimateKey, McRow>) {
    let (reps, rows) = mc_study(dgp, spec, boot, reps, seed);
    if let Some(e) = reps.iter().find_map(|r| r.error.as_ref()) {
        panic!("replication failed: {e}");
    }
    (reps, rows)
}

/// `|mean - target| / se`, with an exact comparison when the spread is zero.
fn z(mean: f64, target: f64, se: f64) -> f64 {
    if se > 0.0 {
        (mean - target).abs() / se
    } else if (mean - target).abs() < 1e-9 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn post_naive(rows: &BTreeMap<EstimateKey, McRow>) -> impl Iterator<Item = (u32, u32, &McRow)> {
    rows.iter().filter_map(|(k, r)| match *k {
        EstimateKey::Naive { g1, t } if t >= g1 => Some((g1, t, r)),
        _ => None,
    })
}

fn theorem1_dgp() -> DgpConfig {
    DgpConfig {
        n_units: 2000,
        n_periods: 8,
        cohort_law: CohortLaw::Copula { rho: 0.4, g1: marginal(&[(4, 0.3), (6, 0.3)]), g2: marginal(&[(4, 0.3), (6, 0.3)]) },
        att1: EffectSurface::Constant { value: 1.0 },
        att2: EffectSurface::Constant { value: 2.0 },
        ..Default::default()
    }
}

/// `P(D2_t = 1 | G1 = g1)` from the population cohort table.
fn p_event2_by(dgp: &DgpConfig, g1: u32, t: u32) -> f64 {
    let table = dgp.cohort_law.implied_table().unwrap();
    let cohort: Vec<_> = table.iter().filter(|c| c.g1 == Some(g1)).collect();
    let on: f64 = cohort.iter().filter(|c| c.g2.is_some_and(|g| g <= t)).map(|c| c.prob).sum();
    on / cohort.iter().map(|c| c.prob).sum::<f64>()
}

pub fn theorem1() -> Verdict {
    let dgp = theorem1_dgp();
    let spec = spec(Estimator::Unc, Vec::new(), true);
    let (base, rows) = run(&dgp, &spec, None, REPS, 101);

    let mut worst_z = 0.0f64;
    let mut n = 0;
    for (_, _, r) in post_naive(&rows) {
        worst_z = worst_z.max(z(r.mean_bias.unwrap(), r.theory_bias.unwrap(), r.mc_se.unwrap()));
        n += 1;
    }
    let gamma = |g1, t| rows[&EstimateKey::Gamma { g1, t }].mean_estimate;

    let mut with = dgp.clone();
    with.interaction = 0.5;
    let (inter, _) = run(&with, &spec, None, REPS, 101);
    let mut worst_extra = 0.0f64;
    for (g1, t, _) in post_naive(&rows) {
        let key = EstimateKey::Naive { g1, t };
        let diffs: Vec<f64> = base.iter().zip(&inter).map(|(a, b)| b.values[&key].estimate - a.values[&key].estimate).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        worst_extra = worst_extra.max(z(mean, 0.5 * p_event2_by(&dgp, g1, t), sd / (diffs.len() as f64).sqrt()));
    }
    verdict(
        worst_z <= 3.0 && worst_extra <= 3.0 && n >= 6,
        format!(
            "{n} post cells, mean Gamma12 {:.3} (g1=4) / {:.3} (g1=6); max |bias - Gamma12 ATT2| = {worst_z:.2} MC SE; \
             interaction 0.5: max |extra - 0.5 P(D2=1|G1)| = {worst_extra:.2} MC SE",
            gamma(4, 8),
            gamma(6, 8)
        ),
    )
}

fn staggered_dgp(n_units: usize) -> DgpConfig {
    DgpConfig {
        n_units,
        n_periods: 8,
        cohort_law: CohortLaw::Copula {
            rho: 0.4,
            g1: marginal(&[(4, 0.2), (5, 0.2), (7, 0.2)]),
            g2: marginal(&[(3, 0.2), (5, 0.2), (6, 0.2)]),
        },
        att1: EffectSurface::EventTime { intercept: 1.0, slope: 0.25 },
        att2: EffectSurface::Constant { value: 2.0 },
        ..Default::default()
    }
}

pub fn theorem3() -> Verdict {
    // homogeneous effects, so the naive prediction is defined
    let dgp = DgpConfig {
        k_covariates: 1,
        time_trend: 0.2,
        att1: EffectSurface::Constant { value: 1.0 },
        ..staggered_dgp(2000)
    };
    let spec = spec(Estimator::Dr, dynamic_only(&dgp), true);
    let (_, rows) = run(&dgp, &spec, None, REPS, 303);

    let (mut cells, mut dynamics, mut worst, mut worst_key) = (0, 0, 0.0f64, String::new());
    for (k, r) in &rows {
        if !matches!(k, EstimateKey::Target(_) | EstimateKey::Summary(Summary::Dynamic { .. })) {
            continue;
        }
        let Some(bias) = r.mean_bias else { continue };
        let zk = z(bias, 0.0, r.mc_se.unwrap_or(0.0));
        if zk > worst {
            worst = zk;
            worst_key = r.key.clone();
        }
        match k {
            EstimateKey::Target(_) => cells += 1,
            _ => dynamics += 1,
        }
    }
    let (mut naive_z, mut shifted) = (0.0f64, 0);
    for (_, _, r) in post_naive(&rows) {
        naive_z = naive_z.max(z(r.mean_bias.unwrap(), r.theory_bias.unwrap(), r.mc_se.unwrap()));
        if z(r.mean_bias.unwrap(), 0.0, r.mc_se.unwrap()) > 3.0 {
            shifted += 1;
        }
    }
    verdict(
        worst <= 3.0 && naive_z <= 3.0 && shifted > 0 && cells > 20 && dynamics > 5,
        format!(
            "dd: {cells} cells and {dynamics} dynamic e1, max |bias| = {worst:.2} MC SE at {worst_key}; \
             naive: {shifted} post cells biased beyond 3 MC SE, max |bias - prediction| = {naive_z:.2} MC SE"
        ),
    )
}

fn dynamic_rows(rows: &BTreeMap<EstimateKey, McRow>) -> Vec<(i64, &McRow)> {
    rows.iter()
        .filter_map(|(k, r)| match k {
            EstimateKey::Summary(Summary::Dynamic { e1 }) => Some((*e1, r)),
            _ => None,
        })
        .collect()
}

/// Share of replications whose interval excluded the (zero) truth.
fn rejection(r: &McRow) -> f64 {
    1.0 - r.coverage.unwrap_or(f64::NAN)
}

pub fn inference() -> Verdict {
    let boot = BootstrapConfig {
        replications: 200,
        seed: 0,
        ci_level: 0.95,
        method: BootstrapMethod::NonparametricCluster,
        max_drop_rate: 0.1,
    };
    let dgp = staggered_dgp(2000);
    let spec = spec(Estimator::Unc, dynamic_only(&dgp), false);
    let (_, rows) = run(&dgp, &spec, Some(&boot), REPS, 505);
    let dynamic = dynamic_rows(&rows);
    let coverage: Vec<(i64, f64)> = dynamic.iter().filter(|(e, _)| *e >= 0).map(|(e, r)| (*e, r.coverage.unwrap_or(f64::NAN))).collect();
    // e1 = -1 is the reference period and zero by construction
    let size: Vec<(i64, f64)> = dynamic.iter().filter(|(e, _)| *e <= -2).map(|(e, r)| (*e, rejection(r))).collect();

    let mut violated = staggered_dgp(5000);
    violated.violation = Some(Violation::NonparallelTreatmentEffects { strength: 1.0 });
    let (_, vrows) = run(&violated, &spec, Some(&boot), 200, 707);
    let power: Vec<(i64, f64)> = dynamic_rows(&vrows).iter().filter(|(e, _)| *e <= -2).map(|(e, r)| (*e, rejection(r))).collect();
    let best = power.iter().map(|p| p.1).fold(0.0, f64::max);
    let cell_power = vrows
        .iter()
        .filter(|(k, _)| matches!(k, EstimateKey::Target(c) if c.g1.period().is_some_and(|g| c.t + 1 < g)))
        .map(|(_, r)| rejection(r))
        .fold(0.0, f64::max);

    let ok = coverage.iter().all(|(_, c)| (0.90..=0.98).contains(c))
        && size.iter().all(|(_, s)| (0.02..=0.09).contains(s))
        && !coverage.is_empty()
        && !size.is_empty()
        && best > 0.5;
    let fmt = |v: &[(i64, f64)]| v.iter().map(|(e, x)| format!("{e}:{:.1}", 100.0 * x)).collect::<Vec<_>>().join(" ");
    verdict(
        ok,
        format!(
            "coverage % by e1 [{}]; placebo rejection % [{}]; power % at N=5000 [{}] (best target-level placebo {:.0}%)",
            fmt(&coverage),
            fmt(&size),
            fmt(&power),
            100.0 * cell_power
        ),
    )
}
