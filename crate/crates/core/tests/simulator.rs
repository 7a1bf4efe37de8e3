mod common;

use std::collections::BTreeMap;

use ddid_core::aggregate::WeightScheme;
use ddid_core::diagnostics::gamma12;
use ddid_core::moments::Sample;
use ddid_core::panel::{CellIndex, Cohort, CohortMap, ControlType};
use ddid_core::simulate::{gen_panel, true_summary, CohortLaw, DgpConfig, EffectSurface, Violation};
use Cohort::{Never, Period as P};

fn copula_cfg(rho: f64, n_units: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        n_units,
        n_periods: 6,
        cohort_law: CohortLaw::Copula {
            rho,
            g1: common::marginal(&[(3, 0.25), (4, 0.2), (6, 0.15)]),
            g2: common::marginal(&[(2, 0.1), (4, 0.3), (5, 0.2)]),
        },
        seed,
        ..Default::default()
    }
}

fn frequencies(cohorts: &CohortMap) -> BTreeMap<(Cohort, Cohort), f64> {
    let mut out = BTreeMap::new();
    let n = cohorts.g1.len() as f64;
    for i in 0..cohorts.g1.len() {
        *out.entry((cohorts.g1[i], cohorts.g2[i])).or_insert(0.0) += 1.0 / n;
    }
    out
}

#[test]
fn copula_draws_match_the_implied_table() {
    let n = 50_000;
    let cfg = copula_cfg(0.8, n, 31);
    let table = cfg.cohort_law.implied_table().unwrap();
    let total: f64 = table.iter().map(|c| c.prob).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let (panel, _) = gen_panel(&cfg).unwrap();
    let freq = frequencies(&CohortMap::derive(&panel));
    for cell in &table {
        let key = (Cohort::from(cell.g1), Cohort::from(cell.g2));
        let got = freq.get(&key).copied().unwrap_or(0.0);
        let se = (cell.prob * (1.0 - cell.prob) / n as f64).sqrt();
        assert!((got - cell.prob).abs() <= 3.0 * se + 1e-12, "{key:?}: {got} vs {}", cell.prob);
    }
}

#[test]
fn marginals_match_configuration() {
    let n = 20_000;
    let (panel, _) = gen_panel(&copula_cfg(-0.4, n, 32)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    for (event, want) in [(1u8, [(3, 0.25), (4, 0.2), (6, 0.15)]), (2, [(2, 0.1), (4, 0.3), (5, 0.2)])] {
        for (g, p) in want {
            let got = cohorts.cohort_lists(event).get(&P(g)).map_or(0, Vec::len) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got - p).abs() < 3.0 * se, "event {event} cohort {g}: {got} vs {p}");
        }
    }
}

#[test]
fn independent_timing_gives_no_confounding() {
    let (panel, _) = gen_panel(&copula_cfg(0.0, 40_000, 33)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let s = Sample::new(&panel, &cohorts);
    for t in 3..=6 {
        assert!(gamma12(&s, 3, t, ControlType::Never).unwrap().abs() < 0.02);
    }
    let (panel, _) = gen_panel(&copula_cfg(0.8, 40_000, 33)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let s = Sample::new(&panel, &cohorts);
    assert!(gamma12(&s, 3, 4, ControlType::Never).unwrap() > 0.05);
}

#[test]
fn untreated_trends_are_common_across_cohorts() {
    let mut cfg = common::staggered(2000, 34);
    cfg.noise_sd = 0.0;
    cfg.selection = None;
    cfg.k_covariates = 0;
    let (panel, truth) = gen_panel(&cfg).unwrap();
    let t_max = panel.n_periods() as usize;
    for i in 0..panel.n_units() {
        let y0 = &truth.untreated[i * t_max..(i + 1) * t_max];
        for t in 1..t_max {
            assert!((y0[t] - y0[t - 1] - cfg.time_trend).abs() < 1e-12);
        }
    }
    // nonparallel trends break this for event-1 units only
    let (panel, truth) = ddid_core::simulate::gen_violation_panel(&cfg, Violation::NonparallelTrends { strength: 0.5 }).unwrap();
    let cohorts = CohortMap::derive(&panel);
    for i in 0..panel.n_units() {
        let d = truth.untreated[i * t_max + 1] - truth.untreated[i * t_max];
        let want = cfg.time_trend + if cohorts.g1[i].is_never() { 0.0 } else { 0.5 };
        assert!((d - want).abs() < 1e-12);
    }
}

#[test]
fn nonadditive_truth_carries_the_interaction() {
    let cfg = common::staggered(300, 35);
    let (_, truth) = ddid_core::simulate::gen_violation_panel(&cfg, Violation::Nonadditive { strength: 0.5 }).unwrap();
    for (c, v) in &truth.cells {
        let both = c.g1.treated_at(c.t) && c.g2.treated_at(c.t);
        let want = if both { v.att1 + v.att2 + 0.5 } else { v.att };
        assert!((v.att - want).abs() < 1e-12);
    }
    assert!(Violation::parse("bogus", 1.0).is_err());
}

#[test]
fn true_summary_arithmetic() {
    let mut cfg = common::staggered(400, 36);
    cfg.att1 = EffectSurface::Constant { value: 1.5 };
    let (_, truth) = gen_panel(&cfg).unwrap();
    let a = CellIndex::new(P(3), Never, 4);
    let b = CellIndex::new(P(5), P(2), 6);
    assert_eq!(true_summary(&truth, &WeightScheme::point("p", a)).unwrap(), 1.5);
    let mut half = WeightScheme::new("half");
    half.add(a, 0.5);
    half.add(b, 0.5);
    assert!((true_summary(&truth, &half).unwrap() - 1.5).abs() < 1e-15);

    let (_, het) = gen_panel(&common::staggered(400, 36)).unwrap();
    // event-time surface 1 + 0.25 e: e = 1 and e = 1
    let want = 0.5 * (1.0 + 0.25) + 0.5 * (1.0 + 0.25);
    assert!((true_summary(&het, &half).unwrap() - want).abs() < 1e-12);
    let missing = WeightScheme::point("m", CellIndex::new(P(4), P(4), 5));
    assert!(true_summary(&het, &missing).is_err());
}
