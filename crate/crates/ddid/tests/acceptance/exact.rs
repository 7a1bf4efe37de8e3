//! Criteria that hold to rounding error on a single panel.

use std::collections::HashMap;

use ddid_core::aggregate::{evaluate, scheme_dd, scheme_did, scheme_imp, All, Summary};
use ddid_core::diagnostics::naive_cs_att;
use ddid_core::doubledid::{att_dd, method_for, target_grid, CohortMass, Method};
use ddid_core::inference::{run_pipeline, EstimateKey, PipelineSpec};
use ddid_core::moments::{estimate_all_cells, CellStatus, CellTable, EstimationOptions, Estimator, Sample};
use ddid_core::panel::{CellIndex, Cohort, CohortMap, ControlType, Panel, PanelBuilder};
use ddid_core::simulate::{gen_panel, CohortLaw, CohortProb, DgpConfig, EffectSurface};
use Cohort::{Never, Period as P};

use crate::common::{self, oracle::single_event};
use crate::{verdict, Verdict};

const CONTROLS: [ControlType; 2] = [ControlType::Never, ControlType::NotYet];

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

pub fn lemma2() -> Verdict {
    let (panel, _) = gen_panel(&common::staggered(900, 7)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let sample = Sample::new(&panel, &cohorts);
    let mut opts = EstimationOptions::default();
    opts.newton.tol = 1e-15;
    let (mut worst, mut n) = (0.0f64, 0);
    for control in CONTROLS {
        for est in Estimator::ALL {
            let table = estimate_all_cells(&sample, est, control, &opts);
            for r in table.records().filter(|r| r.status == CellStatus::Ok) {
                let ours = r.estimate.as_ref().unwrap().att;
                worst = worst.max(rel_err(ours, single_event(&panel, &cohorts, &r.cell, est, control)));
                n += 1;
            }
        }
    }
    verdict(worst <= 1e-10 && n > 200, format!("{n} cells x estimator x control, max rel. error {worst:.1e} (tol 1e-10)"))
}

fn deterministic(cells: Vec<CohortProb>, n_periods: u32) -> DgpConfig {
    DgpConfig {
        n_units: 600,
        n_periods,
        cohort_law: CohortLaw::Table { cells },
        att1: EffectSurface::EventTime { intercept: 1.0, slope: 0.5 },
        att2: EffectSurface::EventTime { intercept: 2.0, slope: 0.25 },
        unit_fe_sd: 1.0,
        time_trend: 0.3,
        noise_sd: 0.0,
        seed: 5,
        ..Default::default()
    }
}

fn prob(g1: Option<u32>, g2: Option<u32>, prob: f64) -> CohortProb {
    CohortProb { g1, g2, prob }
}

fn fit(panel: &Panel, cohorts: &CohortMap, est: Estimator, control: ControlType) -> CellTable {
    estimate_all_cells(&Sample::new(panel, cohorts), est, control, &EstimationOptions::default())
}

pub fn figure_fixtures() -> Verdict {
    let mut worst = 0.0f64;
    let mut methods = true;
    // confounded then treated: (5,3), (never,3), (never,never)
    let cfg = deterministic(vec![prob(Some(5), Some(3), 0.4), prob(None, Some(3), 0.3), prob(None, None, 0.3)], 6);
    let (panel, truth) = gen_panel(&cfg).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let mass = CohortMass::unweighted(&cohorts);
    for control in CONTROLS {
        let cells = fit(&panel, &cohorts, Estimator::Unc, control);
        let v = |g1, g2, t| cells.value(&CellIndex::new(g1, g2, t)).unwrap();
        let target = CellIndex::new(P(5), P(3), 5);
        let dd = att_dd(&cells, &mass, &target);
        methods &= dd.method == Method::Did;
        let caption = v(P(5), P(3), 5) - v(P(5), P(3), 4) - (v(Never, P(3), 5) - v(Never, P(3), 4));
        let got = dd.att1.unwrap();
        worst = worst.max((got - caption).abs()).max((got - truth.att1(&target).unwrap()).abs());
    }
    // treated then confounded: (2,4), (2,never), (never,never)
    let cfg = deterministic(vec![prob(Some(2), Some(4), 0.4), prob(Some(2), None, 0.3), prob(None, None, 0.3)], 5);
    let (panel, truth) = gen_panel(&cfg).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let mass = CohortMass::unweighted(&cohorts);
    for control in CONTROLS {
        let cells = fit(&panel, &cohorts, Estimator::Unc, control);
        let v = |g1, g2, t| cells.value(&CellIndex::new(g1, g2, t)).unwrap();
        let target = CellIndex::new(P(2), P(4), 4);
        let dd = att_dd(&cells, &mass, &target);
        methods &= dd.method == Method::Imputation;
        let caption = v(P(2), P(4), 3) + v(P(2), Never, 4) - v(P(2), Never, 3);
        let got = dd.att1.unwrap();
        worst = worst.max((got - caption).abs()).max((got - truth.att1(&target).unwrap()).abs());
    }
    verdict(
        methods && worst <= 1e-10,
        format!("ATT1(5,3,5) and ATT1(2,4,4), both controls, max abs. error {worst:.1e} (tol 1e-10)"),
    )
}

pub fn weight_identities() -> Verdict {
    let (panel, _) = gen_panel(&common::staggered(1500, 12)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let mass = CohortMass::unweighted(&cohorts);
    let (mut sum_err, mut eval_err) = (0.0f64, 0.0f64);
    let (mut imp, mut did, mut shares) = (0, 0, 0);
    for control in CONTROLS {
        let cells = fit(&panel, &cohorts, Estimator::Dr, control);
        for cell in target_grid(&mass) {
            let dd = att_dd(&cells, &mass, &cell);
            match method_for(&mass, &cell) {
                Method::Imputation => {
                    sum_err = sum_err.max((scheme_imp(&cell, &mass).total() - 1.0).abs());
                    imp += 1;
                }
                Method::Did => {
                    sum_err = sum_err.max(scheme_did(&cell, &mass).total().abs());
                    did += 1;
                }
                _ => {}
            }
            if let (Some(v), Some(s)) = (dd.att1, scheme_dd(&cell, &mass)) {
                eval_err = eval_err.max(rel_err(evaluate(&s, &cells).unwrap().theta, v));
            }
        }
    }
    for summary in Summary::standard_set(&mass) {
        if let Ok(t) = summary.targets(&mass, &All) {
            sum_err = sum_err.max((t.total() - 1.0).abs());
            shares += 1;
        }
    }
    verdict(
        sum_err <= 1e-12 && eval_err <= 1e-12 && imp > 3 && did > 3 && shares > 10,
        format!(
            "{imp} imputation, {did} did, {shares} share schemes; max sum error {sum_err:.1e}, max evaluation error {eval_err:.1e} (tol 1e-12)"
        ),
    )
}

fn flatten(panel: &Panel) -> Panel {
    let mut b = PanelBuilder::new(panel.n_covariates());
    let mut first = HashMap::new();
    for row in panel.rows() {
        let y = *first.entry(row.unit).or_insert(row.outcome);
        b.push(row.unit, row.period, y, row.d1, row.d2, row.covariates).unwrap();
    }
    b.build().unwrap()
}

pub fn degeneracy() -> Verdict {
    let opts = EstimationOptions { min_treated: 1, min_control: 1, ..Default::default() };
    let mut problems = Vec::new();

    // no covariates: every moment collapses to the unconditional one
    let mut cfg = common::staggered(1200, 21);
    cfg.k_covariates = 0;
    cfg.selection = None;
    let (panel, _) = gen_panel(&cfg).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let s = Sample::new(&panel, &cohorts);
    let mut k0 = 0.0f64;
    for control in CONTROLS {
        let unc = estimate_all_cells(&s, Estimator::Unc, control, &opts);
        for est in [Estimator::Ipw, Estimator::Or, Estimator::Dr] {
            let other = estimate_all_cells(&s, est, control, &opts);
            for rec in unc.records() {
                match (unc.value(&rec.cell), other.value(&rec.cell)) {
                    (Some(a), Some(b)) => k0 = k0.max(rel_err(a, b)),
                    (None, None) => {}
                    _ => problems.push(format!("K=0 availability differs at {}", rec.cell)),
                }
            }
        }
    }
    if k0 > 1e-10 {
        problems.push(format!("K=0 max difference {k0:.1e}"));
    }

    // no second event: dd is the single-event estimate
    let mut cfg = common::staggered(1500, 22);
    cfg.cohort_law = CohortLaw::Copula { rho: 0.0, g1: common::marginal(&[(2, 0.2), (3, 0.2), (5, 0.2)]), g2: Vec::new() };
    let (panel, _) = gen_panel(&cfg).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let s = Sample::new(&panel, &cohorts);
    let mass = CohortMass::unweighted(&cohorts);
    let mut single = 0.0f64;
    for control in CONTROLS {
        let cells = estimate_all_cells(&s, Estimator::Unc, control, &opts);
        for cell in target_grid(&mass) {
            let dd = att_dd(&cells, &mass, &cell);
            if dd.method != Method::Direct || dd.att1 != cells.value(&cell) {
                problems.push(format!("g2=never: {cell} is not a direct copy"));
            }
            if let (Some(v), Ok(naive)) = (dd.att1, naive_cs_att(&s, cell.g1.period().unwrap(), cell.t, control)) {
                single = single.max((v - naive).abs());
            }
        }
    }
    if single > 1e-12 {
        problems.push(format!("g2=never: max gap to one-event DiD {single:.1e}"));
    }

    // constant outcomes
    let (panel, _) = gen_panel(&common::staggered(800, 23)).unwrap();
    let flat = flatten(&panel);
    let cohorts = CohortMap::derive(&flat);
    let s = Sample::new(&flat, &cohorts);
    let mass = CohortMass::unweighted(&cohorts);
    let mut constant = 0.0f64;
    for estimator in Estimator::ALL {
        for control in CONTROLS {
            let spec = PipelineSpec { estimator, control, options: opts, summaries: Summary::standard_set(&mass), diagnostics: true };
            let res = run_pipeline(&s, &spec);
            for (key, v) in &res.estimates {
                if !matches!(key, EstimateKey::Gamma { .. }) {
                    constant = constant.max(v.abs());
                }
            }
        }
    }
    if constant > 1e-10 {
        problems.push(format!("constant outcomes: max |estimate| {constant:.1e}"));
    }

    let ok = problems.is_empty();
    let detail = if ok {
        format!("K=0 max diff {k0:.1e}; g2=never max gap {single:.1e}; constant outcomes max |est| {constant:.1e}")
    } else {
        problems.join("; ")
    };
    verdict(ok, detail)
}
