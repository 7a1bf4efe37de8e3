//! Two-event moments against a single-event estimator run on the subsample
//! that keeps the double cohort and every unit of another combined cohort.

mod common;

use common::oracle::single_event;
use ddid_core::moments::{estimate_all_cells, CellStatus, EstimationOptions, Estimator, Sample};
use ddid_core::panel::{CohortMap, ControlType};
use ddid_core::simulate::gen_panel;

#[test]
fn two_event_moments_equal_subsampled_single_event_moments() {
    let (panel, _) = gen_panel(&common::staggered(900, 7)).unwrap();
    let cohorts = CohortMap::derive(&panel);
    let sample = Sample::new(&panel, &cohorts);
    let mut opts = EstimationOptions::default();
    opts.newton.tol = 1e-15;
    let mut checked = 0;
    for control in [ControlType::Never, ControlType::NotYet] {
        for est in Estimator::ALL {
            let table = estimate_all_cells(&sample, est, control, &opts);
            for r in table.records() {
                if r.status != CellStatus::Ok {
                    continue;
                }
                let ours = r.estimate.as_ref().unwrap().att;
                let oracle = single_event(&panel, &cohorts, &r.cell, est, control);
                assert!(
                    (ours - oracle).abs() <= 1e-10 * ours.abs().max(1.0),
                    "{est:?} {control:?} {}: {ours} vs {oracle}",
                    r.cell
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 200, "only {checked} cells checked");
}
