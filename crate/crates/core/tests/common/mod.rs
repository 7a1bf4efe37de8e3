#![allow(dead_code)]

pub mod oracle;

use ddid_core::simulate::{CohortLaw, DgpConfig, EffectSurface, MarginalProb, Selection};

pub fn marginal(pairs: &[(u32, f64)]) -> Vec<MarginalProb> {
    pairs.iter().map(|&(period, prob)| MarginalProb { period, prob }).collect()
}

/// Correlated timing, heterogeneous additive effects, two covariates.
pub fn staggered(n_units: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        n_units,
        n_periods: 6,
        cohort_law: CohortLaw::Copula {
            rho: 0.6,
            g1: marginal(&[(3, 0.25), (5, 0.25)]),
            g2: marginal(&[(2, 0.15), (4, 0.25), (6, 0.2)]),
        },
        att1: EffectSurface::EventTime { intercept: 1.0, slope: 0.25 },
        att2: EffectSurface::EventTime { intercept: 2.0, slope: -0.1 },
        unit_fe_sd: 1.0,
        time_trend: 0.2,
        noise_sd: 1.0,
        k_covariates: 2,
        selection: Some(Selection { shift: 0.4, scale: 1.0, trend_linear: 0.3, trend_quadratic: 0.0 }),
        seed,
        ..Default::default()
    }
}
