//! Confoundedness between the events and the bias of the one-event estimator.
//!
//! The naive group-time estimator ignores event 2. With constant effects its
//! expectation is
//! `ATT1 + ATT2 * Gamma12 + (ATT - ATT1 - ATT2) * P(D2_t = 1 | G1 = g1)`,
//! where `Gamma12` is the gap in event-2 exposure growth between base and
//! target period across the event-1 treated and comparison groups.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::aggregate::WeightScheme;
use crate::error::{Error, Result};
use crate::moments::Sample;
use crate::panel::{Cohort, ControlType};
use crate::simulate::SimTruth;

/// A treated-minus-comparison mean contrast with optional influence terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrast {
    pub value: f64,
    pub n_treat: usize,
    pub n_control: usize,
    pub influence: Vec<(u32, f64)>,
}

fn is_comparison(a1: Cohort, g1: Cohort, t: u32, control: ControlType) -> bool {
    match control {
        ControlType::Never => a1.is_never(),
        ControlType::NotYet => {
            let b = g1.period().map_or(t, |g| g - 1);
            a1 != g1 && a1.after(t.max(b))
        }
    }
}

/// Event-1-only contrast of `f(unit)` for cohort `g1` at period `t`.
pub fn event1_contrast(
    sample: &Sample,
    g1: u32,
    t: u32,
    control: ControlType,
    keep_influence: bool,
    f: impl Fn(usize) -> f64,
) -> Result<Contrast> {
    if g1 < 2 || t < 2 || t > sample.panel.n_periods() {
        return Err(Error::EmptyGroup { g1, t });
    }
    let g = Cohort::Period(g1);
    let lists = sample.cohorts.cohort_lists(1);
    let mut sums = [(0.0, 0.0, 0usize); 2];
    let mut members: [Vec<(u32, f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for (&a1, units) in lists {
        let side = if a1 == g {
            0
        } else if is_comparison(a1, g, t, control) {
            1
        } else {
            continue;
        };
        for &u in units {
            let w = sample.weight(u as usize);
            if w > 0.0 {
                let v = f(u as usize);
                sums[side].0 += w;
                sums[side].1 += w * v;
                sums[side].2 += 1;
                if keep_influence {
                    members[side].push((u, w, v));
                }
            }
        }
    }
    if sums[0].2 == 0 || sums[1].2 == 0 {
        return Err(Error::EmptyGroup { g1, t });
    }
    let mu = [sums[0].1 / sums[0].0, sums[1].1 / sums[1].0];
    let mut influence = Vec::new();
    if keep_influence {
        for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
            for &(u, w, v) in &members[side] {
                influence.push((u, sign * w * (v - mu[side]) / sums[side].0));
            }
        }
        influence.sort_by_key(|x| x.0);
    }
    Ok(Contrast { value: mu[0] - mu[1], n_treat: sums[0].2, n_control: sums[1].2, influence })
}

/// One-event estimator `E[Y_t - Y_{g1-1} | G1 = g1] - E[Y_t - Y_{g1-1} | comparison]`.
pub fn naive_cs_att(sample: &Sample, g1: u32, t: u32, control: ControlType) -> Result<f64> {
    naive_contrast(sample, g1, t, control, false).map(|c| c.value)
}

pub fn naive_contrast(sample: &Sample, g1: u32, t: u32, control: ControlType, keep: bool) -> Result<Contrast> {
    let b = g1.saturating_sub(1);
    event1_contrast(sample, g1, t, control, keep, |i| {
        sample.panel.outcome(i, t) - sample.panel.outcome(i, b)
    })
}

/// Difference in `E[D2_t - D2_b]` between cohort `g1` and its comparison
/// group, `b = g1 - 1`. For `t >= b` this is the difference in
/// `P(D2_t = 1, D2_b = 0)`.
pub fn gamma12(sample: &Sample, g1: u32, t: u32, control: ControlType) -> Result<f64> {
    gamma12_contrast(sample, g1, t, control, false).map(|c| c.value)
}

pub fn gamma12_contrast(sample: &Sample, g1: u32, t: u32, control: ControlType, keep: bool) -> Result<Contrast> {
    let b = g1.saturating_sub(1);
    let g2 = &sample.cohorts.g2;
    event1_contrast(sample, g1, t, control, keep, |i| {
        g2[i].treated_at(t) as u8 as f64 - g2[i].treated_at(b) as u8 as f64
    })
}

/// Terms of the omitted-event decomposition for one `(g1, t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasEntry {
    pub g1: u32,
    pub t: u32,
    pub naive: f64,
    pub target: f64,
    pub gamma12: f64,
    pub omitted_event_bias: f64,
    pub interaction_bias: f64,
    /// `naive - target - omitted - interaction`; zero up to noise.
    pub residual: f64,
}

fn constant(values: impl Iterator<Item = f64>) -> Result<f64> {
    let mut first = None;
    for v in values {
        match first {
            None => first = Some(v),
            Some(f) if (f - v).abs() > 1e-12 * f64::max(1.0, f64::abs(f)) => return Err(Error::HeterogeneousTruth),
            _ => {}
        }
    }
    Ok(first.unwrap_or(0.0))
}

/// Decomposes the naive estimate on simulated data with constant effects.
pub fn bias_decomposition(
    sample: &Sample,
    truth: &SimTruth,
    g1: u32,
    t: u32,
    control: ControlType,
) -> Result<BiasEntry> {
    let active1 = truth.cells.iter().filter(|(c, _)| c.g1.treated_at(c.t));
    let active2 = truth.cells.iter().filter(|(c, _)| c.g2.treated_at(c.t));
    let att1 = constant(active1.clone().map(|(_, v)| v.att1))?;
    let att2 = constant(active2.clone().map(|(_, v)| v.att2))?;
    let joint = constant(
        truth
            .cells
            .iter()
            .filter(|(c, _)| c.g1.treated_at(c.t) && c.g2.treated_at(c.t))
            .map(|(_, v)| v.att),
    )?;
    let any_joint = truth.cells.keys().any(|c| c.g1.treated_at(c.t) && c.g2.treated_at(c.t));
    let interaction = if any_joint { joint - att1 - att2 } else { 0.0 };

    let naive = naive_cs_att(sample, g1, t, control)?;
    let gamma = gamma12(sample, g1, t, control)?;
    let g2 = &sample.cohorts.g2;
    let (mut w_all, mut w_on) = (0.0, 0.0);
    for &u in sample.cohorts.cohort_lists(1).get(&Cohort::Period(g1)).map_or(&[][..], Vec::as_slice) {
        let w = sample.weight(u as usize);
        w_all += w;
        if g2[u as usize].treated_at(t) {
            w_on += w;
        }
    }
    let p_d2 = if w_all > 0.0 { w_on / w_all } else { 0.0 };
    let target = if t >= g1 { att1 } else { 0.0 };
    let omitted = att2 * gamma;
    let interaction_bias = if t >= g1 { interaction * p_d2 } else { 0.0 };
    Ok(BiasEntry {
        g1,
        t,
        naive,
        target,
        gamma12: gamma,
        omitted_event_bias: omitted,
        interaction_bias,
        residual: naive - target - omitted - interaction_bias,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelativeBias {
    /// `Gamma12 * ATT2`.
    pub absolute: f64,
    pub relative_to_att2: Option<f64>,
    pub relative_to_att1: Option<f64>,
}

/// Omitted-event bias implied by a diagnostic and an event-2 effect, also as
/// a share of each effect (absent when that effect is zero).
pub fn relative_bias(gamma12_value: f64, att2: f64, att1: f64) -> RelativeBias {
    let absolute = gamma12_value * att2;
    let ratio = |d: f64| if d == 0.0 { None } else { Some(absolute / d) };
    RelativeBias { absolute, relative_to_att2: ratio(att2), relative_to_att1: ratio(att1) }
}

/// Collapses a target-level scheme to weights per `(g1, t)`.
pub fn group_time_weights(scheme: &WeightScheme) -> BTreeMap<(u32, u32), f64> {
    let mut out = BTreeMap::new();
    for (c, &w) in &scheme.weights {
        if let Some(g) = c.g1.period() {
            *out.entry((g, c.t)).or_insert(0.0) += w;
        }
    }
    out
}

/// A group-time diagnostic aggregated with the weights of a summary scheme.
pub fn aggregate_diagnostic(scheme: &WeightScheme, mut f: impl FnMut(u32, u32) -> Result<f64>) -> Result<f64> {
    group_time_weights(scheme).into_iter().map(|((g, t), w)| f(g, t).map(|v| w * v)).sum()
}
