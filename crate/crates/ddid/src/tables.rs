//! Output tables. Cohorts and periods are written as the input's period
//! labels; never-treated cohorts are 0 in CSV and null in JSON.

use std::collections::BTreeMap;
use std::path::Path;

use ddid_core::aggregate::Summary;
use ddid_core::diagnostics::{BiasEntry, RelativeBias};
use ddid_core::inference::{BootstrapReport, EstimateKey, McRow, PipelineResult};
use ddid_core::panel::{CellIndex, Cohort, ControlType, Panel};
use ddid_core::simulate::{SimTruth, TrueCell};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::cohort_label;
use crate::AppError;

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

const STAT_HEADER: [&str; 5] = ["se", "ci_lo", "ci_hi", "ci_normal_lo", "ci_normal_hi"];

fn stat_cols(report: Option<&BootstrapReport>, key: &EstimateKey) -> [String; 5] {
    let s = report.and_then(|r| r.stats.get(key));
    [
        num(s.and_then(|s| s.se)),
        num(s.and_then(|s| s.ci).map(|c| c.0)),
        num(s.and_then(|s| s.ci).map(|c| c.1)),
        num(s.and_then(|s| s.ci_normal).map(|c| c.0)),
        num(s.and_then(|s| s.ci_normal).map(|c| c.1)),
    ]
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Output(format!("{}: {e}", path.display())))?;
    let out = |e: csv::Error| AppError::Output(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(out)?;
    for r in rows {
        w.write_record(r).map_err(out)?;
    }
    w.flush().map_err(|e| AppError::Output(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| AppError::Output(format!("{}: {e}", path.display())))
}

fn label(panel: &Panel, c: Cohort) -> String {
    cohort_label(panel, c).to_string()
}

fn json_cohort(panel: &Panel, c: Cohort) -> serde_json::Value {
    panel.cohort_label(c).map_or(serde_json::Value::Null, |v| json!(v))
}

fn cell_cols(panel: &Panel, c: &CellIndex) -> [String; 3] {
    [label(panel, c.g1), label(panel, c.g2), panel.period_label(c.t).to_string()]
}

pub fn cells_table(panel: &Panel, res: &PipelineResult, report: Option<&BootstrapReport>) -> Vec<Vec<String>> {
    res.cells
        .records()
        .map(|r| {
            let mut row = cell_cols(panel, &r.cell).to_vec();
            row.extend([
                r.estimand.as_str().to_string(),
                num(r.estimate.as_ref().map(|e| e.att)),
                r.n_treat.to_string(),
                r.n_control.to_string(),
                r.status.to_string(),
            ]);
            row.extend(stat_cols(report, &EstimateKey::Cell(r.cell)));
            row
        })
        .collect()
}

pub const CELLS_HEADER: [&str; 13] = [
    "g1", "g2", "t", "estimand", "att", "n_treat", "n_control", "status",
    STAT_HEADER[0], STAT_HEADER[1], STAT_HEADER[2], STAT_HEADER[3], STAT_HEADER[4],
];

pub fn dd_table(panel: &Panel, res: &PipelineResult, report: Option<&BootstrapReport>) -> Vec<Vec<String>> {
    res.targets
        .values()
        .map(|e| {
            let mut row = cell_cols(panel, &e.cell).to_vec();
            row.extend([e.method.as_str().to_string(), num(e.att1), e.status().to_string()]);
            row.extend(stat_cols(report, &EstimateKey::Target(e.cell)));
            row
        })
        .collect()
}

pub const DD_HEADER: [&str; 11] = [
    "g1", "g2", "t", "method", "att1", "status",
    STAT_HEADER[0], STAT_HEADER[1], STAT_HEADER[2], STAT_HEADER[3], STAT_HEADER[4],
];

pub fn dd_components(panel: &Panel, res: &PipelineResult) -> serde_json::Value {
    let rows: Vec<_> = res
        .targets
        .values()
        .map(|e| {
            let comps: Vec<_> = e
                .components
                .iter()
                .map(|(c, w)| {
                    json!({
                        "g1": json_cohort(panel, c.g1),
                        "g2": json_cohort(panel, c.g2),
                        "t": panel.period_label(c.t),
                        "weight": w,
                    })
                })
                .collect();
            json!({
                "g1": json_cohort(panel, e.cell.g1),
                "g2": json_cohort(panel, e.cell.g2),
                "t": panel.period_label(e.cell.t),
                "method": e.method.as_str(),
                "att1": e.att1,
                "status": e.status().to_string(),
                "components": comps,
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "label", "g1", "t", "e1", "s12", "theta",
    STAT_HEADER[0], STAT_HEADER[1], STAT_HEADER[2], STAT_HEADER[3], STAT_HEADER[4],
    "n_cells", "excluded_mass", "status",
];

pub fn summary_table(panel: &Panel, res: &PipelineResult, report: Option<&BootstrapReport>) -> Vec<Vec<String>> {
    res.summaries
        .iter()
        .map(|(s, r)| {
            let (g1, t, e1, s12) = match *s {
                Summary::GroupTime { g1, t } => (
                    panel.period_label(g1).to_string(),
                    panel.period_label(t).to_string(),
                    String::new(),
                    String::new(),
                ),
                Summary::Dynamic { e1 } => (String::new(), String::new(), e1.to_string(), String::new()),
                Summary::DynamicStaggered { e1, s12 } => (String::new(), String::new(), e1.to_string(), s12.to_string()),
                Summary::Overall => Default::default(),
            };
            let mut row = vec![s.label().to_string(), g1, t, e1, s12];
            match r {
                Ok(r) => {
                    row.push(r.estimate.theta.to_string());
                    row.extend(stat_cols(report, &EstimateKey::Summary(*s)));
                    row.extend([r.estimate.n_cells.to_string(), r.estimate.excluded_mass.to_string(), "ok".into()]);
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.extend([String::new(), String::new(), format!("unavailable: {e}")]);
                }
            }
            row
        })
        .collect()
}

pub const DYNAMIC_HEADER: [&str; 9] = [
    "e1", "att1",
    STAT_HEADER[0], STAT_HEADER[1], STAT_HEADER[2], STAT_HEADER[3], STAT_HEADER[4],
    "n_cells", "excluded_mass",
];

pub fn dynamic_table(res: &PipelineResult, report: Option<&BootstrapReport>) -> Vec<Vec<String>> {
    res.summaries
        .iter()
        .filter_map(|(s, r)| match (s, r) {
            (Summary::Dynamic { e1 }, Ok(r)) => {
                let mut row = vec![e1.to_string(), r.estimate.theta.to_string()];
                row.extend(stat_cols(report, &EstimateKey::Summary(*s)));
                row.extend([r.estimate.n_cells.to_string(), r.estimate.excluded_mass.to_string()]);
                Some(row)
            }
            _ => None,
        })
        .collect()
}

pub const DIAGNOSTICS_HEADER: [&str; 16] = [
    "control", "g1", "t", "gamma12", "gamma12_se", "gamma12_ci_lo", "gamma12_ci_hi",
    "naive_att", "naive_se", "naive_ci_lo", "naive_ci_hi", "dd_att", "gap", "gap_se", "gap_ci_lo", "gap_ci_hi",
];

pub fn diagnostics_table(
    panel: &Panel,
    control: ControlType,
    res: &PipelineResult,
    report: Option<&BootstrapReport>,
) -> Vec<Vec<String>> {
    let three = |key: EstimateKey| {
        let s = stat_cols(report, &key);
        [s[0].clone(), s[1].clone(), s[2].clone()]
    };
    res.diagnostics
        .iter()
        .map(|d| {
            let (g1, t) = (d.g1, d.t);
            let mut row = vec![control.as_str().to_string(), panel.period_label(g1).to_string(), panel.period_label(t).to_string()];
            row.push(d.gamma12.to_string());
            row.extend(three(EstimateKey::Gamma { g1, t }));
            row.push(d.naive_att.to_string());
            row.extend(three(EstimateKey::Naive { g1, t }));
            row.push(num(d.dd_att));
            row.push(num(d.gap));
            row.extend(three(EstimateKey::Gap { g1, t }));
            row
        })
        .collect()
}

pub fn bootstrap_json(report: &BootstrapReport) -> serde_json::Value {
    let mut drops = BTreeMap::new();
    let mut unreliable = Vec::new();
    for (k, s) in &report.stats {
        if s.n_dropped > 0 {
            drops.insert(k.to_string(), s.drop_rate);
        }
        if s.unreliable {
            unreliable.push(k.to_string());
        }
    }
    json!({
        "replications": report.config.replications,
        "seed": report.config.seed,
        "method": report.config.method.as_str(),
        "ci_level": report.config.ci_level,
        "cluster": "unit",
        "unreliable_threshold": report.config.max_drop_rate,
        "degenerate_replicates": report.degenerate_replicates,
        "max_drop_rate": report.max_drop_rate(),
        "drop_rates": drops,
        "unreliable": unreliable,
    })
}

fn truth_key(c: &CellIndex) -> String {
    let p = |c: Cohort| c.period().map_or(String::new(), |p| p.to_string());
    format!("{},{},{}", p(c.g1), p(c.g2), c.t)
}

fn parse_truth_key(k: &str) -> Option<CellIndex> {
    let mut it = k.split(',');
    let mut cohort = || -> Option<Cohort> {
        let s = it.next()?.trim();
        Some(if s.is_empty() { Cohort::Never } else { Cohort::Period(s.parse().ok()?) })
    };
    let g1 = cohort()?;
    let g2 = cohort()?;
    let t = it.next()?.trim().parse().ok()?;
    Some(CellIndex::new(g1, g2, t))
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    n_periods: u32,
    cells: BTreeMap<String, TrueCell>,
}

pub fn truth_json(truth: &SimTruth) -> serde_json::Value {
    let cells: BTreeMap<String, TrueCell> = truth.cells.iter().map(|(c, v)| (truth_key(c), *v)).collect();
    serde_json::to_value(TruthFile { n_periods: truth.n_periods, cells }).expect("truth serializes")
}

pub fn read_truth(path: &Path) -> Result<SimTruth, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let file: TruthFile = serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let mut cells = BTreeMap::new();
    for (k, v) in file.cells {
        let c = parse_truth_key(&k).ok_or_else(|| AppError::Data(format!("bad truth key `{k}`")))?;
        cells.insert(c, v);
    }
    Ok(SimTruth { n_periods: file.n_periods, cells, untreated: Vec::new() })
}

pub fn decomposition_json(panel: &Panel, control: ControlType, rows: &[(BiasEntry, RelativeBias)]) -> serde_json::Value {
    let entries: Vec<_> = rows
        .iter()
        .map(|(b, r)| {
            json!({
                "g1": panel.period_label(b.g1),
                "t": panel.period_label(b.t),
                "naive": b.naive,
                "target": b.target,
                "gamma12": b.gamma12,
                "omitted_event_bias": b.omitted_event_bias,
                "interaction_bias": b.interaction_bias,
                "residual": b.residual,
                "relative_to_att2": r.relative_to_att2,
                "relative_to_att1": r.relative_to_att1,
            })
        })
        .collect();
    json!({ "control": control.as_str(), "entries": entries })
}

pub const MC_HEADER: [&str; 11] = [
    "key", "n_reps", "mean_truth", "mean_estimate", "mean_bias", "mc_se", "rmse", "sd_estimate", "mean_se", "coverage",
    "theory_bias",
];

pub fn mc_table(rows: &BTreeMap<EstimateKey, McRow>) -> Vec<Vec<String>> {
    rows.values()
        .map(|r| {
            vec![
                r.key.clone(),
                r.n_reps.to_string(),
                num(r.mean_truth),
                r.mean_estimate.to_string(),
                num(r.mean_bias),
                num(r.mc_se),
                num(r.rmse),
                num(r.sd_estimate),
                num(r.mean_se),
                num(r.coverage),
                num(r.theory_bias),
            ]
        })
        .collect()
}
