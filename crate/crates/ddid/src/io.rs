//! Long-format CSV panels.
//!
//! Treatment can be given either as two 0/1 indicator columns or as two
//! cohort columns holding the first treated period label (0 or empty for
//! never treated), in which case the indicators are rebuilt per row.

use std::collections::HashMap;
use std::io::{Read, Write};

use ddid_core::panel::{Cohort, Panel, PanelBuilder};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: column `{column}` has non-numeric value `{value}`")]
    NotNumeric { line: u64, column: String, value: String },
    #[error("line {line}: column `{column}` must be 0 or 1, got `{value}`")]
    NotBinary { line: u64, column: String, value: String },
    #[error("unit {unit}: cohort column `{column}` changes over time")]
    CohortVaries { unit: i64, column: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Panel(#[from] ddid_core::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Treatment {
    Indicators { d1: String, d2: String },
    Cohorts { g1: String, g2: String },
}

/// Which CSV columns hold what.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment: Treatment,
    pub covariates: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            unit: "unit".into(),
            time: "period".into(),
            outcome: "y".into(),
            treatment: Treatment::Indicators { d1: "d1".into(), d2: "d2".into() },
            covariates: Vec::new(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, LoadError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| LoadError::MissingColumn(name.to_string()))
}

fn number<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, LoadError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| LoadError::NotNumeric {
        line: rec.position().map_or(0, |p| p.line()),
        column: name.to_string(),
        value: raw.to_string(),
    })
}

fn binary(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<bool, LoadError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    match raw {
        "0" | "0.0" | "false" | "FALSE" => Ok(false),
        "1" | "1.0" | "true" | "TRUE" => Ok(true),
        _ => Err(LoadError::NotBinary {
            line: rec.position().map_or(0, |p| p.line()),
            column: name.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// First-treated label, `None` for never treated.
fn cohort(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<Option<i64>, LoadError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: i64 = number(rec, idx, name)?;
    Ok((v != 0).then_some(v))
}

/// Reads and validates a panel.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<Panel, LoadError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let unit = column(&headers, &schema.unit)?;
    let time = column(&headers, &schema.time)?;
    let outcome = column(&headers, &schema.outcome)?;
    let (c1, c2, n1, n2) = match &schema.treatment {
        Treatment::Indicators { d1, d2 } => (column(&headers, d1)?, column(&headers, d2)?, d1, d2),
        Treatment::Cohorts { g1, g2 } => (column(&headers, g1)?, column(&headers, g2)?, g1, g2),
    };
    let cov: Vec<usize> = schema.covariates.iter().map(|c| column(&headers, c)).collect::<Result<_, _>>()?;
    let by_cohort = matches!(schema.treatment, Treatment::Cohorts { .. });

    let mut builder = PanelBuilder::new(cov.len());
    let mut x = vec![0.0; cov.len()];
    let mut seen: HashMap<i64, (Option<i64>, Option<i64>)> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let u: i64 = number(&rec, unit, &schema.unit)?;
        let t: i64 = number(&rec, time, &schema.time)?;
        let y: f64 = number(&rec, outcome, &schema.outcome)?;
        for (j, &c) in cov.iter().enumerate() {
            x[j] = number(&rec, c, &schema.covariates[j])?;
        }
        let (d1, d2) = if by_cohort {
            let g = (cohort(&rec, c1, n1)?, cohort(&rec, c2, n2)?);
            let first = *seen.entry(u).or_insert(g);
            if first.0 != g.0 {
                return Err(LoadError::CohortVaries { unit: u, column: n1.clone() });
            }
            if first.1 != g.1 {
                return Err(LoadError::CohortVaries { unit: u, column: n2.clone() });
            }
            (g.0.is_some_and(|g| t >= g), g.1.is_some_and(|g| t >= g))
        } else {
            (binary(&rec, c1, n1)?, binary(&rec, c2, n2)?)
        };
        builder.push(u, t, y, d1, d2, &x)?;
    }
    Ok(builder.build()?)
}

/// Writes a panel with indicator columns `d1`, `d2` and covariates `x1..xK`.
pub fn write_panel<W: Write>(panel: &Panel, sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["unit".to_string(), "period".into(), "y".into(), "d1".into(), "d2".into()];
    header.extend((1..=panel.n_covariates()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for row in panel.rows() {
        let mut rec = vec![
            row.unit.to_string(),
            row.period.to_string(),
            row.outcome.to_string(),
            (row.d1 as u8).to_string(),
            (row.d2 as u8).to_string(),
        ];
        rec.extend(row.covariates.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Cohort as written in CSV cells: period label, 0 for never.
pub fn cohort_label(panel: &Panel, c: Cohort) -> i64 {
    panel.cohort_label(c).unwrap_or(0)
}
