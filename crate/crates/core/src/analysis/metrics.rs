use std::io::Write;

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{self, REPORT_ORDER};

/// Denominator guard for MAPE.
pub const EPSILON_MAPE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mse: f64,
    /// Percent.
    pub mape_pct: f64,
    pub n: usize,
}

/// Error metrics of `pred` against `truth`.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction length {} differs from truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty series".into()));
    }
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
        pct += e.abs() / t.abs().max(EPSILON_MAPE);
    }
    let n = pred.len() as f64;
    let mse = sq / n;
    let m = Metrics {
        mae: abs / n,
        rmse: mse.sqrt(),
        mse,
        mape_pct: 100.0 * pct / n,
        n: pred.len(),
    };
    if [m.mae, m.mse, m.mape_pct].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metrics are not finite".into()));
    }
    Ok(m)
}

/// A daily series for one pollutant.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub pollutant: String,
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollutantMetrics {
    /// Short label such as `SO2`.
    pub pollutant: String,
    pub column: String,
    /// `None` when the pollutant was not modeled.
    pub metrics: Option<Metrics>,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// One row per pollutant in SO2, NO2, O3, CO order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<PollutantMetrics>,
}

/// `SO2` for `so2_ppb` and so on; other names pass through.
pub fn pollutant_label(column: &str) -> &str {
    match column {
        ingest::SO2 => "SO2",
        ingest::NO2 => "NO2",
        ingest::O3 => "O3",
        ingest::CO => "CO",
        other => other,
    }
}

/// Scores each predicted series against the truth series of the same
/// pollutant. Pollutants without a prediction appear with empty metrics.
pub fn compute_metrics(pred: &[Series], truth: &[Series]) -> Result<MetricsReport> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no predicted series".into()));
    }
    for p in pred {
        if !REPORT_ORDER.contains(&p.pollutant.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown pollutant `{}`", p.pollutant)));
        }
    }
    let mut rows = Vec::with_capacity(REPORT_ORDER.len());
    for col in REPORT_ORDER {
        let mut row = PollutantMetrics {
            pollutant: pollutant_label(col).to_string(),
            column: col.to_string(),
            metrics: None,
            first_date: None,
            last_date: None,
        };
        if let Some(p) = pred.iter().find(|s| s.pollutant == col) {
            let t = truth
                .iter()
                .find(|s| s.pollutant == col)
                .ok_or_else(|| Error::InvalidArgument(format!("no truth series for `{col}`")))?;
            if t.start != p.start {
                return Err(Error::Shape(format!(
                    "`{col}` prediction starts {} but truth starts {}",
                    p.start, t.start
                )));
            }
            let m = metrics(&p.values, &t.values)
                .map_err(|e| Error::InvalidArgument(format!("`{col}`: {e}")))?;
            row.first_date = Some(p.start);
            row.last_date = Some(p.start + Duration::days(m.n as i64 - 1));
            row.metrics = Some(m);
        }
        rows.push(row);
    }
    Ok(MetricsReport { rows })
}

impl MetricsReport {
    pub fn get(&self, pollutant: &str) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.pollutant == pollutant || r.column == pollutant)
            .and_then(|r| r.metrics.as_ref())
    }

    /// `pollutant,mae,rmse,mse,mape_pct`; unmodeled rows hold `NA`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("metrics report", e);
        writeln!(w, "pollutant,mae,rmse,mse,mape_pct").map_err(io)?;
        for r in &self.rows {
            match &r.metrics {
                Some(m) => writeln!(w, "{},{},{},{},{}", r.pollutant, m.mae, m.rmse, m.mse, m.mape_pct),
                None => writeln!(w, "{},NA,NA,NA,NA", r.pollutant),
            }
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::InvalidArgument(format!("serializing metrics: {e}")))?;
        writeln!(w).map_err(|e| Error::io("metrics report", e))
    }
}
