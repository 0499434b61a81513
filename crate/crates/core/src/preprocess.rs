//! Daily resampling, gap filling, normalization and windowing.
//!
//! The pipeline order is fixed: resample → interpolate → impute → split →
//! normalize (training statistics) → window. [`prepare`] runs all of it.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ingest::RawTable;

/// Standard deviations below this are treated as a constant column.
pub const EPSILON_STD: f64 = 1e-8;

/// A column indexed by day offset; `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<i64>,
    pub x: Vec<Option<f64>>,
}

impl TimeSeries {
    pub fn new(t: Vec<i64>, x: Vec<Option<f64>>) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::Shape(format!(
                "time series with {} days and {} values",
                t.len(),
                x.len()
            )));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("time index not strictly increasing".into()));
        }
        Ok(TimeSeries { t, x })
    }

    /// Consecutive days `0..n`.
    pub fn daily(x: Vec<Option<f64>>) -> Self {
        TimeSeries {
            t: (0..x.len() as i64).collect(),
            x,
        }
    }

    pub fn present(&self) -> usize {
        self.x.iter().filter(|v| v.is_some()).count()
    }

    /// Values with every gap filled, or `None` if any remain.
    pub fn complete(&self) -> Option<Vec<f64>> {
        self.x.iter().copied().collect()
    }
}

/// Daily means per column over a contiguous calendar range.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyTable {
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub columns: BTreeMap<String, TimeSeries>,
}

pub fn resample_daily(raw: &RawTable) -> Result<DailyTable> {
    let ts = raw.timestamps();
    let (Some(first), Some(last)) = (ts.first(), ts.last()) else {
        return Err(Error::InvalidArgument("cannot resample an empty table".into()));
    };
    let start_date = first.date_naive();
    let n_days = (last.date_naive() - start_date).num_days() as usize + 1;
    let day_of: Vec<usize> = ts
        .iter()
        .map(|t| (t.date_naive() - start_date).num_days() as usize)
        .collect();

    let mut columns = BTreeMap::new();
    for (name, col) in raw.columns() {
        let mut sum = vec![0.0; n_days];
        let mut count = vec![0usize; n_days];
        for (&d, v) in day_of.iter().zip(col) {
            if let Some(v) = v {
                sum[d] += v;
                count[d] += 1;
            }
        }
        let x = sum
            .into_iter()
            .zip(count)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect();
        columns.insert(name.clone(), TimeSeries::daily(x));
    }
    Ok(DailyTable {
        start_date,
        n_days,
        columns,
    })
}

/// Fills interior gaps on the straight line between the nearest present
/// neighbours. Gaps before the first or after the last reading stay.
pub fn interpolate_linear(s: &TimeSeries) -> Result<TimeSeries> {
    let known: Vec<usize> = (0..s.x.len()).filter(|&i| s.x[i].is_some()).collect();
    if known.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs at least two present values, found {}",
            known.len()
        )));
    }
    let mut x = s.x.clone();
    for pair in known.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let (t0, t1) = (s.t[lo] as f64, s.t[hi] as f64);
        let (x0, x1) = (s.x[lo].unwrap(), s.x[hi].unwrap());
        for (i, slot) in x.iter_mut().enumerate().take(hi).skip(lo + 1) {
            let t = s.t[i] as f64;
            *slot = Some(x0 + (t - t0) / (t1 - t0) * (x1 - x0));
        }
    }
    Ok(TimeSeries { t: s.t.clone(), x })
}

/// Replaces every remaining gap with the mean of the present values.
pub fn impute_mean(s: &TimeSeries) -> Result<TimeSeries> {
    let present: Vec<f64> = s.x.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument("no data to impute".into()));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(TimeSeries {
        t: s.t.clone(),
        x: s.x.iter().map(|v| Some(v.unwrap_or(mean))).collect(),
    })
}

/// Gap-free daily matrix, `n_days × columns.len()`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    start_date: NaiveDate,
    columns: Vec<String>,
    values: Vec<f64>,
}

impl AlignedFrame {
    pub fn new(start_date: NaiveDate, columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if columns.is_empty() || !values.len().is_multiple_of(columns.len()) {
            return Err(Error::Shape(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                columns.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame value {v}")));
        }
        Ok(AlignedFrame {
            start_date,
            columns,
            values,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_days(&self) -> usize {
        self.values.len() / self.columns.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, day: usize, col: usize) -> f64 {
        self.values[day * self.n_cols() + col]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidArgument(format!("frame has no column `{name}`")))
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.values.iter().skip(col).step_by(self.n_cols()).copied().collect()
    }

    /// Days `from..to` as a new frame.
    pub fn slice_days(&self, from: usize, to: usize) -> AlignedFrame {
        let c = self.n_cols();
        AlignedFrame {
            start_date: self.date(from),
            columns: self.columns.clone(),
            values: self.values[from * c..to * c].to_vec(),
        }
    }

    /// CSV with a `date` column followed by the frame columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::data("frame csv", e.to_string());
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(to_err)?;
        for (d, row) in self.values.chunks(self.n_cols()).enumerate() {
            let mut rec = vec![self.date(d).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("frame csv", e))?;
        Ok(())
    }
}

/// Interpolates then imputes each of `columns`, in that order, producing a
/// gap-free frame. Every column must exist in `daily`.
pub fn fill_gaps(daily: &DailyTable, columns: &[&str]) -> Result<AlignedFrame> {
    let mut filled = Vec::with_capacity(columns.len());
    for &name in columns {
        let s = daily
            .columns
            .get(name)
            .ok_or_else(|| Error::data(name, "missing column"))?;
        let s = if s.present() >= 2 {
            interpolate_linear(s)?
        } else {
            s.clone()
        };
        let s = impute_mean(&s).map_err(|e| Error::data(name, e.to_string()))?;
        filled.push(s.complete().expect("imputed series is complete"));
    }
    let mut values = Vec::with_capacity(daily.n_days * columns.len());
    for d in 0..daily.n_days {
        values.extend(filled.iter().map(|c| c[d]));
    }
    AlignedFrame::new(
        daily.start_date,
        columns.iter().map(|c| c.to_string()).collect(),
        values,
    )
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Statistics of `frame`; std is clamped below at [`EPSILON_STD`].
    pub fn fit(frame: &AlignedFrame) -> Self {
        let n = frame.n_days() as f64;
        let mut mean = Vec::with_capacity(frame.n_cols());
        let mut std = Vec::with_capacity(frame.n_cols());
        for c in 0..frame.n_cols() {
            let col = frame.column(c);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(EPSILON_STD));
        }
        NormalizationStats {
            columns: frame.columns.clone(),
            mean,
            std,
        }
    }

    /// Divisor used for column `i`; a clamped column is scaled by 1.
    pub fn scale(&self, i: usize) -> f64 {
        if self.std[i] <= EPSILON_STD {
            1.0
        } else {
            self.std[i]
        }
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no statistics for `{name}`")))
    }

    /// Restricted to `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<NormalizationStats> {
        let idx = names.iter().map(|n| self.index(n)).collect::<Result<Vec<_>>>()?;
        Ok(NormalizationStats {
            columns: names.to_vec(),
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.columns.len() || self.std.len() != self.columns.len() {
            return Err(Error::Shape("normalization statistics lengths differ".into()));
        }
        if self.std.iter().any(|&s| !(s >= EPSILON_STD && s.is_finite())) {
            return Err(Error::InvalidArgument("standard deviation below clamp".into()));
        }
        Ok(())
    }

    /// `column,mean,std` with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("normalization stats", e);
        writeln!(w, "column,mean,std").map_err(io)?;
        for ((c, m), s) in self.columns.iter().zip(&self.mean).zip(&self.std) {
            writeln!(w, "{c},{m:.16e},{s:.16e}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut stats = NormalizationStats {
            columns: vec![],
            mean: vec![],
            std: vec![],
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data("normalization stats", e.to_string()))?;
            let num = |i: usize| {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::data("normalization stats", "bad number"))
            };
            stats.columns.push(rec.get(0).unwrap_or_default().to_string());
            stats.mean.push(num(1)?);
            stats.std.push(num(2)?);
        }
        stats.validate()?;
        Ok(stats)
    }
}

fn check_columns(frame: &AlignedFrame, stats: &NormalizationStats) -> Result<()> {
    if frame.columns != stats.columns {
        return Err(Error::Shape(format!(
            "frame columns {:?} vs statistics {:?}",
            frame.columns, stats.columns
        )));
    }
    Ok(())
}

/// `(x − mean) / std` per column.
pub fn normalize_zscore(frame: &AlignedFrame, stats: &NormalizationStats) -> Result<AlignedFrame> {
    check_columns(frame, stats)?;
    let c = frame.n_cols();
    let values = frame
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - stats.mean[i % c]) / stats.scale(i % c))
        .collect();
    AlignedFrame::new(frame.start_date, frame.columns.clone(), values)
}

/// Inverse of [`normalize_zscore`].
pub fn denormalize(frame: &AlignedFrame, stats: &NormalizationStats) -> Result<AlignedFrame> {
    check_columns(frame, stats)?;
    let c = frame.n_cols();
    let values = frame
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| v * stats.scale(i % c) + stats.mean[i % c])
        .collect();
    AlignedFrame::new(frame.start_date, frame.columns.clone(), values)
}

/// First `floor(n · train_fraction)` days for training, the rest for test.
/// Both partitions must hold at least `min_days`.
pub fn split_chronological(
    frame: &AlignedFrame,
    train_fraction: f64,
    min_days: usize,
) -> Result<(AlignedFrame, AlignedFrame)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = frame.n_days();
    let cut = (n as f64 * train_fraction).floor() as usize;
    if cut < min_days || n - cut < min_days {
        return Err(Error::InvalidArgument(format!(
            "split of {n} days into {cut}/{} leaves a partition shorter than {min_days} days",
            n - cut
        )));
    }
    Ok((frame.slice_days(0, cut), frame.slice_days(cut, n)))
}

/// Fixed-length input/target windows cut from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window: usize,
    pub stride: usize,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    /// First day of each sample, relative to the source frame.
    pub start_days: Vec<usize>,
    /// `samples × window × inputs`, row-major.
    pub inputs: Vec<f64>,
    /// `samples × window × targets`, row-major.
    pub targets: Vec<f64>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.start_days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_days.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_columns.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_columns.len()
    }

    pub fn input_sample(&self, i: usize) -> &[f64] {
        let n = self.window * self.n_inputs();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target_sample(&self, i: usize) -> &[f64] {
        let n = self.window * self.n_targets();
        &self.targets[i * n..(i + 1) * n]
    }

    /// Stacks the selected samples into `[B, T, F]` and `[B, T, P]` tensors.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let (t, f, p) = (self.window, self.n_inputs(), self.n_targets());
        let x: Vec<f64> = indices
            .iter()
            .flat_map(|&i| self.input_sample(i).iter().copied())
            .collect();
        let y: Vec<f64> = indices
            .iter()
            .flat_map(|&i| self.target_sample(i).iter().copied())
            .collect();
        let b = indices.len();
        (
            Tensor::new(vec![b, t, f], x).expect("batch shape"),
            Tensor::new(vec![b, t, p], y).expect("batch shape"),
        )
    }

    pub fn all(&self) -> (Tensor, Tensor) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

pub fn make_windows(
    frame: &AlignedFrame,
    window: usize,
    stride: usize,
    input_cols: &[String],
    target_cols: &[String],
) -> Result<WindowedDataset> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    let n = frame.n_days();
    if n < window {
        return Err(Error::InvalidArgument(format!(
            "frame shorter than window ({n} < {window} days)"
        )));
    }
    let ic = input_cols
        .iter()
        .map(|c| frame.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let tc = target_cols
        .iter()
        .map(|c| frame.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let start_days: Vec<usize> = (0..=n - window).step_by(stride).collect();
    let mut inputs = Vec::with_capacity(start_days.len() * window * ic.len());
    let mut targets = Vec::with_capacity(start_days.len() * window * tc.len());
    for &s in &start_days {
        for d in s..s + window {
            inputs.extend(ic.iter().map(|&c| frame.get(d, c)));
            targets.extend(tc.iter().map(|&c| frame.get(d, c)));
        }
    }
    Ok(WindowedDataset {
        window,
        stride,
        input_columns: input_cols.to_vec(),
        target_columns: target_cols.to_vec(),
        start_days,
        inputs,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub train_fraction: f64,
    pub window: usize,
    pub stride: usize,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            train_fraction: 0.8,
            window: 730,
            stride: 30,
            input_columns: crate::ingest::INPUT_COLUMNS.map(String::from).to_vec(),
            target_columns: vec![crate::ingest::O3.into(), crate::ingest::CO.into()],
        }
    }
}

/// Everything downstream stages need from one raw table.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Gap-free, physical units, every schema column.
    pub frame: AlignedFrame,
    pub train: AlignedFrame,
    pub test: AlignedFrame,
    /// Fitted on `train` only.
    pub stats: NormalizationStats,
    pub train_windows: WindowedDataset,
    pub test_windows: WindowedDataset,
}

pub fn prepare(raw: &RawTable, columns: &[&str], cfg: &PrepConfig) -> Result<Prepared> {
    let daily = resample_daily(raw)?;
    let frame = fill_gaps(&daily, columns)?;
    let (train, test) = split_chronological(&frame, cfg.train_fraction, cfg.window)?;
    let stats = NormalizationStats::fit(&train);
    prepare_with_stats(frame, train, test, stats, cfg)
}

/// Like [`prepare`] but normalizes with previously fitted statistics.
pub fn prepare_with(
    raw: &RawTable,
    columns: &[&str],
    stats: NormalizationStats,
    cfg: &PrepConfig,
) -> Result<Prepared> {
    let daily = resample_daily(raw)?;
    let frame = fill_gaps(&daily, columns)?;
    let (train, test) = split_chronological(&frame, cfg.train_fraction, cfg.window)?;
    prepare_with_stats(frame, train, test, stats, cfg)
}

fn prepare_with_stats(
    frame: AlignedFrame,
    train: AlignedFrame,
    test: AlignedFrame,
    stats: NormalizationStats,
    cfg: &PrepConfig,
) -> Result<Prepared> {
    let train_n = normalize_zscore(&train, &stats)?;
    let test_n = normalize_zscore(&test, &stats)?;
    let train_windows = make_windows(
        &train_n,
        cfg.window,
        cfg.stride,
        &cfg.input_columns,
        &cfg.target_columns,
    )?;
    let test_windows = make_windows(
        &test_n,
        cfg.window,
        cfg.stride,
        &cfg.input_columns,
        &cfg.target_columns,
    )?;
    Ok(Prepared {
        frame,
        train,
        test,
        stats,
        train_windows,
        test_windows,
    })
}
