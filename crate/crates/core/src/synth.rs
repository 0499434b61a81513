//! Synthetic NOAA/EPA exports with a known feature→pollutant dependence.
//!
//! Each meteorological input is an AR(1) anomaly on top of a weaker seasonal
//! cycle, so no input can be rebuilt from the others' cycles.
//! Pollutant levels are an affine map of a driver signal built from the
//! standardized inputs, plus white noise. Inputs arrive several times a day,
//! pollutants once a day, and any cell can be missing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, write_raw_csv, RawTable, INPUT_COLUMNS, TARGET_COLUMNS};
use crate::rng;

/// Which standardized inputs drive the pollutants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// Temperature and relative humidity.
    TwoFeature,
    /// Temperature only.
    SingleFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub readings_per_day: usize,
    /// Probability that any single cell is blank.
    pub missing_rate: f64,
    /// Pollutant noise, in units of the driver's standard deviation.
    pub noise: f64,
    /// AR(1) coefficient of the input anomalies.
    pub persistence: f64,
    pub dependence: Dependence,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            start: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
            days: 3650,
            readings_per_day: 4,
            missing_rate: 0.02,
            noise: 0.1,
            persistence: 0.8,
            dependence: Dependence::TwoFeature,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days < 2 {
            return Err(Error::InvalidArgument("synthetic span needs at least 2 days".into()));
        }
        if self.readings_per_day == 0 || 24 % self.readings_per_day != 0 {
            return Err(Error::InvalidArgument("readings_per_day must divide 24".into()));
        }
        if !(0.0..0.5).contains(&self.missing_rate) {
            return Err(Error::InvalidArgument("missing_rate must lie in [0, 0.5)".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument("noise must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::InvalidArgument("persistence must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub noaa: RawTable,
    pub epa: RawTable,
}

/// (mean, seasonal amplitude, anomaly scale) in physical units.
fn physical(col: &str) -> (f64, f64, f64) {
    match col {
        ingest::TEMPERATURE => (15.0, 4.0, 6.0),
        ingest::WIND_SPEED => (3.5, 0.4, 1.0),
        ingest::WIND_DIRECTION => (200.0, 20.0, 50.0),
        ingest::RELATIVE_HUMIDITY => (60.0, 5.0, 10.0),
        ingest::PRECIPITABLE_WATER => (2.0, 0.3, 0.5),
        ingest::PRESSURE => (1013.0, 3.0, 6.0),
        ingest::O3 => (0.035, 0.0, 0.008),
        ingest::CO => (0.5, 0.0, 0.1),
        ingest::SO2 => (3.0, 0.0, 0.6),
        ingest::NO2 => (18.0, 0.0, 4.0),
        _ => unreachable!("unknown synthetic column {col}"),
    }
}

fn clamp(col: &str, v: f64) -> f64 {
    match col {
        ingest::WIND_DIRECTION => v.rem_euclid(360.0),
        ingest::RELATIVE_HUMIDITY => v.clamp(0.0, 100.0),
        ingest::WIND_SPEED | ingest::PRECIPITABLE_WATER => v.max(0.0),
        c if TARGET_COLUMNS.contains(&c) => v.max(0.05 * physical(c).0),
        _ => v,
    }
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Generates both exports. Same config, same tables.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.days;
    let phi = cfg.persistence;
    let innov = (1.0 - phi * phi).sqrt();

    // standardized daily state per input: seasonal + anomaly, unit scale
    let mut standardized = Vec::with_capacity(INPUT_COLUMNS.len());
    for (f, col) in INPUT_COLUMNS.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, &[rng::SYNTH, 0, f as u64]);
        let (_, amp, scale) = physical(col);
        let phase = f as f64 * 0.9;
        let mut z = normal(&mut r);
        let series: Vec<(f64, f64)> = (0..n)
            .map(|d| {
                z = phi * z + innov * normal(&mut r);
                let season = (2.0 * std::f64::consts::PI * d as f64 / 365.25 + phase).sin();
                (season * amp, z * scale)
            })
            .collect();
        standardized.push(series);
    }

    let unit = |f: usize, d: usize| {
        let (_, amp, scale) = physical(INPUT_COLUMNS[f]);
        let (s, a) = standardized[f][d];
        (s + a) / (amp * amp / 2.0 + scale * scale).sqrt()
    };
    let humidity = INPUT_COLUMNS
        .iter()
        .position(|c| *c == ingest::RELATIVE_HUMIDITY)
        .unwrap();
    let driver: Vec<f64> = (0..n)
        .map(|d| match cfg.dependence {
            Dependence::SingleFeature => unit(0, d),
            Dependence::TwoFeature => 0.8 * unit(0, d) - 0.6 * unit(humidity, d),
        })
        .collect();

    let mut gaps = rng::stream(cfg.seed, &[rng::SYNTH, 1]);
    let step = 24 / cfg.readings_per_day;
    let mut noaa_ts = Vec::with_capacity(n * cfg.readings_per_day);
    let mut noaa_cols: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut jitter = rng::stream(cfg.seed, &[rng::SYNTH, 2]);
    #[allow(clippy::needless_range_loop)]
    for d in 0..n {
        let date = cfg.start + Duration::days(d as i64);
        for k in 0..cfg.readings_per_day {
            let ndt = date.and_hms_opt((k * step) as u32, 0, 0).unwrap();
            noaa_ts.push(Utc.from_utc_datetime(&ndt));
        }
        for (f, col) in INPUT_COLUMNS.iter().enumerate() {
            let (mean, _, scale) = physical(col);
            let (s, a) = standardized[f][d];
            // intraday offsets sum to zero so the daily mean is the latent value
            let mut offs: Vec<f64> = (0..cfg.readings_per_day)
                .map(|_| 0.2 * scale * normal(&mut jitter))
                .collect();
            let centre = offs.iter().sum::<f64>() / offs.len() as f64;
            offs.iter_mut().for_each(|o| *o -= centre);
            let cells = noaa_cols.entry(col.to_string()).or_default();
            for o in offs {
                let v = round4(clamp(col, mean + s + a + o));
                cells.push((!gaps.gen_bool(cfg.missing_rate)).then_some(v));
            }
        }
    }

    let mut noise = rng::stream(cfg.seed, &[rng::SYNTH, 3]);
    let mut epa_cols: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for col in TARGET_COLUMNS {
        let (mean, _, scale) = physical(col);
        let cells = (0..n)
            .map(|d| {
                let v = mean + scale * (driver[d] + cfg.noise * normal(&mut noise));
                let v = round_sig(clamp(col, v));
                (!gaps.gen_bool(cfg.missing_rate)).then_some(v)
            })
            .collect();
        epa_cols.insert(col.to_string(), cells);
    }
    let epa_ts = (0..n)
        .map(|d| {
            let date = cfg.start + Duration::days(d as i64);
            Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).unwrap())
        })
        .collect();

    Ok(SynthData {
        noaa: RawTable::new(noaa_ts, noaa_cols)?,
        epa: RawTable::new(epa_ts, epa_cols)?,
    })
}

/// Rounds to 6 significant digits so tiny concentrations keep precision.
fn round_sig(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let mag = 10f64.powi(5 - v.abs().log10().floor() as i32);
    (v * mag).round() / mag
}

/// Writes `noaa.csv` and `epa.csv` into `dir` and returns their paths.
pub fn write_fixture(data: &SynthData, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let noaa = dir.join("noaa.csv");
    let epa = dir.join("epa.csv");
    for (path, table) in [(&noaa, &data.noaa), (&epa, &data.epa)] {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_raw_csv(table, BufWriter::new(f))?;
    }
    Ok((noaa, epa))
}
