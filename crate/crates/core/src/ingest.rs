//! CSV ingestion for the ten daily variables (six meteorological inputs,
//! four pollutant targets).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEMPERATURE: &str = "temperature_c";
pub const WIND_SPEED: &str = "wind_speed_ms";
pub const WIND_DIRECTION: &str = "wind_direction_deg";
pub const RELATIVE_HUMIDITY: &str = "relative_humidity_pct";
pub const PRECIPITABLE_WATER: &str = "precipitable_water_cm";
pub const PRESSURE: &str = "pressure_mbar";
pub const O3: &str = "o3_ppm";
pub const CO: &str = "co_ppm";
pub const SO2: &str = "so2_ppb";
pub const NO2: &str = "no2_ppb";

/// Meteorological inputs, in canonical order.
pub const INPUT_COLUMNS: [&str; 6] = [
    TEMPERATURE,
    WIND_SPEED,
    WIND_DIRECTION,
    RELATIVE_HUMIDITY,
    PRECIPITABLE_WATER,
    PRESSURE,
];

/// Pollutant targets, in canonical order.
pub const TARGET_COLUMNS: [&str; 4] = [O3, CO, SO2, NO2];

/// Row order of the published metrics table.
pub const REPORT_ORDER: [&str; 4] = [SO2, NO2, O3, CO];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Noaa,
    Epa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    InputFeature,
    TargetPollutant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub name: String,
    pub source: Source,
    pub units: String,
    pub role: Role,
}

/// The ten variables with their sources and units.
pub fn table1_schema() -> Vec<VariableSchema> {
    let v = |name: &str, source, units: &str, role| VariableSchema {
        name: name.to_string(),
        source,
        units: units.to_string(),
        role,
    };
    use Role::*;
    use Source::*;
    vec![
        v(TEMPERATURE, Noaa, "C", InputFeature),
        v(WIND_SPEED, Noaa, "m/s", InputFeature),
        v(WIND_DIRECTION, Noaa, "degrees", InputFeature),
        v(RELATIVE_HUMIDITY, Noaa, "%", InputFeature),
        v(PRECIPITABLE_WATER, Noaa, "cm", InputFeature),
        v(PRESSURE, Noaa, "mbar", InputFeature),
        v(O3, Epa, "ppm", TargetPollutant),
        v(CO, Epa, "ppm", TargetPollutant),
        v(SO2, Epa, "ppb", TargetPollutant),
        v(NO2, Epa, "ppb", TargetPollutant),
    ]
}

/// Timestamped columns of optional readings, possibly sub-daily.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    timestamps: Vec<DateTime<Utc>>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl RawTable {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        columns: BTreeMap<String, Vec<Option<f64>>>,
    ) -> Result<Self> {
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::data(
                format!("row {}", w + 2),
                "non-monotonic timestamp",
            ));
        }
        for (name, col) in &columns {
            if col.len() != timestamps.len() {
                return Err(Error::Shape(format!(
                    "column {name} has {} values for {} timestamps",
                    col.len(),
                    timestamps.len()
                )));
            }
        }
        Ok(RawTable {
            timestamps,
            columns,
        })
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn columns(&self) -> &BTreeMap<String, Vec<Option<f64>>> {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn missing_cells(&self) -> usize {
        self.columns
            .values()
            .map(|c| c.iter().filter(|v| v.is_none()).count())
            .sum()
    }
}

/// Parses an ISO-8601 date or date-time. Values without an offset are UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::<FixedOffset>::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(ndt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&ndt));
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap()))
}

fn is_absent(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Reads a source export. Unknown columns are skipped with a warning.
pub fn parse_source_csv(path: &Path, schema: &[VariableSchema]) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_source_csv(file, &path.display().to_string(), schema)
}

/// [`parse_source_csv`] over any reader; `name` labels error messages.
pub fn read_source_csv<R: Read>(reader: R, name: &str, schema: &[VariableSchema]) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(name, format!("unreadable header: {e}")))?
        .clone();
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| Error::data(name, "missing `timestamp` column"))?;

    let known: BTreeSet<&str> = schema.iter().map(|v| v.name.as_str()).collect();
    let mut picked = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == ts_col {
            continue;
        }
        if known.contains(h) {
            picked.push((i, h.to_string()));
        } else {
            warn!("{name}: ignoring unknown column `{h}`");
        }
    }

    let mut timestamps = Vec::new();
    let mut columns: BTreeMap<String, Vec<Option<f64>>> =
        picked.iter().map(|(_, h)| (h.clone(), Vec::new())).collect();
    for (row, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let rec = rec.map_err(|e| Error::data(format!("{name} line {line}"), e.to_string()))?;
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| {
            Error::data(
                format!("{name} line {line}"),
                format!("unparsable timestamp `{raw_ts}`"),
            )
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::data(
                    format!("{name} line {line}"),
                    "non-monotonic timestamp",
                ));
            }
        }
        timestamps.push(ts);
        for (i, h) in &picked {
            let cell = rec.get(*i).unwrap_or("");
            let value = if is_absent(cell) {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    Error::data(
                        format!("{name} line {line} column {h}"),
                        format!("non-numeric cell `{cell}`"),
                    )
                })?)
            };
            columns.get_mut(h).unwrap().push(value);
        }
    }
    RawTable::new(timestamps, columns)
}

/// Writes `timestamp` plus every column; absent cells are empty.
pub fn write_raw_csv<W: Write>(table: &RawTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::data("csv output", e.to_string());
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.columns.keys().cloned());
    w.write_record(&header).map_err(to_err)?;
    for (i, ts) in table.timestamps.iter().enumerate() {
        let mut rec = vec![ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
        rec.extend(
            table
                .columns
                .values()
                .map(|c| c[i].map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Outer join on timestamps. Column sets must be disjoint.
pub fn merge_tables(a: &RawTable, b: &RawTable) -> Result<RawTable> {
    if let Some(dup) = a.columns.keys().find(|k| b.columns.contains_key(*k)) {
        return Err(Error::data("merge", format!("duplicate column `{dup}`")));
    }
    let timestamps: Vec<DateTime<Utc>> = a
        .timestamps
        .iter()
        .chain(&b.timestamps)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut columns = BTreeMap::new();
    for src in [a, b] {
        let pos: BTreeMap<DateTime<Utc>, usize> = src
            .timestamps
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        for (name, col) in &src.columns {
            let merged = timestamps
                .iter()
                .map(|t| pos.get(t).and_then(|&i| col[i]))
                .collect();
            columns.insert(name.clone(), merged);
        }
    }
    RawTable::new(timestamps, columns)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeFlag {
    pub column: String,
    pub row: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub missing_columns: Vec<String>,
    /// Fraction of absent cells per present schema column.
    pub absent_fraction: BTreeMap<String, f64>,
    pub range_flags: Vec<RangeFlag>,
}

impl ValidationReport {
    pub fn issues(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .missing_columns
            .iter()
            .map(|c| format!("missing column: {c}"))
            .collect();
        out.extend(
            self.absent_fraction
                .iter()
                .filter(|(_, &f)| f >= 1.0)
                .map(|(c, _)| format!("no data in column: {c}")),
        );
        out.extend(self.range_flags.iter().map(|f| {
            format!("out of range: {} = {} at row {}", f.column, f.value, f.row)
        }));
        out
    }

    pub fn is_clean(&self) -> bool {
        self.issues().is_empty()
    }
}

fn in_range(column: &str, v: f64) -> bool {
    match column {
        RELATIVE_HUMIDITY => (0.0..=100.0).contains(&v),
        WIND_DIRECTION => (0.0..360.0).contains(&v),
        _ => v.is_finite(),
    }
}

pub fn validate_schema(t: &RawTable, schema: &[VariableSchema]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for var in schema {
        let Some(col) = t.columns.get(&var.name) else {
            report.missing_columns.push(var.name.clone());
            continue;
        };
        let absent = col.iter().filter(|v| v.is_none()).count();
        let frac = if col.is_empty() {
            1.0
        } else {
            absent as f64 / col.len() as f64
        };
        report.absent_fraction.insert(var.name.clone(), frac);
        for (row, v) in col.iter().enumerate() {
            if let Some(v) = *v {
                if !in_range(&var.name, v) {
                    report.range_flags.push(RangeFlag {
                        column: var.name.clone(),
                        row,
                        value: v,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_csv() -> String {
        let mut s = String::from("timestamp");
        for v in table1_schema() {
            s.push(',');
            s.push_str(&v.name);
        }
        s.push('\n');
        for d in 1..=3 {
            s.push_str(&format!("2020-01-0{d}"));
            for i in 0..10 {
                s.push_str(&format!(",{}", d * 10 + i));
            }
            s.push('\n');
        }
        s
    }

    fn day(d: u32) -> DateTime<Utc> {
        parse_timestamp(&format!("2020-01-{d:02}")).unwrap()
    }

    fn table(days: std::ops::RangeInclusive<u32>, cols: &[&str]) -> RawTable {
        let ts: Vec<_> = days.clone().map(day).collect();
        let columns = cols
            .iter()
            .map(|c| (c.to_string(), days.clone().map(|d| Some(d as f64)).collect()))
            .collect();
        RawTable::new(ts, columns).unwrap()
    }

    #[test]
    fn schema_shape() {
        let s = table1_schema();
        assert_eq!(s.len(), 10);
        assert_eq!(s.iter().filter(|v| v.role == Role::InputFeature).count(), 6);
        assert!(s
            .iter()
            .filter(|v| v.role == Role::InputFeature)
            .all(|v| v.source == Source::Noaa));
        let units: Vec<&str> = s.iter().map(|v| v.units.as_str()).collect();
        assert_eq!(
            units,
            ["C", "m/s", "degrees", "%", "cm", "mbar", "ppm", "ppm", "ppb", "ppb"]
        );
    }

    #[test]
    fn parses_complete_file() {
        let t = read_source_csv(full_csv().as_bytes(), "mem", &table1_schema()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.columns().len(), 10);
        assert_eq!(t.missing_cells(), 0);
        assert_eq!(t.column(CO).unwrap()[1], Some(27.0));
    }

    #[test]
    fn absent_encodings() {
        let csv = "timestamp,co_ppm,o3_ppm\n2020-01-01,1,NA\n2020-01-02,,NaN\n2020-01-03,3,4\n";
        let t = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap();
        assert_eq!(t.column(CO).unwrap(), &[Some(1.0), None, Some(3.0)]);
        assert_eq!(t.column(O3).unwrap(), &[None, None, Some(4.0)]);
    }

    #[test]
    fn unknown_columns_ignored() {
        let csv = "timestamp,station,co_ppm\n2020-01-01,LA,1\n";
        let t = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap();
        assert_eq!(t.columns().keys().collect::<Vec<_>>(), vec![CO]);
    }

    #[test]
    fn non_monotonic_rejected() {
        let csv = "timestamp,co_ppm\n2020-01-02,1\n2020-01-01,2\n";
        let err = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap_err();
        assert!(err.to_string().contains("non-monotonic timestamp"), "{err}");
    }

    #[test]
    fn bad_cells_rejected() {
        let csv = "timestamp,co_ppm\nyesterday,1\n";
        let err = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap_err();
        assert!(err.to_string().contains("unparsable timestamp"));
        let csv = "timestamp,co_ppm\n2020-01-01,high\n";
        let err = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap_err();
        assert!(err.to_string().contains("co_ppm"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_source_csv(Path::new("/no/such/file.csv"), &table1_schema()).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.csv"));
    }

    #[test]
    fn timestamp_forms() {
        let a = parse_timestamp("2020-03-01T06:00:00Z").unwrap();
        let b = parse_timestamp("2020-03-01T06:00:00").unwrap();
        let c = parse_timestamp("2020-03-01 06:00:00").unwrap();
        let d = parse_timestamp("2020-03-01T08:00:00+02:00").unwrap();
        assert!(a == b && b == c && c == d);
        assert!(parse_timestamp("2020-03-01").is_some());
        assert!(parse_timestamp("03/01/2020").is_none());
    }

    #[test]
    fn merge_noaa_and_epa() {
        let noaa = table(1..=5, &INPUT_COLUMNS);
        let epa = table(3..=7, &TARGET_COLUMNS);
        let m = merge_tables(&noaa, &epa).unwrap();
        assert_eq!(m.len(), 7);
        assert_eq!(m.columns().len(), 10);
        assert_eq!(m.column(TEMPERATURE).unwrap()[5], None);
        assert_eq!(m.column(O3).unwrap()[0], None);
        assert_eq!(m.column(O3).unwrap()[2], Some(3.0));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let noaa = table(1..=5, &INPUT_COLUMNS);
        assert_eq!(merge_tables(&noaa, &RawTable::default()).unwrap(), noaa);
    }

    #[test]
    fn merge_duplicate_column() {
        let a = table(1..=2, &[O3]);
        let b = table(1..=2, &[O3]);
        let err = merge_tables(&a, &b).unwrap_err();
        assert!(err.to_string().contains("duplicate column"));
    }

    #[test]
    fn validation() {
        let t = read_source_csv(full_csv().as_bytes(), "mem", &table1_schema()).unwrap();
        // wind direction 12..32 and humidity 13..33 are in range
        assert!(validate_schema(&t, &table1_schema()).is_clean());

        let csv = "timestamp,relative_humidity_pct\n2020-01-01,140\n";
        let t = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap();
        let r = validate_schema(&t, &table1_schema());
        assert_eq!(r.range_flags.len(), 1);
        assert_eq!(r.range_flags[0].column, RELATIVE_HUMIDITY);
        assert!(r.issues().contains(&"missing column: so2_ppb".to_string()));

        let csv = "timestamp,wind_direction_deg\n2020-01-01,360\n";
        let t = read_source_csv(csv.as_bytes(), "mem", &table1_schema()).unwrap();
        assert_eq!(validate_schema(&t, &table1_schema()).range_flags.len(), 1);
    }
}
