//! Property tests for ingestion and gap filling against naive oracles.

use std::collections::BTreeMap;

use aqf::ingest::{merge_tables, read_source_csv, table1_schema, write_raw_csv, RawTable};
use aqf::preprocess::{impute_mean, interpolate_linear, TimeSeries};
use aqf::rng;
use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scans outward from each gap for its neighbours.
fn naive_interpolate(t: &[i64], x: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|i| {
            if x[i].is_some() {
                return x[i];
            }
            let left = (0..i).rev().find(|&j| x[j].is_some())?;
            let right = (i + 1..x.len()).find(|&j| x[j].is_some())?;
            let (xl, xr) = (x[left].unwrap(), x[right].unwrap());
            let w = (t[i] - t[left]) as f64 / (t[right] - t[left]) as f64;
            Some(xl * (1.0 - w) + xr * w)
        })
        .collect()
}

fn naive_impute(x: &[Option<f64>]) -> Vec<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for v in x.iter().flatten() {
        sum += v;
        n += 1;
    }
    x.iter().map(|v| v.unwrap_or(sum / n as f64)).collect()
}

fn random_series(r: &mut ChaCha8Rng, min_present: usize) -> TimeSeries {
    let n = r.gen_range(min_present.max(2)..80);
    let mut t = Vec::with_capacity(n);
    let mut day = r.gen_range(-100..100);
    for _ in 0..n {
        t.push(day);
        day += r.gen_range(1..4);
    }
    let rate = r.gen_range(0.0..0.7);
    let mut x: Vec<Option<f64>> = (0..n)
        .map(|_| (!r.gen_bool(rate)).then(|| r.gen_range(-1e3..1e3)))
        .collect();
    let mut present = x.iter().flatten().count();
    while present < min_present {
        let i = r.gen_range(0..n);
        if x[i].is_none() {
            x[i] = Some(r.gen_range(-1e3..1e3));
            present += 1;
        }
    }
    TimeSeries::new(t, x).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn interpolation_matches_oracle() {
    let mut r = rng::stream(1, &[]);
    for _ in 0..1000 {
        let s = random_series(&mut r, 2);
        let got = interpolate_linear(&s).unwrap();
        let want = naive_interpolate(&s.t, &s.x);
        for (g, w) in got.x.iter().zip(&want) {
            match (g, w) {
                (Some(g), Some(w)) => assert!(close(*g, *w), "{g} vs {w}"),
                (None, None) => {}
                _ => panic!("gap pattern differs: {g:?} vs {w:?}"),
            }
        }
    }
}

#[test]
fn imputation_matches_oracle() {
    let mut r = rng::stream(2, &[]);
    for _ in 0..1000 {
        let s = random_series(&mut r, 1);
        let got = impute_mean(&s).unwrap().complete().unwrap();
        for (g, w) in got.iter().zip(naive_impute(&s.x)) {
            assert!(close(*g, w));
        }
    }
}

#[test]
fn interpolation_is_exact_on_lines() {
    let mut r = rng::stream(3, &[]);
    for _ in 0..200 {
        let (a, b) = (r.gen_range(-5.0..5.0), r.gen_range(-100.0..100.0));
        let s = random_series(&mut r, 2);
        let line: Vec<Option<f64>> = s
            .t
            .iter()
            .zip(&s.x)
            .map(|(&t, v)| v.map(|_| a * t as f64 + b))
            .collect();
        let s = TimeSeries::new(s.t.clone(), line).unwrap();
        let filled = interpolate_linear(&s).unwrap();
        for (t, v) in filled.t.iter().zip(&filled.x) {
            if let Some(v) = v {
                assert!((v - (a * *t as f64 + b)).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

#[test]
fn imputation_preserves_mean() {
    let mut r = rng::stream(4, &[]);
    for _ in 0..1000 {
        let s = random_series(&mut r, 1);
        let present: Vec<f64> = s.x.iter().flatten().copied().collect();
        let before = present.iter().sum::<f64>() / present.len() as f64;
        let filled = impute_mean(&s).unwrap().complete().unwrap();
        let after = filled.iter().sum::<f64>() / filled.len() as f64;
        assert!(close(before, after), "{before} vs {after}");
    }
}

fn table_strategy(names: &'static [&'static str]) -> impl Strategy<Value = RawTable> {
    prop::collection::btree_set(0i64..5_000, 1..30).prop_flat_map(move |secs| {
        let n = secs.len();
        let cols = prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.8, -1e6f64..1e6), n),
            names.len(),
        );
        (Just(secs), cols).prop_map(move |(secs, cols)| {
            let ts = secs
                .iter()
                .map(|s| Utc.timestamp_opt(1_600_000_000 + s * 3600, 0).unwrap())
                .collect();
            let columns: BTreeMap<String, Vec<Option<f64>>> = names
                .iter()
                .map(|n| n.to_string())
                .zip(cols)
                .collect();
            RawTable::new(ts, columns).unwrap()
        })
    })
}

const NOAA: &[&str] = &["temperature_c", "pressure_mbar"];
const EPA: &[&str] = &["o3_ppm", "no2_ppb"];

proptest! {
    #[test]
    fn merge_is_commutative(a in table_strategy(NOAA), b in table_strategy(EPA)) {
        // columns live in a sorted map, so equality is already up to order
        prop_assert_eq!(merge_tables(&a, &b).unwrap(), merge_tables(&b, &a).unwrap());
    }

    #[test]
    fn csv_round_trip_is_a_fixed_point(a in table_strategy(NOAA)) {
        let mut first = Vec::new();
        write_raw_csv(&a, &mut first).unwrap();
        let parsed = read_source_csv(first.as_slice(), "mem", &table1_schema()).unwrap();
        prop_assert_eq!(&parsed, &a);
        let mut second = Vec::new();
        write_raw_csv(&parsed, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}
