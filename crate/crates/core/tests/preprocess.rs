mod common;

use chrono::{Duration, TimeZone, Timelike, Utc};
use cmlrain::ingest::{TimeSeries, Unit};
use cmlrain::preprocess::{build_features, downsample_rsl, impute, quantile, time_features, RobustScaler, SplitBounds};
use cmlrain::Error;
use common::oracles;
use proptest::prelude::*;

fn t0() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2015, 6, 1, 0, 0, 0).unwrap()
}

#[test]
fn downsample_hand_cases() {
    oracles::downsample_hand_cases();
}

#[test]
fn default_split_has_no_leakage() {
    oracles::default_split_has_no_leakage();
}

#[test]
fn downsample_rejects_wrong_cadence_and_short_input() {
    let s = TimeSeries::from_values(t0(), 60, &[1.0; 12], Unit::Dbm).unwrap();
    assert!(matches!(downsample_rsl(&s), Err(Error::WrongStep { expected_s: 10, actual_s: 60 })));
    let s = TimeSeries::from_values(t0(), 10, &[1.0; 5], Unit::Dbm).unwrap();
    assert!(matches!(downsample_rsl(&s), Err(Error::TooSparse { needed: 6, have: 5 })));
}

#[test]
fn impute_recovers_quadratic() {
    let s = TimeSeries::new(t0(), 60, vec![Some(0.0), Some(1.0), None, Some(9.0), Some(16.0)], Unit::Dbm).unwrap();
    let out = impute(&s, 2).unwrap().complete().unwrap();
    assert!((out[2] - 4.0).abs() < 1e-9, "{}", out[2]);
}

#[test]
fn scaler_degenerate_column_passes_through_centered() {
    let s = RobustScaler::fit(&[5.0; 10]).unwrap();
    assert!(s.degenerate);
    assert_eq!(s.transform(5.0), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaler_matches_quantile_oracle(xs in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let s = RobustScaler::fit(&xs).unwrap();
        let med = oracles::naive_quantile(&xs, 0.5);
        let iqr = oracles::naive_quantile(&xs, 0.75) - oracles::naive_quantile(&xs, 0.25);
        prop_assert!((s.median - med).abs() < 1e-12);
        if !s.degenerate {
            prop_assert!((s.iqr - iqr).abs() < 1e-12);
            for &x in &xs {
                prop_assert!((s.transform(x) - (x - med) / iqr).abs() < 1e-12);
                prop_assert!((s.inverse(s.transform(x)) - x).abs() < 1e-9);
            }
        }
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        for q in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
            prop_assert!((quantile(&sorted, q) - oracles::naive_quantile(&xs, q)).abs() < 1e-12);
        }
    }

    #[test]
    fn time_features_lie_on_unit_circles(minutes in prop::collection::vec(0i64..10_000_000, 1..50)) {
        let times: Vec<_> = minutes.iter().map(|&m| t0() + Duration::minutes(m)).collect();
        let [sh, ch, sm, cm] = time_features(&times);
        for i in 0..times.len() {
            prop_assert!((sh[i] * sh[i] + ch[i] * ch[i] - 1.0).abs() < 1e-12);
            prop_assert!((sm[i] * sm[i] + cm[i] * cm[i] - 1.0).abs() < 1e-12);
            let h = std::f64::consts::TAU * times[i].hour() as f64 / 24.0;
            prop_assert!((sh[i] - h.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn downsample_is_block_mean(xs in prop::collection::vec(-90.0f64..-30.0, 6..120)) {
        let s = TimeSeries::from_values(t0(), 10, &xs, Unit::Dbm).unwrap();
        let d = downsample_rsl(&s).unwrap().complete().unwrap();
        prop_assert_eq!(d.len(), xs.len() / 6);
        for (k, v) in d.iter().enumerate() {
            let mean = xs[6 * k..6 * k + 6].iter().sum::<f64>() / 6.0;
            prop_assert!((v - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn scalers_are_fit_on_training_rows_only() {
    let bounds = SplitBounds::compressed(t0().date_naive(), 2, 1, 1);
    let rows = 6 * 1440;
    // training days hold small values, later days a large shift
    let col: Vec<f64> = (0..rows).map(|i| if i < 2 * 1440 { (i % 7) as f64 } else { 1000.0 + (i % 7) as f64 }).collect();
    let fm = build_features(t0(), &[("a".into(), col.clone())], bounds.train).unwrap();
    let train_only = RobustScaler::fit(&col[..2 * 1440]).unwrap();
    assert_eq!(fm.scalers[0].as_ref().unwrap(), &train_only);
}

#[test]
fn overlapping_or_touching_splits_are_rejected() {
    let mut b = SplitBounds::default();
    b.val.first = b.train.last;
    assert!(matches!(b.validate(), Err(Error::OverlappingSplits(_))));
    let mut b = SplitBounds::default();
    b.val.first = b.train.last + Duration::days(1);
    assert!(matches!(b.validate(), Err(Error::BufferTooSmall(_))));
}
