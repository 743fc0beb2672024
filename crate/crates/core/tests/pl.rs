mod common;

use cmlrain::ingest::{synth_with, SynthConfig};
use cmlrain::pl::{invert_power_law, pl_estimate, power_law_attenuation, CoefficientTable, PlConfig};
use cmlrain::Error;
use common::oracles;
use proptest::prelude::*;

#[test]
fn forward_then_invert_recovers_rate_on_grid() {
    oracles::pl_round_trip_grid();
}

proptest! {
    #[test]
    fn round_trip_random(r in 0.01f64..200.0, a in 0.001f64..2.0, b in 0.8f64..1.3, l in 0.1f64..30.0, waa in 0.0f64..2.0) {
        let att = power_law_attenuation(r, a, b, l) + waa;
        let back = invert_power_law(att, a, b, l, waa);
        prop_assert!(((back - r) / r).abs() < 1e-10);
    }

    #[test]
    fn inversion_is_monotone_and_clamped(a1 in 0.0f64..30.0, a2 in 0.0f64..30.0, waa in 0.0f64..3.0) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let f = |x| invert_power_law(x, 0.37, 0.85, 2.0, waa);
        prop_assert!(f(lo) <= f(hi));
        prop_assert!(f(waa.min(lo)) == 0.0);
    }
}

#[test]
fn clean_synthetic_data_is_recovered_exactly() {
    for seed in [1, 2, 3] {
        let rmse = oracles::clean_pl_rmse(seed, 3);
        assert!(rmse < 1e-6, "seed {seed}: rmse {rmse}");
    }
}

#[test]
fn clean_recovery_with_default_table() {
    // the generator draws its coefficients from the same default table
    let d = synth_with(&SynthConfig::clean(5, 2));
    let links = oracles::minute_links(&d);
    let cfg = PlConfig { waa_intercept_db: 0.0, waa_slope_db_per_ghz: 0.0, wet_threshold_db: Some(0.0), ..Default::default() };
    let grid = links[0].1.timestamps();
    let est = pl_estimate(&links, &grid, &cfg).unwrap().complete().unwrap();
    let truth = d.truth.complete().unwrap();
    let worst = est.iter().zip(&truth).map(|(e, t)| (e - t).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn dry_record_estimates_zero() {
    let mut c = SynthConfig::dry(4, 1);
    c.noise_std_db = 0.1;
    let d = synth_with(&c);
    let links = oracles::minute_links(&d);
    let rsl: Vec<Vec<f64>> = links.iter().map(|(_, s)| s.complete().unwrap()).collect();
    let refs: Vec<&[f64]> = rsl.iter().map(Vec::as_slice).collect();
    let cfg = PlConfig::default().calibrate(&refs).unwrap();
    let grid = links[0].1.timestamps();
    let est = pl_estimate(&links, &grid, &cfg).unwrap().complete().unwrap();
    // noise alone rarely crosses the threshold and the offset absorbs small excursions
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    assert!(mean < 0.05, "{mean}");
}

#[test]
fn frequency_outside_table_is_reported() {
    let t = CoefficientTable::default();
    assert!(matches!(t.lookup(80.0), Err(Error::MissingCoefficient(f)) if f == 80.0));
    assert!(t.lookup(38.3).is_ok());
}
