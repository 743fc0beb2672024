//! Naive references and shared oracle checks.

use std::collections::HashSet;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use cmlrain::ingest::{synth_with, LinkMeta, SynthConfig, SynthDataset, TimeSeries, Unit};
use cmlrain::eval::{detect_events, metrics};
use cmlrain::pl::{invert_power_law, pl_estimate, power_law_attenuation, CoeffEntry, CoefficientTable, PlConfig};
use cmlrain::preprocess::{build_features, chrono_split, downsample_rsl, DayRange, Split, SplitBounds};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2015, 6, 1, 0, 0, 0).unwrap()
}
use cmlrain::rng::SeedRng;

/// `(rmse, r2, pcc, mae)` by textbook formulas with separate passes.
pub fn naive_metrics(y: &[f64], p: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let mut my = 0.0;
    let mut mp = 0.0;
    for i in 0..y.len() {
        my += y[i];
        mp += p[i];
    }
    my /= n;
    mp /= n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut sae = 0.0;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vp = 0.0;
    for i in 0..y.len() {
        sse += (y[i] - p[i]).powi(2);
        sae += (y[i] - p[i]).abs();
        sst += (y[i] - my).powi(2);
        cov += (y[i] - my) * (p[i] - mp);
        vy += (y[i] - my).powi(2);
        vp += (p[i] - mp).powi(2);
    }
    ((sse / n).sqrt(), 1.0 - sse / sst, cov / (vy.sqrt() * vp.sqrt()), sae / n)
}

/// Event `(first, last)` minute indices by pairwise linking of wet minutes.
pub fn brute_force_events(rate: &[f64]) -> Vec<(usize, usize)> {
    let wet: Vec<usize> = (0..rate.len()).filter(|&i| rate[i] > 0.1).collect();
    let mut label: Vec<usize> = (0..wet.len()).collect();
    for a in 0..wet.len() {
        for b in a + 1..wet.len() {
            if wet[b] - wet[a] - 1 < 60 {
                let (la, lb) = (label[a], label[b]);
                for l in label.iter_mut() {
                    if *l == lb {
                        *l = la;
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (k, &l) in label.iter().enumerate() {
        let e = groups.entry(l).or_insert((wet[k], wet[k]));
        e.0 = e.0.min(wet[k]);
        e.1 = e.1.max(wet[k]);
    }
    let mut out: Vec<(usize, usize)> = groups.into_values().filter(|(s, e)| e - s + 1 >= 30).collect();
    out.sort();
    out
}

/// Alternating dry and wet blocks with lengths clustered around the 30 min
/// duration and 60 min gap thresholds; rates sit near the 0.1 mm/h line.
pub fn random_rate_series(seed: u64) -> Vec<f64> {
    let mut rng = SeedRng::new(seed);
    let n = 300 + (rng.uniform() * 900.0) as usize;
    let mut out = Vec::with_capacity(n);
    let mut wet = rng.uniform() < 0.5;
    while out.len() < n {
        let len = if wet {
            1 + (rng.uniform() * 45.0) as usize
        } else {
            1 + (rng.uniform() * 90.0) as usize
        };
        for _ in 0..len {
            let v = if wet {
                match (rng.uniform() * 10.0) as u32 {
                    0 => 0.1,
                    1 => 0.1000001,
                    _ => rng.uniform_in(0.1, 20.0),
                }
            } else {
                rng.uniform_in(0.0, 0.1)
            };
            out.push(v);
        }
        wet = !wet;
    }
    out.truncate(n);
    out
}

/// Linear-interpolation quantile on a sorted copy.
pub fn naive_quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Mean-of-six downsampling on hand-computed cases.
pub fn downsample_hand_cases() {
    let cases: [(&[Option<f64>], &[Option<f64>]); 4] = [
        (&[Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0), Some(6.0)], &[Some(3.5)]),
        (&[Some(-60.0); 12], &[Some(-60.0), Some(-60.0)]),
        (
            &[Some(0.0), Some(0.0), Some(0.0), Some(0.0), Some(0.0), Some(6.0), Some(1.0), Some(1.0)],
            &[Some(1.0)],
        ),
        (
            &[Some(1.0), None, Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(2.0), Some(2.0), Some(2.0), Some(2.0), Some(2.0), Some(2.0)],
            &[None, Some(2.0)],
        ),
    ];
    for (input, want) in cases {
        let s = TimeSeries::new(t0(), 10, input.to_vec(), Unit::Dbm).unwrap();
        let d = downsample_rsl(&s).unwrap();
        assert_eq!(d.step_s(), 60);
        assert_eq!(d.values(), want);
    }
}

/// Every window of the default split stays inside its own date range, and
/// no buffer-day minute is seen by any window.
pub fn default_split_has_no_leakage() {
    let bounds = SplitBounds::default();
    let start = t0();
    let rows = 92 * 1440;
    let col: Vec<f64> = (0..rows).map(|i| (i as f64 * 0.01).sin()).collect();
    let fm = build_features(start, &[("a".into(), col)], bounds.train).unwrap();
    let targets = vec![0.0; rows];
    let data = chrono_split(&fm, &targets, &bounds, 30).unwrap();

    let buffers = [NaiveDate::from_ymd_opt(2015, 8, 3).unwrap(), NaiveDate::from_ymd_opt(2015, 8, 21).unwrap()];
    let mut seen: [HashSet<usize>; 3] = Default::default();
    for (k, &(_, split)) in data.windows.iter().enumerate() {
        let range = bounds_of(&bounds, split);
        let rows = data.rows_of(k);
        assert_eq!(rows.clone().count(), 31);
        for r in rows {
            let t = data.time(r);
            assert!(range.contains(t), "window {k} ({split:?}) touches {t}");
            assert!(!buffers.contains(&t.date_naive()));
            seen[split as usize].insert(r);
        }
    }
    assert!(seen[0].is_disjoint(&seen[2]));
    assert!(seen[0].is_disjoint(&seen[1]));
    assert!(seen[1].is_disjoint(&seen[2]));
    // stride 1: every eligible end row yields a window
    let c = data.counts();
    assert_eq!(c.train, 63 * 1440 - 30);
    assert_eq!(c.val, 17 * 1440 - 30);
    assert_eq!(c.test, 10 * 1440 - 30);
}

fn bounds_of(b: &SplitBounds, s: Split) -> DayRange {
    match s {
        Split::Train => b.train,
        Split::Val => b.val,
        Split::Test => b.test,
    }
}


pub fn minute_links(d: &SynthDataset) -> Vec<(LinkMeta, TimeSeries)> {
    d.links.iter().map(|l| (l.meta.clone(), downsample_rsl(&l.rsl).unwrap())).collect()
}

/// Noise-free links with known coefficients and no wet-antenna offset.
/// RMSE of calibrated PL against true rain on a noise-free record.
pub fn clean_pl_rmse(seed: u64, days: usize) -> f64 {
    let d = synth_with(&SynthConfig::clean(seed, days));
    let links = minute_links(&d);
    let cfg = PlConfig { waa_intercept_db: 0.0, waa_slope_db_per_ghz: 0.0, coeffs: d.links.iter().fold(
        CoefficientTable { entries: Vec::new(), ..Default::default() },
        |mut t, l| {
            t.entries.push(CoeffEntry { frequency_ghz: l.meta.frequency_ghz, a: l.a, b: l.b });
            t
        },
    ), ..Default::default() };
    let rsl: Vec<Vec<f64>> = links.iter().map(|(_, s)| s.complete().unwrap()).collect();
    let refs: Vec<&[f64]> = rsl.iter().map(Vec::as_slice).collect();
    let cfg = cfg.calibrate(&refs).unwrap();
    let grid = links[0].1.timestamps();
    let est = pl_estimate(&links, &grid, &cfg).unwrap().complete().unwrap();
    let truth = d.truth.complete().unwrap();
    assert_eq!(est.len(), truth.len());
    (est.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / est.len() as f64).sqrt()
}

/// Library metrics against the naive reference on `n` random pairs.
pub fn metrics_match_naive(n: u64) {
    for seed in 0..n {
        let mut rng = SeedRng::new(seed);
        let n = 2 + (rng.uniform() * 200.0) as usize;
        let y: Vec<f64> = (0..n).map(|_| rng.exponential(2.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| (v + rng.normal()).max(0.0)).collect();
        let m = metrics(&y, &p).unwrap();
        let (rmse, r2, pcc, mae) = naive_metrics(&y, &p);
        assert!((m.rmse - rmse).abs() < 1e-12);
        assert!((m.r2.unwrap() - r2).abs() < 1e-12);
        assert!((m.pcc.unwrap() - pcc).abs() < 1e-12);
        assert!((m.mae - mae).abs() < 1e-12);
        assert!(m.rmse >= m.mae);
    }
}

/// Event detection against the brute-force reference on `n` random
/// series; returns the number of events seen.
pub fn events_match_brute_force(n: u64) -> usize {
    let mut total = 0;
    for seed in 0..n {
        let r = random_rate_series(seed);
        let s = TimeSeries::from_values(t0() + Duration::days(82), 60, &r, Unit::MmPerH).unwrap();
        let got: Vec<(usize, usize)> = detect_events(&s)
            .unwrap()
            .iter()
            .map(|e| (s.index_of(e.start).unwrap(), s.index_of(e.end).unwrap()))
            .collect();
        assert_eq!(got, brute_force_events(&r), "seed {seed}");
        total += got.len();
    }
    total
}

/// Forward attenuation then inversion over a grid of rates, coefficients
/// and lengths.
pub fn pl_round_trip_grid() {
    for &r in &[0.1, 1.0, 10.0, 50.0] {
        for &a in &[0.01, 0.1, 0.37, 1.2] {
            for &b in &[0.8, 0.9, 1.0, 1.1, 1.2, 1.3] {
                for &l in &[0.3, 1.28, 4.0, 12.0] {
                    let att = power_law_attenuation(r, a, b, l);
                    let back = invert_power_law(att, a, b, l, 0.0);
                    assert!(((back - r) / r).abs() < 1e-10, "r={r} a={a} b={b} L={l}: {back}");
                }
            }
        }
    }
}
