//! Metrics, rain-event detection, per-day statistics and report files.
//!
//! Report files written by [`emit_report`]:
//!
//! | file             | columns                                              |
//! |------------------|------------------------------------------------------|
//! | `metrics.csv`    | `estimator,n,rmse,r2,pcc,mae`                        |
//! | `per_day.csv`    | `estimator,date,n,rmse,r2,pcc,mae`                   |
//! | `events.csv`     | `start,end,duration_min,peak_mm_h,total_mm`          |
//! | `predictions.csv`| `time,gauge,<estimator>...`                          |
//! | `timeseries.svg` | gauge and every estimator as polylines, mm/h vs UTC  |
//!
//! Undefined `r2`/`pcc` (constant series) are written as empty cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, parse_timestamp, TimeSeries};

pub const WET_THRESHOLD_MM_H: f64 = 0.1;
pub const MIN_EVENT_MINUTES: usize = 30;
pub const MIN_DRY_GAP_MINUTES: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    /// `None` when the observations are constant.
    pub r2: Option<f64>,
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
    pub mae: f64,
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.len() != yhat.len() {
        return Err(Error::MetricLengthMismatch(y.len(), yhat.len()));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let nf = n as f64;
    let my = y.iter().sum::<f64>() / nf;
    let mp = yhat.iter().sum::<f64>() / nf;
    let (mut sse, mut sae, mut syy, mut spp, mut syp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &p) in y.iter().zip(yhat) {
        let e = a - p;
        sse += e * e;
        sae += e.abs();
        syy += (a - my) * (a - my);
        spp += (p - mp) * (p - mp);
        syp += (a - my) * (p - mp);
    }
    Ok(Metrics {
        n,
        rmse: (sse / nf).sqrt(),
        r2: (syy > 0.0).then(|| 1.0 - sse / syy),
        pcc: (syy > 0.0 && spp > 0.0).then(|| (syp / (syy * spp).sqrt()).clamp(-1.0, 1.0)),
        mae: sae / nf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainEvent {
    pub start: DateTime<Utc>,
    /// Last wet minute.
    pub end: DateTime<Utc>,
    pub duration_min: usize,
    pub peak_mm_h: f64,
    pub total_mm: f64,
}

/// Wet minutes (rate > 0.1 mm/h) form runs; runs separated by fewer than
/// 60 dry minutes are merged first, then merged spans shorter than 30
/// minutes are dropped.
pub fn detect_events(rate: &TimeSeries) -> Result<Vec<RainEvent>> {
    if rate.step_s() != 60 {
        return Err(Error::WrongStep { expected_s: 60, actual_s: rate.step_s() });
    }
    let r = rate.complete().ok_or_else(|| Error::Misaligned("rain rate has missing values".into()))?;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in r.iter().enumerate() {
        if v <= WET_THRESHOLD_MM_H {
            continue;
        }
        match spans.last_mut() {
            Some((_, end)) if i - *end - 1 < MIN_DRY_GAP_MINUTES => *end = i,
            _ => spans.push((i, i)),
        }
    }
    Ok(spans
        .into_iter()
        .filter(|(s, e)| e - s + 1 >= MIN_EVENT_MINUTES)
        .map(|(s, e)| {
            let slice = &r[s..=e];
            RainEvent {
                start: rate.timestamp(s),
                end: rate.timestamp(e),
                duration_min: e - s + 1,
                peak_mm_h: slice.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                total_mm: slice.iter().sum::<f64>() / 60.0,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub date: NaiveDate,
    pub metrics: Metrics,
}

/// Metrics per UTC calendar day. Days with fewer than two samples are
/// skipped and returned in the second list.
pub fn per_day_stats(y: &[f64], yhat: &[f64], times: &[DateTime<Utc>]) -> Result<(Vec<DayStats>, Vec<NaiveDate>)> {
    if y.len() != yhat.len() || y.len() != times.len() {
        return Err(Error::MetricLengthMismatch(y.len(), yhat.len().min(times.len())));
    }
    let mut days: BTreeMap<NaiveDate, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((&a, &p), t) in y.iter().zip(yhat).zip(times) {
        let e = days.entry(t.date_naive()).or_default();
        e.0.push(a);
        e.1.push(p);
    }
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (date, (a, p)) in days {
        if a.len() < 2 {
            skipped.push(date);
        } else {
            out.push(DayStats { date, metrics: metrics(&a, &p)? });
        }
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub values: Vec<f64>,
    pub metrics: Metrics,
    pub per_day: Vec<DayStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub times: Vec<DateTime<Utc>>,
    pub gauge: Vec<f64>,
    pub estimates: Vec<Estimate>,
    /// Events found in the gauge series.
    pub events: Vec<RainEvent>,
    pub skipped_days: Vec<NaiveDate>,
}

impl EvalReport {
    /// `times` must be consecutive minutes for event detection.
    pub fn build(times: Vec<DateTime<Utc>>, gauge: Vec<f64>, estimators: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut estimates = Vec::new();
        let mut skipped_days = Vec::new();
        for (name, values) in estimators {
            let m = metrics(&gauge, &values)?;
            let (per_day, skipped) = per_day_stats(&gauge, &values, &times)?;
            skipped_days = skipped;
            estimates.push(Estimate { name, values, metrics: m, per_day });
        }
        let events = minute_runs(&times, &gauge)
            .into_iter()
            .map(|(start, vals)| {
                let s = TimeSeries::from_values(start, 60, &vals, crate::ingest::Unit::MmPerH)?;
                detect_events(&s)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        Ok(Self { times, gauge, estimates, events, skipped_days })
    }
}

/// Splits samples into runs of consecutive minutes.
fn minute_runs(times: &[DateTime<Utc>], values: &[f64]) -> Vec<(DateTime<Utc>, Vec<f64>)> {
    let mut out: Vec<(DateTime<Utc>, Vec<f64>)> = Vec::new();
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        let contiguous = i > 0 && t - times[i - 1] == Duration::minutes(1);
        match out.last_mut() {
            Some((_, run)) if contiguous => run.push(v),
            _ => out.push((t, vec![v])),
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn metrics_row(name: &str, m: &Metrics) -> String {
    format!("{name},{},{},{},{},{}\n", m.n, m.rmse, opt(m.r2), opt(m.pcc), m.mae)
}

pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut s = String::from("estimator,n,rmse,r2,pcc,mae\n");
    for e in &report.estimates {
        s.push_str(&metrics_row(&e.name, &e.metrics));
    }
    write_file(&out_dir.join("metrics.csv"), &s)?;

    let mut s = String::from("estimator,date,n,rmse,r2,pcc,mae\n");
    for e in &report.estimates {
        for d in &e.per_day {
            let m = &d.metrics;
            let _ = writeln!(s, "{},{},{},{},{},{},{}", e.name, d.date, m.n, m.rmse, opt(m.r2), opt(m.pcc), m.mae);
        }
    }
    write_file(&out_dir.join("per_day.csv"), &s)?;

    write_file(&out_dir.join("events.csv"), &events_csv(&report.events))?;

    let mut s = String::from("time,gauge");
    for e in &report.estimates {
        s.push(',');
        s.push_str(&e.name);
    }
    s.push('\n');
    for (i, t) in report.times.iter().enumerate() {
        let _ = write!(s, "{},{}", format_timestamp(*t), report.gauge[i]);
        for e in &report.estimates {
            let _ = write!(s, ",{}", e.values[i]);
        }
        s.push('\n');
    }
    write_file(&out_dir.join("predictions.csv"), &s)?;

    let series: Vec<(&str, &[f64])> = std::iter::once(("gauge", report.gauge.as_slice()))
        .chain(report.estimates.iter().map(|e| (e.name.as_str(), e.values.as_slice())))
        .collect();
    write_file(&out_dir.join("timeseries.svg"), &timeseries_svg(&report.times, &series))
}

pub fn events_csv(events: &[RainEvent]) -> String {
    let mut s = String::from("start,end,duration_min,peak_mm_h,total_mm\n");
    for ev in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            format_timestamp(ev.start),
            format_timestamp(ev.end),
            ev.duration_min,
            ev.peak_mm_h,
            ev.total_mm
        );
    }
    s
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn corrupt(path: &Path, m: &str) -> Error {
    Error::Corrupt { file: path.display().to_string(), message: m.into() }
}

fn num(path: &Path, s: &str) -> Result<f64> {
    s.parse().map_err(|_| corrupt(path, &format!("bad number '{s}'")))
}

fn opt_num(path: &Path, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(path, s).map(Some)
    }
}

fn read_metrics_fields(path: &Path, r: &csv::StringRecord, at: usize) -> Result<Metrics> {
    let f = |i: usize| r.get(at + i).unwrap_or("");
    Ok(Metrics {
        n: f(0).parse().map_err(|_| corrupt(path, "bad n"))?,
        rmse: num(path, f(1))?,
        r2: opt_num(path, f(2))?,
        pcc: opt_num(path, f(3))?,
        mae: num(path, f(4))?,
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, Metrics)>> {
    let mut out = Vec::new();
    for r in reader(path)?.records() {
        let r = r?;
        out.push((r.get(0).unwrap_or("").to_string(), read_metrics_fields(path, &r, 1)?));
    }
    Ok(out)
}

pub fn read_per_day_csv(path: &Path) -> Result<Vec<(String, DayStats)>> {
    let mut out = Vec::new();
    for r in reader(path)?.records() {
        let r = r?;
        let date = r.get(1).unwrap_or("").parse().map_err(|_| corrupt(path, "bad date"))?;
        out.push((r.get(0).unwrap_or("").to_string(), DayStats { date, metrics: read_metrics_fields(path, &r, 2)? }));
    }
    Ok(out)
}

pub fn read_events_csv(path: &Path) -> Result<Vec<RainEvent>> {
    let mut out = Vec::new();
    for r in reader(path)?.records() {
        let r = r?;
        let ts = |i: usize| parse_timestamp(r.get(i).unwrap_or("")).ok_or_else(|| corrupt(path, "bad timestamp"));
        out.push(RainEvent {
            start: ts(0)?,
            end: ts(1)?,
            duration_min: r.get(2).unwrap_or("").parse().map_err(|_| corrupt(path, "bad duration"))?,
            peak_mm_h: num(path, r.get(3).unwrap_or(""))?,
            total_mm: num(path, r.get(4).unwrap_or(""))?,
        });
    }
    Ok(out)
}

const PALETTE: [&str; 8] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];

/// Self-contained SVG line chart.
pub fn timeseries_svg(times: &[DateTime<Utc>], series: &[(&str, &[f64])]) -> String {
    let (w, h) = (1000.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let n = times.len().max(2);
    let x = |i: usize| left + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, ymax) / ymax);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{}" x2="{}" y2="{}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}"/></g>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    if !times.is_empty() {
        for k in 0..=4 {
            let i = (times.len() - 1) * k / 4;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                x(i),
                top + ph + 16.0,
                times[i].format("%m-%d %H:%M")
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">time (UTC)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">rain rate (mm/h)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (i, v) in values.iter().enumerate() {
            let _ = write!(pts, "{:.1},{:.1} ", x(i), y(*v));
        }
        let _ = writeln!(
            s,
            r#"<polyline data-name="{name}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            pts.trim_end()
        );
        let ly = top + 14.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}"/><text x="{}" y="{}" font-size="11">{name}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
