//! Raw series → 1-minute feature matrix → sliding windows with
//! chronological splits.
//!
//! Feature columns are one scaled RSL column per sub-link followed by
//! `x_sin_hour, x_cos_hour, x_sin_min, x_cos_min`. Only RSL columns are
//! scaled (median/IQR fitted on train-split rows). Targets are gauge rain
//! rates in mm/h, unscaled.

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{io, Tensor};
use crate::error::{Error, Result};
use crate::ingest::{GaugeRecord, LinkMeta, TimeSeries, Unit};

pub const TIME_FEATURES: [&str; 4] = ["x_sin_hour", "x_cos_hour", "x_sin_min", "x_cos_min"];

/// Mean of non-overlapping groups of six 10 s samples. A group with any
/// missing sample is missing; a trailing partial group is dropped.
pub fn downsample_rsl(rsl: &TimeSeries) -> Result<TimeSeries> {
    if rsl.step_s() != 10 {
        return Err(Error::WrongStep { expected_s: 10, actual_s: rsl.step_s() });
    }
    if rsl.len() < 6 {
        return Err(Error::TooSparse { needed: 6, have: rsl.len() });
    }
    let values = rsl
        .values()
        .chunks_exact(6)
        .map(|c| c.iter().copied().sum::<Option<f64>>().map(|s| s / 6.0))
        .collect();
    TimeSeries::new(rsl.start(), 60, values, rsl.unit())
}

/// Centered moving average of width `win` that shrinks at the edges and
/// skips missing values; all-missing windows stay missing.
pub fn moving_average(values: &[Option<f64>], win: usize) -> Vec<Option<f64>> {
    let half = win / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let present: Vec<f64> = values[lo..hi].iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

/// Per-minute accumulation (mm) → smoothed rate (mm/h).
pub fn gauge_to_rate(gauge: &GaugeRecord, smooth_win: usize) -> Result<TimeSeries> {
    let s = &gauge.series;
    if s.step_s() != 60 {
        return Err(Error::WrongStep { expected_s: 60, actual_s: s.step_s() });
    }
    if smooth_win == 0 || smooth_win % 2 == 0 {
        return Err(Error::ConfigInvalid(format!("smooth_win {smooth_win} must be odd and >= 1")));
    }
    let rate: Vec<Option<f64>> = s.values().iter().map(|v| v.map(|x| 60.0 * x)).collect();
    TimeSeries::new(s.start(), 60, moving_average(&rate, smooth_win), Unit::MmPerH)
}

/// Solves the least-squares polynomial fit and evaluates it at `x0`.
fn poly_fit_eval(xs: &[f64], ys: &[f64], order: usize, x0: f64) -> f64 {
    let scale = xs.iter().map(|x| (x - x0).abs()).fold(1.0, f64::max);
    let m = order + 1;
    let mut ata = vec![0.0; m * m];
    let mut aty = vec![0.0; m];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - x0) / scale;
        let mut row = vec![1.0; m];
        for k in 1..m {
            row[k] = row[k - 1] * u;
        }
        for i in 0..m {
            aty[i] += row[i] * y;
            for j in 0..m {
                ata[i * m + j] += row[i] * row[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let piv = (col..m).max_by(|&a, &b| ata[a * m + col].abs().total_cmp(&ata[b * m + col].abs())).unwrap();
        if piv != col {
            for j in 0..m {
                ata.swap(col * m + j, piv * m + j);
            }
            aty.swap(col, piv);
        }
        let d = ata[col * m + col];
        for r in col + 1..m {
            let f = ata[r * m + col] / d;
            for j in col..m {
                ata[r * m + j] -= f * ata[col * m + j];
            }
            aty[r] -= f * aty[col];
        }
    }
    let mut coef = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| ata[i * m + j] * coef[j]).sum();
        coef[i] = (aty[i] - s) / ata[i * m + i];
    }
    // the polynomial is centered on x0, so its value there is the constant term
    coef[0]
}

/// Fills interior gaps with a local polynomial of `order` fitted to
/// `neighbors` observed points (half on each side when available) and
/// edge gaps with the nearest observed value.
pub fn impute_with(ts: &TimeSeries, order: usize, neighbors: usize) -> Result<TimeSeries> {
    let observed: Vec<usize> = (0..ts.len()).filter(|&i| ts.values()[i].is_some()).collect();
    if observed.len() < order + 1 {
        return Err(Error::TooSparse { needed: order + 1, have: observed.len() });
    }
    let neighbors = neighbors.max(order + 1);
    let v = ts.values();
    let (first, last) = (observed[0], *observed.last().unwrap());
    let mut out = Vec::with_capacity(ts.len());
    for i in 0..ts.len() {
        if let Some(x) = v[i] {
            out.push(x);
            continue;
        }
        if i < first {
            out.push(v[first].unwrap());
            continue;
        }
        if i > last {
            out.push(v[last].unwrap());
            continue;
        }
        let split = observed.partition_point(|&j| j < i);
        let (left, right) = observed.split_at(split);
        let nl = (neighbors / 2).min(left.len());
        let nr = (neighbors - nl).min(right.len());
        let nl = (neighbors - nr).min(left.len());
        let picks: Vec<usize> = left[left.len() - nl..].iter().chain(&right[..nr]).copied().collect();
        let xs: Vec<f64> = picks.iter().map(|&j| j as f64).collect();
        let ys: Vec<f64> = picks.iter().map(|&j| v[j].unwrap()).collect();
        out.push(poly_fit_eval(&xs, &ys, order.min(picks.len() - 1), i as f64));
    }
    TimeSeries::from_values(ts.start(), ts.step_s(), &out, ts.unit())
}

/// [`impute_with`] over `2·⌈(order+1)/2⌉` neighbors (4 for order 2).
pub fn impute(ts: &TimeSeries, order: usize) -> Result<TimeSeries> {
    impute_with(ts, order, 2 * ((order + 2) / 2))
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub median: f64,
    pub iqr: f64,
    /// IQR was zero; values are centered but divided by 1.
    pub degenerate: bool,
}

impl RobustScaler {
    pub fn fit(col: &[f64]) -> Result<Self> {
        if col.is_empty() {
            return Err(Error::EmptyColumn);
        }
        let mut s = col.to_vec();
        s.sort_by(f64::total_cmp);
        let median = quantile(&s, 0.5);
        let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
        Ok(Self { median, iqr, degenerate: iqr == 0.0 })
    }

    fn divisor(&self) -> f64 {
        if self.degenerate {
            1.0
        } else {
            self.iqr
        }
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.median) / self.divisor()
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.divisor() + self.median
    }
}

pub fn robust_scale(col: &[f64]) -> Result<(Vec<f64>, RobustScaler)> {
    let s = RobustScaler::fit(col)?;
    Ok((col.iter().map(|&x| s.transform(x)).collect(), s))
}

/// `[sin_hour, cos_hour, sin_min, cos_min]` per timestamp.
pub fn time_features(times: &[DateTime<Utc>]) -> [Vec<f64>; 4] {
    use std::f64::consts::TAU;
    let mut out: [Vec<f64>; 4] = Default::default();
    for t in times {
        let h = TAU * t.hour() as f64 / 24.0;
        let m = TAU * t.minute() as f64 / 60.0;
        out[0].push(h.sin());
        out[1].push(h.cos());
        out[2].push(m.sin());
        out[3].push(m.cos());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Inclusive calendar-day range (UTC).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayRange {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DayRange {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Self {
        Self { first, last }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        let d = t.date_naive();
        self.first <= d && d <= self.last
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: DayRange,
    pub val: DayRange,
    pub test: DayRange,
}

fn day(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitBounds {
    /// June 1 – Aug 2 / Aug 4 – 20 / Aug 22 – 31 (2015), one buffer day between.
    fn default() -> Self {
        Self {
            train: DayRange::new(day(2015, 6, 1), day(2015, 8, 2)),
            val: DayRange::new(day(2015, 8, 4), day(2015, 8, 20)),
            test: DayRange::new(day(2015, 8, 22), day(2015, 8, 31)),
        }
    }
}

impl SplitBounds {
    /// Consecutive train/val/test ranges of the given lengths starting at
    /// `first`, separated by one buffer day.
    pub fn compressed(first: NaiveDate, train_days: u32, val_days: u32, test_days: u32) -> Self {
        let span = |start: NaiveDate, n: u32| DayRange::new(start, start + Duration::days(n as i64 - 1));
        let train = span(first, train_days);
        let val = span(train.last + Duration::days(2), val_days);
        let test = span(val.last + Duration::days(2), test_days);
        Self { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [(Split::Train, self.train), (Split::Val, self.val), (Split::Test, self.test)];
        for (s, r) in &parts {
            if r.first > r.last {
                return Err(Error::ConfigInvalid(format!("{} range ends before it starts", s.name())));
            }
        }
        for w in parts.windows(2) {
            let ((a, ra), (b, rb)) = (w[0], w[1]);
            if rb.first <= ra.last {
                return Err(Error::OverlappingSplits(format!("{} ends {} but {} starts {}", a.name(), ra.last, b.name(), rb.first)));
            }
            if (rb.first - ra.last).num_days() < 2 {
                return Err(Error::BufferTooSmall(format!("no full day between {} and {}", a.name(), b.name())));
            }
        }
        Ok(())
    }

    pub fn split_of(&self, t: DateTime<Utc>) -> Option<Split> {
        [(Split::Train, self.train), (Split::Val, self.val), (Split::Test, self.test)]
            .into_iter()
            .find(|(_, r)| r.contains(t))
            .map(|(s, _)| s)
    }
}

/// 1-minute feature matrix, row `i` at `start + i` minutes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub start: DateTime<Utc>,
    pub names: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
    /// Scaler per column; `None` for the time features.
    pub scalers: Vec<Option<RobustScaler>>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn time(&self, row: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(row as i64)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let (r, c) = (self.rows(), self.columns.len());
        let mut data = vec![0.0; r * c];
        for (j, col) in self.columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * c + j] = *v;
            }
        }
        Tensor::new(vec![r, c], data)
    }
}

/// Builds the feature matrix from complete 1-minute RSL columns, fitting
/// each scaler on the rows that fall in `fit_range` only.
pub fn build_features(
    start: DateTime<Utc>,
    rsl: &[(String, Vec<f64>)],
    fit_range: DayRange,
) -> Result<FeatureMatrix> {
    let rows = rsl.first().map_or(0, |(_, c)| c.len());
    let times: Vec<DateTime<Utc>> = (0..rows).map(|i| start + Duration::minutes(i as i64)).collect();
    let fit_rows: Vec<usize> = (0..rows).filter(|&i| fit_range.contains(times[i])).collect();
    let mut fm = FeatureMatrix { start, names: Vec::new(), columns: Vec::new(), scalers: Vec::new() };
    for (name, col) in rsl {
        if col.len() != rows {
            return Err(Error::Misaligned(format!("column {name} has {} rows, expected {rows}", col.len())));
        }
        let fit: Vec<f64> = fit_rows.iter().map(|&i| col[i]).collect();
        let scaler = RobustScaler::fit(&fit)?;
        fm.names.push(format!("rsl_{name}"));
        fm.columns.push(col.iter().map(|&x| scaler.transform(x)).collect());
        fm.scalers.push(Some(scaler));
    }
    for (name, col) in TIME_FEATURES.iter().zip(time_features(&times)) {
        fm.names.push((*name).to_string());
        fm.columns.push(col);
        fm.scalers.push(None);
    }
    Ok(fm)
}

/// Sliding windows over a feature matrix. Window `k` covers rows
/// `end - window_len + 1 ..= end` and targets row `end + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub start: DateTime<Utc>,
    pub window_len: usize,
    pub feature_names: Vec<String>,
    pub scalers: Vec<Option<RobustScaler>>,
    /// `[rows, features]`.
    pub features: Tensor,
    /// Target per row (mm/h).
    pub targets: Vec<f64>,
    /// `(last input row, split)` per window.
    pub windows: Vec<(usize, Split)>,
    pub bounds: SplitBounds,
}

pub fn chrono_split(fm: &FeatureMatrix, targets: &[f64], bounds: &SplitBounds, window_len: usize) -> Result<WindowedDataset> {
    bounds.validate()?;
    if targets.len() != fm.rows() {
        return Err(Error::Misaligned(format!("{} targets for {} rows", targets.len(), fm.rows())));
    }
    if window_len == 0 {
        return Err(Error::ConfigInvalid("window_len must be positive".into()));
    }
    let split: Vec<Option<Split>> = (0..fm.rows()).map(|i| bounds.split_of(fm.time(i))).collect();
    let mut windows = Vec::new();
    for end in window_len - 1..fm.rows().saturating_sub(1) {
        let first = end + 1 - window_len;
        if let Some(s) = split[first] {
            // splits are contiguous in time, so equal endpoints imply containment
            if split[end + 1] == Some(s) && targets[end + 1].is_finite() {
                windows.push((end, s));
            }
        }
    }
    Ok(WindowedDataset {
        start: fm.start,
        window_len,
        feature_names: fm.names.clone(),
        scalers: fm.scalers.clone(),
        features: fm.to_tensor()?,
        targets: targets.to_vec(),
        windows,
        bounds: bounds.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub start: DateTime<Utc>,
    pub rows: usize,
    pub window_len: usize,
    pub feature_names: Vec<String>,
    pub scalers: Vec<Option<RobustScaler>>,
    pub split_counts: SplitCounts,
    pub bounds: SplitBounds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub const DATASET_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

impl WindowedDataset {
    pub fn n_features(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn time(&self, row: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(row as i64)
    }

    /// Window ids belonging to `split`, in time order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.windows.len()).filter(|&k| self.windows[k].1 == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.windows.iter().filter(|w| w.1 == split).count()
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts { train: self.count(Split::Train), val: self.count(Split::Val), test: self.count(Split::Test) }
    }

    /// Minute rows read by window `k` (inputs and target).
    pub fn rows_of(&self, k: usize) -> std::ops::RangeInclusive<usize> {
        let end = self.windows[k].0;
        end + 1 - self.window_len..=end + 1
    }

    pub fn target(&self, k: usize) -> f64 {
        self.targets[self.windows[k].0 + 1]
    }

    pub fn target_time(&self, k: usize) -> DateTime<Utc> {
        self.time(self.windows[k].0 + 1)
    }

    /// Inputs `[B, L, F]` and targets for the given window ids.
    pub fn batch(&self, ids: &[usize]) -> (Tensor, Vec<f64>) {
        let (l, f) = (self.window_len, self.n_features());
        let src = self.features.data();
        let mut data = Vec::with_capacity(ids.len() * l * f);
        for &k in ids {
            let first = self.windows[k].0 + 1 - l;
            data.extend_from_slice(&src[first * f..(first + l) * f]);
        }
        let x = Tensor::new(vec![ids.len().max(1), l, f], if ids.is_empty() { vec![0.0; l * f] } else { data })
            .expect("window shape");
        (x, ids.iter().map(|&k| self.target(k)).collect())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: 1,
            start: self.start,
            rows: self.rows(),
            window_len: self.window_len,
            feature_names: self.feature_names.clone(),
            scalers: self.scalers.clone(),
            split_counts: self.counts(),
            bounds: self.bounds.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.windows.len().max(1);
        let ends = Tensor::new(vec![n], pad(self.windows.iter().map(|w| w.0 as f64).collect(), n))?;
        let tags = Tensor::new(
            vec![n],
            pad(self.windows.iter().map(|w| Split::ALL.iter().position(|s| *s == w.1).unwrap() as f64).collect(), n),
        )?;
        let targets = Tensor::new(vec![self.targets.len()], self.targets.clone())?;
        let manifest = self.manifest();
        let meta = json!({ "format": "cmlrain-dataset", "windows": self.windows.len(), "manifest": manifest });
        let bytes = io::encode(
            &[("features", &self.features), ("targets", &targets), ("window_end", &ends), ("split", &tags)],
            meta,
        );
        let path = dir.join(DATASET_FILE);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        if !path.exists() {
            return Err(Error::MissingInput(path));
        }
        let origin = path.display().to_string();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (tensors, meta) = io::decode(&bytes, &origin)?;
        let corrupt = |m: &str| Error::Corrupt { file: origin.clone(), message: m.into() };
        if meta.get("format").and_then(|v| v.as_str()) != Some("cmlrain-dataset") {
            return Err(corrupt("not a dataset archive"));
        }
        let manifest: Manifest = serde_json::from_value(meta["manifest"].clone())?;
        let n = meta["windows"].as_u64().ok_or_else(|| corrupt("missing window count"))? as usize;
        let get = |name: &str| {
            tensors.iter().find(|(k, _)| k == name).map(|(_, t)| t.clone()).ok_or_else(|| corrupt(name))
        };
        let features = get("features")?;
        let targets = get("targets")?.into_data();
        let ends = get("window_end")?;
        let tags = get("split")?;
        let windows = ends.data()[..n]
            .iter()
            .zip(&tags.data()[..n])
            .map(|(&e, &s)| (e as usize, Split::ALL[s as usize]))
            .collect();
        Ok(Self {
            start: manifest.start,
            window_len: manifest.window_len,
            feature_names: manifest.feature_names,
            scalers: manifest.scalers,
            features,
            targets,
            windows,
            bounds: manifest.bounds,
        })
    }
}

fn pad(mut v: Vec<f64>, n: usize) -> Vec<f64> {
    v.resize(n, 0.0);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub smooth_win: usize,
    pub impute_order: usize,
    pub impute_neighbors: usize,
    pub window_len: usize,
    pub bounds: SplitBounds,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { smooth_win: 5, impute_order: 2, impute_neighbors: 4, window_len: 30, bounds: SplitBounds::default() }
    }
}

/// Link and gauge records on one complete 1-minute grid.
#[derive(Clone, Debug)]
pub struct Aligned {
    pub start: DateTime<Utc>,
    /// Imputed, unscaled RSL per link.
    pub rsl: Vec<(LinkMeta, TimeSeries)>,
    /// Smoothed, imputed gauge rate, clamped at 0.
    pub rate: TimeSeries,
}

/// Everything downstream stages need from one preprocessing pass.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: WindowedDataset,
    /// Imputed, unscaled 1-minute RSL per link on the dataset grid.
    pub rsl: Vec<(LinkMeta, TimeSeries)>,
    /// Smoothed gauge rate on the dataset grid.
    pub rate: TimeSeries,
}

fn to_minutes(rsl: &TimeSeries) -> Result<TimeSeries> {
    match rsl.step_s() {
        60 => Ok(rsl.clone()),
        10 => downsample_rsl(rsl),
        other => Err(Error::WrongStep { expected_s: 10, actual_s: other }),
    }
}

fn window_of(series: &TimeSeries, start: DateTime<Utc>, rows: usize) -> Result<Vec<Option<f64>>> {
    let i0 = series
        .index_of(start)
        .ok_or_else(|| Error::Misaligned(format!("series starting {} is not on the common minute grid", series.start())))?;
    Ok(series.values()[i0..i0 + rows].to_vec())
}

/// Downsamples, crops to the common time span and imputes.
pub fn align(links: &[(LinkMeta, TimeSeries, TimeSeries)], gauge: &GaugeRecord, cfg: &PreprocessConfig) -> Result<Aligned> {
    if links.is_empty() {
        return Err(Error::MissingInput("links".into()));
    }
    let minute: Vec<(LinkMeta, TimeSeries)> =
        links.iter().map(|(m, rsl, _)| Ok((m.clone(), to_minutes(rsl)?))).collect::<Result<_>>()?;
    let rate = gauge_to_rate(gauge, cfg.smooth_win)?;

    let all: Vec<&TimeSeries> = minute.iter().map(|(_, s)| s).chain(std::iter::once(&rate)).collect();
    let start = all.iter().map(|s| s.start()).max().unwrap();
    let end = all.iter().map(|s| s.timestamp(s.len().saturating_sub(1))).min().unwrap();
    if end < start {
        return Err(Error::Misaligned("link and gauge records do not overlap".into()));
    }
    let rows = (end - start).num_minutes() as usize + 1;

    let mut rsl = Vec::new();
    for (meta, s) in &minute {
        let part = TimeSeries::new(start, 60, window_of(s, start, rows)?, Unit::Dbm)?;
        rsl.push((meta.clone(), impute_with(&part, cfg.impute_order, cfg.impute_neighbors)?));
    }
    let part = TimeSeries::new(start, 60, window_of(&rate, start, rows)?, Unit::MmPerH)?;
    let filled = impute_with(&part, cfg.impute_order, cfg.impute_neighbors)?;
    let targets: Vec<f64> = filled.complete().expect("imputed").into_iter().map(|r| r.max(0.0)).collect();
    Ok(Aligned { start, rsl, rate: TimeSeries::from_values(start, 60, &targets, Unit::MmPerH)? })
}

pub fn prepare(links: &[(LinkMeta, TimeSeries, TimeSeries)], gauge: &GaugeRecord, cfg: &PreprocessConfig) -> Result<Prepared> {
    cfg.bounds.validate()?;
    let a = align(links, gauge, cfg)?;
    let cols: Vec<(String, Vec<f64>)> =
        a.rsl.iter().map(|(m, s)| (m.link_id.clone(), s.complete().expect("imputed"))).collect();
    let fm = build_features(a.start, &cols, cfg.bounds.train)?;
    let targets = a.rate.complete().expect("imputed");
    let dataset = chrono_split(&fm, &targets, &cfg.bounds, cfg.window_len)?;
    Ok(Prepared { dataset, rsl: a.rsl, rate: a.rate })
}
