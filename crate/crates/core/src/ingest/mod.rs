//! Typed link and gauge records, and their CSV representation.
//!
//! Link files carry `# key: value` metadata lines before the CSV header:
//!
//! ```text
//! # link_id: 651
//! # length_km: 1.28
//! # frequency_ghz: 38.32
//! # sampling_interval_s: 10
//! time,rsl,tsl
//! 2015-06-01T00:00:00Z,-41.3,12.0
//! 2015-06-01T00:00:10Z,,12.0
//! ```
//!
//! Metadata may instead live in a sidecar `<file>.meta.json`. Empty or
//! unparseable numeric cells become missing values; rows absent from the
//! regular grid are filled with missing values. Gauge files use
//! `# gauge_id`, `# resolution_mm` and optionally `# gauge_type`
//! (`tipping-bucket` or `weighing`; both are accepted and only recorded).

mod synth;

pub use synth::{synth_dataset, synth_with, SynthConfig, SynthDataset, SynthLink};

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical unit of a [`TimeSeries`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "dBm")]
    Dbm,
    #[serde(rename = "dB")]
    Db,
    #[serde(rename = "mm_per_h")]
    MmPerH,
    #[serde(rename = "mm_accum")]
    MmAccum,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

/// Uniformly sampled series; sample `i` sits at `start + i * step_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    start: DateTime<Utc>,
    step_s: u32,
    values: Vec<Option<f64>>,
    unit: Unit,
}

impl TimeSeries {
    pub fn new(start: DateTime<Utc>, step_s: u32, values: Vec<Option<f64>>, unit: Unit) -> Result<Self> {
        if step_s == 0 {
            return Err(Error::ConfigInvalid("series step must be positive".into()));
        }
        Ok(Self { start, step_s, values, unit })
    }

    pub fn from_values(start: DateTime<Utc>, step_s: u32, values: &[f64], unit: Unit) -> Result<Self> {
        Self::new(start, step_s, values.iter().map(|&v| Some(v)).collect(), unit)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_s(&self) -> u32 {
        self.step_s
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(i as i64 * self.step_s as i64)
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.len()).map(|i| self.timestamp(i)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// All values, or `None` if any is missing.
    pub fn complete(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// Index of `t` on this grid, if `t` lies exactly on it.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = (t - self.start).num_seconds();
        if offset < 0 || offset % self.step_s as i64 != 0 {
            return None;
        }
        let i = (offset / self.step_s as i64) as usize;
        (i < self.len()).then_some(i)
    }
}

/// Per-sub-link physical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMeta {
    pub link_id: String,
    pub length_km: f64,
    pub frequency_ghz: f64,
    pub sampling_interval_s: u32,
    #[serde(default)]
    pub near_lat: f64,
    #[serde(default)]
    pub near_lon: f64,
    #[serde(default)]
    pub far_lat: f64,
    #[serde(default)]
    pub far_lon: f64,
}

impl LinkMeta {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMeta(format!("link {}: {m}", self.link_id)));
        if !(self.length_km > 0.0) {
            return bad(format!("length_km {} must be positive", self.length_km));
        }
        if !(1.0..=100.0).contains(&self.frequency_ghz) {
            return bad(format!("frequency_ghz {} outside [1, 100]", self.frequency_ghz));
        }
        if self.sampling_interval_s == 0 || 60 % self.sampling_interval_s != 0 {
            return bad(format!("sampling_interval_s {} must divide 60", self.sampling_interval_s));
        }
        Ok(())
    }
}

/// Rain-gauge accumulations per sample interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub gauge_id: String,
    pub series: TimeSeries,
    pub resolution_mm: f64,
    #[serde(default)]
    pub gauge_type: Option<String>,
}

impl GaugeRecord {
    pub fn new(gauge_id: String, series: TimeSeries, resolution_mm: f64) -> Result<Self> {
        let g = Self { gauge_id, series, resolution_mm, gauge_type: None };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution_mm > 0.0) {
            return Err(Error::InvalidMeta(format!("resolution_mm {} must be positive", self.resolution_mm)));
        }
        for (row, v) in self.series.values().iter().enumerate() {
            if let Some(v) = *v {
                let steps = v / self.resolution_mm;
                if v < 0.0 || ((steps - steps.round()) * self.resolution_mm).abs() > 1e-9 {
                    return Err(Error::ResolutionViolation { row, value: v, resolution: self.resolution_mm });
                }
            }
        }
        Ok(())
    }
}

/// Canonical column name → source column name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: String,
    pub rsl: String,
    pub tsl: String,
    pub rain: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { time: "time".into(), rsl: "rsl".into(), tsl: "tsl".into(), rain: "rain_mm".into() }
    }
}

impl ColumnMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

struct RawTable {
    meta: HashMap<String, String>,
    times: Vec<DateTime<Utc>>,
    columns: Vec<Vec<Option<f64>>>,
}

fn read_table(path: &Path, time_col: &str, value_cols: &[&str]) -> Result<RawTable> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut meta = HashMap::new();
    let mut body_start = 0;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len() + 1;
        } else if trimmed.is_empty() {
            body_start += line.len() + 1;
        } else {
            break;
        }
    }
    let body = text.get(body_start.min(text.len())..).unwrap_or("");
    if body.trim().is_empty() {
        return Err(Error::MalformedHeader { file, message: "no header row".into() });
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MalformedHeader {
            file: file.clone(),
            message: format!("missing column '{name}' (have {:?})", headers.iter().collect::<Vec<_>>()),
        })
    };
    let ti = find(time_col)?;
    let vi: Vec<usize> = value_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); vi.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let t = parse_timestamp(rec.get(ti).unwrap_or("")).ok_or_else(|| Error::MalformedHeader {
            file: file.clone(),
            message: format!("row {}: unparseable timestamp", row + 1),
        })?;
        if let Some(prev) = times.last() {
            if t <= *prev {
                return Err(Error::NonMonotonicTimestamps { file, row: row + 1 });
            }
        }
        times.push(t);
        for (col, &i) in columns.iter_mut().zip(&vi) {
            col.push(rec.get(i).and_then(|c| c.parse::<f64>().ok()).filter(|v| v.is_finite()));
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyFile { file });
    }
    Ok(RawTable { meta, times, columns })
}

/// Places irregular rows onto the regular grid starting at the first row.
fn regularize(file: &str, times: &[DateTime<Utc>], values: &[Option<f64>], step_s: u32) -> Result<Vec<Option<f64>>> {
    let start = times[0];
    let last = (*times.last().unwrap() - start).num_seconds();
    if last % step_s as i64 != 0 {
        return Err(Error::IrregularStep { file: file.into(), row: times.len(), expected_s: step_s as i64 });
    }
    let mut out = vec![None; (last / step_s as i64) as usize + 1];
    for (row, (t, v)) in times.iter().zip(values).enumerate() {
        let offset = (*t - start).num_seconds();
        if offset % step_s as i64 != 0 {
            return Err(Error::IrregularStep { file: file.into(), row: row + 1, expected_s: step_s as i64 });
        }
        out[(offset / step_s as i64) as usize] = *v;
    }
    Ok(out)
}

fn infer_step(times: &[DateTime<Utc>]) -> u32 {
    times
        .windows(2)
        .map(|w| (w[1] - w[0]).num_seconds())
        .min()
        .map(|s| s as u32)
        .unwrap_or(60)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn meta_value<T: std::str::FromStr>(meta: &HashMap<String, String>, key: &str) -> Option<T> {
    meta.get(key).and_then(|v| v.parse().ok())
}

fn link_meta_from(path: &Path, meta: &HashMap<String, String>, step: u32) -> Result<LinkMeta> {
    let file = path.display().to_string();
    if let (Some(length_km), Some(frequency_ghz)) = (meta_value(meta, "length_km"), meta_value(meta, "frequency_ghz")) {
        let link_id = meta.get("link_id").cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        return Ok(LinkMeta {
            link_id,
            length_km,
            frequency_ghz,
            sampling_interval_s: meta_value(meta, "sampling_interval_s").unwrap_or(step),
            near_lat: meta_value(meta, "near_lat").unwrap_or(0.0),
            near_lon: meta_value(meta, "near_lon").unwrap_or(0.0),
            far_lat: meta_value(meta, "far_lat").unwrap_or(0.0),
            far_lon: meta_value(meta, "far_lon").unwrap_or(0.0),
        });
    }
    let side = sidecar(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        return Ok(serde_json::from_str(&text)?);
    }
    Err(Error::MalformedHeader { file, message: "no length_km/frequency_ghz metadata or sidecar".into() })
}

/// Reads one sub-link file into its metadata plus RSL and TSL series (dBm)
/// at the file's native step.
pub fn parse_link_csv(path: &Path, columns: &ColumnMap) -> Result<(LinkMeta, TimeSeries, TimeSeries)> {
    let file = path.display().to_string();
    let table = read_table(path, &columns.time, &[&columns.rsl, &columns.tsl])?;
    let step = meta_value(&table.meta, "sampling_interval_s").unwrap_or_else(|| infer_step(&table.times));
    let meta = link_meta_from(path, &table.meta, step)?;
    meta.validate()?;
    let step = meta.sampling_interval_s;
    let start = table.times[0];
    let rsl = regularize(&file, &table.times, &table.columns[0], step)?;
    let tsl = regularize(&file, &table.times, &table.columns[1], step)?;
    Ok((meta, TimeSeries::new(start, step, rsl, Unit::Dbm)?, TimeSeries::new(start, step, tsl, Unit::Dbm)?))
}

/// Reads a gauge file of per-interval accumulations (mm).
pub fn parse_gauge_csv(path: &Path, columns: &ColumnMap) -> Result<GaugeRecord> {
    let file = path.display().to_string();
    let table = read_table(path, &columns.time, &[&columns.rain])?;
    let step = meta_value(&table.meta, "sampling_interval_s").unwrap_or_else(|| infer_step(&table.times));
    let values = regularize(&file, &table.times, &table.columns[0], step)?;
    let series = TimeSeries::new(table.times[0], step, values, Unit::MmAccum)?;
    let gauge_id = table.meta.get("gauge_id").cloned().unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let resolution_mm = meta_value(&table.meta, "resolution_mm").unwrap_or(0.1);
    let mut g = GaugeRecord::new(gauge_id, series, resolution_mm)?;
    g.gauge_type = table.meta.get("gauge_type").cloned();
    Ok(g)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_link_csv(path: &Path, meta: &LinkMeta, rsl: &TimeSeries, tsl: &TimeSeries) -> Result<()> {
    if rsl.len() != tsl.len() || rsl.start() != tsl.start() || rsl.step_s() != tsl.step_s() {
        return Err(Error::Misaligned("RSL and TSL grids differ".into()));
    }
    let mut f = std::io::BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    writeln!(f, "# link_id: {}", meta.link_id).map_err(io)?;
    writeln!(f, "# length_km: {}", meta.length_km).map_err(io)?;
    writeln!(f, "# frequency_ghz: {}", meta.frequency_ghz).map_err(io)?;
    writeln!(f, "# sampling_interval_s: {}", meta.sampling_interval_s).map_err(io)?;
    writeln!(f, "# near_lat: {}\n# near_lon: {}", meta.near_lat, meta.near_lon).map_err(io)?;
    writeln!(f, "# far_lat: {}\n# far_lon: {}", meta.far_lat, meta.far_lon).map_err(io)?;
    writeln!(f, "time,rsl,tsl").map_err(io)?;
    for i in 0..rsl.len() {
        writeln!(f, "{},{},{}", format_timestamp(rsl.timestamp(i)), cell(rsl.values()[i]), cell(tsl.values()[i]))
            .map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn write_gauge_csv(path: &Path, gauge: &GaugeRecord) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    writeln!(f, "# gauge_id: {}", gauge.gauge_id).map_err(io)?;
    writeln!(f, "# resolution_mm: {}", gauge.resolution_mm).map_err(io)?;
    writeln!(f, "# sampling_interval_s: {}", gauge.series.step_s()).map_err(io)?;
    if let Some(kind) = &gauge.gauge_type {
        writeln!(f, "# gauge_type: {kind}").map_err(io)?;
    }
    writeln!(f, "time,rain_mm").map_err(io)?;
    for (i, v) in gauge.series.values().iter().enumerate() {
        writeln!(f, "{},{}", format_timestamp(gauge.series.timestamp(i)), cell(*v)).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes a single-valued series as `time,<column>`.
pub fn write_series_csv(path: &Path, column: &str, series: &TimeSeries) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    writeln!(f, "time,{column}").map_err(io)?;
    for (i, v) in series.values().iter().enumerate() {
        writeln!(f, "{},{}", format_timestamp(series.timestamp(i)), cell(*v)).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_series_csv(path: &Path, column: &str, unit: Unit) -> Result<TimeSeries> {
    let file = path.display().to_string();
    let table = read_table(path, "time", &[column])?;
    let step = infer_step(&table.times);
    let values = regularize(&file, &table.times, &table.columns[0], step)?;
    TimeSeries::new(table.times[0], step, values, unit)
}

/// On-disk dataset layout: `links/*.csv` plus one gauge file.
#[derive(Clone, Debug)]
pub struct DataDir {
    pub links: Vec<(LinkMeta, TimeSeries, TimeSeries)>,
    pub gauge: GaugeRecord,
    /// Ground-truth rain rate, present for synthetic data.
    pub truth: Option<TimeSeries>,
}

pub fn load_data_dir(dir: &Path, columns: &ColumnMap) -> Result<DataDir> {
    let links_dir = dir.join("links");
    if !links_dir.is_dir() {
        return Err(Error::MissingInput(links_dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&links_dir)
        .map_err(|e| Error::io(&links_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::MissingInput(links_dir));
    }
    let links = files.iter().map(|p| parse_link_csv(p, columns)).collect::<Result<Vec<_>>>()?;
    let gauge_path = dir.join("gauge.csv");
    if !gauge_path.exists() {
        return Err(Error::MissingInput(gauge_path));
    }
    let gauge = parse_gauge_csv(&gauge_path, columns)?;
    let truth_path = dir.join("truth.csv");
    let truth = truth_path
        .exists()
        .then(|| read_series_csv(&truth_path, "rain_rate_mm_h", Unit::MmPerH))
        .transpose()?;
    Ok(DataDir { links, gauge, truth })
}

pub fn write_data_dir(dir: &Path, data: &SynthDataset) -> Result<()> {
    for link in &data.links {
        let path = dir.join("links").join(format!("{}.csv", link.meta.link_id));
        write_link_csv(&path, &link.meta, &link.rsl, &link.tsl)?;
    }
    write_gauge_csv(&dir.join("gauge.csv"), &data.gauge)?;
    write_series_csv(&dir.join("truth.csv"), "rain_rate_mm_h", &data.truth)
}
