//! Command-line front end. Every subcommand maps errors onto the exit-code
//! contract of [`Error::exit_code`]; log lines go to stderr as
//! `cmlrain:<level>: <message>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{detect_events, emit_report, events_csv, metrics, EvalReport};
use crate::ingest::{self, format_timestamp, parse_gauge_csv, parse_timestamp, ColumnMap, SynthConfig, TimeSeries, Unit};
use crate::model::{checkpoint, ModelSpec};
use crate::pipeline::{self, RunConfig};
use crate::pl::PlConfig;
use crate::preprocess::{align, gauge_to_rate, prepare, Split, WindowedDataset};
use crate::train::{predict_windows, train_with_log, write_history, TrainConfig};

pub const DATA_DIR_ENV: &str = "CMLRAIN_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "cmlrain", version, about = "Rainfall estimation from commercial microwave links")]
pub struct Cli {
    /// Print debug lines and report non-finite intermediate values.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic data directory (links/, gauge.csv, truth.csv).
    Synth(SynthArgs),
    /// Build the windowed dataset (dataset.bin + manifest.json).
    Preprocess(PreprocessArgs),
    /// Train one model on a preprocessed dataset.
    Train(TrainArgs),
    /// Score predictions against a reference rain-rate series.
    Evaluate(EvaluateArgs),
    /// Run the power-law baseline on a raw data directory.
    ComparePl(ComparePlArgs),
    /// List rain events in a rate series or gauge record.
    DetectEvents(DetectEventsArgs),
    /// Train every model kind and PL end to end and write the report.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 14)]
    pub days: usize,
    /// Zero noise, no wet antenna, no drift.
    #[arg(long)]
    pub clean: bool,
    /// Generator config (JSON); flags override its seed and days.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DataSource {
    /// Raw data directory.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Use generated data instead of a data directory.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model spec JSON; `window_len` and `n_features` follow the dataset.
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training config JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// CSV `time,<estimator>...`.
    #[arg(long, required_unless_present = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// CSV `time,<rate>`.
    #[arg(long, required_unless_present = "checkpoint")]
    pub truth: Option<PathBuf>,
    /// Score a checkpoint on the test split of `--data` instead.
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ComparePlArgs {
    #[arg(long, env = DATA_DIR_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub pl_config: Option<PathBuf>,
    /// Run config supplying preprocessing and split bounds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectEventsArgs {
    /// CSV `time,<rate mm/h>`.
    #[arg(long, conflicts_with = "gauge", required_unless_present = "gauge")]
    pub rate: Option<PathBuf>,
    /// Gauge CSV; converted to rate with `--smooth-win`.
    #[arg(long)]
    pub gauge: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub smooth_win: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Logger {
    pub verbose: bool,
}

impl Logger {
    pub fn info(&self, msg: &str) {
        eprintln!("cmlrain:info: {msg}");
    }

    pub fn debug(&self, msg: &str) {
        if self.verbose {
            eprintln!("cmlrain:debug: {msg}");
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.into()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Resolves the run config from an optional file, flags and data source.
fn resolve(config: Option<&Path>, source: &DataSource, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match (config, source.synthetic) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::synthetic(seed.unwrap_or(0)),
        (None, false) => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
        if let Some(sy) = cfg.synthetic.as_mut() {
            sy.seed = s;
        }
    }
    if source.synthetic && cfg.synthetic.is_none() {
        cfg.synthetic = Some(SynthConfig { seed: cfg.seed, ..Default::default() });
    }
    if !source.synthetic {
        if let Some(d) = &source.data_dir {
            cfg.data_dir = Some(d.clone());
            cfg.synthetic = None;
        }
    }
    if cfg.synthetic.is_none() && cfg.data_dir.is_none() {
        return Err(Error::ConfigInvalid(format!("no input: pass --data-dir, set {DATA_DIR_ENV}, or use --synthetic")));
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let log = Logger { verbose: cli.verbose };
    crate::autodiff::set_nan_guard(cli.verbose);
    match cli.command {
        Command::Synth(a) => synth(a, &log),
        Command::Preprocess(a) => preprocess_cmd(a, &log),
        Command::Train(a) => train_cmd(a, &log),
        Command::Evaluate(a) => evaluate_cmd(a, &log),
        Command::ComparePl(a) => compare_pl_cmd(a, &log),
        Command::DetectEvents(a) => detect_events_cmd(a, &log),
        Command::Reproduce(a) => reproduce_cmd(a, &log),
    }
}

fn synth(a: SynthArgs, log: &Logger) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None if a.clean => SynthConfig::clean(a.seed, a.days),
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.days = a.days;
    if a.days == 0 {
        return Err(Error::ConfigInvalid("days must be >= 1".into()));
    }
    pipeline::write_synthetic(&a.out, &cfg)?;
    log.info(&format!("wrote {} days, {} links to {}", cfg.days, cfg.links.len(), a.out.display()));
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs, log: &Logger) -> Result<()> {
    let mut cfg = resolve(a.config.as_deref(), &a.source, a.seed)?;
    cfg.out_dir = a.out.clone();
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    cfg.write(&a.out.join("run.json"))?;
    let raw = pipeline::load_raw(&cfg)?;
    let prepared = prepare(&raw.links, &raw.gauge, &cfg.preprocess)?;
    prepared.dataset.save(&a.out)?;
    let c = prepared.dataset.counts();
    log.info(&format!("windows train={} val={} test={}", c.train, c.val, c.test));
    Ok(())
}

fn train_cmd(a: TrainArgs, log: &Logger) -> Result<()> {
    let spec: ModelSpec = read_json(&a.spec)?;
    spec.validate()?;
    let mut tcfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    tcfg.seed = a.seed;
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    tcfg.validate()?;
    let data = WindowedDataset::load(&a.data)?;
    let spec = ModelSpec { window_len: data.window_len, n_features: data.n_features(), ..spec };
    spec.validate()?;
    let outcome = train_with_log(&spec, &data, &tcfg, |r| {
        log.info(&format!("epoch={} train_loss={} val_loss={}", r.epoch, r.train_loss, r.val_loss))
    })?;
    checkpoint::save(&a.out, &spec, &outcome.params)?;
    let mut hist = a.out.clone().into_os_string();
    hist.push(".history.csv");
    write_history(Path::new(&hist), &outcome.history)?;
    log.info(&format!("best epoch {} saved to {}", outcome.best_epoch, a.out.display()));
    Ok(())
}

/// Reads `time,<col>...` into timestamps and named columns.
fn read_columns(path: &Path) -> Result<(Vec<chrono::DateTime<chrono::Utc>>, Vec<(String, Vec<f64>)>)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.into()));
    }
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 || headers[0] != "time" {
        return Err(Error::MalformedHeader { file, message: "expected time,<column>...".into() });
    }
    let mut times = Vec::new();
    let mut cols: Vec<(String, Vec<f64>)> = headers[1..].iter().map(|h| (h.clone(), Vec::new())).collect();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let t = parse_timestamp(rec.get(0).unwrap_or("")).ok_or_else(|| Error::MalformedHeader {
            file: file.clone(),
            message: format!("row {}: bad timestamp", row + 1),
        })?;
        times.push(t);
        for (j, (_, c)) in cols.iter_mut().enumerate() {
            c.push(rec.get(j + 1).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN));
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyFile { file });
    }
    Ok((times, cols))
}

fn evaluate_cmd(a: EvaluateArgs, log: &Logger) -> Result<()> {
    let report = if let Some(ckpt) = &a.checkpoint {
        let data_dir = a.data.as_ref().expect("clap enforces --data");
        let (spec, params) = checkpoint::load(ckpt)?;
        let data = WindowedDataset::load(data_dir)?;
        let ids = data.indices(Split::Test);
        let pred = predict_windows(&spec, &params, &data, &ids, 256)?;
        let times = ids.iter().map(|&k| data.target_time(k)).collect();
        let truth = ids.iter().map(|&k| data.target(k)).collect();
        EvalReport::build(times, truth, vec![(spec.kind.name().to_string(), pred)])?
    } else {
        let (pt, pcols) = read_columns(a.pred.as_deref().expect("clap enforces --pred"))?;
        let (tt, tcols) = read_columns(a.truth.as_deref().expect("clap enforces --truth"))?;
        let truth_at: BTreeMap<_, f64> = tt.iter().copied().zip(tcols[0].1.iter().copied()).collect();
        let keep: Vec<usize> = (0..pt.len())
            .filter(|&i| truth_at.get(&pt[i]).is_some_and(|v| v.is_finite()) && pcols.iter().all(|(_, c)| c[i].is_finite()))
            .collect();
        let times = keep.iter().map(|&i| pt[i]).collect();
        let truth = keep.iter().map(|&i| truth_at[&pt[i]]).collect();
        let est = pcols.into_iter().map(|(n, c)| (n, keep.iter().map(|&i| c[i]).collect())).collect();
        EvalReport::build(times, truth, est)?
    };
    emit_report(&report, &a.out)?;
    for e in &report.estimates {
        log.info(&format!("{} n={} rmse={} mae={}", e.name, e.metrics.n, e.metrics.rmse, e.metrics.mae));
    }
    Ok(())
}

fn compare_pl_cmd(a: ComparePlArgs, log: &Logger) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.pl_config {
        cfg.pl = read_json::<PlConfig>(p)?;
        cfg.pl.validate()?;
    }
    let d = ingest::load_data_dir(&a.data, &cfg.columns)?;
    let aligned = align(&d.links, &d.gauge, &cfg.preprocess)?;
    let times = aligned.rate.timestamps();
    let gauge = aligned.rate.complete().expect("imputed");
    let pl = pipeline::pl_on(&aligned.rsl, &cfg.preprocess.bounds, &cfg.pl, &times)?;
    let mut s = String::from("time,gauge,PL\n");
    for i in 0..times.len() {
        s.push_str(&format!("{},{},{}\n", format_timestamp(times[i]), gauge[i], pl[i]));
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&a.out, s).map_err(|e| Error::io(&a.out, e))?;
    let m = metrics(&gauge, &pl)?;
    log.info(&format!("PL n={} rmse={} mae={} r2={:?} pcc={:?}", m.n, m.rmse, m.mae, m.r2, m.pcc));
    Ok(())
}

fn detect_events_cmd(a: DetectEventsArgs, log: &Logger) -> Result<()> {
    let rate = if let Some(g) = &a.gauge {
        if !g.exists() {
            return Err(Error::MissingInput(g.clone()));
        }
        let rec = parse_gauge_csv(g, &ColumnMap::default())?;
        gauge_to_rate(&rec, a.smooth_win)?
    } else {
        let path = a.rate.as_deref().expect("clap enforces --rate");
        let (times, cols) = read_columns(path)?;
        let start = times[0];
        let values: Vec<Option<f64>> = cols[0].1.iter().map(|v| v.is_finite().then_some(*v)).collect();
        for (i, t) in times.iter().enumerate() {
            if (*t - start).num_seconds() != 60 * i as i64 {
                return Err(Error::IrregularStep { file: path.display().to_string(), row: i + 1, expected_s: 60 });
            }
        }
        TimeSeries::new(start, 60, values, Unit::MmPerH)?
    };
    let events = detect_events(&rate)?;
    std::fs::write(&a.out, events_csv(&events)).map_err(|e| Error::io(&a.out, e))?;
    log.info(&format!("{} events", events.len()));
    Ok(())
}

fn reproduce_cmd(a: ReproduceArgs, log: &Logger) -> Result<()> {
    let mut cfg = resolve(a.config.as_deref(), &a.source, a.seed)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    let outcome = pipeline::reproduce(&cfg, |m| log.debug(m))?;
    for e in &outcome.report.estimates {
        log.info(&format!("{} rmse={} mae={} r2={:?} pcc={:?}", e.name, e.metrics.rmse, e.metrics.mae, e.metrics.r2, e.metrics.pcc));
    }
    log.info(&format!("report written to {}", cfg.out_dir.display()));
    Ok(())
}
