//! End-to-end runs: data → preprocessing → every model kind + PL → report.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{emit_report, EvalReport};
use crate::ingest::{load_data_dir, synth_with, write_data_dir, ColumnMap, GaugeRecord, LinkMeta, SynthConfig, TimeSeries};
use crate::model::{checkpoint, ModelKind, ModelSpec};
use crate::pl::{pl_estimate, PlConfig};
use crate::preprocess::{prepare, PreprocessConfig, Split, SplitBounds};
use crate::train::{predict_windows, train_with_log, write_history, EpochRecord, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run needs; written back verbatim as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Real-data directory (`links/*.csv`, `gauge.csv`); ignored when
    /// `synthetic` is set.
    pub data_dir: Option<PathBuf>,
    pub synthetic: Option<SynthConfig>,
    pub columns: ColumnMap,
    pub preprocess: PreprocessConfig,
    /// Shared architecture; `kind` is overridden per entry of `kinds`, and
    /// `window_len`/`n_features` follow the data.
    pub model: ModelSpec,
    pub kinds: Vec<ModelKind>,
    pub train: TrainConfig,
    pub pl: PlConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data_dir: None,
            synthetic: None,
            columns: ColumnMap::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelSpec::default(),
            kinds: ModelKind::ALL.to_vec(),
            train: TrainConfig::default(),
            pl: PlConfig::default(),
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Desk-scale analog of the full protocol: 28 synthetic days split
    /// 20 / buffer / 3 / buffer / 3, narrow models and a capped schedule.
    pub fn synthetic(seed: u64) -> Self {
        let synth = SynthConfig { seed, days: 28, ..Default::default() };
        let first = synth.start.date_naive();
        Self {
            seed,
            synthetic: Some(synth),
            preprocess: PreprocessConfig { bounds: SplitBounds::compressed(first, 20, 3, 3), ..Default::default() },
            model: ModelSpec { d_model: 16, n_heads: 2, n_encoder_layers: 1, gru_hidden: 16, dropout: 0.1, ..Default::default() },
            train: TrainConfig { seed, epochs: 20, max_steps_per_epoch: Some(100), ..Default::default() },
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.into()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::ConfigInvalid("kinds must not be empty".into()));
        }
        self.preprocess.bounds.validate()?;
        self.train.validate()?;
        self.pl.validate()?;
        for &kind in &self.kinds {
            self.spec_for(kind, self.model.n_features).validate()?;
        }
        Ok(())
    }

    pub fn spec_for(&self, kind: ModelKind, n_features: usize) -> ModelSpec {
        ModelSpec { kind, window_len: self.preprocess.window_len, n_features, ..self.model.clone() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Raw inputs: link records, the gauge and (synthetic only) true rain.
pub struct RawData {
    pub links: Vec<(LinkMeta, TimeSeries, TimeSeries)>,
    pub gauge: GaugeRecord,
    pub truth: Option<TimeSeries>,
}

pub fn load_raw(cfg: &RunConfig) -> Result<RawData> {
    if let Some(s) = &cfg.synthetic {
        let d = synth_with(s);
        let truth = Some(d.truth.clone());
        let (links, gauge) = d.into_parts();
        return Ok(RawData { links, gauge, truth });
    }
    let dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("no data_dir given and synthetic data not requested".into()))?;
    let d = load_data_dir(dir, &cfg.columns)?;
    Ok(RawData { links: d.links, gauge: d.gauge, truth: d.truth })
}

/// Site PL estimate on `times`, with the wet threshold calibrated on the
/// training-period RSL (the whole record if that period is too short).
pub fn pl_on(rsl: &[(LinkMeta, TimeSeries)], bounds: &SplitBounds, cfg: &PlConfig, times: &[DateTime<Utc>]) -> Result<Vec<f64>> {
    let train_rsl: Vec<Vec<f64>> = rsl
        .iter()
        .map(|(_, s)| {
            let all = s.complete().expect("imputed");
            let picked: Vec<f64> =
                (0..s.len()).filter(|&i| bounds.train.contains(s.timestamp(i))).map(|i| all[i]).collect();
            if picked.len() >= cfg.std_window_min {
                picked
            } else {
                all
            }
        })
        .collect();
    let refs: Vec<&[f64]> = train_rsl.iter().map(Vec::as_slice).collect();
    let cfg = cfg.calibrate(&refs)?;
    Ok(pl_estimate(rsl, times, &cfg)?.complete().expect("complete"))
}

pub struct KindResult {
    pub kind: ModelKind,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test_pred: Vec<f64>,
}

pub struct ReproduceOutcome {
    pub report: EvalReport,
    pub kinds: Vec<KindResult>,
}

impl ReproduceOutcome {
    pub fn rmse(&self, name: &str) -> Option<f64> {
        self.report.estimates.iter().find(|e| e.name == name).map(|e| e.metrics.rmse)
    }
}

/// Trains every configured kind on the train split, selects on val, and
/// scores all of them plus PL on the test split. Writes `run.json`,
/// the report files, `models/<kind>.ckpt` and `models/<kind>.history.csv`
/// under `cfg.out_dir`.
pub fn reproduce(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<ReproduceOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out.join("models")).map_err(|e| Error::io(out, e))?;
    cfg.write(&out.join("run.json"))?;

    let raw = load_raw(cfg)?;
    let prepared = prepare(&raw.links, &raw.gauge, &cfg.preprocess)?;
    let data = &prepared.dataset;
    let c = data.counts();
    log(&format!("windows train={} val={} test={}", c.train, c.val, c.test));
    let test_ids = data.indices(Split::Test);
    if test_ids.len() < 2 {
        return Err(Error::EmptySplit("test"));
    }
    let times: Vec<DateTime<Utc>> = test_ids.iter().map(|&k| data.target_time(k)).collect();
    let gauge: Vec<f64> = test_ids.iter().map(|&k| data.target(k)).collect();

    let mut kinds = Vec::new();
    let mut estimators = Vec::new();
    for &kind in &cfg.kinds {
        let spec = cfg.spec_for(kind, data.n_features());
        let tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
        let outcome = train_with_log(&spec, data, &tcfg, |r| {
            log(&format!("{kind} epoch={} train_loss={:.6} val_loss={:.6}", r.epoch, r.train_loss, r.val_loss))
        })?;
        checkpoint::save(&out.join("models").join(format!("{kind}.ckpt")), &spec, &outcome.params)?;
        write_history(&out.join("models").join(format!("{kind}.history.csv")), &outcome.history)?;
        let pred = predict_windows(&spec, &outcome.params, data, &test_ids, tcfg.eval_batch)?;
        estimators.push((kind.name().to_string(), pred.clone()));
        kinds.push(KindResult { kind, history: outcome.history, best_epoch: outcome.best_epoch, test_pred: pred });
    }
    let pl = pl_on(&prepared.rsl, &cfg.preprocess.bounds, &cfg.pl, &times)?;
    estimators.push(("PL".to_string(), pl));

    let report = EvalReport::build(times, gauge, estimators)?;
    emit_report(&report, out)?;
    for e in &report.estimates {
        log(&format!("{} rmse={:.4} mae={:.4}", e.name, e.metrics.rmse, e.metrics.mae));
    }
    Ok(ReproduceOutcome { report, kinds })
}

/// Writes a synthetic data directory plus its generator config.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig) -> Result<()> {
    let d = synth_with(cfg);
    write_data_dir(dir, &d)?;
    let path = dir.join("synth.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&path, e))
}
