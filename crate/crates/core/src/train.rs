//! Mini-batch Adam training with checkpoint-best selection on validation MSE.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward_graph, predict, ModelParams, ModelSpec};
use crate::preprocess::{Split, WindowedDataset};
use crate::rng::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[serde(rename = "mse")]
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub grad_clip_norm: Option<f64>,
    pub loss: Loss,
    /// Caps the optimizer steps per epoch; each epoch then sees a fresh
    /// random subset of the training windows.
    pub max_steps_per_epoch: Option<usize>,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 150,
            batch_size: 64,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip_norm: None,
            loss: Loss::Mse,
            max_steps_per_epoch: None,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be >= 1");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.grad_clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let (b1, b2) = cfg.adam_betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((x, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data().iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
    norm
}

/// Parameters plus optimizer state; one call to [`Trainer::step`] is one Adam update.
pub struct Trainer {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub state: AdamState,
    pub cfg: TrainConfig,
    steps: u64,
    rng: SeedRng,
}

impl Trainer {
    pub fn new(spec: ModelSpec, cfg: TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let root = SeedRng::new(cfg.seed);
        let params = ModelParams::init(&spec, &mut root.split(1))?;
        Ok(Self::with_params(spec, params, cfg))
    }

    pub fn with_params(spec: ModelSpec, params: ModelParams, cfg: TrainConfig) -> Self {
        let state = AdamState::new(params.tensors());
        let rng = SeedRng::new(cfg.seed).split(2);
        Self { spec, params, state, cfg, steps: 0, rng }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Mean-squared error and its gradients for one batch.
    pub fn loss_and_grads(&mut self, x: &Tensor, y: &[f64], train: bool) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let mut dropout_rng = self.rng.split(self.steps);
        let pred = forward_graph(&mut g, &self.spec, &bound, xv, train, &mut dropout_rng)?;
        let target = g.constant(Tensor::new(vec![y.len()], y.to_vec())?);
        let diff = g.sub(pred, target)?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean_all(sq);
        g.backward(loss)?;
        let grads = bound.vars().iter().map(|&v| g.grad(v)).collect();
        Ok((g.value(loss).item(), grads))
    }

    /// One Adam update on a batch; returns the batch loss before the update.
    pub fn step(&mut self, x: &Tensor, y: &[f64]) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_grads(x, y, true)?;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch: 0, step: self.steps as usize });
        }
        if let Some(c) = self.cfg.grad_clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(self.params.tensors_mut(), &grads, &mut self.state, &self.cfg)?;
        self.steps += 1;
        Ok(loss)
    }

    /// Inference-mode MSE over the given windows.
    pub fn evaluate(&self, data: &WindowedDataset, ids: &[usize]) -> Result<f64> {
        evaluate_mse(&self.spec, &self.params, data, ids, self.cfg.eval_batch)
    }
}

pub fn predict_windows(spec: &ModelSpec, params: &ModelParams, data: &WindowedDataset, ids: &[usize], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch.max(1)) {
        let (x, _) = data.batch(chunk);
        out.extend(predict(spec, params, &x, chunk.len())?);
    }
    Ok(out)
}

pub fn evaluate_mse(spec: &ModelSpec, params: &ModelParams, data: &WindowedDataset, ids: &[usize], batch: usize) -> Result<f64> {
    let pred = predict_windows(spec, params, data, ids, batch)?;
    let sse: f64 = pred.iter().zip(ids).map(|(p, &k)| (p - data.target(k)).powi(2)).sum();
    Ok(sse / ids.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Full training run; `log` receives each finished epoch.
pub fn train_with_log(
    spec: &ModelSpec,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    mut log: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if spec.window_len != data.window_len || spec.n_features != data.n_features() {
        return Err(Error::SpecMismatch(format!(
            "spec expects window {} x {} features, dataset has {} x {}",
            spec.window_len,
            spec.n_features,
            data.window_len,
            data.n_features()
        )));
    }
    let train_ids = data.indices(Split::Train);
    let val_ids = data.indices(Split::Val);
    if train_ids.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_ids.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let mut trainer = Trainer::new(spec.clone(), cfg.clone())?;
    let shuffle_root = SeedRng::new(cfg.seed).split(3);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order = train_ids.clone();
        shuffle_root.split(epoch as u64).shuffle(&mut order);
        if let Some(cap) = cfg.max_steps_per_epoch {
            order.truncate(cap * cfg.batch_size);
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(chunk);
            let loss = trainer.step(&x, &y).map_err(|e| match e {
                Error::DivergedLoss { .. } => Error::DivergedLoss { epoch, step: i },
                other => other,
            })?;
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let val_loss = trainer.evaluate(data, &val_ids)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch, step: count / cfg.batch_size });
        }
        let rec = EpochRecord { epoch, train_loss: sum / count as f64, val_loss };
        log(&rec);
        history.push(rec);
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, trainer.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, history, best_epoch })
}

pub fn train(spec: &ModelSpec, data: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_log(spec, data, cfg, |_| {})
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}
