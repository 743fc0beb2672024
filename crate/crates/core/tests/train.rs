use cmlrain::ingest::synth_dataset;
use cmlrain::model::{checkpoint, ModelKind, ModelParams, ModelSpec};
use cmlrain::preprocess::{prepare, PreprocessConfig, Split, SplitBounds, WindowedDataset};
use cmlrain::rng::SeedRng;
use cmlrain::train::{evaluate_mse, train, TrainConfig, Trainer};
use cmlrain::Error;

fn small_dataset() -> WindowedDataset {
    let d = synth_dataset(3, 6);
    let first = d.truth.start().date_naive();
    let cfg = PreprocessConfig { bounds: SplitBounds::compressed(first, 2, 1, 1), ..Default::default() };
    let (links, gauge) = d.into_parts();
    prepare(&links, &gauge, &cfg).unwrap().dataset
}

fn spec(kind: ModelKind, n_features: usize) -> ModelSpec {
    ModelSpec { kind, d_model: 8, n_heads: 2, n_encoder_layers: 1, gru_hidden: 4, gru_layers: 1, dropout: 0.2, window_len: 30, n_features }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig { seed, epochs: 3, max_steps_per_epoch: Some(5), batch_size: 16, ..Default::default() }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = small_dataset();
    let s = spec(ModelKind::TabGru, data.n_features());
    let cfg = TrainConfig { lr: 0.0, ..quick(1) };
    let init = ModelParams::init(&s, &mut SeedRng::new(1).split(1)).unwrap();
    let out = train(&s, &data, &cfg).unwrap();
    assert_eq!(out.params, init);
    assert_eq!(out.best_epoch, 1);
    let v = out.history[0].val_loss;
    assert!(out.history.iter().all(|r| r.val_loss == v));
}

#[test]
fn training_is_bit_reproducible() {
    let data = small_dataset();
    let s = spec(ModelKind::TabGru, data.n_features());
    let a = train(&s, &data, &quick(4)).unwrap();
    let b = train(&s, &data, &quick(4)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let c = train(&s, &data, &quick(5)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn best_checkpoint_replays_its_validation_loss() {
    let data = small_dataset();
    let s = spec(ModelKind::BiGru, data.n_features());
    let cfg = TrainConfig { epochs: 4, ..quick(2) };
    let out = train(&s, &data, &cfg).unwrap();
    let best = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.history[out.best_epoch - 1].val_loss, best);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &s, &out.params).unwrap();
    let (s2, p2) = checkpoint::load(&path).unwrap();
    let replay = evaluate_mse(&s2, &p2, &data, &data.indices(Split::Val), 7).unwrap();
    assert_eq!(replay.to_bits(), best.to_bits());
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let data = small_dataset();
    let ids: Vec<usize> = data.indices(Split::Train).into_iter().step_by(97).take(32).collect();
    let (x, y) = data.batch(&ids);
    let s = ModelSpec { dropout: 0.0, ..spec(ModelKind::Gru, data.n_features()) };
    let mut t = Trainer::new(s, TrainConfig { lr: 1e-2, seed: 3, ..Default::default() }).unwrap();
    let first = t.step(&x, &y).unwrap();
    let mut last = first;
    for _ in 0..60 {
        last = t.step(&x, &y).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn non_finite_loss_is_reported_as_divergence() {
    let data = small_dataset();
    let s = spec(ModelKind::Gru, data.n_features());
    let mut t = Trainer::new(s, TrainConfig::default()).unwrap();
    let (x, mut y) = data.batch(&[0, 1]);
    y[0] = f64::NAN;
    let e = t.step(&x, &y).unwrap_err();
    assert!(matches!(e, Error::DivergedLoss { .. }));
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn spec_must_match_dataset() {
    let data = small_dataset();
    let s = spec(ModelKind::Gru, data.n_features() + 1);
    assert!(matches!(train(&s, &data, &quick(0)), Err(Error::SpecMismatch(_))));
}
