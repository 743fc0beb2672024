//! TabGRU and its baselines behind one [`ModelSpec`] interface.
//!
//! | kind        | pipeline                                                         |
//! |-------------|------------------------------------------------------------------|
//! | TabGRU      | project → +P → encoders → BiGRU → attention pool → head          |
//! | TransGRU    | project → +P → encoders → GRU → last step → head                 |
//! | Transformer | project → +P → encoders → last step → head                       |
//! | RNN, GRU    | project → recurrent stack → last step → head                     |
//! | BiGRU       | project → BiGRU stack → [last forward ; last backward] → head    |
//!
//! Every head ends in softplus so predictions are non-negative rain rates.

pub mod checkpoint;
pub mod layers;
mod params;
mod spec;

pub use params::{param_count, param_layout, Bound, Init, ModelParams, ParamSlot};
pub use spec::{Cell, ModelKind, ModelSpec, Recurrent, FFN_MULT, LAYER_NORM_EPS};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeedRng;
use layers::{EncoderWeights, RecurrentWeights};

/// Builds the forward pass on `g` for an input node `x` of shape `[B, L, F]`
/// and returns the `[B]` prediction node.
pub fn forward_graph(
    g: &mut Graph,
    spec: &ModelSpec,
    p: &Bound<'_>,
    x: Var,
    train: bool,
    rng: &mut SeedRng,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != spec.window_len || shape[2] != spec.n_features {
        return Err(Error::SpecMismatch(format!(
            "input {shape:?} does not match window {} x features {}",
            spec.window_len, spec.n_features
        )));
    }
    let batch = shape[0];
    let len = spec.window_len;
    let dropout = spec.dropout;

    let mut h = layers::input_project(g, x, p.get("input.weight")?, p.get("input.bias")?)?;

    if spec.kind.has_encoder() {
        h = layers::add_positional(g, h, p.get("pos")?)?;
        for i in 0..spec.n_encoder_layers {
            let w = EncoderWeights::bind(p, i)?;
            h = layers::encoder_layer(g, h, &w, spec.n_heads, dropout, train, rng)?;
        }
    }

    let features = match spec.kind.recurrent() {
        None => layers::select_step(g, h, len - 1)?,
        Some(rec) => {
            let mut last_fwd = h;
            let mut last_bwd = h;
            for layer in 0..spec.gru_layers {
                let fwd = RecurrentWeights::bind(p, layer, "fwd")?;
                if rec.bidirectional {
                    let bwd = RecurrentWeights::bind(p, layer, "bwd")?;
                    let out = layers::bigru(g, h, &fwd, &bwd)?;
                    h = out.sequence;
                    last_fwd = out.last_forward;
                    last_bwd = out.last_backward;
                } else {
                    let states = layers::recurrent_direction(g, h, &fwd, rec.cell, false)?;
                    last_fwd = *states.last().unwrap();
                    h = layers::stack_steps(g, &states)?;
                }
                if layer + 1 < spec.gru_layers {
                    h = g.dropout(h, dropout, train, rng);
                }
            }
            match spec.kind {
                ModelKind::TabGru => layers::attention_pool(g, h, p.get("pool.weight")?, p.get("pool.bias")?)?.0,
                ModelKind::BiGru => g.concat(&[last_fwd, last_bwd], 1)?,
                _ => last_fwd,
            }
        }
    };

    let features = g.dropout(features, dropout, train, rng);
    let out = layers::linear(g, features, p.get("head.weight")?, p.get("head.bias")?)?;
    let out = g.reshape(out, &[batch])?;
    Ok(g.softplus(out))
}

/// Predicts `[B]` rain rates (mm/h) for inputs `[B, L, F]`.
pub fn forward(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Tensor,
    train: bool,
    rng: &mut SeedRng,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let out = forward_graph(&mut g, spec, &bound, xv, train, rng)?;
    Ok(g.value(out).clone())
}

/// Inference over many windows in chunks of `batch`.
pub fn predict(spec: &ModelSpec, params: &ModelParams, inputs: &Tensor, batch: usize) -> Result<Vec<f64>> {
    let shape = inputs.shape();
    if shape.len() != 3 {
        return Err(Error::SpecMismatch(format!("expected [N, L, F] inputs, got {shape:?}")));
    }
    let per = shape[1] * shape[2];
    let mut rng = SeedRng::new(0);
    let mut out = Vec::with_capacity(shape[0]);
    for start in (0..shape[0]).step_by(batch.max(1)) {
        let end = (start + batch.max(1)).min(shape[0]);
        let chunk = Tensor::new(
            vec![end - start, shape[1], shape[2]],
            inputs.data()[start * per..end * per].to_vec(),
        )?;
        out.extend_from_slice(forward(spec, params, &chunk, false, &mut rng)?.data());
    }
    Ok(out)
}
