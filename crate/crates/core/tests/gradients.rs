//! Central finite-difference checks for every primitive and layer.

mod common;

use cmlrain::model::ModelKind;
use common::grad;

#[test]
fn elementwise_primitives() {
    grad::elementwise_primitives();
}

#[test]
fn chained_primitives() {
    grad::chained_primitives();
}

#[test]
fn relu_at_sampled_points_away_from_zero() {
    grad::relu_at_sampled_points_away_from_zero();
}

#[test]
fn input_projection_and_positional() {
    grad::input_projection_and_positional();
}

#[test]
fn positional_gradient_is_batch_sum_of_upstream() {
    grad::positional_gradient_is_batch_sum_of_upstream();
}

#[test]
fn attention_layers() {
    grad::attention_layers();
}

#[test]
fn encoder_layer_gradients() {
    grad::encoder_layer_gradients();
}

#[test]
fn bigru_and_rnn_gradients() {
    grad::bigru_and_rnn_gradients();
}

#[test]
fn full_tabgru_gradient() {
    grad::full_model_check(ModelKind::TabGru);
}

#[test]
fn full_baseline_gradients() {
    for kind in [ModelKind::TransGru, ModelKind::Transformer, ModelKind::BiGru, ModelKind::Gru, ModelKind::Rnn] {
        grad::full_model_check(kind);
    }
}

#[test]
fn normalization_invariants() {
    common::norm::normalization_invariants(100);
}
