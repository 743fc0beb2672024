use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture family. `TransGru` is the ablation of `TabGru` without
/// bidirectionality and without attention pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "TabGRU")]
    TabGru,
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "Transformer")]
    Transformer,
    #[serde(rename = "TransGRU")]
    TransGru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Rnn,
        ModelKind::Gru,
        ModelKind::BiGru,
        ModelKind::Transformer,
        ModelKind::TransGru,
        ModelKind::TabGru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TabGru => "TabGRU",
            ModelKind::Rnn => "RNN",
            ModelKind::Gru => "GRU",
            ModelKind::BiGru => "BiGRU",
            ModelKind::Transformer => "Transformer",
            ModelKind::TransGru => "TransGRU",
        }
    }

    /// Learnable positional table plus encoder stack.
    pub fn has_encoder(self) -> bool {
        matches!(self, ModelKind::TabGru | ModelKind::TransGru | ModelKind::Transformer)
    }

    pub fn recurrent(self) -> Option<Recurrent> {
        match self {
            ModelKind::Rnn => Some(Recurrent { cell: Cell::Tanh, bidirectional: false }),
            ModelKind::Gru | ModelKind::TransGru => Some(Recurrent { cell: Cell::Gru, bidirectional: false }),
            ModelKind::BiGru | ModelKind::TabGru => Some(Recurrent { cell: Cell::Gru, bidirectional: true }),
            ModelKind::Transformer => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.name().replace("GRU", "-GRU").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown model kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Tanh,
    Gru,
}

impl Cell {
    pub fn gates(self) -> usize {
        match self {
            Cell::Tanh => 1,
            Cell::Gru => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recurrent {
    pub cell: Cell,
    pub bidirectional: bool,
}

/// Declarative architecture description. Defaults follow the published
/// hyperparameter table; `d_model` is not published and defaults to the GRU
/// width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dropout: f64,
    pub window_len: usize,
    pub n_features: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::TabGru,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 3,
            gru_hidden: 64,
            gru_layers: 1,
            dropout: 0.3,
            window_len: 30,
            n_features: 10,
        }
    }
}

pub const FFN_MULT: usize = 4;
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl ModelSpec {
    pub fn with_kind(&self, kind: ModelKind) -> Self {
        Self { kind, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.d_model == 0 || self.n_heads == 0 {
            return bad("d_model and n_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model ({}) must be divisible by n_heads ({}) so that d_k = d_v = d_model / n_heads",
                self.d_model, self.n_heads
            ));
        }
        if self.window_len == 0 || self.n_features == 0 {
            return bad("window_len and n_features must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kind.has_encoder() && self.n_encoder_layers == 0 {
            return bad(format!("{} needs at least one encoder layer", self.kind));
        }
        if self.kind.recurrent().is_some() && (self.gru_hidden == 0 || self.gru_layers == 0) {
            return bad(format!("{} needs gru_hidden and gru_layers >= 1", self.kind));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the vector handed to the regression head.
    pub fn readout_width(&self) -> usize {
        match self.kind.recurrent() {
            Some(r) if r.bidirectional => 2 * self.gru_hidden,
            Some(_) => self.gru_hidden,
            None => self.d_model,
        }
    }
}
