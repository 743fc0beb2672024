use std::collections::HashMap;

use super::spec::{Cell, ModelSpec, FFN_MULT};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn slot(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSlot {
    ParamSlot { name: name.into(), shape: shape.to_vec(), init }
}

fn linear_slots(out: &mut Vec<ParamSlot>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(slot(format!("{prefix}.weight"), &[fan_in, fan_out], Init::Uniform { fan_in }));
    out.push(slot(format!("{prefix}.bias"), &[fan_out], Init::Uniform { fan_in }));
}

/// Every parameter the spec implies, in canonical order.
pub fn param_layout(spec: &ModelSpec) -> Vec<ParamSlot> {
    let d = spec.d_model;
    let mut out = Vec::new();
    linear_slots(&mut out, "input", spec.n_features, d);

    if spec.kind.has_encoder() {
        out.push(slot("pos", &[1, spec.window_len, d], Init::Zeros));
        for i in 0..spec.n_encoder_layers {
            let p = format!("encoder.{i}");
            for w in ["wq", "wk", "wv", "wo"] {
                out.push(slot(format!("{p}.attn.{w}"), &[d, d], Init::Uniform { fan_in: d }));
            }
            out.push(slot(format!("{p}.ln1.gain"), &[d], Init::Ones));
            out.push(slot(format!("{p}.ln1.bias"), &[d], Init::Zeros));
            linear_slots(&mut out, &format!("{p}.ffn1"), d, FFN_MULT * d);
            linear_slots(&mut out, &format!("{p}.ffn2"), FFN_MULT * d, d);
            out.push(slot(format!("{p}.ln2.gain"), &[d], Init::Ones));
            out.push(slot(format!("{p}.ln2.bias"), &[d], Init::Zeros));
        }
    }

    if let Some(rec) = spec.kind.recurrent() {
        let h = spec.gru_hidden;
        let g = rec.cell.gates() * h;
        let dirs: &[&str] = if rec.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        let mut input = d;
        for layer in 0..spec.gru_layers {
            for dir in dirs {
                let p = format!("rnn.{layer}.{dir}");
                out.push(slot(format!("{p}.w_ih"), &[input, g], Init::Uniform { fan_in: h }));
                out.push(slot(format!("{p}.w_hh"), &[h, g], Init::Uniform { fan_in: h }));
                out.push(slot(format!("{p}.b_ih"), &[g], Init::Uniform { fan_in: h }));
                out.push(slot(format!("{p}.b_hh"), &[g], Init::Uniform { fan_in: h }));
            }
            input = dirs.len() * h;
        }
        debug_assert!(matches!(rec.cell, Cell::Gru | Cell::Tanh));
    }

    let width = spec.readout_width();
    if spec.kind == super::ModelKind::TabGru {
        linear_slots(&mut out, "pool", width, 1);
    }
    linear_slots(&mut out, "head", width, 1);
    out
}

pub fn param_count(spec: &ModelSpec) -> usize {
    param_layout(spec).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

/// Named parameter tensors in canonical layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn init(spec: &ModelSpec, rng: &mut SeedRng) -> Result<Self> {
        spec.validate()?;
        let mut entries = Vec::new();
        for s in param_layout(spec) {
            let n = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.uniform_in(-bound, bound)).collect()
                }
            };
            entries.push((s.name, Tensor::new(s.shape, data)?));
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors, index }
    }

    /// Adopts named tensors after checking them against the spec's layout.
    pub fn from_named(spec: &ModelSpec, named: Vec<(String, Tensor)>) -> Result<Self> {
        spec.validate()?;
        let layout = param_layout(spec);
        let mut by_name: HashMap<String, Tensor> = named.into_iter().collect();
        let mut entries = Vec::with_capacity(layout.len());
        for s in &layout {
            let t = by_name
                .remove(&s.name)
                .ok_or_else(|| Error::SpecMismatch(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::SpecMismatch(format!(
                    "{} has shape {:?}, spec requires {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            entries.push((s.name.clone(), t));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::SpecMismatch(format!("unexpected parameter {extra}")));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound { vars, index: &self.index }
    }

    /// Names existing graph leaves (aligned with [`ModelParams::tensors`]).
    pub fn rebind(&self, vars: &[Var]) -> Bound<'_> {
        assert_eq!(vars.len(), self.tensors.len(), "one var per parameter");
        Bound { vars: vars.to_vec(), index: &self.index }
    }

    /// Same as [`ModelParams::bind`] but with gradients disabled.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound { vars, index: &self.index }
    }
}

/// Parameters living on a graph, addressable by name.
pub struct Bound<'a> {
    vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::SpecMismatch(format!("parameter {name} not bound")))
    }

    /// Vars in canonical order, aligned with [`ModelParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn reference() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::TabGru,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            gru_hidden: 3,
            gru_layers: 1,
            dropout: 0.0,
            window_len: 4,
            n_features: 2,
        }
    }

    #[test]
    fn tabgru_count_matches_hand_enumeration() {
        let (f, d, l, h) = (2, 8, 4, 3);
        let input = f * d + d;
        let pos = l * d;
        let attn = 4 * d * d;
        let norms = 2 * (d + d);
        let ffn = d * 4 * d + 4 * d + 4 * d * d + d;
        let gru_dir = d * 3 * h + h * 3 * h + 3 * h + 3 * h;
        let pool = 2 * h + 1;
        let head = 2 * h + 1;
        let expected = input + pos + attn + norms + ffn + 2 * gru_dir + pool + head;
        assert_eq!(expected, 1144);
        assert_eq!(param_count(&reference()), expected);
    }

    #[test]
    fn baseline_counts_match_hand_enumeration() {
        let base = reference();
        let (f, d, l, h) = (2, 8, 4, 3);
        let input = f * d + d;
        let encoder = 4 * d * d + 2 * (d + d) + d * 4 * d + 4 * d + 4 * d * d + d;
        let gru_dir = d * 3 * h + h * 3 * h + 6 * h;
        let rnn_dir = d * h + h * h + 2 * h;
        let cases = [
            (ModelKind::Rnn, input + rnn_dir + h + 1),
            (ModelKind::Gru, input + gru_dir + h + 1),
            (ModelKind::BiGru, input + 2 * gru_dir + 2 * h + 1),
            (ModelKind::Transformer, input + l * d + encoder + d + 1),
            (ModelKind::TransGru, input + l * d + encoder + gru_dir + h + 1),
        ];
        for (kind, expected) in cases {
            assert_eq!(param_count(&base.with_kind(kind)), expected, "{kind}");
        }
    }

    #[test]
    fn stacked_bigru_second_layer_reads_both_directions() {
        let spec = ModelSpec { gru_layers: 2, ..reference() };
        let layout = param_layout(&spec);
        let w = layout.iter().find(|s| s.name == "rnn.1.bwd.w_ih").unwrap();
        assert_eq!(w.shape, vec![6, 9]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = reference();
        let a = ModelParams::init(&spec, &mut SeedRng::new(3)).unwrap();
        let b = ModelParams::init(&spec, &mut SeedRng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.get("pos").unwrap().data().iter().all(|&v| v == 0.0));
        let w = a.get("input.weight").unwrap();
        let bound = (1.0f64 / 2.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.scalar_count(), param_count(&spec));
    }

    #[test]
    fn from_named_rejects_wrong_shapes() {
        let spec = reference();
        let p = ModelParams::init(&spec, &mut SeedRng::new(1)).unwrap();
        let mut named: Vec<(String, Tensor)> =
            p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert!(ModelParams::from_named(&spec, named.clone()).is_ok());
        named[0].1 = Tensor::zeros(&[3, 3]);
        assert!(matches!(ModelParams::from_named(&spec, named), Err(Error::SpecMismatch(_))));
    }
}
