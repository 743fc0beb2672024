//! Building blocks shared by every architecture. Each function appends its
//! computation to a graph and returns the output node.

use super::params::Bound;
use super::spec::{Cell, LAYER_NORM_EPS};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// `x · w + b` over the last axis.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_broadcast(y, b)
}

/// Shared affine map from `F` raw features to `d_model` at every step.
pub fn input_project(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xs, ws) = (g.shape(x), g.shape(w));
    if xs.len() != 3 || xs[2] != ws[0] {
        return Err(Error::shape("input_project", format!("input {xs:?} vs weight {ws:?}")));
    }
    linear(g, x, w, b)
}

/// `X + P`, with the `[1, L, d]` table broadcast over the batch.
pub fn add_positional(g: &mut Graph, x: Var, pos: Var) -> Result<Var> {
    let (len, expected) = (g.shape(x)[1], g.shape(pos)[1]);
    if len != expected {
        return Err(Error::LengthMismatch { expected, got: len });
    }
    g.add_broadcast(x, pos)
}

pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Unmasked multi-head self-attention. Head `i` uses column block `i` of the
/// query/key/value projections; heads are concatenated and mapped by `wo`.
/// Also returns each head's `[B, L, L]` attention matrix.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    w: &AttentionWeights,
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = *g.shape(x).last().unwrap();
    if g.shape(x).len() != 3 || d % n_heads != 0 || g.shape(w.wq) != [d, d] {
        return Err(Error::shape("multi_head_attention", format!("{:?} with {n_heads} heads", g.shape(x))));
    }
    let dk = d / n_heads;
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let scale = 1.0 / (dk as f64).sqrt();

    let mut heads = Vec::with_capacity(n_heads);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = g.slice(q, 2, lo, hi)?;
        let kh = g.slice(k, 2, lo, hi)?;
        let vh = g.slice(v, 2, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.batch_matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores, 2)?;
        heads.push(g.batch_matmul(a, vh)?);
        attn.push(a);
    }
    let cat = if n_heads == 1 { heads[0] } else { g.concat(&heads, 2)? };
    Ok((g.matmul(cat, w.wo)?, attn))
}

/// `layer_norm(x) * gain + bias` over the last axis.
pub fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = g.layer_norm(x, LAYER_NORM_EPS)?;
    let s = g.mul_broadcast(n, gain)?;
    g.add_broadcast(s, bias)
}

pub struct EncoderWeights {
    pub attn: AttentionWeights,
    pub ln1: (Var, Var),
    pub ffn1: (Var, Var),
    pub ffn2: (Var, Var),
    pub ln2: (Var, Var),
}

impl EncoderWeights {
    pub fn bind(p: &Bound<'_>, layer: usize) -> Result<Self> {
        let n = |s: &str| p.get(&format!("encoder.{layer}.{s}"));
        Ok(Self {
            attn: AttentionWeights { wq: n("attn.wq")?, wk: n("attn.wk")?, wv: n("attn.wv")?, wo: n("attn.wo")? },
            ln1: (n("ln1.gain")?, n("ln1.bias")?),
            ffn1: (n("ffn1.weight")?, n("ffn1.bias")?),
            ffn2: (n("ffn2.weight")?, n("ffn2.bias")?),
            ln2: (n("ln2.gain")?, n("ln2.bias")?),
        })
    }
}

/// Post-norm encoder block:
/// `Y = LN(X + drop(MHA(X)))`, `Z = LN(Y + drop(FFN(Y)))`, `FFN = W2·relu(W1·Y)`.
pub fn encoder_layer(
    g: &mut Graph,
    x: Var,
    w: &EncoderWeights,
    n_heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut SeedRng,
) -> Result<Var> {
    let (a, _) = multi_head_attention(g, x, &w.attn, n_heads)?;
    let a = g.dropout(a, dropout, train, rng);
    let r1 = g.add(x, a)?;
    let y = layer_norm(g, r1, w.ln1.0, w.ln1.1)?;

    let h = linear(g, y, w.ffn1.0, w.ffn1.1)?;
    let h = g.relu(h);
    let f = linear(g, h, w.ffn2.0, w.ffn2.1)?;
    let f = g.dropout(f, dropout, train, rng);
    let r2 = g.add(y, f)?;
    layer_norm(g, r2, w.ln2.0, w.ln2.1)
}

/// One direction of a recurrent layer.
#[derive(Clone, Copy)]
pub struct RecurrentWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

impl RecurrentWeights {
    pub fn bind(p: &Bound<'_>, layer: usize, dir: &str) -> Result<Self> {
        let n = |s: &str| p.get(&format!("rnn.{layer}.{dir}.{s}"));
        Ok(Self { w_ih: n("w_ih")?, w_hh: n("w_hh")?, b_ih: n("b_ih")?, b_hh: n("b_hh")? })
    }
}

/// Runs one direction over `[B, L, D]` from a zero state and returns the
/// hidden state at each position (`[B, H]` each, indexed by time).
///
/// GRU cell, gates ordered `(r, z, n)`:
/// `r = σ(x W_ir + b_ir + h W_hr + b_hr)`, `z` likewise,
/// `n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
/// Tanh cell: `h' = tanh(x W_ih + b_ih + h W_hh + b_hh)`.
pub fn recurrent_direction(
    g: &mut Graph,
    x: Var,
    w: &RecurrentWeights,
    cell: Cell,
    reverse: bool,
) -> Result<Vec<Var>> {
    let shape = g.shape(x).to_vec();
    let hidden = g.shape(w.w_hh)[0];
    if shape.len() != 3 || g.shape(w.w_ih)[0] != shape[2] || g.shape(w.w_hh)[1] != cell.gates() * hidden {
        return Err(Error::shape("recurrent", format!("input {shape:?}, hidden {hidden}")));
    }
    let (batch, len) = (shape[0], shape[1]);
    let gates = cell.gates() * hidden;

    // input contributions for all steps at once
    let xp = linear(g, x, w.w_ih, w.b_ih)?;
    let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut states = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let xt = g.slice(xp, 1, t, t + 1)?;
        let xt = g.reshape(xt, &[batch, gates])?;
        let hp = linear(g, h, w.w_hh, w.b_hh)?;
        h = match cell {
            Cell::Tanh => {
                let s = g.add(xt, hp)?;
                g.tanh(s)
            }
            Cell::Gru => {
                let xrz = g.slice(xt, 1, 0, 2 * hidden)?;
                let hrz = g.slice(hp, 1, 0, 2 * hidden)?;
                let rz = g.add(xrz, hrz)?;
                let rz = g.sigmoid(rz);
                let r = g.slice(rz, 1, 0, hidden)?;
                let z = g.slice(rz, 1, hidden, 2 * hidden)?;
                let xn = g.slice(xt, 1, 2 * hidden, 3 * hidden)?;
                let hn = g.slice(hp, 1, 2 * hidden, 3 * hidden)?;
                let rhn = g.mul(r, hn)?;
                let n = g.add(xn, rhn)?;
                let n = g.tanh(n);
                // (1 - z) n + z h  ==  n + z (h - n)
                let diff = g.sub(h, n)?;
                let zd = g.mul(z, diff)?;
                g.add(n, zd)?
            }
        };
        states[t] = h;
    }
    Ok(states)
}

/// Stacks per-step `[B, H]` states into `[B, L, H]`.
pub fn stack_steps(g: &mut Graph, states: &[Var]) -> Result<Var> {
    let (b, h) = (g.shape(states[0])[0], g.shape(states[0])[1]);
    let steps = states
        .iter()
        .map(|&s| g.reshape(s, &[b, 1, h]))
        .collect::<Result<Vec<_>>>()?;
    if steps.len() == 1 {
        return Ok(steps[0]);
    }
    g.concat(&steps, 1)
}

/// Output of a bidirectional pass: the stacked sequence `[B, L, 2H]` with
/// `Y_t = [h_t ; h'_t]`, plus the final forward state (`t = L-1`) and final
/// backward state (`t = 0`).
pub struct BiOutput {
    pub sequence: Var,
    pub last_forward: Var,
    pub last_backward: Var,
}

pub fn bigru(g: &mut Graph, x: Var, fwd: &RecurrentWeights, bwd: &RecurrentWeights) -> Result<BiOutput> {
    let f = recurrent_direction(g, x, fwd, Cell::Gru, false)?;
    let b = recurrent_direction(g, x, bwd, Cell::Gru, true)?;
    let fs = stack_steps(g, &f)?;
    let bs = stack_steps(g, &b)?;
    Ok(BiOutput { sequence: g.concat(&[fs, bs], 2)?, last_forward: *f.last().unwrap(), last_backward: b[0] })
}

/// Attention pooling: `α = softmax_t(x_t · w + b)`, `Z = Σ_t α_t x_t`.
/// Returns `Z` (`[B, D]`) and `α` (`[B, L]`).
pub fn attention_pool(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || g.shape(w) != [shape[2], 1] {
        return Err(Error::shape("attention_pool", format!("{shape:?} vs score {:?}", g.shape(w))));
    }
    let (batch, len, width) = (shape[0], shape[1], shape[2]);
    let scores = linear(g, x, w, b)?; // [B, L, 1]
    let scores = g.reshape(scores, &[batch, len])?;
    let alpha = g.softmax(scores, 1)?;
    let a3 = g.reshape(alpha, &[batch, 1, len])?;
    let z = g.batch_matmul(a3, x)?; // [B, 1, D]
    Ok((g.reshape(z, &[batch, width])?, alpha))
}

/// `[B, L, D] -> [B, D]` at time index `t`.
pub fn select_step(g: &mut Graph, x: Var, t: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let step = g.slice(x, 1, t, t + 1)?;
    g.reshape(step, &[s[0], s[2]])
}
