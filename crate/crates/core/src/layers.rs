//! LSTM, additive attention, embedding and linear projection layers.
//!
//! Layers own [`ParamId`]s into a shared [`ParamStore`]; forward functions
//! take the [`Bound`] graph handles of that store.
//!
//! The LSTM gate matrix `W: [4H x (X + H)]` stacks the input (`i`), forget
//! (`f`), cell (`g`) and output (`o`) gate rows in that order and multiplies
//! `[x; h_prev]`. No peepholes, no recurrent projection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmParams {
    /// `uniform(-s, s)` weights with `s = 1/sqrt(X + H)`, forget-gate bias 1.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        let fan_in = input_dim + hidden_dim;
        let w = store.insert_uniform(
            &format!("{prefix}.w"),
            &[4 * hidden_dim, fan_in],
            1.0 / sqrt(fan_in as f64),
            rng,
        )?;
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let b = store.insert(
            &format!("{prefix}.b"),
            crate::Tensor::vector(bias),
        )?;
        Ok(LstmParams {
            w,
            b,
            input_dim,
            hidden_dim,
        })
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim) + 4 * hidden_dim
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> LstmState {
        LstmState {
            h: g.zeros(&[self.hidden_dim]),
            c: g.zeros(&[self.hidden_dim]),
        }
    }
}

/// One LSTM time step:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_step(g: &mut Graph<'_>, bound: &Bound, p: &LstmParams, x: Var, prev: LstmState) -> Result<LstmState> {
    if g.shape(x) != [p.input_dim] {
        return Err(Error::shape("lstm_cell_step input", &[p.input_dim], g.shape(x)));
    }
    if g.shape(prev.h) != [p.hidden_dim] || g.shape(prev.c) != [p.hidden_dim] {
        return Err(Error::shape("lstm_cell_step state", &[p.hidden_dim], g.shape(prev.h)));
    }
    let xh = g.concat(&[x, prev.h])?;
    let z = g.linear(bound.var(p.w), xh, Some(bound.var(p.b)))?;
    let hc = g.lstm_cell(z, prev.c)?;
    let h = g.slice(hc, 0, p.hidden_dim)?;
    let c = g.slice(hc, p.hidden_dim, p.hidden_dim)?;
    Ok(LstmState { h, c })
}

/// Runs one LSTM layer over a sequence of input rows, appending `append`
/// (when given) to every step's input. Steps with `valid[t] == false` carry
/// the state through unchanged and emit a zero row.
pub fn lstm_layer_forward(
    g: &mut Graph<'_>,
    bound: &Bound,
    p: &LstmParams,
    inputs: &[Var],
    append: Option<Var>,
    valid: Option<&[bool]>,
) -> Result<Vec<Var>> {
    let mut state = p.zero_state(g);
    let mut out = Vec::with_capacity(inputs.len());
    let mut pad: Option<Var> = None;
    for (t, &x) in inputs.iter().enumerate() {
        if valid.is_some_and(|m| !m[t]) {
            let z = *pad.get_or_insert_with(|| g.zeros(&[p.hidden_dim]));
            out.push(z);
            continue;
        }
        let x = match append {
            Some(a) => g.concat(&[x, a])?,
            None => x,
        };
        state = lstm_cell_step(g, bound, p, x, state)?;
        out.push(state.h);
    }
    Ok(out)
}

/// Stacked LSTM over `inputs: [T x X]`. Returns every layer's output rows;
/// the last entry is the top layer.
pub fn lstm_stack_forward(
    g: &mut Graph<'_>,
    bound: &Bound,
    layers: &[LstmParams],
    inputs: Var,
    append: Option<Var>,
    valid: Option<&[bool]>,
) -> Result<Vec<Vec<Var>>> {
    let shape = g.shape(inputs).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("lstm_stack_forward", &shape, &[]));
    }
    if let Some(m) = valid {
        if m.len() != shape[0] {
            return Err(Error::shape("lstm_stack_forward mask", &shape, &[m.len()]));
        }
    }
    let extra = append.map_or(0, |a| g.shape(a).iter().product());
    let mut rows: Vec<Var> = (0..shape[0]).map(|t| g.row(inputs, t)).collect::<Result<_>>()?;
    let mut width = shape[1];
    let mut all = Vec::with_capacity(layers.len());
    for (i, p) in layers.iter().enumerate() {
        if p.input_dim != width + extra {
            return Err(Error::contract(format!(
                "layer {i} expects input width {} but receives {} + {extra}",
                p.input_dim, width
            )));
        }
        rows = lstm_layer_forward(g, bound, p, &rows, append, valid)?;
        width = p.hidden_dim;
        all.push(rows.clone());
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    /// `[A x H_enc]`
    pub w_enc: ParamId,
    /// `[A x H_dec]`
    pub w_dec: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, enc_dim: usize, dec_dim: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("attention_dim", "must be at least 1"));
        }
        let w_enc = store.insert_uniform(&format!("{prefix}.w_enc"), &[dim, enc_dim], 1.0 / sqrt(enc_dim as f64), rng)?;
        let w_dec = store.insert_uniform(&format!("{prefix}.w_dec"), &[dim, dec_dim], 1.0 / sqrt(dec_dim as f64), rng)?;
        let b = store.insert_constant(&format!("{prefix}.b"), &[dim], 0.0)?;
        let v = store.insert_uniform(&format!("{prefix}.v"), &[dim], 1.0 / sqrt(dim as f64), rng)?;
        Ok(AttentionParams { w_enc, w_dec, b, v, dim })
    }

    pub fn num_params(enc_dim: usize, dec_dim: usize, dim: usize) -> usize {
        dim * enc_dim + dim * dec_dim + 2 * dim
    }

    /// Projects encoder rows once per utterance: `H_enc W_enc^T`.
    pub fn keys(&self, g: &mut Graph<'_>, bound: &Bound, enc: Var) -> Result<Var> {
        g.rows_linear(enc, bound.var(self.w_enc))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub alpha: Var,
    pub context: Var,
}

/// Additive attention with precomputed `keys = H_enc W_enc^T`:
/// `e_u = v · tanh(keys_u + W_dec s + b)`, `alpha = softmax(e)` over valid
/// frames, `context = Σ alpha_u h_u`.
pub fn attend_with_keys(
    g: &mut Graph<'_>,
    bound: &Bound,
    p: &AttentionParams,
    s: Var,
    enc: Var,
    keys: Var,
    valid: Option<&[bool]>,
) -> Result<Attended> {
    let q = g.linear(bound.var(p.w_dec), s, Some(bound.var(p.b)))?;
    let m = g.add_rowwise(keys, q)?;
    let t = g.tanh(m);
    let e = g.matvec(t, bound.var(p.v))?;
    let alpha = g.softmax(e, valid)?;
    let context = g.vecmat(alpha, enc)?;
    Ok(Attended { alpha, context })
}

/// Additive attention of decoder state `s` over encoder rows `enc: [U x H]`.
pub fn additive_attention(
    g: &mut Graph<'_>,
    bound: &Bound,
    p: &AttentionParams,
    s: Var,
    enc: Var,
    valid: Option<&[bool]>,
) -> Result<Attended> {
    if let Some(m) = valid {
        if !m.iter().any(|&b| b) {
            return Err(Error::contract("attention over an utterance with every frame masked"));
        }
    }
    let keys = p.keys(g, bound, enc)?;
    attend_with_keys(g, bound, p, s, enc, keys, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingParams {
    /// `[V x K]`
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl EmbeddingParams {
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let table = store.insert_uniform(name, &[vocab, dim], 1.0, rng)?;
        Ok(EmbeddingParams { table, vocab, dim })
    }
}

pub fn embed(g: &mut Graph<'_>, bound: &Bound, p: &EmbeddingParams, token: usize) -> Result<Var> {
    g.gather(bound.var(p.table), token)
}

/// Affine map `W x (+ b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w = store.insert_uniform(&format!("{prefix}.w"), &[out_dim, in_dim], 1.0 / sqrt(in_dim as f64), rng)?;
        let b = if bias {
            Some(store.insert_constant(&format!("{prefix}.b"), &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(LinearParams { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph<'_>, bound: &Bound, x: Var) -> Result<Var> {
        g.linear(bound.var(self.w), x, self.b.map(|b| bound.var(b)))
    }
}
