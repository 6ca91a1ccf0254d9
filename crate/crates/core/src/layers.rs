//! Neural building blocks: embeddings, dense projection, LSTM cell and Luong
//! attention.
//!
//! Parameters live in plain structs. A forward pass first `bind`s them onto a
//! [`Tape`], which records one leaf per parameter tensor (in the order of
//! [`Parameters::parameters`]) and returns the handles the step functions use.
//! After `backward`, [`accumulate_grads`] routes leaf gradients back into the
//! parameter tensors.
//!
//! All step functions work on row batches: a single vector is a `[1×n]` matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Named access to the trainable tensors of a component.
pub trait Parameters<T: Scalar> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    /// Records every parameter as a leaf, in `parameters()` order.
    fn leaves(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters().into_iter().map(|(_, t)| tape.leaf(t)).collect()
    }
}

/// Adds the gradients of `leaves` (as returned by [`Parameters::leaves`]) into
/// the matching parameter tensors.
pub fn accumulate_grads<T: Scalar, P: Parameters<T> + ?Sized>(
    module: &mut P,
    grads: &Gradients<T>,
    leaves: &[Var],
) -> Result<()> {
    let params = module.parameters_mut();
    if params.len() != leaves.len() {
        return Err(Error::contract(format!("{} parameters but {} bound leaves", params.len(), leaves.len())));
    }
    for ((_, t), v) in params.into_iter().zip(leaves) {
        grads.accumulate_into(*v, t)?;
    }
    Ok(())
}

/// Uniform initialisation in ±1/√fan_in.
pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches").with_grad()
}

fn zeros_trainable<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

fn expect_shape<T: Scalar>(what: &'static str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(Error::Dimension { op: what, left: t.shape().to_vec(), right: shape.to_vec() })
    }
}

// ---------------------------------------------------------------------------
// Embedding

/// Lookup table for one categorical feature.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub feature: String,
    pub weights: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(feature: impl Into<String>, weights: Tensor<T>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::contract(format!("embedding table needs shape [cardinality≥1 × dim≥1], got {s:?}")));
        }
        Ok(Self { feature: feature.into(), weights })
    }

    pub fn init<R: Rng + ?Sized>(feature: &str, cardinality: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if cardinality == 0 || dim == 0 {
            return Err(Error::contract("embedding cardinality and dim must be ≥ 1"));
        }
        Self::new(feature, init_uniform(rng, &[cardinality, dim], cardinality))
    }

    pub fn cardinality(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Rows for each category id, as `[ids.len() × dim]`. Gradients reach
    /// only the selected rows.
    pub fn lookup(&self, tape: &mut Tape<T>, table: Var, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cardinality()) {
            return Err(Error::Category { feature: self.feature.clone(), index: bad, cardinality: self.cardinality() });
        }
        tape.gather_rows(table, ids)
    }
}

impl<T: Scalar> Parameters<T> for EmbeddingTable<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![(format!("embedding.{}", self.feature), &self.weights)]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![(format!("embedding.{}", self.feature), &mut self.weights)]
    }
}

/// Default embedding width for a categorical feature: `min(8, ⌈cardinality/2⌉)`.
pub fn default_embedding_dim(cardinality: usize) -> usize {
    cardinality.div_ceil(2).clamp(1, 8)
}

// ---------------------------------------------------------------------------
// Dense

/// Affine projection `W·x + b` with `W: [out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Tape handles for a bound [`DenseParams`].
#[derive(Clone, Debug)]
pub struct DenseVars {
    pub leaves: Vec<Var>,
    w_t: Var,
    b: Var,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::contract("dense weight must be a matrix"));
        }
        expect_shape("dense bias", &b, &[w.shape()[0]])?;
        Ok(Self { w, b })
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self { w: init_uniform(rng, &[output, input], input), b: init_uniform(rng, &[output], input) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<DenseVars> {
        let leaves = self.leaves(tape);
        self.bind_leaves(tape, leaves)
    }

    /// Builds the handles from leaves recorded in `parameters()` order.
    pub fn bind_leaves(&self, tape: &mut Tape<T>, leaves: Vec<Var>) -> Result<DenseVars> {
        let w_t = tape.transpose(leaves[0])?;
        Ok(DenseVars { w_t, b: leaves[1], leaves })
    }

    /// `x[rows × in] → [rows × out]`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &DenseVars, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars.w_t)?;
        tape.add_row(xw, vars.b)
    }
}

impl<T: Scalar> Parameters<T> for DenseParams<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

// ---------------------------------------------------------------------------
// LSTM

pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Single-layer LSTM cell parameters. Gate order is input, forget, output,
/// candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// `[hidden × input]` per gate.
    pub w: [Tensor<T>; 4],
    /// `[hidden × hidden]` per gate.
    pub u: [Tensor<T>; 4],
    /// `[hidden]` per gate.
    pub b: [Tensor<T>; 4],
}

/// Tape handles for a bound [`LstmParams`]. The four gates are fused into
/// single matrices so a step costs two matmuls.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub leaves: Vec<Var>,
    w_cat: Var,
    u_cat: Var,
    b_cat: Var,
    hidden: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn new(w: [Tensor<T>; 4], u: [Tensor<T>; 4], b: [Tensor<T>; 4]) -> Result<Self> {
        let hidden = b[0].len();
        let input = w[0].shape().get(1).copied().unwrap_or(0);
        for k in 0..4 {
            expect_shape("lstm W", &w[k], &[hidden, input])?;
            expect_shape("lstm U", &u[k], &[hidden, hidden])?;
            expect_shape("lstm b", &b[k], &[hidden])?;
        }
        if hidden == 0 || input == 0 {
            return Err(Error::contract("lstm dims must be ≥ 1"));
        }
        Ok(Self { w, u, b })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| zeros_trainable(&[hidden, input])),
            u: std::array::from_fn(|_| zeros_trainable(&[hidden, hidden])),
            b: std::array::from_fn(|_| zeros_trainable(&[hidden])),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: std::array::from_fn(|_| init_uniform(rng, &[hidden, input], input)),
            u: std::array::from_fn(|_| init_uniform(rng, &[hidden, hidden], hidden)),
            b: std::array::from_fn(|_| init_uniform(rng, &[hidden], hidden)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.b[0].len()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<LstmVars> {
        let leaves = self.leaves(tape);
        self.bind_leaves(tape, leaves)
    }

    pub fn bind_leaves(&self, tape: &mut Tape<T>, leaves: Vec<Var>) -> Result<LstmVars> {
        let mut wt = Vec::with_capacity(4);
        let mut ut = Vec::with_capacity(4);
        for k in 0..4 {
            wt.push(tape.transpose(leaves[k])?);
            ut.push(tape.transpose(leaves[4 + k])?);
        }
        let w_cat = tape.concat(&wt, 1)?;
        let u_cat = tape.concat(&ut, 1)?;
        let b_cat = tape.concat(&leaves[8..12], 0)?;
        Ok(LstmVars { leaves, w_cat, u_cat, b_cat, hidden: self.hidden_dim() })
    }

    /// One recurrence step on a row batch. Returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape<T>, vars: &LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        lstm_cell_step(tape, vars, x, h_prev, c_prev)
    }
}

/// `i,f,o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_step<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &LstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hd = vars.hidden;
    let xw = tape.matmul(x, vars.w_cat)?;
    let hu = tape.matmul(h_prev, vars.u_cat)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add_row(pre, vars.b_cat)?;

    let mut gates = [pre; 4];
    for (k, name) in GATES.iter().enumerate() {
        let z = tape.slice_cols(pre, k * hd, hd)?;
        let act = if k == 3 { tape.tanh(z) } else { tape.sigmoid(z) };
        gates[k] = act.map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("lstm gate {name}: {m}")),
            other => other,
        })?;
    }
    let [i, f, o, g] = gates;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c).map_err(|e| Error::Numeric(format!("lstm cell state: {e}")))?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

impl<T: Scalar> Parameters<T> for LstmParams<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(12);
        for (k, g) in GATES.iter().enumerate() {
            out.push((format!("w_{g}"), &self.w[k]));
        }
        for (k, g) in GATES.iter().enumerate() {
            out.push((format!("u_{g}"), &self.u[k]));
        }
        for (k, g) in GATES.iter().enumerate() {
            out.push((format!("b_{g}"), &self.b[k]));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::with_capacity(12);
        for (g, t) in GATES.iter().zip(self.w.iter_mut()) {
            out.push((format!("w_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(self.u.iter_mut()) {
            out.push((format!("u_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(self.b.iter_mut()) {
            out.push((format!("b_{g}"), t));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Attention

/// Luong alignment score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `hᵀ·h_s`
    Dot,
    /// `hᵀ·W_a·h_s`
    #[default]
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub kind: ScoreKind,
    /// `[hidden × hidden]`, present iff `kind == General`.
    pub w_a: Option<Tensor<T>>,
    /// `[hidden × 2·hidden]`, applied to `[context; decoder_h]`.
    pub w_c: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub leaves: Vec<Var>,
    w_a: Option<Var>,
    w_c_t: Var,
}

/// Result of one attention step.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub h_tilde: Var,
    /// `[rows × steps]` alignment weights.
    pub weights: Var,
    pub context: Var,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(kind: ScoreKind, w_a: Option<Tensor<T>>, w_c: Tensor<T>) -> Result<Self> {
        let hidden = w_c.shape().first().copied().unwrap_or(0);
        expect_shape("attention W_c", &w_c, &[hidden, 2 * hidden])?;
        match (kind, &w_a) {
            (ScoreKind::General, Some(w)) => expect_shape("attention W_a", w, &[hidden, hidden])?,
            (ScoreKind::Dot, None) => {}
            _ => return Err(Error::contract("attention W_a must be present exactly for the general score")),
        }
        Ok(Self { kind, w_a, w_c })
    }

    pub fn init<R: Rng + ?Sized>(kind: ScoreKind, hidden: usize, rng: &mut R) -> Self {
        let w_a = match kind {
            ScoreKind::General => Some(init_uniform(rng, &[hidden, hidden], hidden)),
            ScoreKind::Dot => None,
        };
        Self { kind, w_a, w_c: init_uniform(rng, &[hidden, 2 * hidden], 2 * hidden) }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_c.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<AttentionVars> {
        let leaves = self.leaves(tape);
        self.bind_leaves(tape, leaves)
    }

    pub fn bind_leaves(&self, tape: &mut Tape<T>, leaves: Vec<Var>) -> Result<AttentionVars> {
        let (w_a, w_c) = match self.kind {
            ScoreKind::General => (Some(leaves[0]), leaves[1]),
            ScoreKind::Dot => (None, leaves[0]),
        };
        let w_c_t = tape.transpose(w_c)?;
        Ok(AttentionVars { leaves, w_a, w_c_t })
    }

    /// Attends over `encoder_states` (each `[rows × hidden]`).
    pub fn attend(
        &self,
        tape: &mut Tape<T>,
        vars: &AttentionVars,
        decoder_h: Var,
        encoder_states: &[Var],
    ) -> Result<Attended> {
        luong_attention(tape, vars, decoder_h, encoder_states)
    }
}

/// Scores every encoder state against `decoder_h`, normalises the scores
/// with softmax, forms the weighted context and returns
/// `h̃ = tanh(W_c·[context; decoder_h])`.
pub fn luong_attention<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &AttentionVars,
    decoder_h: Var,
    encoder_states: &[Var],
) -> Result<Attended> {
    if encoder_states.is_empty() {
        return Err(Error::contract("attention over zero encoder steps"));
    }
    let query = match vars.w_a {
        Some(w_a) => tape.matmul(decoder_h, w_a)?,
        None => decoder_h,
    };
    let mut scores = Vec::with_capacity(encoder_states.len());
    for &s in encoder_states {
        let prod = tape.mul(query, s)?;
        scores.push(tape.sum_last_dim(prod)?);
    }
    let scores = tape.concat(&scores, 1)?;
    let weights = tape.softmax(scores)?;

    let mut context = None;
    for (j, &s) in encoder_states.iter().enumerate() {
        let wj = tape.column(weights, j)?;
        let term = tape.scale_rows(s, wj)?;
        context = Some(match context {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let context = context.expect("at least one encoder state");
    let joined = tape.concat(&[context, decoder_h], 1)?;
    let pre = tape.matmul(joined, vars.w_c_t)?;
    let h_tilde = tape.tanh(pre)?;
    Ok(Attended { h_tilde, weights, context })
}

impl<T: Scalar> Parameters<T> for AttentionParams<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(w) = &self.w_a {
            out.push(("w_a".to_string(), w));
        }
        out.push(("w_c".to_string(), &self.w_c));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(w) = self.w_a.as_mut() {
            out.push(("w_a".to_string(), w));
        }
        out.push(("w_c".to_string(), &mut self.w_c));
        out
    }
}
