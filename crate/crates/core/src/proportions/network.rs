use rand::Rng;

use super::{FamilyBatch, ModelConfig, ModelDims};
use crate::autodiff::{Tape, Var};
use crate::matrix::Matrix;

/// Named weight tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

// Tensor order: embedding, encoder (w, b), decoder (w, b), projection (w, b),
// then per attention layer q, k, v, out, ff (each w, b), then the head (w, b).
const EMB: usize = 0;
const ENC_W: usize = 1;
const ENC_B: usize = 2;
const DEC_W: usize = 3;
const DEC_B: usize = 4;
const PROJ_W: usize = 5;
const PROJ_B: usize = 6;
const LAYER_BASE: usize = 7;
const PER_LAYER: usize = 10;

fn encoder_input(dims: &ModelDims, cfg: &ModelConfig) -> usize {
    2 + dims.covariate_dim + cfg.embedding_dim
}

fn decoder_input(dims: &ModelDims, cfg: &ModelConfig) -> usize {
    dims.covariate_dim + cfg.embedding_dim
}

/// Expected `(name, rows, cols, fan_in)` for every tensor.
fn layout(cfg: &ModelConfig, dims: &ModelDims) -> Vec<(String, usize, usize, usize)> {
    let r = cfg.lstm_hidden;
    let o = cfg.ff_dim;
    let e = cfg.embedding_dim;
    let enc_in = encoder_input(dims, cfg) + r;
    let dec_in = decoder_input(dims, cfg) + r;
    let mut out = vec![
        ("embedding".to_string(), dims.num_nodes, e, e),
        ("encoder.w".into(), enc_in, 4 * r, enc_in),
        ("encoder.b".into(), 1, 4 * r, enc_in),
        ("decoder.w".into(), dec_in, 4 * r, dec_in),
        ("decoder.b".into(), 1, 4 * r, dec_in),
        ("projection.w".into(), r, o, r),
        ("projection.b".into(), 1, o, r),
    ];
    for l in 0..cfg.attention_layers {
        for part in ["query", "key", "value", "output", "ff"] {
            out.push((format!("attention{l}.{part}.w"), o, o, o));
            out.push((format!("attention{l}.{part}.b"), 1, o, o));
        }
    }
    out.push(("head.w".into(), o, 1, o));
    out.push(("head.b".into(), 1, 1, o));
    out
}

impl ParamSet {
    pub(super) fn init(cfg: &ModelConfig, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, rows, cols, fan_in) in layout(cfg, dims) {
            let k = 1.0 / (fan_in as f64).sqrt();
            values.push(Matrix::from_fn(rows, cols, |_, _| rng.random_range(-k..=k)));
            names.push(name);
        }
        Self { names, values }
    }

    /// Rebuilds a set from named tensors, checking names and shapes.
    pub(super) fn from_named(
        cfg: &ModelConfig,
        dims: &ModelDims,
        tensors: Vec<(String, Matrix)>,
    ) -> crate::Result<Self> {
        let expected = layout(cfg, dims);
        if expected.len() != tensors.len() {
            return Err(crate::Error::Data(format!(
                "checkpoint has {} tensors, configuration needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        let mut names = Vec::new();
        let mut values = Vec::new();
        for ((en, er, ec, _), (name, m)) in expected.into_iter().zip(tensors) {
            if en != name || m.shape() != (er, ec) {
                return Err(crate::Error::Data(format!(
                    "checkpoint tensor {name} {:?} does not match expected {en} ({er}, {ec})",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(crate::Error::Data(format!("tensor {name} has non-finite entries")));
            }
            names.push(name);
            values.push(m);
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    pub(super) fn norm_report(&self) -> String {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, m)| format!("{n}={:.3e}", m.frobenius_norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub(super) fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|m| {
                if trainable {
                    tape.trainable(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn lstm_step(tape: &mut Tape, w: Var, b: Var, x: Var, h: Var, c: Var, r: usize) -> (Var, Var) {
    let xh = tape.concat_cols(&[x, h]);
    let z = linear(tape, xh, w, b);
    let zi = tape.slice_cols(z, 0, r);
    let zf = tape.slice_cols(z, r, r);
    let zg = tape.slice_cols(z, 2 * r, r);
    let zo = tape.slice_cols(z, 3 * r, r);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c);
    let write = tape.mul(i, g);
    let c_next = tape.add(keep, write);
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed);
    (h_next, c_next)
}

/// Multi-head self-attention within consecutive groups of `group` rows.
fn attention(tape: &mut Tape, x: Var, p: &[Var], heads: usize, width: usize, group: usize) -> Var {
    let q = linear(tape, x, p[0], p[1]);
    let k = linear(tape, x, p[2], p[3]);
    let v = linear(tape, x, p[4], p[5]);
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice_cols(q, head * dh, dh);
        let kh = tape.slice_cols(k, head * dh, dh);
        let vh = tape.slice_cols(v, head * dh, dh);
        let scores = tape.group_scores(qh, kh, group);
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        mixed.push(tape.group_mix(weights, vh, group));
    }
    let joined = if heads == 1 { mixed[0] } else { tape.concat_cols(&mixed) };
    linear(tape, joined, p[6], p[7])
}

/// Records the forward pass and returns the (F·b)×C concentration block,
/// row `s·b + i` holding step `s` of window `i`.
pub(super) fn forward(tape: &mut Tape, p: &[Var], cfg: &ModelConfig, dims: &ModelDims, batch: &FamilyBatch<'_>) -> Var {
    let b = batch.len();
    let c = batch.num_children();
    let rows = b * c;
    let (h, f, d) = (dims.history, dims.horizon, dims.covariate_dim);
    let r = cfg.lstm_hidden;

    // rows are (window, child) with the child index fastest
    let child_rows: Vec<usize> = (0..b).flat_map(|_| batch.children.iter().copied()).collect();
    let emb = tape.gather_rows(p[EMB], &child_rows);

    let mut hidden = tape.constant(Matrix::zeros(rows, r));
    let mut cell = tape.constant(Matrix::zeros(rows, r));
    for t in 0..h {
        let mut x = Matrix::zeros(rows, 2 + d);
        for (i, w) in batch.inputs.iter().enumerate() {
            for j in 0..c {
                let row = x.row_mut(i * c + j);
                row[0] = w.history_props.get(t, j);
                row[1] = w.parent_history[t];
                row[2..].copy_from_slice(w.covariates.row(t));
            }
        }
        let x = tape.constant(x);
        let x = tape.concat_cols(&[x, emb]);
        (hidden, cell) = lstm_step(tape, p[ENC_W], p[ENC_B], x, hidden, cell, r);
    }

    let mut decoded = Vec::with_capacity(f);
    for s in 0..f {
        let mut x = Matrix::zeros(rows, d);
        for (i, w) in batch.inputs.iter().enumerate() {
            for j in 0..c {
                x.row_mut(i * c + j).copy_from_slice(w.covariates.row(h + s));
            }
        }
        let x = tape.constant(x);
        let x = tape.concat_cols(&[x, emb]);
        (hidden, cell) = lstm_step(tape, p[DEC_W], p[DEC_B], x, hidden, cell, r);
        decoded.push(hidden);
    }
    // (F·b·C)×r, grouped by (step, window) in blocks of C children
    let decoded = tape.stack_rows(&decoded);
    let mut m = linear(tape, decoded, p[PROJ_W], p[PROJ_B]);

    for l in 0..cfg.attention_layers {
        let lp = &p[LAYER_BASE + l * PER_LAYER..LAYER_BASE + (l + 1) * PER_LAYER];
        let att = attention(tape, m, lp, cfg.attention_heads, cfg.ff_dim, c);
        m = tape.add(m, att);
        let ff = linear(tape, m, lp[8], lp[9]);
        let ff = tape.relu(ff);
        m = tape.add(m, ff);
    }

    let head = LAYER_BASE + cfg.attention_layers * PER_LAYER;
    let logits = linear(tape, m, p[head], p[head + 1]);
    let alpha = tape.exp(logits);
    tape.reshape(alpha, f * b, c)
}
