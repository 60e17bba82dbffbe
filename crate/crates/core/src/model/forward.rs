//! Decoder forward pass, next-token loss, pooling, and gradients.
//!
//! Architecture: token embedding plus fixed sinusoidal positions, optional
//! temporal injection, then pre-norm blocks of causal multi-head attention
//! and a GELU MLP, a final RMS norm, and an untied output projection. When
//! adapters are present each projection uses `W + A·B`.

use super::params::{Layout, ModelConfig, ParameterSet, Projection};
use super::tape::{NodeId, Tape};
use super::tensor::{EmbeddingMatrix, Matrix};
use crate::annotate::AnnotatedSequence;
use crate::error::{Error, Result};
use crate::geometry::{encode_year, sinusoid, EncodingConfig, InjectionMode, TemporalEncodingVector};

pub const POSITION_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub logits: NodeId,
    /// Final-layer states, `l × d`.
    pub hidden: NodeId,
}

/// Puts every tensor of `params` on the tape, in order.
pub fn load_params(tape: &mut Tape, params: &ParameterSet) -> Vec<NodeId> {
    params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.value.clone()))
        .collect()
}

pub fn position_encoding(len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(len, dim);
    for p in 0..len {
        m.row_mut(p).copy_from_slice(&sinusoid(p as f64, dim, POSITION_BASE));
    }
    m
}

/// `h + TE_x + TE_y` on the selected rows; other rows are left untouched.
pub fn inject(
    h: &EmbeddingMatrix,
    te_x: &TemporalEncodingVector,
    te_y: &TemporalEncodingVector,
    mode: InjectionMode,
    mention_rows: &[usize],
) -> Result<EmbeddingMatrix> {
    let mut out = h.clone();
    out.add_assign(&injection_delta(h.rows, h.cols, te_x, te_y, mode, mention_rows)?);
    Ok(out)
}

fn injection_delta(
    rows: usize,
    cols: usize,
    te_x: &TemporalEncodingVector,
    te_y: &TemporalEncodingVector,
    mode: InjectionMode,
    mention_rows: &[usize],
) -> Result<Matrix> {
    if te_x.len() != cols || te_y.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "temporal encodings of length {}/{} for embedding width {cols}",
            te_x.len(),
            te_y.len()
        )));
    }
    let te: Vec<f64> = te_x.values.iter().zip(&te_y.values).map(|(a, b)| a + b).collect();
    let mut delta = Matrix::zeros(rows, cols);
    let mut stamp = |r: usize| delta.row_mut(r).copy_from_slice(&te);
    match mode {
        InjectionMode::AllPositions => (0..rows).for_each(&mut stamp),
        InjectionMode::MentionPositions => {
            for &r in mention_rows {
                if r >= rows {
                    return Err(Error::DimensionMismatch(format!(
                        "mention row {r} outside {rows} rows"
                    )));
                }
                stamp(r);
            }
        }
    }
    Ok(delta)
}

/// `x·(W + A·B)`, evaluated as `x·W + (x·A)·B` so the rank-r product is
/// never materialized.
fn project(tape: &mut Tape, leaves: &[NodeId], x: NodeId, p: Projection) -> NodeId {
    let base = tape.matmul(x, leaves[p.weight]);
    match p.adapter {
        None => base,
        Some((a, b)) => {
            let xa = tape.matmul(x, leaves[a]);
            let xab = tape.matmul(xa, leaves[b]);
            tape.add(base, xab)
        }
    }
}

fn check_sequence(seq: &AnnotatedSequence, cfg: &ModelConfig) -> Result<()> {
    if seq.tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if seq.tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: seq.tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = seq.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::DimensionMismatch(format!(
            "token id {bad} >= vocab_size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Builds the forward graph for one sequence on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    leaves: &[NodeId],
    seq: &AnnotatedSequence,
    cfg: &ModelConfig,
    enc: &EncodingConfig,
    injection_enabled: bool,
) -> Result<ForwardNodes> {
    check_sequence(seq, cfg)?;
    let layout = Layout::new(cfg);
    if leaves.len() != layout.count {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors for a layout of {}",
            leaves.len(),
            layout.count
        )));
    }
    let l = seq.tokens.len();
    let d = cfg.dim;
    let ids: Vec<usize> = seq.tokens.iter().map(|&t| t as usize).collect();

    let mut x = tape.gather(leaves[layout.tok_emb], &ids);
    x = tape.add_const(x, &position_encoding(l, d));
    if injection_enabled {
        if let Some(year) = seq.anchor_year() {
            if enc.dim != d {
                return Err(Error::DimensionMismatch(format!(
                    "encoding dim {} != model dim {d}",
                    enc.dim
                )));
            }
            let (te_x, te_y) = encode_year(year, enc)?;
            let rows = seq.mention_token_positions();
            let delta = injection_delta(l, d, &te_x, &te_y, enc.injection, &rows)?;
            x = tape.add_const(x, &delta);
        }
    }

    let dh = cfg.head_dim();
    let att_scale = 1.0 / (dh as f64).sqrt();
    for layer in &layout.layers {
        let a = tape.rms_norm(x, leaves[layer.attn_norm]);
        let q = project(tape, leaves, a, layer.wq);
        let k = project(tape, leaves, a, layer.wk);
        let v = project(tape, leaves, a, layer.wv);
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = tape.columns(q, h * dh, dh);
            let kh = tape.columns(k, h * dh, dh);
            let vh = tape.columns(v, h * dh, dh);
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, att_scale);
            let p = tape.causal_softmax(s);
            heads.push(tape.matmul(p, vh));
        }
        let o = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_columns(&heads)
        };
        let attn = project(tape, leaves, o, layer.wo);
        x = tape.add(x, attn);

        let m = tape.rms_norm(x, leaves[layer.mlp_norm]);
        let h1 = project(tape, leaves, m, layer.w_in);
        let h1 = tape.add_row(h1, leaves[layer.b_in]);
        let h1 = tape.gelu(h1);
        let h2 = project(tape, leaves, h1, layer.w_out);
        let h2 = tape.add_row(h2, leaves[layer.b_out]);
        x = tape.add(x, h2);
    }
    let hidden = tape.rms_norm(x, leaves[layout.final_norm]);
    let logits = tape.matmul(hidden, leaves[layout.lm_head]);
    Ok(ForwardNodes { logits, hidden })
}

/// Logits (`l × vocab`) and final-layer states (`l × d`).
pub fn forward(
    params: &ParameterSet,
    seq: &AnnotatedSequence,
    cfg: &ModelConfig,
    enc: &EncodingConfig,
    injection_enabled: bool,
) -> Result<(Matrix, EmbeddingMatrix)> {
    let mut tape = Tape::new();
    let leaves = load_params(&mut tape, params);
    let out = forward_on_tape(&mut tape, &leaves, seq, cfg, enc, injection_enabled)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.hidden).clone()))
}

/// `(row, next token)` pairs for every predicted position.
pub fn next_token_targets(tokens: &[u32]) -> Vec<(usize, usize)> {
    tokens
        .windows(2)
        .enumerate()
        .map(|(r, w)| (r, w[1] as usize))
        .collect()
}

/// Next-token loss node for a sequence whose logits are already on the tape.
pub fn ntp_loss_on_tape(tape: &mut Tape, logits: NodeId, tokens: &[u32]) -> Result<NodeId> {
    let targets = next_token_targets(tokens);
    if targets.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(tape.cross_entropy(logits, &targets))
}

/// Mean cross-entropy of `logits[p]` against `targets[p]`, where `targets`
/// are the input tokens shifted left (one fewer than the logit rows).
pub fn ntp_loss(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptySequence);
    }
    if targets.len() + 1 != logits.rows {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows
        )));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= logits.cols {
            return Err(Error::DimensionMismatch(format!(
                "target {t} >= vocab {}",
                logits.cols
            )));
        }
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Mean over the rows of the final-layer states.
pub fn sentence_embedding(hidden: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if hidden.rows == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = vec![0.0; hidden.cols];
    for r in 0..hidden.rows {
        for (o, v) in out.iter_mut().zip(hidden.row(r)) {
            *o += v;
        }
    }
    let n = hidden.rows as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Reverse-mode gradient of a scalar loss built on the tape from the
/// parameter leaves. Returns the loss value and a parameter-shaped gradient.
pub fn gradients<F>(params: &ParameterSet, loss: F) -> Result<(f64, ParameterSet)>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves = load_params(&mut tape, params);
    let root = loss(&mut tape, &leaves)?;
    let value = tape.value(root).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            last_good: None,
        });
    }
    let mut grads = tape.backward(root);
    let mut out = params.zeros_like();
    for (t, &id) in out.tensors.iter_mut().zip(&leaves) {
        if let Some(g) = grads.take(id) {
            t.value = g;
        }
    }
    Ok((value, out))
}
