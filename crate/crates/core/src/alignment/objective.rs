//! The training objective built on the autodiff tape for one batch.

use crate::annotate::AnnotatedSequence;
use crate::calendar::CycleIndex;
use crate::error::{Error, Result};
use crate::geometry::EncodingConfig;
use crate::model::tape::{NodeId, Tape};
use crate::model::{forward_on_tape, ntp_loss_on_tape, Matrix, ModelConfig, ParameterSet};

use super::losses::FisherDiagonal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub delta: f64,
    pub sigma: f64,
    pub lambda: f64,
}

/// EWC anchor: the pre-alignment parameters and their Fisher diagonal.
#[derive(Debug, Clone, Copy)]
pub struct Anchor<'a> {
    pub theta_g: &'a ParameterSet,
    pub fisher: &'a FisherDiagonal,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub ntp: NodeId,
    pub intra: NodeId,
    pub inter: NodeId,
    /// `delta · intra + (1 − delta) · inter`.
    pub alignment: NodeId,
    pub ewc: NodeId,
    pub final_loss: NodeId,
    /// Labeled sequences in the batch; zero means the alignment terms are
    /// constant zero.
    pub labeled: usize,
}

/// Builds `L_NTP + σ (L_T + EWC)` for `batch` on `tape`.
///
/// `L_NTP` is the mean of per-sequence next-token losses. Alignment pairs are
/// formed among the labeled sequences of this batch only.
#[allow(clippy::too_many_arguments)]
pub fn objective_on_tape(
    tape: &mut Tape,
    leaves: &[NodeId],
    batch: &[&AnnotatedSequence],
    model: &ModelConfig,
    enc: &EncodingConfig,
    injection: bool,
    w: LossWeights,
    anchor: Option<Anchor<'_>>,
) -> Result<ObjectiveNodes> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut ntps = Vec::with_capacity(batch.len());
    let mut pooled: Vec<(CycleIndex, NodeId)> = Vec::new();
    for seq in batch {
        let out = forward_on_tape(tape, leaves, seq, model, enc, injection)?;
        ntps.push(ntp_loss_on_tape(tape, out.logits, &seq.tokens)?);
        if let Some(k) = seq.class_label {
            pooled.push((k, tape.mean_rows(out.hidden)));
        }
    }
    let inv = 1.0 / ntps.len() as f64;
    let terms: Vec<_> = ntps.iter().map(|&n| (n, inv)).collect();
    let ntp = tape.affine(&terms, 0.0);

    let zero = tape.leaf(Matrix::scalar(0.0));
    let (mut intra_terms, mut inter_terms) = (Vec::new(), Vec::new());
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let c = tape.cosine(pooled[i].1, pooled[j].1);
            if pooled[i].0 == pooled[j].0 {
                intra_terms.push(c);
            } else {
                inter_terms.push(c);
            }
        }
    }
    let mean_of = |tape: &mut Tape, ids: &[NodeId], sign: f64, constant: f64| {
        if ids.is_empty() {
            zero
        } else {
            let c = sign / ids.len() as f64;
            let t: Vec<_> = ids.iter().map(|&id| (id, c)).collect();
            tape.affine(&t, constant)
        }
    };
    let intra = mean_of(tape, &intra_terms, -1.0, 1.0);
    let inter = mean_of(tape, &inter_terms, 1.0, 0.0);
    let alignment = tape.affine(&[(intra, w.delta), (inter, 1.0 - w.delta)], 0.0);

    let ewc = match anchor {
        Some(a) => {
            if a.theta_g.tensors.len() != leaves.len() || a.fisher.values.tensors.len() != leaves.len()
            {
                return Err(Error::ShapeMismatch(
                    "anchor does not match the model parameters".into(),
                ));
            }
            let mut parts = Vec::with_capacity(leaves.len());
            for ((&leaf, g), f) in leaves
                .iter()
                .zip(&a.theta_g.tensors)
                .zip(&a.fisher.values.tensors)
            {
                if tape.value(leaf).shape() != g.value.shape() || g.value.shape() != f.value.shape()
                {
                    return Err(Error::ShapeMismatch(format!("anchor tensor {}", g.name)));
                }
                parts.push((tape.weighted_sq_dist(leaf, &g.value.data, &f.value.data), 0.5 * w.lambda));
            }
            tape.affine(&parts, 0.0)
        }
        None if w.lambda != 0.0 => {
            return Err(Error::InsufficientData(
                "a Fisher diagonal is required when lambda > 0".into(),
            ))
        }
        None => zero,
    };
    let final_loss = tape.affine(&[(ntp, 1.0), (alignment, w.sigma), (ewc, w.sigma)], 0.0);
    Ok(ObjectiveNodes {
        ntp,
        intra,
        inter,
        alignment,
        ewc,
        final_loss,
        labeled: pooled.len(),
    })
}
