//! Empirical diagonal Fisher information from per-sample NTP gradients.

use rayon::prelude::*;

use crate::annotate::AnnotatedSequence;
use crate::error::{Error, Result};
use crate::geometry::EncodingConfig;
use crate::model::{forward_on_tape, gradients, ntp_loss_on_tape, ModelConfig, ParameterSet};

use super::losses::FisherDiagonal;

/// Samples processed concurrently before their squares are merged in order.
const CHUNK: usize = 16;

/// Squared next-token-loss gradient of one sequence at `params`.
pub fn squared_gradient(
    params: &ParameterSet,
    seq: &AnnotatedSequence,
    model: &ModelConfig,
    enc: &EncodingConfig,
) -> Result<ParameterSet> {
    let (_, mut g) = gradients(params, |tape, leaves| {
        let out = forward_on_tape(tape, leaves, seq, model, enc, false)?;
        ntp_loss_on_tape(tape, out.logits, &seq.tokens)
    })?;
    for t in &mut g.tensors {
        t.value.data.iter_mut().for_each(|v| *v *= *v);
    }
    Ok(g)
}

/// Mean of squared per-sample gradients over the first `samples` sequences.
///
/// Gradients are computed in parallel and summed in sample order, so the
/// result does not depend on the thread count.
pub fn estimate_fisher(
    params: &ParameterSet,
    general: &[AnnotatedSequence],
    samples: usize,
    model: &ModelConfig,
    enc: &EncodingConfig,
) -> Result<FisherDiagonal> {
    if samples == 0 {
        return Err(Error::InsufficientData("samples must be >= 1".into()));
    }
    if general.len() < samples {
        return Err(Error::InsufficientData(format!(
            "{samples} samples requested from {} sequences",
            general.len()
        )));
    }
    let mut sum = params.zeros_like();
    for chunk in general[..samples].chunks(CHUNK) {
        let squares: Vec<ParameterSet> = chunk
            .par_iter()
            .map(|s| squared_gradient(params, s, model, enc))
            .collect::<Result<_>>()?;
        for sq in &squares {
            sum.add_scaled(sq, 1.0);
        }
    }
    let inv = 1.0 / samples as f64;
    for t in &mut sum.tensors {
        t.value.data.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(FisherDiagonal {
        values: sum,
        sample_count: samples,
    })
}
