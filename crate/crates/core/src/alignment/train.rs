//! Mini-batch SGD on the final loss, turning base weights into aligned ones.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotatedSequence;
use crate::calendar::CycleIndex;
use crate::error::{Error, Result};
use crate::geometry::EncodingConfig;
use crate::model::tape::Tape;
use crate::model::{
    forward, forward_on_tape, load_params, ntp_loss, ntp_loss_on_tape, sentence_embedding,
    ModelConfig, ParameterSet,
};

use super::losses::{ewc_penalty, intra_inter_loss, partition, FisherDiagonal};
use super::objective::{objective_on_tape, Anchor, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// Full objective with temporal injection.
    Ticktack,
    /// Next-token post-training only: no alignment, no EWC, no injection.
    Pt,
}

impl TrainingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ticktack => "ticktack",
            Self::Pt => "pt",
        }
    }
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ticktack" => Ok(Self::Ticktack),
            "pt" => Ok(Self::Pt),
            other => Err(Error::InvalidConfig(format!(
                "mode must be ticktack or pt, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Mix between the intra- and inter-class terms.
    pub delta: f64,
    /// Weight of the temporal loss in the final loss.
    pub sigma: f64,
    /// EWC strength.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Add the temporal encoding to input embeddings.
    pub injection: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            sigma: 1.0,
            lambda: 100.0,
            learning_rate: 1e-4,
            batch_size: 8,
            grad_accum_steps: 2,
            epochs: 10,
            seed: 0,
            injection: true,
        }
    }
}

impl TrainingConfig {
    /// Defaults adjusted for `mode`.
    pub fn for_mode(mode: TrainingMode) -> Self {
        Self::default().with_mode(mode)
    }

    /// Pins the fields that distinguish the two modes.
    pub fn with_mode(self, mode: TrainingMode) -> Self {
        match mode {
            TrainingMode::Ticktack => Self {
                injection: true,
                ..self
            },
            TrainingMode::Pt => Self {
                sigma: 0.0,
                lambda: 0.0,
                injection: false,
                ..self
            },
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            delta: self.delta,
            sigma: self.sigma,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must be in [0, 1], got {}", self.delta));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return bad("batch_size and grad_accum_steps must be >= 1".into());
        }
        Ok(())
    }
}

/// Training-set losses measured at the end of an epoch (epoch 0 is the
/// starting point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub ntp: f64,
    pub intra: f64,
    pub inter: f64,
    pub ewc_penalty: f64,
    pub final_loss: f64,
}

impl EpochMetrics {
    /// `delta · intra + (1 − delta) · inter`.
    pub fn alignment(&self, delta: f64) -> f64 {
        delta * self.intra + (1.0 - delta) * self.inter
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[EpochMetrics], mut w: W) -> Result<()> {
    writeln!(w, "epoch,L_NTP,L_intra,L_inter,ewc_penalty,L_final")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.ntp, r.intra, r.inter, r.ewc_penalty, r.final_loss
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub metrics: Vec<EpochMetrics>,
    pub steps: usize,
}

/// Micro-batches of corpus indices for one epoch.
///
/// After a seeded shuffle, sequences sharing a class label are grouped in
/// pairs so that most batches contain intra-class pairs; pairs and leftover
/// singles are shuffled again and packed greedily into batches of at most
/// `batch_size` without splitting a pair.
pub fn epoch_batches(
    labels: &[Option<CycleIndex>],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let bs = batch_size.max(1);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);

    let mut by_class: BTreeMap<CycleIndex, Vec<usize>> = BTreeMap::new();
    let mut units: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match labels[i] {
            Some(k) if bs > 1 => by_class.entry(k).or_default().push(i),
            _ => units.push(vec![i]),
        }
    }
    for members in by_class.values() {
        units.extend(members.chunks(2).map(<[usize]>::to_vec));
    }
    units.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::with_capacity(bs);
    for u in units {
        if cur.len() + u.len() > bs {
            batches.push(std::mem::take(&mut cur));
        }
        cur.extend(u);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Class labels of a corpus, in order.
pub fn corpus_labels(corpus: &[AnnotatedSequence]) -> Vec<Option<CycleIndex>> {
    corpus.iter().map(|s| s.class_label).collect()
}

/// Loss terms on a fixed batching of the training set (the epoch-0 draw).
///
/// `L_intra` and `L_inter` are averaged over the batches that contain
/// labeled sequences; `L_NTP` over all batches.
pub fn measure(
    params: &ParameterSet,
    corpus: &[AnnotatedSequence],
    cfg: &TrainingConfig,
    model: &ModelConfig,
    enc: &EncodingConfig,
    anchor: Option<Anchor<'_>>,
    epoch: usize,
) -> Result<EpochMetrics> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty training corpus".into()));
    }
    let per_seq: Vec<(f64, Vec<f64>)> = corpus
        .par_iter()
        .map(|s| {
            let (logits, hidden) = forward(params, s, model, enc, cfg.injection)?;
            Ok((ntp_loss(&logits, &s.tokens[1..])?, sentence_embedding(&hidden)?))
        })
        .collect::<Result<_>>()?;
    let (mut ntp, mut intra, mut inter) = (0.0, 0.0, 0.0);
    let (mut n_batches, mut n_labeled) = (0usize, 0usize);
    for idx in epoch_batches(&corpus_labels(corpus), cfg.batch_size, cfg.seed, 0) {
        ntp += idx.iter().map(|&i| per_seq[i].0).sum::<f64>() / idx.len() as f64;
        n_batches += 1;
        let p = partition(idx.iter().map(|&i| (&corpus[i], per_seq[i].1.as_slice())));
        if !p.is_empty() {
            let l = intra_inter_loss(&p, cfg.delta)?;
            intra += l.intra;
            inter += l.inter;
            n_labeled += 1;
        }
    }
    ntp /= n_batches as f64;
    if n_labeled > 0 {
        intra /= n_labeled as f64;
        inter /= n_labeled as f64;
    }
    let pen = match anchor {
        Some(a) => ewc_penalty(params, a.theta_g, a.fisher, cfg.lambda)?,
        None => 0.0,
    };
    let alignment = cfg.delta * intra + (1.0 - cfg.delta) * inter;
    Ok(EpochMetrics {
        epoch,
        ntp,
        intra,
        inter,
        ewc_penalty: pen,
        final_loss: ntp + cfg.sigma * (alignment + pen),
    })
}

fn non_finite(step: usize, last_good: &ParameterSet) -> Error {
    Error::NonFiniteLoss {
        step,
        last_good: Some(Box::new(last_good.clone())),
    }
}

/// Runs `cfg.epochs` epochs of SGD on the final loss starting from `base`.
///
/// Each optimizer step averages the gradients of `grad_accum_steps`
/// consecutive micro-batches, summed in batch order, and updates only the
/// trainable tensors (adapters when present). `base` is the EWC anchor.
pub fn train(
    base: &ParameterSet,
    corpus: &[AnnotatedSequence],
    cfg: &TrainingConfig,
    model: &ModelConfig,
    enc: &EncodingConfig,
    fisher: Option<&FisherDiagonal>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty training corpus".into()));
    }
    if cfg.lambda > 0.0 && fisher.is_none() {
        return Err(Error::InsufficientData(
            "a Fisher diagonal is required when lambda > 0".into(),
        ));
    }
    if let Some(f) = fisher {
        base.check_same_shape(&f.values)?;
    }
    let anchor = fisher.map(|f| Anchor {
        theta_g: base,
        fisher: f,
    });
    let mask = base.trainable_mask();
    let labels = corpus_labels(corpus);
    let mut params = base.clone();
    let mut metrics = vec![measure(&params, corpus, cfg, model, enc, anchor, 0)?];
    let mut steps = 0usize;

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&labels, cfg.batch_size, cfg.seed, epoch);
        for group in batches.chunks(cfg.grad_accum_steps) {
            let mut grad = params.zeros_like();
            for idx in group {
                let batch: Vec<&AnnotatedSequence> = idx.iter().map(|&i| &corpus[i]).collect();
                let mut tape = Tape::new();
                let leaves = load_params(&mut tape, &params);
                let nodes = objective_on_tape(
                    &mut tape,
                    &leaves,
                    &batch,
                    model,
                    enc,
                    cfg.injection,
                    cfg.weights(),
                    anchor,
                )?;
                if !tape.value(nodes.final_loss).item().is_finite() {
                    return Err(non_finite(steps, &params));
                }
                let mut g = tape.backward(nodes.final_loss);
                for ((acc, &leaf), &m) in grad.tensors.iter_mut().zip(&leaves).zip(&mask) {
                    if m {
                        if let Some(gl) = g.take(leaf) {
                            acc.value.add_assign(&gl);
                        }
                    }
                }
            }
            let inv = 1.0 / group.len() as f64;
            let mut next = params.clone();
            for ((p, g), &m) in next.tensors.iter_mut().zip(&grad.tensors).zip(&mask) {
                if m {
                    for (pv, gv) in p.value.data.iter_mut().zip(&g.value.data) {
                        *pv -= cfg.learning_rate * (gv * inv);
                    }
                }
            }
            if next.tensors.iter().any(|t| !t.value.is_finite()) {
                return Err(non_finite(steps, &params));
            }
            params = next;
            steps += 1;
        }
        let m = measure(&params, corpus, cfg, model, enc, anchor, epoch)?;
        if !m.final_loss.is_finite() {
            return Err(non_finite(steps, &params));
        }
        metrics.push(m);
    }
    Ok(TrainOutcome {
        params,
        metrics,
        steps,
    })
}

/// One SGD step on the mean next-token loss alone, written independently of
/// the alignment objective. Serves as the reference post-training update.
pub fn plain_ntp_step(
    params: &ParameterSet,
    micro_batches: &[Vec<&AnnotatedSequence>],
    learning_rate: f64,
    model: &ModelConfig,
    enc: &EncodingConfig,
) -> Result<ParameterSet> {
    let mask = params.trainable_mask();
    let mut sum = params.zeros_like();
    for batch in micro_batches {
        let mut tape = Tape::new();
        let leaves = load_params(&mut tape, params);
        let mut losses = Vec::with_capacity(batch.len());
        for seq in batch {
            let out = forward_on_tape(&mut tape, &leaves, seq, model, enc, false)?;
            losses.push(ntp_loss_on_tape(&mut tape, out.logits, &seq.tokens)?);
        }
        let c = 1.0 / losses.len() as f64;
        let terms: Vec<_> = losses.iter().map(|&l| (l, c)).collect();
        let root = tape.affine(&terms, 0.0);
        let mut g = tape.backward(root);
        for (s, &leaf) in sum.tensors.iter_mut().zip(&leaves) {
            if let Some(gl) = g.take(leaf) {
                s.value.add_assign(&gl);
            }
        }
    }
    let inv = 1.0 / micro_batches.len() as f64;
    let mut out = params.clone();
    for ((p, g), &m) in out.tensors.iter_mut().zip(&sum.tensors).zip(&mask) {
        if m {
            for (pv, gv) in p.value.data.iter_mut().zip(&g.value.data) {
                *pv -= learning_rate * (gv * inv);
            }
        }
    }
    Ok(out)
}
