//! Plain-value forms of the alignment objective.
//!
//! These operate on materialized embeddings and parameters. The trainer
//! builds the same quantities on the autodiff tape (see `objective`), and
//! the two routes are cross-checked in tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotatedSequence;
use crate::calendar::CycleIndex;
use crate::error::{Error, Result};
use crate::model::{dot, ParameterSet};

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Sentence embeddings grouped by sexagenary class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassPartition {
    pub classes: BTreeMap<CycleIndex, Vec<Vec<f64>>>,
    /// Number of sequences offered, labeled or not.
    pub universe: usize,
}

impl ClassPartition {
    pub fn member_count(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.member_count() == 0
    }
}

/// Groups embeddings by the class label of their sequence. Unlabeled
/// sequences are counted in the universe but belong to no class.
pub fn partition<'a, I>(batch: I) -> ClassPartition
where
    I: IntoIterator<Item = (&'a AnnotatedSequence, &'a [f64])>,
{
    let mut p = ClassPartition::default();
    for (seq, emb) in batch {
        p.universe += 1;
        if let Some(k) = seq.class_label {
            p.classes.entry(k).or_default().push(emb.to_vec());
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLosses {
    pub intra: f64,
    pub inter: f64,
    /// `delta · intra + (1 − delta) · inter`.
    pub total: f64,
}

/// Intra-class loss is `1 −` the mean cosine over same-class pairs (0 when
/// no class has two members); inter-class loss is the mean cosine over
/// cross-class pairs (0 when only one class is present).
pub fn intra_inter_loss(p: &ClassPartition, delta: f64) -> Result<AlignmentLosses> {
    if p.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let members: Vec<(CycleIndex, &[f64])> = p
        .classes
        .iter()
        .flat_map(|(&k, vs)| vs.iter().map(move |v| (k, v.as_slice())))
        .collect();
    let (mut intra_sum, mut intra_n, mut inter_sum, mut inter_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let c = cosine_similarity(members[i].1, members[j].1)?;
            if members[i].0 == members[j].0 {
                intra_sum += c;
                intra_n += 1;
            } else {
                inter_sum += c;
                inter_n += 1;
            }
        }
    }
    let intra = if intra_n == 0 {
        0.0
    } else {
        1.0 - intra_sum / intra_n as f64
    };
    let inter = if inter_n == 0 {
        0.0
    } else {
        inter_sum / inter_n as f64
    };
    Ok(AlignmentLosses {
        intra,
        inter,
        total: delta * intra + (1.0 - delta) * inter,
    })
}

/// Empirical diagonal Fisher information, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal {
    pub values: ParameterSet,
    pub sample_count: usize,
}

pub fn ewc_penalty(
    theta_t: &ParameterSet,
    theta_g: &ParameterSet,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<f64> {
    theta_t.check_same_shape(theta_g)?;
    theta_t.check_same_shape(&fisher.values)?;
    let mut sum = 0.0;
    for ((t, g), f) in theta_t
        .tensors
        .iter()
        .zip(&theta_g.tensors)
        .zip(&fisher.values.tensors)
    {
        for ((a, b), w) in t.value.data.iter().zip(&g.value.data).zip(&f.value.data) {
            sum += w * (a - b) * (a - b);
        }
    }
    Ok(0.5 * lambda * sum)
}

pub fn temporal_loss(
    p: &ClassPartition,
    delta: f64,
    theta_t: &ParameterSet,
    theta_g: &ParameterSet,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<f64> {
    Ok(intra_inter_loss(p, delta)?.total + ewc_penalty(theta_t, theta_g, fisher, lambda)?)
}

pub fn final_loss(ntp: f64, temporal: f64, sigma: f64) -> f64 {
    ntp + sigma * temporal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate, WordTokenizer};
    use crate::model::{Matrix, NamedTensor};

    fn part(classes: &[(i64, Vec<Vec<f64>>)]) -> ClassPartition {
        let mut p = ClassPartition::default();
        for (k, vs) in classes {
            p.universe += vs.len();
            p.classes.insert(CycleIndex::new(*k).unwrap(), vs.clone());
        }
        p
    }

    fn params(values: &[&[f64]]) -> ParameterSet {
        ParameterSet {
            tensors: values
                .iter()
                .enumerate()
                .map(|(i, v)| NamedTensor {
                    name: format!("t{i}"),
                    value: Matrix::row_vector(v.to_vec()),
                })
                .collect(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, -1.0], &[3.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn partition_examples() {
        let texts = ["in 1864 .", "in 1924 .", "in 1965 .", "no year ."];
        let tok = WordTokenizer::fit(texts);
        let seqs: Vec<_> = texts.iter().map(|t| annotate(t, &tok).unwrap()).collect();
        let embs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
        let p = partition(seqs.iter().zip(&embs).map(|(s, e)| (s, e.as_slice())));
        assert_eq!(p.universe, 4);
        assert_eq!(p.classes.len(), 2);
        assert_eq!(p.classes[&CycleIndex::new(1).unwrap()].len(), 2);
        assert_eq!(p.classes[&CycleIndex::new(42).unwrap()].len(), 1);

        let p = partition(seqs[..2].iter().zip(&embs).map(|(s, e)| (s, e.as_slice())));
        assert_eq!(p.classes.len(), 1);
        let p = partition(seqs[3..].iter().zip(&embs).map(|(s, e)| (s, e.as_slice())));
        assert!(p.is_empty());
        assert!(matches!(intra_inter_loss(&p, 0.5), Err(Error::EmptyPartition)));
    }

    #[test]
    fn loss_examples() {
        let v = vec![0.3, -0.7, 2.0];
        let l = intra_inter_loss(&part(&[(5, vec![v.clone(), v.clone(), v])]), 0.5).unwrap();
        assert!(l.intra.abs() < 1e-15 && l.inter == 0.0);

        let l = intra_inter_loss(
            &part(&[
                (1, vec![vec![1.0, 0.0], vec![2.0, 0.0]]),
                (2, vec![vec![0.0, 3.0], vec![0.0, 1.0]]),
            ]),
            0.5,
        )
        .unwrap();
        assert_eq!((l.intra, l.inter, l.total), (0.0, 0.0, 0.0));

        let l = intra_inter_loss(&part(&[(1, vec![vec![1.0, 0.0]]), (2, vec![vec![0.0, 1.0]])]), 0.5)
            .unwrap();
        assert_eq!((l.intra, l.inter, l.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn loss_against_hand_computation() {
        // Class A: (1,0), (1,1); class B: (0,1).
        // intra pair: cos = 1/√2; cross pairs: 0 and 1/√2.
        let p = part(&[
            (3, vec![vec![1.0, 0.0], vec![1.0, 1.0]]),
            (7, vec![vec![0.0, 1.0]]),
        ]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l = intra_inter_loss(&p, 0.25).unwrap();
        assert!((l.intra - (1.0 - s)).abs() < 1e-15);
        assert!((l.inter - s / 2.0).abs() < 1e-15);
        assert!((l.total - (0.25 * (1.0 - s) + 0.75 * s / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn ewc_examples() {
        let a = params(&[&[1.0, 2.0]]);
        let f = FisherDiagonal {
            values: params(&[&[1.0, 1.0]]),
            sample_count: 1,
        };
        assert_eq!(ewc_penalty(&a, &a, &f, 100.0).unwrap(), 0.0);
        let b = params(&[&[0.0, 1.0]]);
        assert_eq!(ewc_penalty(&a, &b, &f, 2.0).unwrap(), 2.0);

        let t = params(&[&[0.5, -1.5, 2.25], &[4.0]]);
        let g = params(&[&[0.25, -1.0, 2.0], &[3.5]]);
        let f = FisherDiagonal {
            values: params(&[&[0.1, 3.0, 0.0], &[2.0]]),
            sample_count: 2,
        };
        let expected = 0.5 * 7.0 * (0.1 * 0.0625 + 3.0 * 0.25 + 0.0 * 0.0625 + 2.0 * 0.25);
        assert!((ewc_penalty(&t, &g, &f, 7.0).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            ewc_penalty(&t, &a, &f, 1.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn composite_losses() {
        let p = part(&[
            (3, vec![vec![1.0, 0.0], vec![1.0, 1.0]]),
            (7, vec![vec![0.0, 1.0]]),
        ]);
        let t = params(&[&[1.0, 2.0]]);
        let g = params(&[&[0.0, 2.5]]);
        let f = FisherDiagonal {
            values: params(&[&[0.5, 2.0]]),
            sample_count: 1,
        };
        let lt = intra_inter_loss(&p, 0.5).unwrap().total;
        assert_eq!(temporal_loss(&p, 0.5, &t, &g, &f, 0.0).unwrap(), lt);
        let pen = 0.5 * 3.0 * (0.5 * 1.0 + 2.0 * 0.25);
        assert!((temporal_loss(&p, 0.5, &t, &g, &f, 3.0).unwrap() - (lt + pen)).abs() < 1e-12);

        let orth = part(&[(1, vec![vec![1.0, 0.0]]), (2, vec![vec![0.0, 1.0]])]);
        assert_eq!(temporal_loss(&orth, 0.5, &t, &t, &f, 100.0).unwrap(), 0.0);

        let ntp = 2.302_585_092_994_046;
        assert_eq!(final_loss(ntp, 0.731, 0.0).to_bits(), ntp.to_bits());
        assert_eq!(final_loss(0.5, 0.5, 1.0), 1.0);
        assert!((final_loss(1.25, 0.4, 0.3) - 1.37).abs() < 1e-15);
    }
}
