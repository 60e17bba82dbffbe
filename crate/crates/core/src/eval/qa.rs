//! Multiple-choice scoring and era-bucketed accuracy.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate, AnnotatedSequence, Tokenizer};
use crate::error::{Error, Result};
use crate::geometry::EncodingConfig;
use crate::model::{forward, ModelConfig, ParameterSet};

use super::tasks::{EraBucket, SyntheticQaItem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: EraBucket,
    pub count: usize,
    pub correct: usize,
    /// `None` for an empty bucket.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraReport {
    pub shots: usize,
    /// Every bucket, in chronological order.
    pub buckets: Vec<BucketReport>,
    pub total: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
}

impl EraReport {
    pub fn from_outcomes(shots: usize, outcomes: &[(EraBucket, bool)]) -> Self {
        let buckets: Vec<BucketReport> = EraBucket::ALL
            .iter()
            .map(|&b| {
                let count = outcomes.iter().filter(|o| o.0 == b).count();
                let correct = outcomes.iter().filter(|o| o.0 == b && o.1).count();
                BucketReport {
                    bucket: b,
                    count,
                    correct,
                    accuracy: (count > 0).then(|| correct as f64 / count as f64),
                }
            })
            .collect();
        let total = outcomes.len();
        let correct = outcomes.iter().filter(|o| o.1).count();
        Self {
            shots,
            buckets,
            total,
            correct,
            overall_accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
        }
    }

    pub fn bucket(&self, b: EraBucket) -> &BucketReport {
        self.buckets
            .iter()
            .find(|r| r.bucket == b)
            .expect("every bucket is reported")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bucket,count,correct,accuracy")?;
        for b in &self.buckets {
            let acc = b.accuracy.map_or(String::new(), |a| a.to_string());
            writeln!(w, "{},{},{},{}", b.bucket, b.count, b.correct, acc)?;
        }
        writeln!(w, "overall,{},{},{}", self.total, self.correct, self.overall_accuracy)?;
        Ok(())
    }
}

/// Mean log-probability of `seq.tokens[prefix_len..]` given what precedes.
pub fn completion_log_likelihood(
    params: &ParameterSet,
    model: &ModelConfig,
    enc: &EncodingConfig,
    seq: &AnnotatedSequence,
    prefix_len: usize,
    injection: bool,
) -> Result<f64> {
    if prefix_len == 0 || prefix_len >= seq.tokens.len() {
        return Err(Error::InsufficientData(format!(
            "completion after {prefix_len} of {} tokens",
            seq.tokens.len()
        )));
    }
    let (logits, _) = forward(params, seq, model, enc, injection)?;
    let mut total = 0.0;
    for p in prefix_len..seq.tokens.len() {
        let row = logits.row(p - 1);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += row[seq.tokens[p] as usize] - lse;
    }
    Ok(total / (seq.tokens.len() - prefix_len) as f64)
}

/// Few-shot prefix for item `index`: `shots` pool statements drawn by seed.
pub fn exemplar_context(pool: &[SyntheticQaItem], shots: usize, seed: u64, index: usize) -> Result<Option<String>> {
    if shots == 0 {
        return Ok(None);
    }
    if pool.len() < shots {
        return Err(Error::InsufficientData(format!(
            "{shots} shots requested from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let picks = sample(&mut rng, pool.len(), shots);
    let parts: Vec<String> = picks.iter().map(|i| pool[i].statement()).collect();
    Ok(Some(parts.join(" ")))
}

/// Index of the option with the highest length-normalized log-likelihood;
/// ties go to the earliest option.
#[allow(clippy::too_many_arguments)]
pub fn predict<T: Tokenizer + ?Sized>(
    params: &ParameterSet,
    model: &ModelConfig,
    enc: &EncodingConfig,
    tokenizer: &T,
    item: &SyntheticQaItem,
    context: Option<&str>,
    injection: bool,
) -> Result<usize> {
    let stem = annotate(&item.question, tokenizer)?;
    let ctx = context.map(|c| annotate(c, tokenizer)).transpose()?;
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..item.options.len() {
        let q = annotate(&item.completed(i), tokenizer)?;
        if q.tokens.get(..stem.tokens.len()) != Some(&stem.tokens[..]) {
            return Err(Error::InvalidConfig(format!(
                "option {i} does not extend the stem {:?}",
                item.question
            )));
        }
        let (seq, prefix) = match &ctx {
            Some(c) => (q.with_context(c), c.tokens.len() + stem.tokens.len() - 1),
            None => (q, stem.tokens.len()),
        };
        let s = completion_log_likelihood(params, model, enc, &seq, prefix, injection)?;
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(best.1)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_qa<T: Tokenizer + Sync + ?Sized>(
    params: &ParameterSet,
    model: &ModelConfig,
    enc: &EncodingConfig,
    tokenizer: &T,
    items: &[SyntheticQaItem],
    shots: usize,
    pool: &[SyntheticQaItem],
    seed: u64,
    injection: bool,
) -> Result<EraReport> {
    if items.is_empty() {
        return Err(Error::InsufficientData("no QA items".into()));
    }
    let outcomes: Vec<(EraBucket, bool)> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let ctx = exemplar_context(pool, shots, seed, i)?;
            let p = predict(params, model, enc, tokenizer, item, ctx.as_deref(), injection)?;
            Ok((item.bucket, p == item.answer_index))
        })
        .collect::<Result<_>>()?;
    Ok(EraReport::from_outcomes(shots, &outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::WordTokenizer;
    use crate::calendar::GregorianYear;
    use crate::eval::tasks::generate_synthetic_tasks;
    use crate::model::init;

    fn y(v: i64) -> GregorianYear {
        GregorianYear::new(v).unwrap()
    }

    fn setup(n: usize, range: (i64, i64)) -> (Vec<SyntheticQaItem>, WordTokenizer, ModelConfig) {
        let s = generate_synthetic_tasks(21, n, (y(range.0), y(range.1)), 3).unwrap();
        let tok = WordTokenizer::fit(
            s.items
                .iter()
                .flat_map(|i| (0..i.options.len()).map(move |o| i.completed(o)))
                .collect::<Vec<_>>()
                .iter()
                .map(String::as_str),
        );
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            dim: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 128,
            adapter_rank: 0,
            seed: 1,
        };
        (s.items, tok, cfg)
    }

    #[test]
    fn uniform_logits_score_at_chance() {
        let (items, tok, cfg) = setup(200, (-1500, 2025));
        let mut p = init(&cfg).unwrap();
        for t in &mut p.tensors {
            if t.name == "lm_head" {
                t.value.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let enc = EncodingConfig::with_dim(8);
        let r = evaluate_qa(&p, &cfg, &enc, &tok, &items, 0, &[], 0, false).unwrap();
        let first = items.iter().filter(|i| i.answer_index == 0).count() as f64 / 200.0;
        assert_eq!(r.overall_accuracy, first);
        assert!((r.overall_accuracy - 0.25).abs() < 0.1, "{}", r.overall_accuracy);
        assert_eq!(r.buckets.iter().map(|b| b.count).sum::<usize>(), 200);
    }

    #[test]
    fn single_bucket_report() {
        let (items, tok, cfg) = setup(30, (1600, 1900));
        let p = init(&cfg).unwrap();
        let enc = EncodingConfig::with_dim(8);
        let r = evaluate_qa(&p, &cfg, &enc, &tok, &items, 2, &items, 5, true).unwrap();
        let nonempty: Vec<_> = r.buckets.iter().filter(|b| b.count > 0).collect();
        assert_eq!(nonempty.len(), 1);
        assert_eq!(nonempty[0].bucket, EraBucket::Ad1501To2000);
        assert_eq!(nonempty[0].accuracy, Some(r.overall_accuracy));
        let again = evaluate_qa(&p, &cfg, &enc, &tok, &items, 2, &items, 5, true).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn exemplars_are_seeded_and_bounded() {
        let (items, _, _) = setup(10, (1600, 1900));
        let a = exemplar_context(&items, 5, 3, 0).unwrap().unwrap();
        assert_eq!(a, exemplar_context(&items, 5, 3, 0).unwrap().unwrap());
        assert_eq!(a.matches(" .").count(), 5);
        assert!(exemplar_context(&items, 0, 3, 0).unwrap().is_none());
        assert!(exemplar_context(&items[..2], 5, 3, 0).is_err());
    }

    #[test]
    fn report_csv_and_conservation() {
        let r = EraReport::from_outcomes(
            5,
            &[
                (EraBucket::Bce, true),
                (EraBucket::Bce, false),
                (EraBucket::After2000, true),
            ],
        );
        assert_eq!(r.total, 3);
        assert_eq!(r.bucket(EraBucket::Bce).accuracy, Some(0.5));
        let weighted: f64 = r
            .buckets
            .iter()
            .filter_map(|b| b.accuracy.map(|a| a * b.count as f64))
            .sum::<f64>()
            / r.total as f64;
        assert!((weighted - r.overall_accuracy).abs() < 1e-15);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bucket,count,correct,accuracy\nBCE,2,1,0.5\n1-500,0,0,\n"));
        assert!(text.ends_with("overall,3,2,0.6666666666666666\n"));
    }

    #[test]
    fn empty_items_are_rejected() {
        let (_, tok, cfg) = setup(5, (1600, 1900));
        let p = init(&cfg).unwrap();
        let enc = EncodingConfig::with_dim(8);
        assert!(evaluate_qa(&p, &cfg, &enc, &tok, &[], 0, &[], 0, false).is_err());
    }
}
