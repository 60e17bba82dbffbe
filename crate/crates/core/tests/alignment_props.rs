mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use ticktack_core::alignment::{
    ewc_penalty, intra_inter_loss, train, ClassPartition, FisherDiagonal, TrainingConfig,
    TrainingMode,
};
use ticktack_core::annotate::{annotate, Tokenizer, WordTokenizer};
use ticktack_core::calendar::{CycleIndex, GregorianYear};
use ticktack_core::eval::generate_synthetic_tasks;
use ticktack_core::geometry::{EncodingConfig, InjectionMode};
use ticktack_core::model::{attach_adapters, init, Matrix, ModelConfig, NamedTensor, ParameterSet};

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 4)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn partition() -> impl Strategy<Value = ClassPartition> {
    prop::collection::btree_map(0i64..60, prop::collection::vec(vector(), 1..4), 1..5).prop_map(
        |m| {
            let classes: BTreeMap<CycleIndex, Vec<Vec<f64>>> = m
                .into_iter()
                .map(|(k, v)| (CycleIndex::new(k).unwrap(), v))
                .collect();
            ClassPartition {
                universe: classes.values().map(Vec::len).sum(),
                classes,
            }
        },
    )
}

fn flat_params(values: &[f64]) -> ParameterSet {
    ParameterSet {
        tensors: vec![NamedTensor {
            name: "w".into(),
            value: Matrix::row_vector(values.to_vec()),
        }],
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn losses_stay_in_range(p in partition(), delta in 0.0f64..=1.0) {
        let l = intra_inter_loss(&p, delta).unwrap();
        prop_assert!((0.0..=2.0).contains(&l.intra));
        prop_assert!((-1.0..=1.0).contains(&l.inter));
        prop_assert!(l.total.is_finite());
    }

    #[test]
    fn losses_ignore_positive_scaling(p in partition(), c in 1e-3f64..1e3) {
        let mut scaled = p.clone();
        scaled.classes.values_mut().flatten().flatten().for_each(|x| *x *= c);
        let (a, b) = (intra_inter_loss(&p, 0.5).unwrap(), intra_inter_loss(&scaled, 0.5).unwrap());
        prop_assert!(close(a.intra, b.intra) && close(a.inter, b.inter));
    }

    #[test]
    fn losses_ignore_order_and_class_names(p in partition(), shift in 1i64..60) {
        let mut moved = ClassPartition { universe: p.universe, classes: BTreeMap::new() };
        for (k, vs) in &p.classes {
            let mut vs = vs.clone();
            vs.reverse();
            let k = CycleIndex::new((k.value() as i64 + shift) % 60).unwrap();
            moved.classes.insert(k, vs);
        }
        let (a, b) = (intra_inter_loss(&p, 0.3).unwrap(), intra_inter_loss(&moved, 0.3).unwrap());
        prop_assert!(close(a.intra, b.intra) && close(a.inter, b.inter) && close(a.total, b.total));
    }

    #[test]
    fn ewc_vanishes_exactly_on_the_fisher_support(
        g in prop::collection::vec(-3.0f64..3.0, 8),
        f in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..2.0], 8),
        off in prop::collection::vec(-3.0f64..3.0, 8),
        lambda in 0.1f64..100.0,
    ) {
        let fisher = FisherDiagonal { values: flat_params(&f), sample_count: 1 };
        // Agree with g wherever f > 0, anything elsewhere.
        let t: Vec<f64> = g.iter().zip(&f).zip(&off).map(|((&g, &f), &o)| if f > 0.0 { g } else { o }).collect();
        prop_assert_eq!(ewc_penalty(&flat_params(&t), &flat_params(&g), &fisher, lambda).unwrap(), 0.0);
        // Moving any supported coordinate makes it positive.
        if let Some(i) = f.iter().position(|&x| x > 0.0) {
            let mut t2 = t.clone();
            t2[i] += 0.5;
            prop_assert!(ewc_penalty(&flat_params(&t2), &flat_params(&g), &fisher, lambda).unwrap() > 0.0);
        }
    }

    #[test]
    fn ewc_grows_with_each_deviation(
        g in prop::collection::vec(-3.0f64..3.0, 6),
        d in prop::collection::vec(-2.0f64..2.0, 6),
        f in prop::collection::vec(0.0f64..2.0, 6),
        i in 0usize..6,
        extra in 0.0f64..2.0,
    ) {
        let fisher = FisherDiagonal { values: flat_params(&f), sample_count: 1 };
        let t: Vec<f64> = g.iter().zip(&d).map(|(g, d)| g + d).collect();
        let mut wider = t.clone();
        wider[i] = g[i] + d[i].signum() * (d[i].abs() + extra);
        let a = ewc_penalty(&flat_params(&t), &flat_params(&g), &fisher, 1.0).unwrap();
        let b = ewc_penalty(&flat_params(&wider), &flat_params(&g), &fisher, 1.0).unwrap();
        prop_assert!(b >= a);
    }
}

#[test]
fn temporal_loss_falls_every_epoch_on_sixty_classes() {
    let range = (GregorianYear::new(1801).unwrap(), GregorianYear::new(2100).unwrap());
    let suite = generate_synthetic_tasks(5, 120, range, 2).unwrap();
    let tok = WordTokenizer::fit(suite.corpus.iter().map(String::as_str));
    let corpus: Vec<_> = suite.corpus.iter().map(|t| annotate(t, &tok).unwrap()).collect();
    let classes: std::collections::BTreeSet<_> = corpus.iter().filter_map(|s| s.class_label).collect();
    assert_eq!(classes.len(), 60);

    let base_cfg = ModelConfig {
        vocab_size: tok.vocab_size(),
        dim: 16,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 32,
        adapter_rank: 0,
        seed: 2,
    };
    let model = ModelConfig { adapter_rank: 4, ..base_cfg };
    let theta_g = attach_adapters(&init(&base_cfg).unwrap(), &model).unwrap();
    let enc = EncodingConfig {
        injection: InjectionMode::MentionPositions,
        ..EncodingConfig::with_dim(16)
    };
    let tc = TrainingConfig {
        lambda: 0.0,
        learning_rate: 0.05,
        epochs: 5,
        seed: 3,
        ..TrainingConfig::for_mode(TrainingMode::Ticktack)
    };
    let out = train(&theta_g, &corpus, &tc, &model, &enc, None).unwrap();
    let lt: Vec<f64> = out
        .metrics
        .iter()
        .map(|m| m.alignment(tc.delta) + m.ewc_penalty)
        .collect();
    assert!(lt.windows(2).all(|w| w[1] < w[0]), "{lt:?}");
}
