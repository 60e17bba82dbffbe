//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use ticktack_core::alignment::FisherDiagonal;
use ticktack_core::annotate::{annotate, AnnotatedSequence, Tokenizer, WordTokenizer};
use ticktack_core::geometry::EncodingConfig;
use ticktack_core::model::{init, ModelConfig, ParameterSet};

pub struct Toy {
    pub tokenizer: WordTokenizer,
    pub seqs: Vec<AnnotatedSequence>,
    pub model: ModelConfig,
    pub enc: EncodingConfig,
}

/// A d=8, 2-layer, 2-head model over the given sentences.
pub fn toy(texts: &[&str], adapter_rank: usize) -> Toy {
    let tokenizer = WordTokenizer::fit(texts.iter().copied());
    let seqs = texts.iter().map(|t| annotate(t, &tokenizer).unwrap()).collect();
    let model = ModelConfig {
        vocab_size: tokenizer.vocab_size(),
        dim: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 32,
        adapter_rank,
        seed: 11,
    };
    Toy {
        tokenizer,
        seqs,
        model,
        enc: EncodingConfig::with_dim(8),
    }
}

/// Deterministic pseudo-random offsets so that no parameter sits at a
/// special value such as an all-zero adapter.
pub fn perturbed(params: &ParameterSet, scale: f64, salt: u64) -> ParameterSet {
    let mut out = params.clone();
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ salt;
    for t in &mut out.tensors {
        for v in &mut t.value.data {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            *v += scale * (2.0 * u - 1.0);
        }
    }
    out
}

pub fn fisher_like(params: &ParameterSet) -> FisherDiagonal {
    let mut values = params.zeros_like();
    for t in &mut values.tensors {
        for (i, v) in t.value.data.iter_mut().enumerate() {
            *v = 0.1 + (i % 7) as f64 * 0.05;
        }
    }
    FisherDiagonal {
        values,
        sample_count: 1,
    }
}

pub fn base(toy: &Toy) -> ParameterSet {
    init(&toy.model).unwrap()
}

/// Largest relative error between `grad` and central differences of `f`
/// taken with step `h` over every parameter entry. The denominator is
/// floored at `floor` so that entries with vanishing gradients are compared
/// absolutely.
pub fn max_fd_error<F>(params: &ParameterSet, grad: &ParameterSet, h: f64, floor: f64, f: F) -> f64
where
    F: Fn(&ParameterSet) -> f64,
{
    let flat = params.flat();
    let g = grad.flat();
    let mut worst: f64 = 0.0;
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + h;
        let up = f(&params.with_flat(&probe).unwrap());
        probe[i] = flat[i] - h;
        let down = f(&params.with_flat(&probe).unwrap());
        probe[i] = flat[i];
        let fd = (up - down) / (2.0 * h);
        let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

pub fn bits(p: &ParameterSet) -> Vec<u64> {
    p.flat().iter().map(|v| v.to_bits()).collect()
}
