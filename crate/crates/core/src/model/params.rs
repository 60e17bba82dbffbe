use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Rank of the low-rank adapters; 0 means full fine-tuning without adapters.
    pub adapter_rank: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 128,
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 128,
            adapter_rank: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size == 0 || self.dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("vocab_size, dim, n_layers and n_heads must be >= 1".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be >= 1".into());
        }
        if self.dim % 2 != 0 {
            return bad(format!("dim must be even, got {}", self.dim));
        }
        if self.dim % self.n_heads != 0 {
            return bad(format!(
                "dim {} is not divisible by n_heads {}",
                self.dim, self.n_heads
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.dim * MLP_RATIO
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

/// Named model tensors in a fixed order.
///
/// For a config with `n_layers` layers the order is:
///
/// 1. `tok_emb` (`vocab × d`)
/// 2. per layer `i`: `layers.i.attn_norm.gain`, `layers.i.attn.wq`, `.wk`, `.wv`,
///    `.wo`, `layers.i.mlp_norm.gain`, `layers.i.mlp.w_in`, `.b_in`, `.w_out`, `.b_out`
/// 3. `final_norm.gain`, `lm_head` (`d × vocab`)
/// 4. when `adapter_rank > 0`, per layer and per projection
///    (`wq`, `wk`, `wv`, `wo`, `w_in`, `w_out`): `<projection>.lora_a` then
///    `<projection>.lora_b`
///
/// Adapters come last so base tensors occupy the same positions for every
/// rank. The flat view concatenates tensors in this order, each row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub tensors: Vec<NamedTensor>,
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.value.data.iter().copied())
            .collect()
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "flat length {} != parameter count {}",
                flat.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        let mut off = 0;
        for t in &mut out.tensors {
            let n = t.value.len();
            t.value.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    value: Matrix::zeros(t.value.rows, t.value.cols),
                })
                .collect(),
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn check_same_shape(&self, other: &ParameterSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "parameter sets differ in names or shapes".into(),
            ))
        }
    }

    pub fn add_scaled(&mut self, other: &ParameterSet, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.value.add_scaled(&b.value, s);
        }
    }

    pub fn is_adapter(name: &str) -> bool {
        name.ends_with(".lora_a") || name.ends_with(".lora_b")
    }

    /// Tensors updated by training: adapters when present, everything otherwise.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let has_adapters = self.tensors.iter().any(|t| Self::is_adapter(&t.name));
        self.tensors
            .iter()
            .map(|t| !has_adapters || Self::is_adapter(&t.name))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub weight: usize,
    pub adapter: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct LayerLayout {
    pub attn_norm: usize,
    pub wq: Projection,
    pub wk: Projection,
    pub wv: Projection,
    pub wo: Projection,
    pub mlp_norm: usize,
    pub w_in: Projection,
    pub b_in: usize,
    pub w_out: Projection,
    pub b_out: usize,
}

/// Tensor indices for a config, matching [`ParameterSet`]'s order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub layers: Vec<LayerLayout>,
    pub final_norm: usize,
    pub lm_head: usize,
    pub count: usize,
}

const BASE_PER_LAYER: usize = 10;
const ADAPTED_PROJECTIONS: usize = 6;

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let proj = |weight: usize| Projection {
            weight,
            adapter: None,
        };
        let mut layers: Vec<LayerLayout> = (0..cfg.n_layers)
            .map(|i| {
                let b = 1 + i * BASE_PER_LAYER;
                LayerLayout {
                    attn_norm: b,
                    wq: proj(b + 1),
                    wk: proj(b + 2),
                    wv: proj(b + 3),
                    wo: proj(b + 4),
                    mlp_norm: b + 5,
                    w_in: proj(b + 6),
                    b_in: b + 7,
                    w_out: proj(b + 8),
                    b_out: b + 9,
                }
            })
            .collect();
        let final_norm = 1 + cfg.n_layers * BASE_PER_LAYER;
        let lm_head = final_norm + 1;
        let mut count = lm_head + 1;
        if cfg.adapter_rank > 0 {
            for l in &mut layers {
                for p in [
                    &mut l.wq,
                    &mut l.wk,
                    &mut l.wv,
                    &mut l.wo,
                    &mut l.w_in,
                    &mut l.w_out,
                ] {
                    p.adapter = Some((count, count + 1));
                    count += 2;
                }
            }
            debug_assert_eq!(
                count,
                lm_head + 1 + cfg.n_layers * ADAPTED_PROJECTIONS * 2
            );
        }
        Self {
            tok_emb: 0,
            layers,
            final_norm,
            lm_head,
            count,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Deterministic initialization from `cfg.seed`.
///
/// Base tensors are drawn from one ChaCha stream and adapters from another,
/// so changing the adapter rank never changes the base weights. Adapter
/// `lora_b` factors start at zero, making the adapted model identical to the
/// base model at step 0.
pub fn init(cfg: &ModelConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let d = cfg.dim;
    let h = cfg.mlp_dim();
    let v = cfg.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inv = |n: usize| 1.0 / (n as f64).sqrt();

    let mut tensors = Vec::with_capacity(Layout::new(cfg).count);
    let mut push = |name: String, value: Matrix| tensors.push(NamedTensor { name, value });
    push("tok_emb".into(), normal(&mut rng, v, d, 1.0));
    for i in 0..cfg.n_layers {
        let p = format!("layers.{i}");
        push(format!("{p}.attn_norm.gain"), Matrix::filled(1, d, 1.0));
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{p}.attn.{w}"), normal(&mut rng, d, d, inv(d)));
        }
        push(format!("{p}.mlp_norm.gain"), Matrix::filled(1, d, 1.0));
        push(format!("{p}.mlp.w_in"), normal(&mut rng, d, h, inv(d)));
        push(format!("{p}.mlp.b_in"), Matrix::zeros(1, h));
        push(format!("{p}.mlp.w_out"), normal(&mut rng, h, d, inv(h)));
        push(format!("{p}.mlp.b_out"), Matrix::zeros(1, d));
    }
    push("final_norm.gain".into(), Matrix::filled(1, d, 1.0));
    push("lm_head".into(), normal(&mut rng, d, v, inv(d)));

    if cfg.adapter_rank > 0 {
        let r = cfg.adapter_rank;
        let mut arng = ChaCha8Rng::seed_from_u64(cfg.seed);
        arng.set_stream(1);
        for i in 0..cfg.n_layers {
            let p = format!("layers.{i}");
            for (w, rows, cols) in [
                ("attn.wq", d, d),
                ("attn.wk", d, d),
                ("attn.wv", d, d),
                ("attn.wo", d, d),
                ("mlp.w_in", d, h),
                ("mlp.w_out", h, d),
            ] {
                push(format!("{p}.{w}.lora_a"), normal(&mut arng, rows, r, inv(rows)));
                push(format!("{p}.{w}.lora_b"), Matrix::zeros(r, cols));
            }
        }
    }
    Ok(ParameterSet { tensors })
}

/// Extends a base (adapter-free) parameter set with freshly initialized
/// adapters for `cfg`, which must describe the same architecture.
pub fn attach_adapters(base: &ParameterSet, cfg: &ModelConfig) -> Result<ParameterSet> {
    let mut out = init(cfg)?;
    if base.tensors.iter().any(|t| ParameterSet::is_adapter(&t.name)) {
        return Err(Error::ShapeMismatch("base already carries adapters".into()));
    }
    if base.tensors.len() > out.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "base has {} tensors, config expects at most {}",
            base.tensors.len(),
            out.tensors.len()
        )));
    }
    for (slot, b) in out.tensors.iter_mut().zip(&base.tensors) {
        if slot.name != b.name || slot.value.shape() != b.value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "base tensor {} {:?} does not fit {} {:?}",
                b.name,
                b.value.shape(),
                slot.name,
                slot.value.shape()
            )));
        }
        slot.value = b.value.clone();
    }
    if out.tensors[base.tensors.len()..]
        .iter()
        .any(|t| !ParameterSet::is_adapter(&t.name))
    {
        return Err(Error::ShapeMismatch("base is missing non-adapter tensors".into()));
    }
    Ok(out)
}
