//! Layered run configuration: built-in defaults, then a TOML file, then the
//! `TICKTACK_OUT` environment variable, then command-line flags.
//!
//! Keys are flat `section.key` names. The resolved configuration is written
//! next to every command's artifacts as `config.toml`, annotated with where
//! each value came from, and can be fed back with `--config`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::Value;

use ticktack_core::alignment::{TrainingConfig, TrainingMode};
use ticktack_core::experiment::DeskConfig;
use ticktack_core::geometry::{EncodingConfig, InjectionMode};
use ticktack_core::model::ModelConfig;

use crate::UsageError;

pub const OUT_ENV: &str = "TICKTACK_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

/// `(key, default as a TOML literal, description)`.
const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "1", "seed for initialization, data generation, and batching"),
    ("paths.out_root", "\"runs\"", "root of per-command output directories"),
    ("paths.corpus", "\"\"", "year-annotated training corpus (JSONL with a text field)"),
    ("paths.general", "\"\"", "general corpus for pretraining and Fisher estimation (JSONL)"),
    ("paths.vocab", "\"\"", "tokenizer vocabulary (JSON list); fitted from the inputs when empty"),
    ("paths.checkpoint", "\"\"", "input checkpoint"),
    ("paths.fisher", "\"\"", "Fisher diagonal file, required by train unless lambda is 0"),
    ("paths.items", "\"\"", "QA items (JSONL)"),
    ("paths.pool", "\"\"", "few-shot exemplar items (JSONL)"),
    ("model.dim", "64", "hidden width"),
    ("model.n_layers", "2", "decoder blocks"),
    ("model.n_heads", "4", "attention heads"),
    ("model.max_seq_len", "128", "longest accepted sequence in tokens"),
    ("model.adapter_rank", "8", "low-rank adapter rank for post-training; 0 trains every weight"),
    ("encoding.alpha", "1.0", "spiral radius offset"),
    ("encoding.beta", "0.5", "spiral radius growth per cycle"),
    ("encoding.wavelength_base", "10000.0", "sinusoid wavelength base"),
    ("encoding.injection", "\"mention_positions\"", "all_positions or mention_positions"),
    ("training.mode", "\"ticktack\"", "ticktack (full objective) or pt (next-token only)"),
    ("training.delta", "0.5", "intra/inter-class mix"),
    ("training.sigma", "1.0", "weight of the temporal loss"),
    ("training.lambda", "100.0", "EWC strength"),
    ("training.learning_rate", "0.05", "SGD step size"),
    ("training.batch_size", "8", "sequences per micro-batch"),
    ("training.grad_accum_steps", "2", "micro-batches per optimizer step"),
    ("training.epochs", "10", "passes over the corpus"),
    ("pretrain.epochs", "10", "passes over the general corpus"),
    ("pretrain.learning_rate", "0.05", "SGD step size for pretraining"),
    ("fisher.samples", "64", "general-corpus sequences in the Fisher estimate"),
    ("tasks.n_items", "320", "QA items; their statements form the training corpus"),
    ("tasks.pool_items", "40", "extra trained-on items used as few-shot exemplars"),
    ("tasks.year_lo", "-1500", "earliest year"),
    ("tasks.year_hi", "2025", "latest year"),
    ("tasks.n_entities", "2", "distinct entities with year-dependent facts"),
    ("tasks.general_sentences", "300", "year-free sentences for pretraining"),
    ("eval.shots", "[0, 5]", "few-shot settings to evaluate"),
    ("eval.probe_template", "\"In {year} ,\"", "probe sentence for year similarity"),
    (
        "eval.probe_years",
        "[1950, 1951, 1952, 1953, 1954, 1955, 1956, 1957, 1958, 1959, 1960, 1961, 1962, 1963, 1964, 1965, 2010, 2011, 2012, 2013, 2014, 2015, 2016, 2017, 2018, 2019, 2020, 2021, 2022, 2023, 2024, 2025]",
        "years compared in the similarity matrix",
    ),
    ("profile.bin_width", "200", "Gregorian histogram bin width in years"),
    ("profile.view", "\"both\"", "gregorian, sexagenary, or both"),
];

fn literal(text: &str) -> Option<Value> {
    let table: toml::Table = toml::from_str(&format!("v = {text}")).ok()?;
    table.get("v").cloned()
}

fn default_value(key: &str) -> Option<Value> {
    KEYS.iter().find(|k| k.0 == key).and_then(|k| literal(k.1))
}

fn same_kind(expected: &Value, got: &Value) -> bool {
    match (expected, got) {
        (Value::Float(_), Value::Integer(_)) => true,
        (Value::Array(_), Value::Array(items)) => items.iter().all(Value::is_integer),
        _ => std::mem::discriminant(expected) == std::mem::discriminant(got),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Array(_) => "a list of integers",
        _ => "a table",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, Entry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let entries = KEYS
            .iter()
            .map(|&(key, lit, _)| {
                let value = literal(lit).unwrap_or_else(|| panic!("bad default for {key}"));
                (key.to_string(), Entry { value, source: Source::Default })
            })
            .collect();
        Self { entries }
    }
}

impl RunConfig {
    /// Defaults, then `file` if given, then `TICKTACK_OUT` if set.
    pub fn load(file: Option<&Path>) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            cfg.merge_toml(&text)
                .map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?;
        }
        if let Ok(root) = std::env::var(OUT_ENV) {
            if !root.is_empty() {
                cfg.set("paths.out_root", Value::String(root), Source::Env)?;
            }
        }
        Ok(cfg)
    }

    /// Merges a TOML document whose tables are config sections.
    pub fn merge_toml(&mut self, text: &str) -> Result<(), UsageError> {
        let doc: toml::Table =
            toml::from_str(text).map_err(|e| UsageError(format!("invalid TOML: {e}")))?;
        for (section, body) in doc {
            let Value::Table(t) = body else {
                return Err(UsageError(format!("top-level key {section:?} must be a section")));
            };
            for (k, v) in t {
                self.set(&format!("{section}.{k}"), v, Source::File)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value, source: Source) -> Result<(), UsageError> {
        let Some(expected) = default_value(key) else {
            return Err(UsageError(format!("unknown config key {key:?}")));
        };
        if !same_kind(&expected, &value) {
            return Err(UsageError(format!("{key}: expected {}, got {value}", kind(&expected))));
        }
        let value = match (&expected, value) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        self.entries.insert(key.to_string(), Entry { value, source });
        Ok(())
    }

    /// Applies a `key=value` override; the value is read as a TOML literal
    /// and falls back to a bare string.
    pub fn set_flag(&mut self, assignment: &str) -> Result<(), UsageError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects key=value, got {assignment:?}")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = literal(raw).unwrap_or_else(|| Value::String(raw.to_string()));
        let value = match (default_value(key), value) {
            (Some(Value::String(_)), v) if !v.is_str() => Value::String(raw.to_string()),
            (_, v) => v,
        };
        self.set(key, value, Source::Flag)
    }

    pub fn entry(&self, key: &str) -> &Entry {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("config key {key} is not declared"))
    }

    #[cfg(test)]
    pub fn source(&self, key: &str) -> Source {
        self.entry(key).source
    }

    pub fn f64(&self, key: &str) -> f64 {
        match &self.entry(key).value {
            Value::Float(f) => *f,
            Value::Integer(i) => *i as f64,
            v => panic!("{key} holds {v}"),
        }
    }

    pub fn i64(&self, key: &str) -> i64 {
        self.entry(key).value.as_integer().unwrap_or_else(|| panic!("{key} is not an integer"))
    }

    pub fn usize(&self, key: &str) -> Result<usize, UsageError> {
        let v = self.i64(key);
        usize::try_from(v).map_err(|_| UsageError(format!("{key}: must be >= 0, got {v}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64, UsageError> {
        let v = self.i64(key);
        u64::try_from(v).map_err(|_| UsageError(format!("{key}: must be >= 0, got {v}")))
    }

    pub fn str(&self, key: &str) -> &str {
        self.entry(key).value.as_str().unwrap_or_else(|| panic!("{key} is not a string"))
    }

    pub fn int_list(&self, key: &str) -> Vec<i64> {
        match &self.entry(key).value {
            Value::Array(a) => a.iter().filter_map(Value::as_integer).collect(),
            v => panic!("{key} holds {v}"),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, UsageError> {
        self.int_list(key)
            .into_iter()
            .map(|v| usize::try_from(v).map_err(|_| UsageError(format!("{key}: negative entry {v}"))))
            .collect()
    }

    /// A path key, or `None` when it is empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let s = self.str(key);
        (!s.is_empty()).then(|| PathBuf::from(s))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, UsageError> {
        self.path(key)
            .ok_or_else(|| UsageError(format!("{key} is required (set it in the config or with --set)")))
    }

    pub fn out_root(&self) -> PathBuf {
        PathBuf::from(self.str("paths.out_root"))
    }

    pub fn mode(&self) -> Result<TrainingMode, UsageError> {
        self.str("training.mode")
            .parse()
            .map_err(|e| UsageError(format!("training.mode: {e}")))
    }

    pub fn injection(&self) -> Result<InjectionMode, UsageError> {
        match self.str("encoding.injection") {
            "all_positions" => Ok(InjectionMode::AllPositions),
            "mention_positions" => Ok(InjectionMode::MentionPositions),
            other => Err(UsageError(format!(
                "encoding.injection: expected all_positions or mention_positions, got {other:?}"
            ))),
        }
    }

    pub fn encoding(&self) -> Result<EncodingConfig, UsageError> {
        let enc = EncodingConfig {
            alpha: self.f64("encoding.alpha"),
            beta: self.f64("encoding.beta"),
            dim: self.usize("model.dim")?,
            wavelength_base: self.f64("encoding.wavelength_base"),
            injection: self.injection()?,
        };
        enc.validate().map_err(|e| UsageError(format!("encoding: {e}")))?;
        Ok(enc)
    }

    /// Model shape for a given vocabulary; `adapter_rank` is left at 0.
    pub fn base_model(&self, vocab_size: usize) -> Result<ModelConfig, UsageError> {
        let m = ModelConfig {
            vocab_size,
            dim: self.usize("model.dim")?,
            n_layers: self.usize("model.n_layers")?,
            n_heads: self.usize("model.n_heads")?,
            max_seq_len: self.usize("model.max_seq_len")?,
            adapter_rank: 0,
            seed: self.u64("run.seed")?,
        };
        m.validate().map_err(|e| UsageError(format!("model: {e}")))?;
        Ok(m)
    }

    /// Training hyperparameters with the fields pinned by `mode`.
    pub fn training(&self, mode: TrainingMode) -> Result<TrainingConfig, UsageError> {
        let t = TrainingConfig {
            delta: self.f64("training.delta"),
            sigma: self.f64("training.sigma"),
            lambda: self.f64("training.lambda"),
            learning_rate: self.f64("training.learning_rate"),
            batch_size: self.usize("training.batch_size")?,
            grad_accum_steps: self.usize("training.grad_accum_steps")?,
            epochs: self.usize("training.epochs")?,
            seed: self.u64("run.seed")?,
            injection: true,
        }
        .with_mode(mode);
        t.validate().map_err(|e| UsageError(format!("training: {e}")))?;
        Ok(t)
    }

    pub fn desk(&self) -> Result<DeskConfig, UsageError> {
        let cfg = DeskConfig {
            seed: self.u64("run.seed")?,
            n_items: self.usize("tasks.n_items")?,
            pool_items: self.usize("tasks.pool_items")?,
            year_lo: self.i64("tasks.year_lo"),
            year_hi: self.i64("tasks.year_hi"),
            n_entities: self.usize("tasks.n_entities")?,
            general_sentences: self.usize("tasks.general_sentences")?,
            fisher_samples: self.usize("fisher.samples")?,
            dim: self.usize("model.dim")?,
            n_layers: self.usize("model.n_layers")?,
            n_heads: self.usize("model.n_heads")?,
            max_seq_len: self.usize("model.max_seq_len")?,
            adapter_rank: self.usize("model.adapter_rank")?,
            pretrain_epochs: self.usize("pretrain.epochs")?,
            pretrain_learning_rate: self.f64("pretrain.learning_rate"),
            training: self.training(TrainingMode::Ticktack)?,
            shots: self.usize_list("eval.shots")?,
            probe_years: self.int_list("eval.probe_years"),
            probe_template: self.str("eval.probe_template").to_string(),
            encoding: self.encoding()?,
        };
        cfg.validate().map_err(|e| UsageError(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// TOML text with one `# source` comment per key; loadable with `--config`.
    pub fn to_toml(&self) -> String {
        let mut sections: BTreeMap<&str, Vec<(&str, &Entry)>> = BTreeMap::new();
        for (key, entry) in &self.entries {
            let (section, name) = key.split_once('.').expect("keys are section.key");
            sections.entry(section).or_default().push((name, entry));
        }
        let mut out = String::new();
        for (i, (section, keys)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (name, e) in keys {
                let _ = writeln!(out, "{name} = {}  # {}", e.value, e.source);
            }
        }
        out
    }

    /// Key reference for `--help`.
    pub fn key_help() -> String {
        let mut out = String::from("Configuration keys (section.key = default):\n");
        for (key, default, doc) in KEYS {
            let shown = if default.len() > 40 { "[...]" } else { default };
            let _ = writeln!(out, "  {key} = {shown}\n      {doc}");
        }
        out
    }
}
