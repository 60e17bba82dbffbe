//! End-to-end desk experiment: pretrain a toy base model, post-train it
//! with plain next-token loss and with the alignment objective, and compare
//! the two on clustering, year similarity, and synthetic QA.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    estimate_fisher, train, write_metrics_csv, EpochMetrics, TrainingConfig, TrainingMode,
};
use crate::annotate::{annotate, AnnotatedSequence, Tokenizer, WordTokenizer};
use crate::calendar::{to_cycle_index, GregorianYear};
use crate::error::{Error, Result};
use crate::eval::{
    clustering_metrics, evaluate_qa, fill_template, general_corpus, generate_synthetic_tasks,
    write_embedding_csv, year_similarity_matrix, ClusteringMetrics, EraReport, SimilarityMatrix,
    SyntheticQaItem, DEFAULT_PROBE,
};
use crate::geometry::{EncodingConfig, InjectionMode};
use crate::model::{attach_adapters, forward, init, sentence_embedding, ModelConfig, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub seed: u64,
    /// Items scored in QA; their statements form the post-training corpus.
    pub n_items: usize,
    /// Extra items whose statements are trained on and used as exemplars.
    pub pool_items: usize,
    pub year_lo: i64,
    pub year_hi: i64,
    pub n_entities: usize,
    pub general_sentences: usize,
    pub fisher_samples: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub adapter_rank: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub training: TrainingConfig,
    pub shots: Vec<usize>,
    pub probe_years: Vec<i64>,
    pub probe_template: String,
    pub encoding: EncodingConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_items: 320,
            pool_items: 40,
            year_lo: -1500,
            year_hi: 2025,
            n_entities: 2,
            general_sentences: 300,
            fisher_samples: 64,
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 128,
            adapter_rank: 8,
            pretrain_epochs: 10,
            pretrain_learning_rate: 0.05,
            training: TrainingConfig {
                learning_rate: 0.05,
                seed: 1,
                ..TrainingConfig::default()
            },
            shots: vec![0, 5],
            probe_years: (1950..=1965).chain(2010..=2025).collect(),
            probe_template: DEFAULT_PROBE.to_string(),
            encoding: EncodingConfig {
                injection: InjectionMode::MentionPositions,
                ..EncodingConfig::with_dim(64)
            },
        }
    }
}

impl DeskConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self {
            seed,
            training: TrainingConfig { seed, ..self.training },
            ..self
        }
    }

    fn years(&self) -> Result<(GregorianYear, GregorianYear)> {
        Ok((GregorianYear::new(self.year_lo)?, GregorianYear::new(self.year_hi)?))
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.encoding.validate()?;
        if self.encoding.dim != self.dim {
            return Err(Error::InvalidConfig(format!(
                "encoding dim {} != model dim {}",
                self.encoding.dim, self.dim
            )));
        }
        if self.n_items == 0 {
            return Err(Error::InvalidConfig("n_items must be >= 1".into()));
        }
        if self.shots.iter().any(|&k| k > self.pool_items) {
            return Err(Error::InvalidConfig("shots exceed the exemplar pool".into()));
        }
        let (lo, hi) = self.years()?;
        if lo > hi {
            return Err(Error::InvalidRange {
                lo: lo.value(),
                hi: hi.value(),
            });
        }
        Ok(())
    }
}

/// Corpus, items, and tokenizer shared by both arms of the experiment.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub items: Vec<SyntheticQaItem>,
    pub pool: Vec<SyntheticQaItem>,
    pub corpus: Vec<AnnotatedSequence>,
    pub general: Vec<AnnotatedSequence>,
    pub tokenizer: WordTokenizer,
}

pub fn prepare(cfg: &DeskConfig) -> Result<DeskData> {
    cfg.validate()?;
    let suite = generate_synthetic_tasks(
        cfg.seed,
        cfg.n_items + cfg.pool_items,
        cfg.years()?,
        cfg.n_entities,
    )?;
    let general_text = general_corpus(cfg.seed, cfg.general_sentences);
    let probes: Vec<String> = cfg
        .probe_years
        .iter()
        .map(|&y| fill_template(&cfg.probe_template, GregorianYear::new(y)?))
        .collect::<Result<_>>()?;
    let options: Vec<String> = suite
        .items
        .iter()
        .flat_map(|i| (0..i.options.len()).map(move |o| i.completed(o)))
        .collect();
    let tokenizer = WordTokenizer::fit(
        suite
            .corpus
            .iter()
            .chain(&general_text)
            .chain(&probes)
            .chain(&options)
            .map(String::as_str),
    );
    let corpus = suite
        .corpus
        .iter()
        .map(|t| annotate(t, &tokenizer))
        .collect::<Result<_>>()?;
    let general = general_text
        .iter()
        .map(|t| annotate(t, &tokenizer))
        .collect::<Result<_>>()?;
    let mut items = suite.items;
    let pool = items.split_off(cfg.n_items);
    Ok(DeskData {
        items,
        pool,
        corpus,
        general,
        tokenizer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmReport {
    pub mode: TrainingMode,
    pub params: ParameterSet,
    pub metrics: Vec<EpochMetrics>,
    pub clustering: ClusteringMetrics,
    pub embeddings: Vec<(GregorianYear, Vec<f64>)>,
    pub similarity: SimilarityMatrix,
    pub same_term_mean: f64,
    pub different_term_mean: f64,
    pub qa: Vec<EraReport>,
}

impl ArmReport {
    pub fn qa_accuracy(&self, shots: usize) -> Option<f64> {
        self.qa.iter().find(|r| r.shots == shots).map(|r| r.overall_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskOutcome {
    pub config: DeskConfig,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub corpus_len: usize,
    pub classes_populated: usize,
    pub pt: ArmReport,
    pub ticktack: ArmReport,
}

impl DeskOutcome {
    pub fn silhouette_improves(&self) -> bool {
        self.ticktack.clustering.silhouette > self.pt.clustering.silhouette
    }

    pub fn same_term_exceeds_different(&self) -> bool {
        self.ticktack.same_term_mean > self.ticktack.different_term_mean
    }

    pub fn qa_not_worse(&self) -> bool {
        self.config.shots.iter().all(|&k| {
            match (self.ticktack.qa_accuracy(k), self.pt.qa_accuracy(k)) {
                (Some(t), Some(p)) => t >= p,
                _ => false,
            }
        })
    }

    /// One CSV row per arm with the headline numbers.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let shots: Vec<String> = self.config.shots.iter().map(|k| format!("qa_{k}shot")).collect();
        writeln!(
            w,
            "mode,silhouette,intra_mean,inter_mean,same_term_mean,different_term_mean,{}",
            shots.join(",")
        )?;
        for arm in [&self.pt, &self.ticktack] {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let qa: Vec<String> = self
                .config
                .shots
                .iter()
                .map(|&k| opt(arm.qa_accuracy(k)))
                .collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                arm.mode.as_str(),
                arm.clustering.silhouette,
                opt(arm.clustering.intra_mean),
                opt(arm.clustering.inter_mean),
                arm.same_term_mean,
                arm.different_term_mean,
                qa.join(",")
            )?;
        }
        Ok(())
    }

    /// Every metric CSV as `(file name, contents)`.
    pub fn artifacts(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        self.write_summary_csv(&mut buf)?;
        out.push(("summary.csv".to_string(), buf));
        for arm in [&self.pt, &self.ticktack] {
            let m = arm.mode.as_str();
            let mut buf = Vec::new();
            write_metrics_csv(&arm.metrics, &mut buf)?;
            out.push((format!("metrics_{m}.csv"), buf));
            let mut buf = Vec::new();
            arm.similarity.write_csv(&mut buf)?;
            out.push((format!("similarity_{m}.csv"), buf));
            for r in &arm.qa {
                let mut buf = Vec::new();
                r.write_csv(&mut buf)?;
                out.push((format!("era_{m}_{}shot.csv", r.shots), buf));
            }
            let rows: Vec<_> = arm
                .embeddings
                .iter()
                .map(|(y, e)| (*y, to_cycle_index(*y), e.clone()))
                .collect();
            let mut buf = Vec::new();
            write_embedding_csv(&rows, &mut buf)?;
            out.push((format!("embeddings_{m}.csv"), buf));
        }
        Ok(out)
    }

    /// Writes every metric CSV into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        let files = self.artifacts()?;
        fs::create_dir_all(dir)?;
        for (name, bytes) in files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Pooled embedding of every labeled corpus sentence under `params`.
pub fn corpus_embeddings(
    params: &ParameterSet,
    corpus: &[AnnotatedSequence],
    model: &ModelConfig,
    enc: &EncodingConfig,
    injection: bool,
) -> Result<Vec<(GregorianYear, Vec<f64>)>> {
    corpus
        .par_iter()
        .filter_map(|s| s.anchor_year().map(|y| (y, s)))
        .map(|(y, s)| {
            let (_, hidden) = forward(params, s, model, enc, injection)?;
            Ok((y, sentence_embedding(&hidden)?))
        })
        .collect()
}

fn evaluate_arm(
    cfg: &DeskConfig,
    data: &DeskData,
    model: &ModelConfig,
    mode: TrainingMode,
    params: ParameterSet,
    metrics: Vec<EpochMetrics>,
    injection: bool,
) -> Result<ArmReport> {
    let enc = &cfg.encoding;
    let embeddings = corpus_embeddings(&params, &data.corpus, model, enc, injection)?;
    let labeled: Vec<_> = embeddings
        .iter()
        .map(|(y, e)| (e.clone(), to_cycle_index(*y)))
        .collect();
    let clustering = clustering_metrics(&labeled)?;
    let years: Vec<GregorianYear> = cfg
        .probe_years
        .iter()
        .map(|&y| GregorianYear::new(y))
        .collect::<Result<_>>()?;
    let similarity = year_similarity_matrix(
        &params,
        model,
        enc,
        &data.tokenizer,
        &years,
        &cfg.probe_template,
        injection,
    )?;
    let (same, diff) = similarity.term_means();
    let qa = cfg
        .shots
        .iter()
        .map(|&k| {
            evaluate_qa(
                &params,
                model,
                enc,
                &data.tokenizer,
                &data.items,
                k,
                &data.pool,
                cfg.seed,
                injection,
            )
        })
        .collect::<Result<_>>()?;
    Ok(ArmReport {
        mode,
        params,
        metrics,
        clustering,
        embeddings,
        similarity,
        same_term_mean: same.unwrap_or(f64::NAN),
        different_term_mean: diff.unwrap_or(f64::NAN),
        qa,
    })
}

/// Pretrained base model (no adapters) on the year-free general corpus.
pub fn pretrain_base(cfg: &DeskConfig, data: &DeskData) -> Result<(ModelConfig, ParameterSet)> {
    let model = ModelConfig {
        vocab_size: data.tokenizer.vocab_size(),
        dim: cfg.dim,
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        max_seq_len: cfg.max_seq_len,
        adapter_rank: 0,
        seed: cfg.seed,
    };
    let tc = TrainingConfig {
        learning_rate: cfg.pretrain_learning_rate,
        epochs: cfg.pretrain_epochs,
        seed: cfg.seed,
        ..cfg.training.with_mode(TrainingMode::Pt)
    };
    let out = train(&init(&model)?, &data.general, &tc, &model, &cfg.encoding, None)?;
    Ok((model, out.params))
}

pub fn run_desk(cfg: &DeskConfig) -> Result<DeskOutcome> {
    let data = prepare(cfg)?;
    let (base_model, base) = pretrain_base(cfg, &data)?;
    let model = ModelConfig {
        adapter_rank: cfg.adapter_rank,
        ..base_model
    };
    let theta_g = attach_adapters(&base, &model)?;
    let enc = &cfg.encoding;

    let pt_cfg = TrainingConfig {
        seed: cfg.seed,
        ..cfg.training.with_mode(TrainingMode::Pt)
    };
    let pt = train(&theta_g, &data.corpus, &pt_cfg, &model, enc, None)?;

    let tt_cfg = TrainingConfig {
        seed: cfg.seed,
        ..cfg.training.with_mode(TrainingMode::Ticktack)
    };
    let fisher = if tt_cfg.lambda > 0.0 {
        Some(estimate_fisher(&theta_g, &data.general, cfg.fisher_samples, &model, enc)?)
    } else {
        None
    };
    let tt = train(&theta_g, &data.corpus, &tt_cfg, &model, enc, fisher.as_ref())?;

    let mut classes: Vec<_> = data.corpus.iter().filter_map(|s| s.class_label).collect();
    classes.sort_unstable();
    classes.dedup();
    Ok(DeskOutcome {
        config: cfg.clone(),
        vocab_size: model.vocab_size,
        parameter_count: theta_g.len(),
        corpus_len: data.corpus.len(),
        classes_populated: classes.len(),
        pt: evaluate_arm(cfg, &data, &model, TrainingMode::Pt, pt.params, pt.metrics, false)?,
        ticktack: evaluate_arm(
            cfg,
            &data,
            &model,
            TrainingMode::Ticktack,
            tt.params,
            tt.metrics,
            true,
        )?,
    })
}
