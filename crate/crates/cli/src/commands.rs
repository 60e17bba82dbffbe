use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value as Json};

use ticktack_core::alignment::{
    estimate_fisher, train, write_metrics_csv, FisherDiagonal, TrainingMode,
};
use ticktack_core::annotate::{
    annotate, read_corpus, uniformity_metrics, AnnotatedSequence, GregorianProfiler,
    SexagenaryProfiler, Tokenizer, WordTokenizer, YearHistogram,
};
use ticktack_core::calendar::{to_cycle_index, term_of, GregorianYear};
use ticktack_core::eval::{
    clustering_metrics, evaluate_qa, general_corpus, write_embedding_csv, year_similarity_matrix,
    SyntheticQaItem,
};
use ticktack_core::experiment::{corpus_embeddings, prepare, run_desk};
use ticktack_core::geometry::{encode_year, to_cartesian, to_polar, EncodingConfig};
use ticktack_core::model::{attach_adapters, init, Container, ContainerHeader, ModelConfig, ParameterSet};

use crate::config::RunConfig;
use crate::output::Artifacts;
use crate::UsageError;

const CHECKPOINT: &str = "checkpoint.bin";
const FISHER: &str = "fisher.bin";

/// Parses `606`, `-75000`, `75000BCE`, `450 BC`, `AD 606`, or `2025CE`.
pub fn parse_year(arg: &str) -> Result<GregorianYear, UsageError> {
    let compact: String = arg.chars().filter(|c| !c.is_whitespace()).collect();
    let upper = compact.to_ascii_uppercase();
    let (digits, sign) = if let Some(n) = upper.strip_suffix("BCE").or_else(|| upper.strip_suffix("BC")) {
        (n, -1)
    } else if let Some(n) = upper.strip_suffix("CE").or_else(|| upper.strip_suffix("AD")) {
        (n, 1)
    } else if let Some(n) = upper.strip_prefix("AD") {
        (n, 1)
    } else {
        (upper.as_str(), 1)
    };
    if sign < 0 && digits.starts_with('-') {
        return Err(UsageError(format!("cannot parse year {arg:?}")));
    }
    let v: i64 = digits
        .parse()
        .map_err(|_| UsageError(format!("cannot parse year {arg:?}")))?;
    GregorianYear::new(sign * v).map_err(|e| UsageError(format!("{arg}: {e}")))
}

/// A single year or an inclusive range `A..B`.
pub fn parse_years(arg: &str) -> Result<Vec<GregorianYear>, UsageError> {
    let Some((a, b)) = arg.split_once("..") else {
        return Ok(vec![parse_year(arg)?]);
    };
    let (lo, hi) = (parse_year(a)?, parse_year(b)?);
    if lo > hi {
        return Err(UsageError(format!("empty range {arg:?}")));
    }
    let mut out = vec![lo];
    let mut y = lo;
    while y < hi {
        y = y.succ().expect("below an in-range upper bound");
        out.push(y);
    }
    Ok(out)
}

fn expand_years(args: &[String]) -> Result<Vec<GregorianYear>, UsageError> {
    let mut years = Vec::new();
    for a in args {
        years.extend(parse_years(a)?);
    }
    Ok(years)
}

pub fn convert(cfg: &RunConfig, args: &[String]) -> Result<String> {
    let years = expand_years(args)?;
    let enc = cfg.encoding()?;
    let mut out = String::from("year\tcycle_index\tterm\ttheta_deg\tr\tx\ty\n");
    for y in years {
        let k = to_cycle_index(y);
        let p = to_polar(y, &enc)?;
        let c = to_cartesian(&p);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            y.value(),
            k.value(),
            term_of(k).name(),
            p.theta_degrees,
            p.radius,
            c.x,
            c.y
        ));
    }
    Ok(out)
}

pub fn encode(cfg: &RunConfig, args: &[String]) -> Result<String> {
    let years = expand_years(args)?;
    let enc = cfg.encoding()?;
    let cols: Vec<String> = (0..enc.dim).map(|j| format!("v{j}")).collect();
    let mut out = format!("year,axis,{}\n", cols.join(","));
    for y in years {
        let (tx, ty) = encode_year(y, &enc)?;
        for (axis, v) in [("x", tx), ("y", ty)] {
            let vals: Vec<String> = v.values.iter().map(f64::to_string).collect();
            out.push_str(&format!("{},{axis},{}\n", y.value(), vals.join(",")));
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    read_corpus(open(path)?)
        .map(|r| r.map(|rec| rec.text))
        .collect::<ticktack_core::Result<_>>()
        .with_context(|| format!("reading {}", path.display()))
}

fn read_items(path: &Path) -> Result<Vec<SyntheticQaItem>> {
    let mut items = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        items.push(item);
    }
    Ok(items)
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn annotate_all(texts: &[String], tok: &WordTokenizer) -> Result<Vec<AnnotatedSequence>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| annotate(t, tok).with_context(|| format!("sentence {}", i + 1)))
        .collect()
}

fn histogram_entry(h: &YearHistogram) -> Json {
    let mut m = Map::new();
    m.insert("total".into(), json!(h.total));
    m.insert("bins".into(), json!(h.bins.len()));
    m.insert("bin_width_years".into(), json!(h.bin_width_years));
    match uniformity_metrics(h) {
        Ok(u) => {
            m.insert("normalized_entropy".into(), json!(u.normalized_entropy));
            m.insert("chi_square".into(), json!(u.chi_square));
        }
        Err(e) => {
            m.insert("normalized_entropy".into(), Json::Null);
            m.insert("chi_square".into(), Json::Null);
            m.insert("warning".into(), json!(e.to_string()));
        }
    }
    Json::Object(m)
}

pub fn profile(cfg: &RunConfig, corpus: &Path, warn: &mut Vec<String>) -> Result<Artifacts> {
    let view = cfg.str("profile.view");
    let (greg, sexa) = match view {
        "gregorian" => (true, false),
        "sexagenary" => (false, true),
        "both" => (true, true),
        other => {
            return Err(UsageError(format!(
                "profile.view: expected gregorian, sexagenary or both, got {other:?}"
            ))
            .into())
        }
    };
    let width = u32::try_from(cfg.i64("profile.bin_width"))
        .map_err(|_| UsageError("profile.bin_width: must be a positive integer".into()))?;
    let mut g = GregorianProfiler::new(width).map_err(|e| UsageError(format!("profile.bin_width: {e}")))?;
    let mut s = SexagenaryProfiler::default();
    for rec in read_corpus(open(corpus)?) {
        let rec = rec.with_context(|| format!("reading {}", corpus.display()))?;
        g.add_text(&rec.text);
        s.add_text(&rec.text);
    }
    let mut art = Artifacts::default();
    let mut views = Map::new();
    for (on, name, h) in [(greg, "gregorian", g.finish()), (sexa, "sexagenary", s.finish())] {
        if !on {
            continue;
        }
        art.add_with(format!("histogram_{name}.csv"), |w| h.write_csv(w))?;
        let entry = histogram_entry(&h);
        if let Some(msg) = entry.get("warning").and_then(Json::as_str) {
            warn.push(format!("{name} view: {msg}; uniformity metrics skipped"));
        }
        views.insert(name.into(), entry);
    }
    art.add_json(
        "metrics.json",
        &json!({ "corpus": corpus.display().to_string(), "views": views }),
    )?;
    Ok(art)
}

pub fn gen_tasks(cfg: &RunConfig) -> Result<Artifacts> {
    let desk = cfg.desk()?;
    let data = prepare(&desk)?;
    let mut art = Artifacts::default();
    art.add("items.jsonl", jsonl(&data.items)?);
    art.add("pool.jsonl", jsonl(&data.pool)?);
    art.add("corpus.jsonl", jsonl(data.corpus.iter().map(|s| json!({ "text": s.text })))?);
    art.add(
        "general.jsonl",
        jsonl(general_corpus(desk.seed, desk.general_sentences).iter().map(|t| json!({ "text": t })))?,
    );
    art.add_json("vocab.json", &data.tokenizer.vocab())?;
    Ok(art)
}

fn meta(tok: &WordTokenizer, enc: &EncodingConfig, mode: &str) -> Result<Map<String, Json>> {
    let mut m = Map::new();
    m.insert("vocab".into(), serde_json::to_value(tok.vocab())?);
    m.insert("encoding".into(), serde_json::to_value(enc)?);
    m.insert("mode".into(), json!(mode));
    Ok(m)
}

fn checkpoint_bytes(kind: &str, model: ModelConfig, seed: u64, step: usize, meta: Map<String, Json>, tensors: ParameterSet) -> Result<Vec<u8>> {
    let c = Container {
        header: ContainerHeader {
            kind: kind.into(),
            model,
            seed,
            step: step as u64,
            meta,
        },
        tensors,
    };
    let mut buf = Vec::new();
    c.write_to(&mut buf)?;
    Ok(buf)
}

fn load_container(path: &Path, kind: &str) -> Result<Container> {
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    if c.header.kind != kind {
        bail!("{} holds a {} file, expected {kind}", path.display(), c.header.kind);
    }
    Ok(c)
}

fn tokenizer_of(c: &Container) -> Result<WordTokenizer> {
    let vocab = c
        .header
        .meta
        .get("vocab")
        .context("checkpoint carries no vocabulary")?;
    Ok(serde_json::from_value(vocab.clone())?)
}

fn mode_of(c: &Container) -> &str {
    c.header.meta.get("mode").and_then(Json::as_str).unwrap_or("base")
}

fn encoding_of(c: &Container, cfg: &RunConfig) -> Result<EncodingConfig> {
    match c.header.meta.get("encoding") {
        Some(e) => Ok(serde_json::from_value(e.clone())?),
        None => Ok(cfg.encoding()?),
    }
}

pub fn pretrain(cfg: &RunConfig) -> Result<Artifacts> {
    let general_path = cfg.require_path("paths.general")?;
    let general_text = read_texts(&general_path)?;
    let tok = match cfg.path("paths.vocab") {
        Some(p) => serde_json::from_reader(open(&p)?).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut texts = general_text.clone();
            if let Some(p) = cfg.path("paths.corpus") {
                texts.extend(read_texts(&p)?);
            }
            if let Some(p) = cfg.path("paths.items") {
                for item in read_items(&p)? {
                    texts.extend((0..item.options.len()).map(|i| item.completed(i)));
                }
            }
            WordTokenizer::fit(texts.iter().map(String::as_str))
        }
    };
    let enc = cfg.encoding()?;
    let model = cfg.base_model(tok.vocab_size())?;
    let general = annotate_all(&general_text, &tok)?;
    let tc = ticktack_core::alignment::TrainingConfig {
        learning_rate: cfg.f64("pretrain.learning_rate"),
        epochs: cfg.usize("pretrain.epochs")?,
        ..cfg.training(TrainingMode::Pt)?
    };
    tc.validate().map_err(|e| UsageError(format!("pretrain: {e}")))?;
    let out = train(&init(&model)?, &general, &tc, &model, &enc, None)?;
    let mut art = Artifacts::default();
    art.add(
        CHECKPOINT,
        checkpoint_bytes("checkpoint", model, tc.seed, out.steps, meta(&tok, &enc, "base")?, out.params)?,
    );
    art.add_with("metrics.csv", |w| write_metrics_csv(&out.metrics, w))?;
    art.add_json("vocab.json", &tok.vocab())?;
    Ok(art)
}

/// The post-training starting point: the checkpoint's weights, with fresh
/// adapters attached when the checkpoint has none and a rank is configured.
fn starting_point(cfg: &RunConfig, base: &Container) -> Result<(ModelConfig, ParameterSet)> {
    let rank = cfg.usize("model.adapter_rank")?;
    let m = base.header.model;
    if m.adapter_rank == 0 && rank > 0 {
        let adapted = ModelConfig { adapter_rank: rank, ..m };
        Ok((adapted, attach_adapters(&base.tensors, &adapted)?))
    } else {
        Ok((m, base.tensors.clone()))
    }
}

pub fn fisher(cfg: &RunConfig) -> Result<Artifacts> {
    let base = load_container(&cfg.require_path("paths.checkpoint")?, "checkpoint")?;
    let general_path = cfg.require_path("paths.general")?;
    let tok = tokenizer_of(&base)?;
    let enc = encoding_of(&base, cfg)?;
    let general = annotate_all(&read_texts(&general_path)?, &tok)?;
    let (model, theta_g) = starting_point(cfg, &base)?;
    let samples = cfg.usize("fisher.samples")?;
    let f = estimate_fisher(&theta_g, &general, samples, &model, &enc)?;
    let mut m = meta(&tok, &enc, mode_of(&base))?;
    m.insert("samples".into(), json!(f.sample_count));
    let mut art = Artifacts::default();
    art.add(FISHER, checkpoint_bytes("fisher", model, base.header.seed, 0, m, f.values)?);
    Ok(art)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Artifacts> {
    let mode = cfg.mode()?;
    let tc = cfg.training(mode)?;
    let base = load_container(&cfg.require_path("paths.checkpoint")?, "checkpoint")?;
    let corpus_path = cfg.require_path("paths.corpus")?;
    let tok = tokenizer_of(&base)?;
    let enc = cfg.encoding()?;
    let corpus = annotate_all(&read_texts(&corpus_path)?, &tok)?;
    let (model, theta_g) = starting_point(cfg, &base)?;
    let fisher = if tc.lambda > 0.0 {
        let path = cfg.path("paths.fisher").ok_or_else(|| {
            UsageError("paths.fisher is required when training.lambda > 0 (or use --mode pt)".into())
        })?;
        let c = load_container(&path, "fisher")?;
        Some(FisherDiagonal {
            sample_count: c.header.step as usize,
            values: c.tensors,
        })
    } else {
        None
    };
    let out = train(&theta_g, &corpus, &tc, &model, &enc, fisher.as_ref())?;
    let mut m = meta(&tok, &enc, mode.as_str())?;
    m.insert("training".into(), serde_json::to_value(tc)?);
    let mut art = Artifacts::default();
    art.add(CHECKPOINT, checkpoint_bytes("checkpoint", model, tc.seed, out.steps, m, out.params)?);
    art.add_with("metrics.csv", |w| write_metrics_csv(&out.metrics, w))?;
    Ok(art)
}

pub fn eval(cfg: &RunConfig) -> Result<Artifacts> {
    let ckpt = load_container(&cfg.require_path("paths.checkpoint")?, "checkpoint")?;
    let items_path = cfg.require_path("paths.items")?;
    let shots = cfg.usize_list("eval.shots")?;
    if shots.is_empty() {
        return Err(UsageError("eval.shots: at least one setting is required".into()).into());
    }
    let items = read_items(&items_path)?;
    let pool = match cfg.path("paths.pool") {
        Some(p) => read_items(&p)?,
        None if shots.iter().any(|&k| k > 0) => {
            return Err(UsageError("paths.pool is required for few-shot evaluation".into()).into())
        }
        None => Vec::new(),
    };
    let corpus_text = cfg.path("paths.corpus").map(|p| read_texts(&p)).transpose()?;
    let tok = tokenizer_of(&ckpt)?;
    let enc = encoding_of(&ckpt, cfg)?;
    let injection = mode_of(&ckpt) != TrainingMode::Pt.as_str();
    let model = ckpt.header.model;
    let params = &ckpt.tensors;
    let seed = cfg.u64("run.seed")?;

    let mut art = Artifacts::default();
    let mut reports = Vec::new();
    for &k in &shots {
        let r = evaluate_qa(params, &model, &enc, &tok, &items, k, &pool, seed, injection)?;
        art.add_with(format!("era_{k}shot.csv"), |w| r.write_csv(w))?;
        reports.push(r);
    }
    let years: Vec<GregorianYear> = cfg
        .int_list("eval.probe_years")
        .into_iter()
        .map(|y| GregorianYear::new(y).map_err(|e| UsageError(format!("eval.probe_years: {e}"))))
        .collect::<Result<_, _>>()?;
    let template = cfg.str("eval.probe_template");
    let sim = year_similarity_matrix(params, &model, &enc, &tok, &years, template, injection)?;
    art.add_with("similarity.csv", |w| sim.write_csv(w))?;
    let (same, diff) = sim.term_means();

    let mut report = json!({
        "mode": mode_of(&ckpt),
        "injection": injection,
        "qa": reports,
        "same_term_mean": same,
        "different_term_mean": diff,
    });
    if let Some(texts) = corpus_text {
        let corpus = annotate_all(&texts, &tok)?;
        let emb = corpus_embeddings(params, &corpus, &model, &enc, injection)?;
        let rows: Vec<_> = emb.into_iter().map(|(y, e)| (y, to_cycle_index(y), e)).collect();
        let labeled: Vec<_> = rows.iter().map(|r| (r.2.clone(), r.1)).collect();
        report["clustering"] = serde_json::to_value(clustering_metrics(&labeled)?)?;
        art.add_with("embeddings.csv", |w| write_embedding_csv(&rows, w))?;
    }
    art.add_json("report.json", &report)?;
    Ok(art)
}

pub fn desk(cfg: &RunConfig, seeds: &[u64]) -> Result<(Artifacts, String)> {
    let base = cfg.desk()?;
    let mut art = Artifacts::default();
    let mut checks = String::from("seed,silhouette_improves,same_term_exceeds_different,qa_not_worse\n");
    for &seed in seeds {
        let o = run_desk(&base.clone().with_seed(seed))?;
        for (name, bytes) in o.artifacts()? {
            art.add(PathBuf::from(format!("seed-{seed}")).join(name), bytes);
        }
        checks.push_str(&format!(
            "{seed},{},{},{}\n",
            o.silhouette_improves(),
            o.same_term_exceeds_different(),
            o.qa_not_worse()
        ));
    }
    art.add_text("checks.csv", checks.clone());
    Ok((art, checks))
}
