//! Cosine similarity between the model's representations of different years.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::cosine_similarity;
use crate::annotate::{annotate, year_phrase, Tokenizer};
use crate::calendar::{to_cycle_index, GregorianYear};
use crate::error::{Error, Result};
use crate::geometry::EncodingConfig;
use crate::model::{forward, sentence_embedding, Matrix, ModelConfig, ParameterSet};

pub const YEAR_PLACEHOLDER: &str = "{year}";
pub const DEFAULT_PROBE: &str = "In {year} ,";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub years: Vec<GregorianYear>,
    pub values: Matrix,
}

impl SimilarityMatrix {
    /// Builds the matrix from one embedding per year.
    pub fn from_embeddings(years: Vec<GregorianYear>, embeddings: &[Vec<f64>]) -> Result<Self> {
        if years.len() != embeddings.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} years for {} embeddings",
                years.len(),
                embeddings.len()
            )));
        }
        let n = years.len();
        let mut values = Matrix::zeros(n, n);
        for i in 0..n {
            values.set(i, i, 1.0);
            for j in i + 1..n {
                let c = cosine_similarity(&embeddings[i], &embeddings[j])?;
                values.set(i, j, c);
                values.set(j, i, c);
            }
        }
        Ok(Self { years, values })
    }

    /// Mean off-diagonal similarity of same-term pairs and of different-term
    /// pairs; `None` when a group has no pairs.
    pub fn term_means(&self) -> (Option<f64>, Option<f64>) {
        let idx: Vec<u8> = self.years.iter().map(|&y| to_cycle_index(y).value()).collect();
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                let v = self.values.get(i, j);
                if idx[i] == idx[j] {
                    same += v;
                    ns += 1;
                } else {
                    diff += v;
                    nd += 1;
                }
            }
        }
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        (mean(same, ns), mean(diff, nd))
    }

    /// Header row of years, then one row per year prefixed by that year.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = self.years.iter().map(|y| y.value().to_string()).collect();
        writeln!(w, "year,{}", header.join(","))?;
        for (i, y) in self.years.iter().enumerate() {
            let row: Vec<String> = self.values.row(i).iter().map(f64::to_string).collect();
            writeln!(w, "{},{}", y.value(), row.join(","))?;
        }
        Ok(())
    }
}

/// Renders `template` for `year`; the template must contain the year
/// placeholder exactly once.
pub fn fill_template(template: &str, year: GregorianYear) -> Result<String> {
    if template.matches(YEAR_PLACEHOLDER).count() != 1 {
        return Err(Error::InvalidConfig(format!(
            "probe template must contain {YEAR_PLACEHOLDER} exactly once: {template:?}"
        )));
    }
    Ok(template.replace(YEAR_PLACEHOLDER, &year_phrase(year)))
}

/// Pooled final-layer embedding of the probe sentence for each year.
pub fn year_embeddings<T: Tokenizer + Sync + ?Sized>(
    params: &ParameterSet,
    model: &ModelConfig,
    enc: &EncodingConfig,
    tokenizer: &T,
    years: &[GregorianYear],
    template: &str,
    injection: bool,
) -> Result<Vec<Vec<f64>>> {
    years
        .par_iter()
        .map(|&y| {
            let seq = annotate(&fill_template(template, y)?, tokenizer)?;
            if seq.anchor_year() != Some(y) {
                return Err(Error::InvalidConfig(format!(
                    "probe for {} does not resolve to that year",
                    y.value()
                )));
            }
            let (_, hidden) = forward(params, &seq, model, enc, injection)?;
            sentence_embedding(&hidden)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn year_similarity_matrix<T: Tokenizer + Sync + ?Sized>(
    params: &ParameterSet,
    model: &ModelConfig,
    enc: &EncodingConfig,
    tokenizer: &T,
    years: &[GregorianYear],
    template: &str,
    injection: bool,
) -> Result<SimilarityMatrix> {
    let embs = year_embeddings(params, model, enc, tokenizer, years, template, injection)?;
    SimilarityMatrix::from_embeddings(years.to_vec(), &embs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::WordTokenizer;
    use crate::model::init;

    fn y(v: i64) -> GregorianYear {
        GregorianYear::new(v).unwrap()
    }

    fn setup() -> (WordTokenizer, ModelConfig) {
        let tok = WordTokenizer::fit(["In 0123456789 , AD BCE"]);
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 16,
            adapter_rank: 0,
            seed: 2,
        };
        (tok, cfg)
    }

    #[test]
    fn template_filling() {
        assert_eq!(fill_template("In {year} ,", y(-450)).unwrap(), "In 450 BCE ,");
        assert!(fill_template("no placeholder", y(1965)).is_err());
        assert!(fill_template("{year} {year}", y(1965)).is_err());
    }

    #[test]
    fn random_model_matrix_is_well_formed() {
        let (tok, cfg) = setup();
        let p = init(&cfg).unwrap();
        let years: Vec<_> = (2010..=2025).map(y).collect();
        let enc = EncodingConfig::with_dim(16);
        let m = year_similarity_matrix(&p, &cfg, &enc, &tok, &years, DEFAULT_PROBE, true).unwrap();
        for i in 0..years.len() {
            assert!((m.values.get(i, i) - 1.0).abs() < 1e-9);
            for j in 0..years.len() {
                let v = m.values.get(i, j);
                assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
                assert!((v - m.values.get(j, i)).abs() < 1e-9);
            }
        }
        let (same, diff) = m.term_means();
        assert!(same.is_none() && diff.is_some());
    }

    #[test]
    fn repeated_year_is_perfectly_similar() {
        let (tok, cfg) = setup();
        let p = init(&cfg).unwrap();
        let years = [y(1965), y(606), y(1965)];
        let enc = EncodingConfig::with_dim(16);
        let m = year_similarity_matrix(&p, &cfg, &enc, &tok, &years, DEFAULT_PROBE, true).unwrap();
        assert!((m.values.get(0, 2) - 1.0).abs() < 1e-12);
        let (same, _) = m.term_means();
        assert!((same.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let m = SimilarityMatrix::from_embeddings(
            vec![y(1864), y(1924)],
            &[vec![1.0, 0.0], vec![0.0, 2.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "year,1864,1924\n1864,1,0\n1924,0,1\n"
        );
    }
}
