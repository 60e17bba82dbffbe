//! Year detection, sequence annotation, and corpus temporal profiling.

mod extract;
mod profile;
mod tokenizer;

use serde::{Deserialize, Serialize};

pub use extract::extract_year_mentions;
pub use profile::{
    profile_gregorian, profile_sexagenary, read_corpus, uniformity_metrics, CorpusRecord,
    GregorianProfiler, HistogramBin, HistogramView, SexagenaryProfiler, UniformityMetrics,
    YearHistogram,
};
pub use tokenizer::{Token, Tokenizer, WordTokenizer, BOS, BOS_ID};

use crate::calendar::{to_cycle_index, CycleIndex, GregorianYear};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearMention {
    /// Byte offsets `[start, end)` into the source text.
    pub span: (usize, usize),
    pub year: GregorianYear,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub text: String,
    pub tokens: Vec<u32>,
    pub token_spans: Vec<(usize, usize)>,
    pub mentions: Vec<YearMention>,
    /// Cycle index of the first mention; `None` when the text has no year.
    pub class_label: Option<CycleIndex>,
}

impl AnnotatedSequence {
    /// The year that drives temporal injection.
    pub fn anchor_year(&self) -> Option<GregorianYear> {
        self.mentions.first().map(|m| m.year)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token positions whose spans overlap a mention.
    pub fn mention_token_positions(&self) -> Vec<usize> {
        self.token_spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| {
                s < e && self.mentions.iter().any(|m| s < m.span.1 && m.span.0 < e)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Prepends `context` (for example few-shot exemplars) to this sequence.
    ///
    /// The result keeps this sequence's mentions and class label; mentions
    /// inside the context are not tracked, so the temporal anchor stays on
    /// the original text.
    pub fn with_context(&self, context: &AnnotatedSequence) -> AnnotatedSequence {
        let shift = context.text.len() + 1;
        let text = format!("{} {}", context.text, self.text);
        let skip_bos = usize::from(self.tokens.first() == Some(&BOS_ID));
        let tokens = context
            .tokens
            .iter()
            .chain(&self.tokens[skip_bos..])
            .copied()
            .collect();
        let token_spans = context
            .token_spans
            .iter()
            .copied()
            .chain(
                self.token_spans[skip_bos..]
                    .iter()
                    .map(|&(s, e)| (s + shift, e + shift)),
            )
            .collect();
        let mentions = self
            .mentions
            .iter()
            .map(|m| YearMention {
                span: (m.span.0 + shift, m.span.1 + shift),
                ..m.clone()
            })
            .collect();
        AnnotatedSequence {
            text,
            tokens,
            token_spans,
            mentions,
            class_label: self.class_label,
        }
    }
}

pub fn annotate<T: Tokenizer + ?Sized>(text: &str, tokenizer: &T) -> Result<AnnotatedSequence> {
    let toks = tokenizer.tokenize(text)?;
    let mentions = extract_year_mentions(text);
    let class_label = mentions.first().map(|m| to_cycle_index(m.year));
    Ok(AnnotatedSequence {
        text: text.to_string(),
        tokens: toks.iter().map(|t| t.id).collect(),
        token_spans: toks.iter().map(|t| t.span).collect(),
        mentions,
        class_label,
    })
}

/// Canonical English rendering of a year that the extractor recognizes:
/// `450 BCE`, `606 AD`, `1965`, `3000 AD`.
pub fn year_phrase(year: GregorianYear) -> String {
    let v = year.value();
    if v < 0 {
        format!("{} BCE", -v)
    } else if v < 1000 || v > extract::BARE_MAX {
        format!("{v} AD")
    } else {
        v.to_string()
    }
}
