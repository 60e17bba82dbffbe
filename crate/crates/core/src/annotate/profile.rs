//! Streaming year histograms over newline-delimited JSON corpora.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::extract_year_mentions;
use crate::calendar::{to_cycle_index, GregorianYear, CYCLE_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<serde_json::Value>,
}

/// Reads `{"text": ..., "id": ...}` records, one per line; blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> impl Iterator<Item = Result<CorpusRecord>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str::<CorpusRecord>(&l).map_err(|e| Error::Corpus {
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramView {
    Gregorian,
    Sexagenary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub start: i64,
    /// Exclusive upper edge.
    pub end: i64,
    pub count: u64,
}

/// Ordered, non-overlapping bins. Gregorian histograms are dense from the
/// first to the last occupied bin; sexagenary histograms always have 60
/// unit-width bins keyed by cycle index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearHistogram {
    pub view: HistogramView,
    pub bin_width_years: u32,
    pub bins: Vec<HistogramBin>,
    pub total: u64,
}

impl YearHistogram {
    /// Histogram over arbitrary counts, used for ad-hoc uniformity checks.
    pub fn from_counts(counts: &[u64]) -> Self {
        let bins: Vec<_> = counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBin {
                start: i as i64,
                end: i as i64 + 1,
                count,
            })
            .collect();
        Self {
            view: HistogramView::Sexagenary,
            bin_width_years: 1,
            total: counts.iter().sum(),
            bins,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_start,bin_end,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{}", b.start, b.end, b.count)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GregorianProfiler {
    width: i64,
    counts: BTreeMap<i64, u64>,
}

impl GregorianProfiler {
    pub fn new(bin_width: u32) -> Result<Self> {
        if bin_width == 0 {
            return Err(Error::InvalidConfig("bin width must be at least 1".into()));
        }
        Ok(Self {
            width: bin_width as i64,
            counts: BTreeMap::new(),
        })
    }

    pub fn add(&mut self, year: GregorianYear) {
        *self.counts.entry(year.value().div_euclid(self.width)).or_default() += 1;
    }

    pub fn add_text(&mut self, text: &str) {
        for m in extract_year_mentions(text) {
            self.add(m.year);
        }
    }

    pub fn merge(&mut self, other: &GregorianProfiler) {
        assert_eq!(self.width, other.width, "merging profilers of different widths");
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_default() += c;
        }
    }

    pub fn finish(&self) -> YearHistogram {
        let mut bins = Vec::new();
        if let (Some((&lo, _)), Some((&hi, _))) =
            (self.counts.first_key_value(), self.counts.last_key_value())
        {
            for k in lo..=hi {
                bins.push(HistogramBin {
                    start: k * self.width,
                    end: (k + 1) * self.width,
                    count: self.counts.get(&k).copied().unwrap_or(0),
                });
            }
        }
        YearHistogram {
            view: HistogramView::Gregorian,
            bin_width_years: self.width as u32,
            total: self.counts.values().sum(),
            bins,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SexagenaryProfiler {
    counts: [u64; CYCLE_LEN as usize],
}

impl Default for SexagenaryProfiler {
    fn default() -> Self {
        Self {
            counts: [0; CYCLE_LEN as usize],
        }
    }
}

impl SexagenaryProfiler {
    pub fn add(&mut self, year: GregorianYear) {
        self.counts[to_cycle_index(year).value() as usize] += 1;
    }

    pub fn add_text(&mut self, text: &str) {
        for m in extract_year_mentions(text) {
            self.add(m.year);
        }
    }

    pub fn merge(&mut self, other: &SexagenaryProfiler) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self) -> YearHistogram {
        YearHistogram::from_counts(&self.counts)
    }
}

pub fn profile_gregorian<R: BufRead>(corpus: R, bin_width: u32) -> Result<YearHistogram> {
    let mut p = GregorianProfiler::new(bin_width)?;
    for rec in read_corpus(corpus) {
        p.add_text(&rec?.text);
    }
    Ok(p.finish())
}

pub fn profile_sexagenary<R: BufRead>(corpus: R) -> Result<YearHistogram> {
    let mut p = SexagenaryProfiler::default();
    for rec in read_corpus(corpus) {
        p.add_text(&rec?.text);
    }
    Ok(p.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityMetrics {
    /// Shannon entropy divided by `ln(#bins)`; 1 for a uniform histogram, 0 for a single bin.
    pub normalized_entropy: f64,
    /// Pearson chi-square against equal expected counts in every bin.
    pub chi_square: f64,
}

pub fn uniformity_metrics(h: &YearHistogram) -> Result<UniformityMetrics> {
    if h.total == 0 || h.bins.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let n = h.bins.len() as f64;
    let total = h.total as f64;
    let expected = total / n;
    let mut entropy = 0.0;
    let mut chi_square = 0.0;
    for b in &h.bins {
        let c = b.count as f64;
        if b.count > 0 {
            let p = c / total;
            entropy -= p * p.ln();
        }
        chi_square += (c - expected).powi(2) / expected;
    }
    // All mass in one bin is maximally concentrated.
    let normalized_entropy = if h.bins.len() == 1 { 0.0 } else { entropy / n.ln() };
    Ok(UniformityMetrics {
        normalized_entropy: normalized_entropy.clamp(0.0, 1.0),
        chi_square,
    })
}
