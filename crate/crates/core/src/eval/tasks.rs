//! Synthetic year-conditioned multiple-choice facts.
//!
//! Each item states what an entity did in a year: "In 1965 , the duke
//! signed a treaty .". The fact is drawn from a seeded table indexed by
//! entity and the year's sexagenary term, so facts recur with the cycle.
//! Years are sampled with a long tail toward the past, making early and BCE
//! years scarce.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::year_phrase;
use crate::calendar::{
    astronomical, term_of, to_cycle_index, years_in_term, CycleIndex, GregorianYear, CYCLE_LEN,
};
use crate::error::{Error, Result};

pub const ENTITIES: [&str; 12] = [
    "admiral", "bishop", "council", "duke", "emperor", "guild", "khan", "merchant", "monk",
    "poet", "queen", "scholar",
];

pub const ACTIONS: [&str; 12] = [
    "built a bridge",
    "signed a treaty",
    "crossed the river",
    "founded a school",
    "lost a battle",
    "opened a market",
    "wrote a chronicle",
    "raised an army",
    "moved the capital",
    "minted new coins",
    "ended a famine",
    "planted an orchard",
];

const OPENERS: [&str; 6] = ["Later", "Once", "Then", "Meanwhile", "Afterwards", "Soon"];

pub const OPTIONS_PER_ITEM: usize = 4;

/// Exponent of the year sampler; larger values thin out early years faster.
const TAIL_EXPONENT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EraBucket {
    Bce,
    Ad1To500,
    Ad501To1000,
    Ad1001To1500,
    Ad1501To2000,
    After2000,
}

impl EraBucket {
    pub const ALL: [EraBucket; 6] = [
        Self::Bce,
        Self::Ad1To500,
        Self::Ad501To1000,
        Self::Ad1001To1500,
        Self::Ad1501To2000,
        Self::After2000,
    ];

    pub fn of(year: GregorianYear) -> Self {
        match year.value() {
            v if v < 0 => Self::Bce,
            1..=500 => Self::Ad1To500,
            501..=1000 => Self::Ad501To1000,
            1001..=1500 => Self::Ad1001To1500,
            1501..=2000 => Self::Ad1501To2000,
            _ => Self::After2000,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Bce => "BCE",
            Self::Ad1To500 => "1-500",
            Self::Ad501To1000 => "501-1000",
            Self::Ad1001To1500 => "1001-1500",
            Self::Ad1501To2000 => "1501-2000",
            Self::After2000 => "2001+",
        }
    }

    /// Inclusive Gregorian bounds; `None` means unbounded.
    pub fn range(self) -> (Option<i64>, Option<i64>) {
        match self {
            Self::Bce => (None, Some(-1)),
            Self::Ad1To500 => (Some(1), Some(500)),
            Self::Ad501To1000 => (Some(501), Some(1000)),
            Self::Ad1001To1500 => (Some(1001), Some(1500)),
            Self::Ad1501To2000 => (Some(1501), Some(2000)),
            Self::After2000 => (Some(2001), None),
        }
    }
}

impl fmt::Display for EraBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl TryFrom<String> for EraBucket {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.label() == s)
            .ok_or_else(|| Error::Format(format!("unknown era bucket {s:?}")))
    }
}

impl From<EraBucket> for String {
    fn from(b: EraBucket) -> String {
        b.label().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQaItem {
    /// Prompt stem ending right before the answer, e.g. `In 1965 , the duke`.
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub year: GregorianYear,
    pub bucket: EraBucket,
}

impl SyntheticQaItem {
    /// Text of the stem completed with option `i`.
    pub fn completed(&self, i: usize) -> String {
        format!("{} {} .", self.question, self.options[i])
    }

    /// The true declarative sentence.
    pub fn statement(&self) -> String {
        self.completed(self.answer_index)
    }

    pub fn class(&self) -> CycleIndex {
        to_cycle_index(self.year)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub items: Vec<SyntheticQaItem>,
    /// One declarative training sentence per item, in item order.
    pub corpus: Vec<String>,
}

/// Picks from an ascending list with weight concentrated at the end.
fn long_tail_index(rng: &mut ChaCha8Rng, len: usize) -> usize {
    let u: f64 = rng.gen();
    let back = (len as f64 * u.powi(TAIL_EXPONENT)) as usize;
    len - 1 - back.min(len - 1)
}

fn fact_table(seed: u64, n_entities: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n_entities)
        .map(|_| {
            (0..CYCLE_LEN)
                .map(|_| rng.gen_range(0..ACTIONS.len()))
                .collect()
        })
        .collect()
}

/// Deterministic items and their training sentences.
///
/// The first `min(n_items, 60)` items are drawn one per sexagenary class (in
/// a seeded order), so every class is present whenever the range allows.
/// A repeated year is redrawn up to 16 times before it is accepted. When the range
/// includes BCE years, at least one item is BCE.
pub fn generate_synthetic_tasks(
    seed: u64,
    n_items: usize,
    year_range: (GregorianYear, GregorianYear),
    n_entities: usize,
) -> Result<SyntheticSuite> {
    let (lo, hi) = year_range;
    if lo > hi {
        return Err(Error::InvalidRange {
            lo: lo.value(),
            hi: hi.value(),
        });
    }
    let n_entities = n_entities.clamp(1, ENTITIES.len());
    let facts = fact_table(seed, n_entities);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a_lo, a_hi) = (astronomical(lo), astronomical(hi));
    let span = (a_hi - a_lo + 1) as usize;

    let mut class_order: Vec<i64> = (0..CYCLE_LEN).collect();
    class_order.shuffle(&mut rng);
    let mut used: HashSet<i64> = HashSet::new();
    let mut years = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let candidates: Vec<GregorianYear> = if i < class_order.len() {
            let k = CycleIndex::new(class_order[i])?;
            years_in_term(term_of(k), lo, hi)?
        } else {
            Vec::new()
        };
        let mut pick = None;
        for _ in 0..16 {
            let y = if candidates.is_empty() {
                GregorianYear::from_astronomical(a_lo + long_tail_index(&mut rng, span) as i64)?
            } else {
                candidates[long_tail_index(&mut rng, candidates.len())]
            };
            pick = Some(y);
            if used.insert(y.value()) {
                break;
            }
        }
        years.push(pick.expect("at least one draw"));
    }

    if lo.is_bce() && !years.is_empty() && !years.iter().any(|y| y.is_bce()) {
        let last = years.len() - 1;
        let bce_hi = if hi.is_bce() { hi } else { GregorianYear::new(-1)? };
        let same_class = years_in_term(term_of(to_cycle_index(years[last])), lo, bce_hi)?;
        years[last] = match same_class.last() {
            Some(&y) => y,
            None => bce_hi,
        };
    }

    let mut items = Vec::with_capacity(n_items);
    for year in years {
        let e = rng.gen_range(0..n_entities);
        let correct = facts[e][to_cycle_index(year).value() as usize];
        let mut others: Vec<usize> = (0..ACTIONS.len()).filter(|&a| a != correct).collect();
        others.shuffle(&mut rng);
        let answer_index = rng.gen_range(0..OPTIONS_PER_ITEM);
        let mut options: Vec<String> = others[..OPTIONS_PER_ITEM - 1]
            .iter()
            .map(|&a| ACTIONS[a].to_string())
            .collect();
        options.insert(answer_index, ACTIONS[correct].to_string());
        items.push(SyntheticQaItem {
            question: format!("In {} , the {}", year_phrase(year), ENTITIES[e]),
            options,
            answer_index,
            year,
            bucket: EraBucket::of(year),
        });
    }
    let corpus = items.iter().map(SyntheticQaItem::statement).collect();
    Ok(SyntheticSuite { items, corpus })
}

/// Year-free sentences over the same vocabulary, for base pretraining.
pub fn general_corpus(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    (0..n)
        .map(|_| {
            format!(
                "{} , the {} {} .",
                OPENERS[rng.gen_range(0..OPENERS.len())],
                ENTITIES[rng.gen_range(0..ENTITIES.len())],
                ACTIONS[rng.gen_range(0..ACTIONS.len())]
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::extract_year_mentions;

    fn y(v: i64) -> GregorianYear {
        GregorianYear::new(v).unwrap()
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_tasks(7, 120, (y(-1500), y(2025)), 4).unwrap();
        let b = generate_synthetic_tasks(7, 120, (y(-1500), y(2025)), 4).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_tasks(8, 120, (y(-1500), y(2025)), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sixty_consecutive_years_cover_every_class_once() {
        let s = generate_synthetic_tasks(3, 60, (y(1900), y(1959)), 4).unwrap();
        let mut classes: Vec<u8> = s.items.iter().map(|i| i.class().value()).collect();
        classes.sort_unstable();
        assert_eq!(classes, (0..60).collect::<Vec<u8>>());
    }

    #[test]
    fn bce_ranges_yield_bce_items() {
        for seed in 0..20 {
            let s = generate_synthetic_tasks(seed, 5, (y(-300), y(2025)), 2).unwrap();
            assert!(s.items.iter().any(|i| i.bucket == EraBucket::Bce), "seed {seed}");
        }
    }

    #[test]
    fn items_are_well_formed() {
        let s = generate_synthetic_tasks(11, 200, (y(-1500), y(2025)), 3).unwrap();
        assert_eq!(s.corpus.len(), 200);
        let mut distinct = HashSet::new();
        for (item, sentence) in s.items.iter().zip(&s.corpus) {
            assert_eq!(item.options.len(), OPTIONS_PER_ITEM);
            let set: HashSet<_> = item.options.iter().collect();
            assert_eq!(set.len(), OPTIONS_PER_ITEM);
            let m = extract_year_mentions(&item.question);
            assert_eq!(m.len(), 1);
            assert_eq!(m[0].year, item.year);
            assert_eq!(item.bucket, EraBucket::of(item.year));
            assert_eq!(sentence, &item.statement());
            distinct.insert(item.year);
        }
        assert_eq!(distinct.len(), 200);
        let recent = s.items.iter().filter(|i| i.year.value() > 1000).count();
        assert!(recent > 100, "long tail favors recent years: {recent}");
    }

    #[test]
    fn facts_follow_entity_and_term() {
        let s = generate_synthetic_tasks(5, 400, (y(-3000), y(2025)), 2).unwrap();
        let mut seen = std::collections::HashMap::new();
        for item in &s.items {
            let entity = item.question.rsplit(' ').next().unwrap().to_string();
            let answer = item.options[item.answer_index].clone();
            let prev = seen.insert((entity, item.class()), answer.clone());
            if let Some(p) = prev {
                assert_eq!(p, answer);
            }
        }
    }

    #[test]
    fn buckets() {
        let cases = [(-1, "BCE"), (1, "1-500"), (500, "1-500"), (501, "501-1000"), (1500, "1001-1500"), (2000, "1501-2000"), (2001, "2001+")];
        for (v, label) in cases {
            assert_eq!(EraBucket::of(y(v)).label(), label);
        }
        let json = serde_json::to_string(&EraBucket::Bce).unwrap();
        assert_eq!(json, "\"BCE\"");
        assert_eq!(serde_json::from_str::<EraBucket>("\"2001+\"").unwrap(), EraBucket::After2000);
    }

    #[test]
    fn general_corpus_has_no_years() {
        let g = general_corpus(1, 50);
        assert_eq!(g.len(), 50);
        assert!(g.iter().all(|s| extract_year_mentions(s).is_empty()));
        assert_eq!(g, general_corpus(1, 50));
    }

    #[test]
    fn inverted_range_is_rejected() {
        assert!(matches!(
            generate_synthetic_tasks(1, 5, (y(2000), y(1000)), 2),
            Err(Error::InvalidRange { .. })
        ));
    }
}
