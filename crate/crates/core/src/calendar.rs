//! Gregorian years and the 60-term sexagenary cycle.
//!
//! Years are signed with no year zero: `-1` is 1 BCE, `1` is 1 AD. The cycle
//! index is anchored so that 4 AD (a Jiazi year) has index 1 and index 0 is
//! Guihai, the last term of the cycle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_YEAR: i64 = -75_000;
pub const MAX_YEAR: i64 = 9_999;
pub const CYCLE_LEN: i64 = 60;

pub const STEMS: [&str; 10] = [
    "Jia", "Yi", "Bing", "Ding", "Wu", "Ji", "Geng", "Xin", "Ren", "Gui",
];
pub const BRANCHES: [&str; 12] = [
    "Zi", "Chou", "Yin", "Mao", "Chen", "Si", "Wu", "Wei", "Shen", "You", "Xu", "Hai",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct GregorianYear(i64);

impl GregorianYear {
    pub fn new(value: i64) -> Result<Self> {
        if value == 0 {
            return Err(Error::YearZero);
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&value) {
            return Err(Error::OutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> i64 {
        self.0
    }

    pub fn is_bce(self) -> bool {
        self.0 < 0
    }

    /// Builds a year from astronomical numbering (1 BCE = 0).
    pub fn from_astronomical(astro: i64) -> Result<Self> {
        Self::new(if astro > 0 { astro } else { astro - 1 })
    }

    /// The next calendar year, skipping the nonexistent year zero.
    pub fn succ(self) -> Option<Self> {
        let next = if self.0 == -1 { 1 } else { self.0 + 1 };
        Self::new(next).ok()
    }
}

impl TryFrom<i64> for GregorianYear {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<GregorianYear> for i64 {
    fn from(y: GregorianYear) -> i64 {
        y.0
    }
}

impl fmt::Display for GregorianYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct CycleIndex(u8);

impl CycleIndex {
    pub fn new(value: i64) -> Result<Self> {
        if (0..CYCLE_LEN).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(Error::InvalidCycleIndex(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = CycleIndex> {
        (0..CYCLE_LEN as u8).map(CycleIndex)
    }
}

impl TryFrom<i64> for CycleIndex {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CycleIndex> for i64 {
    fn from(c: CycleIndex) -> i64 {
        c.0 as i64
    }
}

impl fmt::Display for CycleIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the 60 stem-branch pairs, numbered 1 (Jiazi) through 60 (Guihai).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SexagenaryTerm {
    term_number: u8,
}

impl SexagenaryTerm {
    pub fn from_number(term_number: u8) -> Option<Self> {
        (1..=60).contains(&term_number).then_some(Self { term_number })
    }

    /// Looks up a term by its romanized name, ignoring case.
    pub fn from_name(name: &str) -> Option<Self> {
        (1..=60u8)
            .map(|n| Self { term_number: n })
            .find(|t| t.name().eq_ignore_ascii_case(name))
    }

    pub fn term_number(self) -> u8 {
        self.term_number
    }

    pub fn stem(self) -> u8 {
        (self.term_number - 1) % 10
    }

    pub fn branch(self) -> u8 {
        (self.term_number - 1) % 12
    }

    pub fn stem_name(self) -> &'static str {
        STEMS[self.stem() as usize]
    }

    pub fn branch_name(self) -> &'static str {
        BRANCHES[self.branch() as usize]
    }

    /// Romanized name without diacritics, e.g. `"Jiazi"`.
    pub fn name(self) -> String {
        format!(
            "{}{}",
            self.stem_name(),
            self.branch_name().to_ascii_lowercase()
        )
    }

    pub fn cycle_index(self) -> CycleIndex {
        CycleIndex(self.term_number % 60)
    }
}

impl fmt::Display for SexagenaryTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn to_cycle_index(year: GregorianYear) -> CycleIndex {
    let t = year.value();
    let idx = if t < 0 {
        (CYCLE_LEN - t.abs() - 2).rem_euclid(CYCLE_LEN)
    } else if t < 4 {
        (CYCLE_LEN - (t - 3).abs()).rem_euclid(CYCLE_LEN)
    } else {
        (t - 3).rem_euclid(CYCLE_LEN)
    };
    CycleIndex(idx as u8)
}

pub fn term_of(index: CycleIndex) -> SexagenaryTerm {
    let n = (index.value() as i64 + 59).rem_euclid(CYCLE_LEN) + 1;
    SexagenaryTerm {
        term_number: n as u8,
    }
}

pub fn astronomical(year: GregorianYear) -> i64 {
    let v = year.value();
    if v > 0 {
        v
    } else {
        v + 1
    }
}

/// Completed 60-year cycles since the anchor year 4 AD.
pub fn epoch_index(year: GregorianYear) -> i64 {
    (astronomical(year) - 4).div_euclid(CYCLE_LEN)
}

/// All years in `[lo, hi]` whose term is `term`, in ascending order.
pub fn years_in_term(
    term: SexagenaryTerm,
    lo: GregorianYear,
    hi: GregorianYear,
) -> Result<Vec<GregorianYear>> {
    if lo > hi {
        return Err(Error::InvalidRange {
            lo: lo.value(),
            hi: hi.value(),
        });
    }
    let target = term.cycle_index().value() as i64;
    let (lo_a, hi_a) = (astronomical(lo), astronomical(hi));
    // In astronomical numbering the index is (a - 3) mod 60 everywhere.
    let offset = (target - (lo_a - 3)).rem_euclid(CYCLE_LEN);
    let mut out = Vec::new();
    let mut a = lo_a + offset;
    while a <= hi_a {
        out.push(GregorianYear::from_astronomical(a)?);
        a += CYCLE_LEN;
    }
    Ok(out)
}
