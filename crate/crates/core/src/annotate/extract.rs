//! Year-mention extraction for English text.
//!
//! Accepted forms: `N AD`, `AD N`, `N BCE`, `N BC` (any positive `N`, with
//! optional thousands separators such as `75,000 BCE`), and bare 3–4 digit
//! numbers in `[100, 2999]`. Anything else needs an explicit era marker.

use std::sync::OnceLock;

use regex::Regex;

use super::YearMention;
use crate::calendar::GregorianYear;

const BARE_MIN: i64 = 100;
pub(crate) const BARE_MAX: i64 = 2999;

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?x)
            \bAD\s+(?P<pre>\d{1,3}(?:,\d{3})+|\d+)\b
            |
            \b(?P<num>\d{1,3}(?:,\d{3})+|\d+)(?:\s*(?P<era>BCE|BC|AD)\b)?
            ",
        )
        .expect("year pattern compiles")
    })
}

pub fn extract_year_mentions(text: &str) -> Vec<YearMention> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for caps in pattern().captures_iter(text) {
        let whole = caps.get(0).expect("group 0");
        let (digits, era) = match (caps.name("pre"), caps.name("num")) {
            (Some(d), _) => (d, Some("AD")),
            (None, Some(d)) => (d, caps.name("era").map(|m| m.as_str())),
            (None, None) => continue,
        };
        if part_of_decimal(bytes, digits.start(), digits.end()) {
            continue;
        }
        let raw = digits.as_str();
        let Ok(n) = raw.replace(',', "").parse::<i64>() else {
            continue;
        };
        let value = match era {
            Some("BCE") | Some("BC") => -n,
            Some(_) => n,
            None => {
                let plain = raw.len() >= 3 && raw.len() <= 4 && !raw.starts_with('0');
                if !plain || !(BARE_MIN..=BARE_MAX).contains(&n) {
                    continue;
                }
                n
            }
        };
        let Ok(year) = GregorianYear::new(value) else {
            continue;
        };
        out.push(YearMention {
            span: (whole.start(), whole.end()),
            year,
            surface: whole.as_str().to_string(),
        });
    }
    out
}

/// True when the digit run is glued to a decimal point, a sign, or a unit,
/// e.g. `3.1415`, `19.65`, `$1965`, `1965%`.
fn part_of_decimal(bytes: &[u8], start: usize, end: usize) -> bool {
    let before = start.checked_sub(1).map(|i| bytes[i]);
    let before2 = start.checked_sub(2).map(|i| bytes[i]);
    let after = bytes.get(end).copied();
    let after2 = bytes.get(end + 1).copied();
    let digit = |b: Option<u8>| b.is_some_and(|c| c.is_ascii_digit());
    (before == Some(b'.') && digit(before2))
        || (after == Some(b'.') && digit(after2))
        || before == Some(b'$')
        || after == Some(b'%')
}
