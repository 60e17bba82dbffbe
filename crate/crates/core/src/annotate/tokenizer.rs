use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const BOS_ID: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Byte range in the source text; empty for the leading `<bos>`.
    pub span: (usize, usize),
}

pub trait Tokenizer {
    /// Tokenizes `text`, starting with `<bos>`.
    fn tokenize(&self, text: &str) -> Result<Vec<Token>>;

    fn vocab_size(&self) -> usize;
}

/// Lowercased words, single digits, and single punctuation characters.
///
/// Years are split into digits so that the vocabulary stays small no matter
/// how many distinct years a corpus mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for WordTokenizer {
    type Error = Error;

    fn try_from(vocab: Vec<String>) -> Result<Self> {
        Self::from_vocab(vocab)
    }
}

impl From<WordTokenizer> for Vec<String> {
    fn from(t: WordTokenizer) -> Self {
        t.vocab
    }
}

fn pieces(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (start, c) = chars.next()?;
        if c.is_whitespace() {
            continue;
        }
        if c.is_alphabetic() {
            let mut end = start + c.len_utf8();
            while let Some(&(i, n)) = chars.peek() {
                if !n.is_alphabetic() {
                    break;
                }
                end = i + n.len_utf8();
                chars.next();
            }
            return Some((start, end));
        }
        return Some((start, start + c.len_utf8()));
    })
}

impl WordTokenizer {
    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.first().map(String::as_str) != Some(BOS) {
            return Err(Error::InvalidConfig(format!("vocabulary must start with {BOS}")));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != vocab.len() {
            return Err(Error::InvalidConfig("duplicate vocabulary entries".into()));
        }
        Ok(Self { vocab, index })
    }

    /// Builds a sorted vocabulary covering every piece in `texts`.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            for (s, e) in pieces(text) {
                words.insert(text[s..e].to_lowercase());
            }
        }
        let vocab = std::iter::once(BOS.to_string()).chain(words).collect();
        Self::from_vocab(vocab).expect("fitted vocabulary is well formed")
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS_ID)
            .map(|&i| self.vocab.get(i as usize).map(String::as_str).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let mut out = vec![Token {
            id: BOS_ID,
            span: (0, 0),
        }];
        for (s, e) in pieces(text) {
            let word = text[s..e].to_lowercase();
            let id = self.id(&word).ok_or(Error::TokenizationFailure {
                word,
                offset: s,
            })?;
            out.push(Token { id, span: (s, e) });
        }
        Ok(out)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}
