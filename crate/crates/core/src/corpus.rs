//! Streaming keyword-containment counts over text corpora.
//!
//! A word is a maximal run of alphanumeric characters, lowercased character
//! by character; hyphens, apostrophes and all other punctuation split
//! words. In substring mode a word matches when any keyword occurs inside
//! it ("redder" matches "red"); in whole-word mode it must equal a keyword.
//! Input is consumed in arbitrary byte chunks, so corpora larger than
//! memory stream through in one pass.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

const COLORS: [&str; 11] = ["red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "gray", "white"];
const MIN_TEXTILE_KEYWORD_LEN: usize = 3;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("keyword list {0:?} contains an empty keyword")]
    EmptyKeyword(String),
}

/// A named set of lowercase, non-empty keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordList {
    pub name: String,
    keywords: BTreeSet<String>,
}

impl KeywordList {
    pub fn new<S: AsRef<str>>(name: impl Into<String>, keywords: impl IntoIterator<Item = S>) -> Result<Self, ScanError> {
        let name = name.into();
        let mut set = BTreeSet::new();
        for k in keywords {
            let k = k.as_ref().trim().to_lowercase();
            if k.is_empty() {
                return Err(ScanError::EmptyKeyword(name));
            }
            set.insert(k);
        }
        Ok(Self { name, keywords: set })
    }

    /// One keyword per line; blank lines are skipped.
    pub fn from_reader(name: impl Into<String>, source: impl BufRead) -> Result<Self, ScanError> {
        let lines = source.lines().collect::<Result<Vec<_>, _>>()?;
        Self::new(name, lines.iter().filter(|l| !l.trim().is_empty()))
    }

    pub fn builtin_colors() -> Self {
        Self::new("colors", COLORS).expect("static list")
    }

    /// Whitespace-separated tokens of every sample name, at least three
    /// characters long.
    pub fn textiles_from(catalog: &Catalog) -> Self {
        let tokens = catalog
            .samples()
            .iter()
            .flat_map(|s| s.name.split_whitespace())
            .map(str::to_lowercase)
            .filter(|t| t.chars().count() >= MIN_TEXTILE_KEYWORD_LEN);
        Self::new("textiles", tokens).expect("split_whitespace never yields empty tokens")
    }

    pub fn keywords(&self) -> &BTreeSet<String> {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

pub fn builtin_color_keywords() -> KeywordList {
    KeywordList::builtin_colors()
}

pub fn textile_keywords_from(catalog: &Catalog) -> KeywordList {
    KeywordList::textiles_from(catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Substring,
    WholeWord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub name: String,
    pub total_words: u64,
    pub matched_words: u64,
    pub fraction: f64,
    /// Number of words containing (or equal to) each keyword.
    pub per_keyword_hits: BTreeMap<String, u64>,
}

impl ScanResult {
    fn fraction_of(matched: u64, total: u64) -> f64 {
        if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        }
    }

    /// Combines counts from two scans with the same keyword list.
    pub fn merge(mut self, other: &ScanResult) -> ScanResult {
        self.total_words += other.total_words;
        self.matched_words += other.matched_words;
        for (k, n) in &other.per_keyword_hits {
            *self.per_keyword_hits.entry(k.clone()).or_insert(0) += n;
        }
        self.fraction = Self::fraction_of(self.matched_words, self.total_words);
        self
    }
}

/// Incremental scanner; feed byte chunks, then [`Scanner::finish`].
pub struct Scanner<'k> {
    keywords: &'k KeywordList,
    mode: MatchMode,
    word: String,
    /// Trailing bytes of an incomplete UTF-8 sequence.
    carry: Vec<u8>,
    /// Bytes fully decoded so far.
    consumed: u64,
    total: u64,
    matched: u64,
    hits: BTreeMap<String, u64>,
}

impl<'k> Scanner<'k> {
    pub fn new(keywords: &'k KeywordList, mode: MatchMode) -> Self {
        Self {
            keywords,
            mode,
            word: String::new(),
            carry: Vec::new(),
            consumed: 0,
            total: 0,
            matched: 0,
            hits: keywords.keywords.iter().map(|k| (k.clone(), 0)).collect(),
        }
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Result<(), ScanError> {
        if self.carry.is_empty() {
            self.decode(bytes)
        } else {
            let mut joined = std::mem::take(&mut self.carry);
            joined.extend_from_slice(bytes);
            self.decode(&joined)
        }
    }

    fn decode(&mut self, buf: &[u8]) -> Result<(), ScanError> {
        let valid = match std::str::from_utf8(buf) {
            Ok(s) => {
                self.feed_str(s);
                self.consumed += buf.len() as u64;
                return Ok(());
            }
            Err(e) => e,
        };
        let prefix = valid.valid_up_to();
        self.feed_str(std::str::from_utf8(&buf[..prefix]).expect("validated prefix"));
        self.consumed += prefix as u64;
        match valid.error_len() {
            Some(_) => Err(ScanError::InvalidUtf8 { offset: self.consumed }),
            None => {
                self.carry = buf[prefix..].to_vec();
                Ok(())
            }
        }
    }

    fn feed_str(&mut self, s: &str) {
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                self.word.extend(ch.to_lowercase());
            } else if !self.word.is_empty() {
                self.end_word();
            }
        }
    }

    fn end_word(&mut self) {
        let word = std::mem::take(&mut self.word);
        self.total += 1;
        let mut any = false;
        match self.mode {
            MatchMode::Substring => {
                for k in &self.keywords.keywords {
                    if word.contains(k.as_str()) {
                        any = true;
                        *self.hits.get_mut(k).expect("seeded") += 1;
                    }
                }
            }
            MatchMode::WholeWord => {
                if let Some(n) = self.hits.get_mut(&word) {
                    any = true;
                    *n += 1;
                }
            }
        }
        self.matched += u64::from(any);
    }

    pub fn finish(mut self) -> Result<ScanResult, ScanError> {
        if !self.carry.is_empty() {
            return Err(ScanError::InvalidUtf8 { offset: self.consumed });
        }
        if !self.word.is_empty() {
            self.end_word();
        }
        Ok(ScanResult {
            name: self.keywords.name.clone(),
            total_words: self.total,
            matched_words: self.matched,
            fraction: ScanResult::fraction_of(self.matched, self.total),
            per_keyword_hits: self.hits,
        })
    }
}

/// Scans `corpus` to the end in fixed-size chunks.
pub fn scan(mut corpus: impl Read, keywords: &KeywordList, mode: MatchMode) -> Result<ScanResult, ScanError> {
    let mut scanner = Scanner::new(keywords, mode);
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = match corpus.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        scanner.feed(&buf[..n])?;
    }
    scanner.finish()
}
