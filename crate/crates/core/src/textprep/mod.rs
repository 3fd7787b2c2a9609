//! Turns a study's title, abstract and keywords into a normalized token list.
//!
//! Tokens are split on any non-alphanumeric character, lowercased, filtered
//! against the stopword list, and reduced with the Porter-style stemmer. The
//! same filters run on the stem, so the output is a fixpoint: feeding the
//! space-joined tokens back through [`normalize`] reproduces them.

mod stem;

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::StudyRecord;

pub use stem::stem;

const STOPWORDS_SOURCE: &str = include_str!("../../data/stopwords_en_v1.txt");

const MIN_TOKEN_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDocument {
    pub study_id: String,
    pub tokens: Vec<String>,
}

impl TokenDocument {
    pub fn new(study_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self { study_id: study_id.into(), tokens }
    }
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        STOPWORDS_SOURCE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// SHA-256 over the stopword list and the stemmer rule table. Recorded in
/// model fingerprints so a change to either data file invalidates models.
pub fn resource_fingerprint() -> &'static str {
    static FP: OnceLock<String> = OnceLock::new();
    FP.get_or_init(|| {
        let mut h = Sha256::new();
        h.update(b"stopwords\0");
        h.update(STOPWORDS_SOURCE.as_bytes());
        h.update(b"\0stemmer\0");
        h.update(stem::RULES_SOURCE.as_bytes());
        hex::encode(h.finalize())
    })
}

/// Lowercased alphanumeric runs, before any filtering.
pub fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
}

fn keep(token: &str) -> bool {
    token.len() >= MIN_TOKEN_LEN
        && !token.bytes().all(|b| b.is_ascii_digit())
        && !stopwords().contains(token)
}

pub fn normalize(text: &str) -> Vec<String> {
    raw_tokens(text)
        .filter(|t| keep(t))
        .map(|t| stem(&t))
        .filter(|s| keep(s))
        .collect()
}

/// Builds the classification document from title, abstract and keywords,
/// in that order, with equal weight.
pub fn preprocess(record: &StudyRecord) -> TokenDocument {
    let mut tokens = normalize(&record.title);
    tokens.extend(normalize(&record.abstract_text));
    tokens.extend(normalize(&record.keywords));
    TokenDocument::new(record.id.clone(), tokens)
}

/// Fraction of raw tokens that are English stopwords. Zero for empty text.
pub fn stopword_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for t in raw_tokens(text) {
        total += 1;
        if stopwords().contains(t.as_str()) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
