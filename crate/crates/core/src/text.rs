//! Token accounting and the default lexical scorer.
//!
//! A "token" here is either a maximal run of alphanumeric characters or a
//! single non-whitespace, non-alphanumeric character. The count stands in for
//! API-reported token usage and is used for every budget in the kernel.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Counts alphanumeric runs plus punctuation characters.
pub fn estimate_tokens(text: &str) -> u64 {
    let mut n = 0;
    let mut in_run = false;
    for c in text.chars() {
        let alnum = c.is_alphanumeric();
        if (alnum && !in_run) || (!alnum && !c.is_whitespace()) {
            n += 1;
        }
        in_run = alnum;
    }
    n
}

/// Byte offsets at which each counted token begins.
fn token_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut in_run = false;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if !in_run {
                starts.push(i);
                in_run = true;
            }
        } else {
            in_run = false;
            if !c.is_whitespace() {
                starts.push(i);
            }
        }
    }
    starts
}

/// The suffix of `text` holding its last `n` tokens.
pub fn tail_tokens(text: &str, n: usize) -> &str {
    let starts = token_starts(text);
    if starts.len() <= n {
        return text;
    }
    &text[starts[starts.len() - n]..]
}

/// Unique lowercase alphanumeric runs.
pub fn word_set(text: &str) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for_each_word(text, |w| {
        if !set.contains(w) {
            set.insert(w.to_string());
        }
    });
    set
}

/// Lowercase alphanumeric runs in order of appearance, duplicates kept.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Distinct words in order of first appearance.
pub fn distinct_words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for_each_word(text, |w| {
        if !seen.contains(w) {
            seen.insert(w.to_string());
            out.push(w.to_string());
        }
    });
    out
}

/// Calls `f` with each lowercased word, reusing one buffer.
fn for_each_word(text: &str, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    for w in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        lowercase_into(w, &mut buf);
        f(&buf);
    }
}

fn lowercase_into(word: &str, buf: &mut String) {
    buf.clear();
    if word.is_ascii() {
        buf.extend(word.bytes().map(|b| b.to_ascii_lowercase() as char));
    } else if !word.contains('Σ') {
        // Only capital sigma lowercases differently in word context.
        buf.extend(word.chars().flat_map(char::to_lowercase));
    } else {
        buf.push_str(&word.to_lowercase());
    }
}

/// Number of shared unique lowercase words.
pub fn overlap(a: &str, b: &str) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut pending = word_set(small);
    let mut shared = 0;
    for_each_word(large, |w| {
        if pending.remove(w) {
            shared += 1;
        }
    });
    shared
}

/// Shared unique lowercase words, sorted.
pub fn shared_words(a: &str, b: &str) -> Vec<String> {
    let a = word_set(a);
    let b = word_set(b);
    a.intersection(&b).cloned().collect()
}

/// The first `limit` characters (not bytes) of `text`.
pub fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for w in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Relevance of a piece of evidence to a query.
///
/// Every selection in the kernel (lens, router, team generator, bench
/// worker) goes through this trait so that semantic scoring can be swapped in
/// without touching selection logic. `candidate_id` lets table-driven
/// scorers replay recorded decisions; text scorers ignore it.
pub trait Scorer {
    fn score(&self, query: &str, candidate_id: &str, evidence: &str) -> f64;

    /// Human-readable breakdown stored as binding evidence.
    fn explain(&self, query: &str, evidence: &str) -> String {
        let _ = (query, evidence);
        String::new()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, query: &str, candidate_id: &str, evidence: &str) -> f64 {
        (**self).score(query, candidate_id, evidence)
    }

    fn explain(&self, query: &str, evidence: &str) -> String {
        (**self).explain(query, evidence)
    }
}

/// Shared-unique-lowercase-word count.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn score(&self, query: &str, _candidate_id: &str, evidence: &str) -> f64 {
        overlap(query, evidence) as f64
    }

    fn explain(&self, query: &str, evidence: &str) -> String {
        shared_words(query, evidence).join(",")
    }
}

/// Renders a score so that parsing it back yields the identical `f64`.
pub fn format_score(score: f64) -> String {
    score.to_string()
}
