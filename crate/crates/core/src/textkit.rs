//! Unigram tokenization, stopword handling, and the overlap/recall
//! primitives the context filters and metrics are built on.
//!
//! The tokenizer lowercases, splits on every non-alphanumeric codepoint and
//! drops empties. No stemming, no subword handling. Recall and containment
//! use distinct-set semantics: duplicates and token order never matter.

use std::collections::{BTreeSet, HashSet};

/// The stopword list shipped with the toolchain (179 English words).
pub const DEFAULT_STOPWORDS: &str = include_str!("../resources/stopwords_v1.txt");

/// A frozen stopword list plus a version string echoed into eval reports.
#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
    version: String,
}

impl StopwordList {
    /// Parse a one-word-per-line list. `#`-prefixed and blank lines are ignored.
    pub fn from_text(text: &str, version: impl Into<String>) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_lowercase())
            .collect();
        Self {
            words,
            version: version.into(),
        }
    }

    /// The built-in version-1 list.
    pub fn builtin() -> Self {
        Self::from_text(DEFAULT_STOPWORDS, "v1")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

impl Default for StopwordList {
    fn default() -> Self {
        Self::builtin()
    }
}

/// A multiset of lowercase unigrams with a distinct-set view.
///
/// Invariant: every token is non-empty, lowercase, and free of whitespace
/// and punctuation (the tokenizer splits on all of it).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnigramBag {
    tokens: Vec<String>,
    distinct: BTreeSet<String>,
}

impl UnigramBag {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let distinct = tokens.iter().cloned().collect();
        Self { tokens, distinct }
    }

    /// All tokens in text order, duplicates included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// The distinct-token view used by recall and containment.
    pub fn distinct(&self) -> &BTreeSet<String> {
        &self.distinct
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.distinct.contains(token)
    }
}

/// Tokenize `text` into a unigram bag: Unicode lowercase, split on every
/// non-alphanumeric codepoint, drop empties, optionally drop stopwords.
pub fn unigrams(text: &str, remove_stopwords: bool, stopwords: &StopwordList) -> UnigramBag {
    let lowered = text.to_lowercase();
    let tokens = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !remove_stopwords || !stopwords.contains(t))
        .map(str::to_string)
        .collect();
    UnigramBag::from_tokens(tokens)
}

/// Fraction of the reference's distinct unigrams found in the candidate.
///
/// Empty reference yields 1.0 (vacuous recall): every unigram of nothing is
/// covered.
pub fn unigram_recall(reference: &UnigramBag, candidate: &UnigramBag) -> f64 {
    if reference.distinct().is_empty() {
        return 1.0;
    }
    let hit = reference
        .distinct()
        .iter()
        .filter(|t| candidate.contains(t))
        .count();
    hit as f64 / reference.distinct().len() as f64
}

/// Fraction of the contained bag's distinct unigrams present in the container.
///
/// Empty contained yields 0.0: nothing of an empty prediction lives in any
/// context.
pub fn containment_fraction(container: &UnigramBag, contained: &UnigramBag) -> f64 {
    if contained.distinct().is_empty() {
        return 0.0;
    }
    let hit = contained
        .distinct()
        .iter()
        .filter(|t| container.contains(t))
        .count();
    hit as f64 / contained.distinct().len() as f64
}

/// Case-insensitive substring containment, used by the irrelevant-context
/// filters ("does not contain any answer paraphrase") where being
/// over-eager to drop is the safe direction.
pub fn contains_substring_ci(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Case-insensitive, word-boundary phrase containment. A match must not be
/// flanked by alphanumeric characters, so "Russia" does not match inside
/// "Russian".
pub fn contains_phrase_ci(haystack: &str, needle: &str) -> bool {
    !find_phrase_ci(haystack, needle).is_empty()
}

/// All non-overlapping word-boundary, case-insensitive match ranges of
/// `needle` in `haystack`, as byte offsets into the original `haystack`.
pub fn find_phrase_ci(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    let (hay_lower, map) = lowercase_with_offsets(haystack);
    let needle_lower = needle.to_lowercase();
    let mut out = Vec::new();
    let mut from = 0;
    while from <= hay_lower.len().saturating_sub(needle_lower.len()) {
        let Some(pos) = hay_lower[from..].find(&needle_lower) else {
            break;
        };
        let start = from + pos;
        let end = start + needle_lower.len();
        // A match must begin and end on original-character boundaries (an
        // expansion like 'ß' -> "ss" must not be split) and on word
        // boundaries in the folded text.
        let starts_clean = start == 0 || map[start] != map[start - 1];
        let ends_clean = end == hay_lower.len() || map[end] != map[end - 1];
        if starts_clean && ends_clean && boundary_ok(&hay_lower, start, end) {
            out.push((map[start], map[end]));
            from = end;
        } else {
            from = start + 1;
            while from < hay_lower.len() && !hay_lower.is_char_boundary(from) {
                from += 1;
            }
        }
    }
    out
}

/// Lowercase `s`, returning the folded string plus a byte-offset map from
/// every folded byte (and one-past-the-end) back into the original string.
fn lowercase_with_offsets(s: &str) -> (String, Vec<usize>) {
    let mut lowered = String::with_capacity(s.len());
    let mut map = Vec::with_capacity(s.len() + 1);
    for (off, ch) in s.char_indices() {
        for lc in ch.to_lowercase() {
            let before = lowered.len();
            lowered.push(lc);
            for _ in before..lowered.len() {
                map.push(off);
            }
        }
    }
    map.push(s.len());
    (lowered, map)
}

fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(|c| c.is_alphanumeric()) && !after.is_some_and(|c| c.is_alphanumeric())
}
