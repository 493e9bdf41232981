//! Postprocessing of raw model generations: truncation on restart markers
//! and normalization of abstain symbols.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{KaftError, Result};

/// The canonical abstain token recorded in place of any abstain symbol.
pub const ABSTAIN_TOKEN: &str = "unsure";

/// Literal markers at which a raw completion is cut. Sentinel tokens of the
/// form `<extra_id_N>` are matched separately.
const RESTART_MARKERS: [&str; 5] = ["\n", "Q:", "Question:", "CONTEXT:", "A:"];

/// Trailing punctuation stripped after the cut. '?' is deliberately absent:
/// it is an abstain symbol and must survive for abstain normalization.
const TERMINAL_PUNCTUATION: [char; 5] = ['.', ',', ';', ':', '!'];

fn sentinel_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<extra_id_\d+>").expect("static regex"))
}

/// Cut `raw` at the earliest truncation marker, then trim whitespace and
/// terminal punctuation.
pub fn truncate_output(raw: &str) -> String {
    let mut cut = raw.len();
    for marker in RESTART_MARKERS {
        if let Some(pos) = raw.find(marker) {
            cut = cut.min(pos);
        }
    }
    if let Some(m) = sentinel_regex().find(raw) {
        cut = cut.min(m.start());
    }
    let head = &raw[..cut];
    head.trim()
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .to_string()
}

/// Per-model-family abstain symbols and the token they normalize to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstainConfig {
    pub abstain_markers: Vec<String>,
    pub normalized_token: String,
}

impl Default for AbstainConfig {
    fn default() -> Self {
        Self {
            abstain_markers: vec!["I don't know".into(), "unsure".into(), "?".into()],
            normalized_token: ABSTAIN_TOKEN.into(),
        }
    }
}

impl AbstainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.normalized_token != ABSTAIN_TOKEN {
            return Err(KaftError::Config(format!(
                "normalized_token must be \"{ABSTAIN_TOKEN}\", got \"{}\"",
                self.normalized_token
            )));
        }
        if self.abstain_markers.iter().any(|m| m.is_empty()) {
            return Err(KaftError::Config("abstain markers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Map any abstain symbol to the canonical token. `text` is expected to be
/// already truncated; matching is case-insensitive and accepts a marker at
/// the start of the text (raw completions often trail extra tokens).
pub fn normalize_abstain(text: &str, config: &AbstainConfig) -> String {
    let lowered = text.to_lowercase();
    for marker in &config.abstain_markers {
        let marker = marker.to_lowercase();
        if lowered == marker || lowered.starts_with(&marker) {
            return config.normalized_token.clone();
        }
    }
    text.to_string()
}
