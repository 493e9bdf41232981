//! Counterfactual augmentation: generate plausible fake answers via few-shot
//! prompting, validate them, substitute them into relevant contexts, and
//! audit memorization.

use serde::{Deserialize, Serialize};

use crate::corpus::{QAExample, SliceKind, SliceRecord};
use crate::error::{KaftError, Result};
use crate::modelio::{
    normalize_abstain, truncate_output, AbstainConfig, GenRequest, GenerationClient, ABSTAIN_TOKEN,
};
use crate::probe::normalize_answer;
use crate::textkit::{self, StopwordList};

/// The fake-answer prompt template; slots `{examples}`, `{question}` and
/// `{original_answer}`.
pub const DEFAULT_CF_PROMPT: &str = include_str!("../resources/cf_prompt.txt");
/// The default few-shot block rendered into `{examples}`.
pub const DEFAULT_CF_FEWSHOT: &str = include_str!("../resources/cf_fewshot_default.txt");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CfGenConfig {
    pub prompt_template: String,
    /// Raw few-shot block substituted into the `{examples}` slot.
    pub fewshot_examples: String,
    /// The fake answers appearing in the few-shot block, kept for the
    /// train/test entity-disjointness audit.
    pub fewshot_answers: Vec<String>,
    /// Names the prompt pool, used to enforce train/test disjointness.
    pub fewshot_pool_tag: String,
    /// Candidates with more unigrams than this are rejected.
    pub max_answer_tokens: usize,
    /// Candidates whose distinct-unigram overlap with the original answer
    /// exceeds this fraction are rejected.
    pub max_overlap: f64,
    /// Token budget for the generation request.
    pub gen_max_tokens: u32,
}

impl Default for CfGenConfig {
    fn default() -> Self {
        Self {
            prompt_template: DEFAULT_CF_PROMPT.into(),
            fewshot_examples: DEFAULT_CF_FEWSHOT.into(),
            fewshot_answers: vec!["Somalia".into(), "Richard D. Fairbank".into()],
            fewshot_pool_tag: "default".into(),
            max_answer_tokens: 10,
            max_overlap: 0.5,
            gen_max_tokens: 64,
        }
    }
}

impl CfGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(KaftError::Config("max_overlap must be in [0,1]".into()));
        }
        if self.max_answer_tokens == 0 || self.gen_max_tokens == 0 {
            return Err(KaftError::Config("token limits must be >= 1".into()));
        }
        for slot in ["{examples}", "{question}", "{original_answer}"] {
            if !self.prompt_template.contains(slot) {
                return Err(KaftError::Config(format!("prompt_template missing slot {slot}")));
            }
        }
        Ok(())
    }

    pub fn render_prompt(&self, question: &str, original_answer: &str) -> String {
        self.prompt_template
            .replace("{examples}", &self.fewshot_examples)
            .replace("{question}", question)
            .replace("{original_answer}", original_answer)
    }
}

/// Generate one counterfactual answer candidate. The candidate is truncated
/// and abstain-normalized like any model output; empty or abstaining
/// generations are skip errors. Validation happens downstream.
pub fn generate_cf_answer(
    example: &QAExample,
    cfg: &CfGenConfig,
    client: &dyn GenerationClient,
) -> Result<String> {
    cfg.validate()?;
    let prompt = cfg.render_prompt(&example.question, example.canonical_answer());
    let request = GenRequest::new(prompt, cfg.gen_max_tokens, &cfg.fewshot_pool_tag);
    let response = client.generate(&request)?;
    let candidate = normalize_abstain(&truncate_output(&response.text), &AbstainConfig::default());
    if candidate.is_empty() {
        return Err(KaftError::skip(&example.id, "empty counterfactual generation"));
    }
    if candidate == ABSTAIN_TOKEN {
        return Err(KaftError::skip(&example.id, "model abstained on counterfactual generation"));
    }
    Ok(candidate)
}

/// Outcome of counterfactual-answer validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CfVerdict {
    Accept,
    Reject(&'static str),
}

/// Reject a candidate that is too long (unigram count) or overlaps the
/// original answer too much (distinct unigrams, stopwords removed; raw
/// unigrams when the candidate is all stopwords, so `validate(x, x)` always
/// rejects).
pub fn validate_cf_answer(original: &str, candidate: &str, cfg: &CfGenConfig) -> CfVerdict {
    let stop = StopwordList::builtin();
    if textkit::unigrams(candidate, false, &stop).len() > cfg.max_answer_tokens {
        return CfVerdict::Reject("too_long");
    }
    let mut candidate_bag = textkit::unigrams(candidate, true, &stop);
    let mut original_bag = textkit::unigrams(original, true, &stop);
    if candidate_bag.distinct().is_empty() {
        candidate_bag = textkit::unigrams(candidate, false, &stop);
        original_bag = textkit::unigrams(original, false, &stop);
    }
    let overlap = textkit::containment_fraction(&original_bag, &candidate_bag);
    if overlap > cfg.max_overlap {
        return CfVerdict::Reject("overlap");
    }
    CfVerdict::Accept
}

/// Replace every case-insensitive, word-boundary occurrence of every
/// original answer (longest answers first, so paraphrase prefixes never
/// shadow a longer match) with the counterfactual answer.
pub fn substitute(context: &str, original_answers: &[String], cf_answer: &str) -> Result<String> {
    let mut needles: Vec<&str> = original_answers
        .iter()
        .map(String::as_str)
        .filter(|a| !a.trim().is_empty())
        .collect();
    needles.sort_by_key(|a| std::cmp::Reverse(a.len()));

    let mut matches: Vec<(usize, usize)> = Vec::new();
    for needle in &needles {
        matches.extend(textkit::find_phrase_ci(context, needle));
    }
    matches.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut last_end = 0;
    for (start, end) in matches {
        if start >= last_end {
            taken.push((start, end));
            last_end = end;
        }
    }
    if taken.is_empty() {
        return Err(KaftError::skip(
            "substitute",
            "no original answer occurs in the context",
        ));
    }

    let mut out = String::with_capacity(context.len());
    let mut cursor = 0;
    for (start, end) in taken {
        out.push_str(&context[cursor..start]);
        out.push_str(cf_answer);
        cursor = end;
    }
    out.push_str(&context[cursor..]);

    if !textkit::contains_phrase_ci(&out, cf_answer) {
        return Err(KaftError::skip("substitute", "counterfactual answer lost in substitution"));
    }
    if let Some(answer) = original_answers
        .iter()
        .find(|a| textkit::contains_phrase_ci(&out, a))
    {
        return Err(KaftError::skip(
            "substitute",
            format!("original answer \"{answer}\" survived substitution"),
        ));
    }
    Ok(out)
}

/// Turn a relevant slice into a counterfactual slice by substituting the
/// accepted counterfactual answer into its built context.
pub fn counterfactual_slice(relevant: &SliceRecord, cf_answer: &str) -> Result<SliceRecord> {
    if !relevant.slice_kind.is_grounded() || relevant.slice_kind == SliceKind::Counterfactual {
        return Err(KaftError::skip(
            &relevant.example.id,
            format!("cannot counterfactualize a {} slice", relevant.slice_kind.as_str()),
        ));
    }
    let context = relevant
        .built_context
        .as_deref()
        .ok_or_else(|| KaftError::skip(&relevant.example.id, "relevant slice has no context"))?;
    let built = substitute(context, &relevant.example.answers, cf_answer)?;
    Ok(SliceRecord {
        schema_version: relevant.schema_version,
        example: relevant.example.clone(),
        slice_kind: SliceKind::Counterfactual,
        built_context: Some(built),
        cf_answer: Some(cf_answer.to_string()),
        provenance: format!("counterfactual substitution over [{}]", relevant.provenance),
    })
}

/// Fraction of aligned positions where the closed-book answer matches the
/// counterfactual answer under the usual answer normalization.
pub fn memorization_rate(closed_book: &[String], cf_answers: &[String]) -> Result<f64> {
    if closed_book.is_empty() || closed_book.len() != cf_answers.len() {
        return Err(KaftError::validation(
            "memorization_rate",
            "inputs",
            format!(
                "lists must be aligned and non-empty, got {} vs {}",
                closed_book.len(),
                cf_answers.len()
            ),
        ));
    }
    let matches = closed_book
        .iter()
        .zip(cf_answers)
        .filter(|(cb, cf)| normalize_answer(cb) == normalize_answer(cf))
        .count();
    Ok(matches as f64 / closed_book.len() as f64)
}

/// Train/test entity-disjointness audit: returns every unigram (stopwords
/// removed) shared between the few-shot prompt answers of the training pool
/// and the evaluation pool's counterfactual answers. An empty result means
/// the pools are disjoint.
pub fn audit_entity_disjointness(
    prompt_pool_answers: &[String],
    eval_cf_answers: &[String],
    stopwords: &StopwordList,
) -> Vec<String> {
    let pool_tokens: std::collections::BTreeSet<String> = prompt_pool_answers
        .iter()
        .flat_map(|a| textkit::unigrams(a, true, stopwords).tokens().to_vec())
        .collect();
    let eval_tokens: std::collections::BTreeSet<String> = eval_cf_answers
        .iter()
        .flat_map(|a| textkit::unigrams(a, true, stopwords).tokens().to_vec())
        .collect();
    pool_tokens.intersection(&eval_tokens).cloned().collect()
}
