//! Python bindings over the core toolchain: tokenization and overlap
//! primitives, postprocessing, answer classification, the controllability
//! and robustness metrics, counterfactual substitution, and mixture ratios.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use kaft_core::counterfact::{CfGenConfig, CfVerdict};
use kaft_core::evalkit;
use kaft_core::modelio::{self, AbstainConfig};
use kaft_core::probe::{self, ProbePromptSpec};
use kaft_core::textkit::{self, StopwordList};
use kaft_core::KaftError;

fn err(e: KaftError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Tokenize text into lowercase unigrams, optionally dropping stopwords.
#[pyfunction]
#[pyo3(signature = (text, remove_stopwords = true))]
fn unigrams(text: &str, remove_stopwords: bool) -> Vec<String> {
    textkit::unigrams(text, remove_stopwords, &StopwordList::builtin())
        .tokens()
        .to_vec()
}

/// Fraction of the reference's distinct unigrams found in the candidate.
#[pyfunction]
#[pyo3(signature = (reference, candidate, remove_stopwords = true))]
fn unigram_recall(reference: &str, candidate: &str, remove_stopwords: bool) -> f64 {
    let stop = StopwordList::builtin();
    textkit::unigram_recall(
        &textkit::unigrams(reference, remove_stopwords, &stop),
        &textkit::unigrams(candidate, remove_stopwords, &stop),
    )
}

/// Fraction of the contained text's distinct unigrams present in the container.
#[pyfunction]
#[pyo3(signature = (container, contained, remove_stopwords = true))]
fn containment_fraction(container: &str, contained: &str, remove_stopwords: bool) -> f64 {
    let stop = StopwordList::builtin();
    textkit::containment_fraction(
        &textkit::unigrams(container, remove_stopwords, &stop),
        &textkit::unigrams(contained, remove_stopwords, &stop),
    )
}

/// Cut a raw completion at the earliest restart marker and trim it.
#[pyfunction]
fn truncate_output(raw: &str) -> String {
    modelio::truncate_output(raw)
}

/// Map abstain symbols ("I don't know", "?", "unsure") to "unsure".
#[pyfunction]
fn normalize_abstain(text: &str) -> String {
    modelio::normalize_abstain(text, &AbstainConfig::default())
}

/// Conventional QA normalization: casefold, strip punctuation and articles.
#[pyfunction]
fn normalize_answer(text: &str) -> String {
    probe::normalize_answer(text)
}

/// Classify a probed answer as "correct", "abstain", or "other".
#[pyfunction]
fn classify_answer(probed: &str, gold: Vec<String>) -> &'static str {
    probe::classify_answer(probed, &gold).as_str()
}

/// Thresholded unigram recall of the counterfactual answer in the prediction.
#[pyfunction]
#[pyo3(signature = (prediction, cf_answer, threshold = 0.8))]
fn controllability_hit(prediction: &str, cf_answer: &str, threshold: f64) -> bool {
    evalkit::controllability_hit(prediction, cf_answer, threshold, &StopwordList::builtin())
}

/// True when the context contains less than `threshold` of the prediction's
/// unigrams (suffix tags stripped, stopwords removed).
#[pyfunction]
#[pyo3(signature = (prediction, context, threshold = 0.5))]
fn robustness_avoided(prediction: &str, context: &str, threshold: f64) -> bool {
    evalkit::robustness_avoided(prediction, context, threshold, &StopwordList::builtin())
}

/// Normalized exact match against any gold answer.
#[pyfunction]
fn exact_match(prediction: &str, gold: Vec<String>) -> bool {
    evalkit::exact_match(prediction, &gold)
}

/// Validate a counterfactual answer candidate; returns None on accept, else
/// the rejection reason ("too_long" / "overlap").
#[pyfunction]
#[pyo3(signature = (original, candidate, max_answer_tokens = 10, max_overlap = 0.5))]
fn validate_cf_answer(
    original: &str,
    candidate: &str,
    max_answer_tokens: usize,
    max_overlap: f64,
) -> Option<&'static str> {
    let cfg = CfGenConfig {
        max_answer_tokens,
        max_overlap,
        ..Default::default()
    };
    match kaft_core::counterfact::validate_cf_answer(original, candidate, &cfg) {
        CfVerdict::Accept => None,
        CfVerdict::Reject(reason) => Some(reason),
    }
}

/// Replace every case-insensitive, word-boundary occurrence of every
/// original answer with the counterfactual answer.
#[pyfunction]
fn substitute(context: &str, original_answers: Vec<String>, cf_answer: &str) -> PyResult<String> {
    kaft_core::counterfact::substitute(context, &original_answers, cf_answer).map_err(err)
}

/// Render a few-shot knowledge-probing prompt from a spec (JSON text or a
/// `builtin:<name>` designator) and a target question.
#[pyfunction]
fn build_probe_prompt(spec: &str, target_question: &str) -> PyResult<String> {
    let spec = if spec.starts_with("builtin:") {
        kaft_core::resources::probe_spec(spec).map_err(err)?
    } else {
        ProbePromptSpec::from_json(spec).map_err(err)?
    };
    probe::build_probe_prompt(&spec, target_question).map_err(err)
}

/// Sampling ratios of every (dataset, slice) cell for a mixture spec (TOML
/// text; None for the shipped default weights).
#[pyfunction]
#[pyo3(signature = (spec_toml = None))]
fn mixture_ratios(spec_toml: Option<&str>) -> PyResult<Vec<(String, String, f64)>> {
    let spec = match spec_toml {
        Some(text) => kaft_core::assemble::MixtureSpec::from_toml_str(text).map_err(err)?,
        None => kaft_core::assemble::MixtureSpec::builtin(),
    };
    Ok(kaft_core::assemble::ratio_grid(&spec))
}

/// Fraction of positions where the closed-book answer matches the
/// counterfactual answer under answer normalization.
#[pyfunction]
fn memorization_rate(closed_book: Vec<String>, cf_answers: Vec<String>) -> PyResult<f64> {
    kaft_core::counterfact::memorization_rate(&closed_book, &cf_answers).map_err(err)
}

/// The default stopword list (version, words).
#[pyfunction]
fn stopwords() -> (String, usize) {
    let list = StopwordList::builtin();
    (list.version().to_string(), list.len())
}

#[pymodule]
fn kaft_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(unigrams, m)?)?;
    m.add_function(wrap_pyfunction!(unigram_recall, m)?)?;
    m.add_function(wrap_pyfunction!(containment_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_output, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_abstain, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(classify_answer, m)?)?;
    m.add_function(wrap_pyfunction!(controllability_hit, m)?)?;
    m.add_function(wrap_pyfunction!(robustness_avoided, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(validate_cf_answer, m)?)?;
    m.add_function(wrap_pyfunction!(substitute, m)?)?;
    m.add_function(wrap_pyfunction!(build_probe_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(memorization_rate, m)?)?;
    m.add_function(wrap_pyfunction!(stopwords, m)?)?;
    Ok(())
}
