//! Knowledge probing: few-shot prompt construction, bulk closed-book
//! inference, and classification of probed answers.
//!
//! Probe prompts are data, not code: the shipped spec files mirror the
//! prompts used for each model family and are freely editable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, AnswerQuality, JsonlRecord, QAExample, QaFormat, BLANK_MARKER};
use crate::error::{KaftError, Result};
use crate::modelio::{
    generate_bulk, normalize_abstain, truncate_output, AbstainConfig, GenRequest, GenerationClient,
    ABSTAIN_TOKEN,
};

fn default_schema_version() -> u32 {
    corpus::SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeStyle {
    StandardQa,
    Cloze,
    MultipleChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnownPair {
    pub question: String,
    pub answer: String,
}

/// A question the model is known to miss, rendered with the abstain token at
/// the given position in the shot sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnknownQuestion {
    pub position: usize,
    pub question: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePromptSpec {
    pub style: ProbeStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
    pub abstain_token: String,
    pub known_pairs: Vec<KnownPair>,
    #[serde(default)]
    pub unknown_questions: Vec<UnknownQuestion>,
}

impl ProbePromptSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProbePromptSpec = serde_json::from_str(text)
            .map_err(|e| KaftError::Config(format!("bad probe spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.known_pairs.is_empty() {
            return Err(KaftError::Config("probe spec needs at least one known pair".into()));
        }
        if self.abstain_token.is_empty() {
            return Err(KaftError::Config("abstain_token must be non-empty".into()));
        }
        let total = self.known_pairs.len() + self.unknown_questions.len();
        let mut seen = std::collections::BTreeSet::new();
        for unknown in &self.unknown_questions {
            if unknown.position >= total {
                return Err(KaftError::Config(format!(
                    "unknown-question position {} out of range (total {total} shots)",
                    unknown.position
                )));
            }
            if !seen.insert(unknown.position) {
                return Err(KaftError::Config(format!(
                    "duplicate unknown-question position {}",
                    unknown.position
                )));
            }
        }
        if self.style == ProbeStyle::Cloze {
            let all_cloze = self
                .known_pairs
                .iter()
                .map(|p| p.question.as_str())
                .chain(self.unknown_questions.iter().map(|u| u.question.as_str()))
                .all(|q| q.contains(BLANK_MARKER));
            if !all_cloze {
                return Err(KaftError::Config(format!(
                    "cloze probe spec: every question must contain \"{BLANK_MARKER}\""
                )));
            }
        }
        Ok(())
    }

    fn render_shot(&self, question: &str, answer: &str) -> String {
        match self.style {
            ProbeStyle::StandardQa => format!("Q: {question} A: {answer}."),
            ProbeStyle::Cloze => format!("{question} A: {answer}."),
            ProbeStyle::MultipleChoice => format!("Question: {question} -Answer: {answer}."),
        }
    }

    fn render_cue(&self, question: &str) -> String {
        match self.style {
            ProbeStyle::StandardQa => format!("Q: {question} A:"),
            ProbeStyle::Cloze => format!("{question} A:"),
            ProbeStyle::MultipleChoice => format!("Question: {question} -Answer:"),
        }
    }
}

/// Render the few-shot probe prompt for one target question: header, known
/// and unknown shots interleaved at their listed positions, then the target
/// question with a dangling answer cue.
pub fn build_probe_prompt(spec: &ProbePromptSpec, target_question: &str) -> Result<String> {
    spec.validate()?;
    let is_cloze_question = target_question.contains(BLANK_MARKER);
    match spec.style {
        ProbeStyle::Cloze if !is_cloze_question => {
            return Err(KaftError::Config(format!(
                "cloze probe style requires \"{BLANK_MARKER}\" in the question: {target_question:?}"
            )));
        }
        ProbeStyle::StandardQa | ProbeStyle::MultipleChoice if is_cloze_question => {
            return Err(KaftError::Config(format!(
                "{:?} probe style cannot take a cloze question: {target_question:?}",
                spec.style
            )));
        }
        _ => {}
    }

    let total = spec.known_pairs.len() + spec.unknown_questions.len();
    let mut shots: Vec<Option<String>> = vec![None; total];
    for unknown in &spec.unknown_questions {
        shots[unknown.position] = Some(spec.render_shot(&unknown.question, &spec.abstain_token));
    }
    let mut known = spec.known_pairs.iter();
    for slot in shots.iter_mut() {
        if slot.is_none() {
            let pair = known.next().expect("slot count matches shot count");
            *slot = Some(spec.render_shot(&pair.question, &pair.answer));
        }
    }

    let mut lines: Vec<String> = Vec::with_capacity(total + 2);
    if let Some(header) = &spec.header {
        lines.push(header.clone());
    }
    lines.extend(shots.into_iter().map(|s| s.expect("all slots filled")));
    lines.push(spec.render_cue(target_question));
    Ok(lines.join("\n"))
}

/// Render a multiple-choice question with lettered options, the form probe
/// prompts and input sequences use.
pub fn render_mc_question(example: &QAExample) -> String {
    let choices = example.choices.as_deref().unwrap_or_default();
    let mut out = example.question.clone();
    for (i, choice) in choices.iter().enumerate() {
        let letter = (b'A' + (i as u8 % 26)) as char;
        out.push_str(&format!(" ({letter}) {choice}"));
    }
    out
}

/// The question text handed to the prompt builder for an example.
pub fn probe_question(example: &QAExample) -> String {
    match example.format {
        QaFormat::MultipleChoice => render_mc_question(example),
        _ => example.question.clone(),
    }
}

/// Conventional QA answer normalization: lowercase, drop ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Classify a postprocessed probe answer against the gold answers.
pub fn classify_answer(probed: &str, gold: &[String]) -> AnswerQuality {
    if probed == ABSTAIN_TOKEN {
        return AnswerQuality::Abstain;
    }
    let normalized = normalize_answer(probed);
    if gold.iter().any(|g| normalize_answer(g) == normalized) {
        AnswerQuality::Correct
    } else {
        AnswerQuality::Other
    }
}

/// One probed example: the raw completion, its postprocessed answer, and the
/// answer's quality relative to the gold answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub example_id: String,
    pub raw: String,
    pub answer: String,
    pub quality: AnswerQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl JsonlRecord for ProbeResult {
    const KIND: &'static str = "ProbeResult";
    const FIELDS: &'static [&'static str] =
        &["schema_version", "example_id", "raw", "answer", "quality", "note"];
    const REQUIRED: &'static [&'static str] = &["example_id", "raw", "answer", "quality"];

    fn validate(&self) -> Result<()> {
        let is_abstain_token = self.answer == ABSTAIN_TOKEN;
        let is_abstain_quality = self.quality == AnswerQuality::Abstain;
        if is_abstain_token != is_abstain_quality {
            return Err(KaftError::validation(
                &self.example_id,
                "quality",
                format!("quality=abstain iff answer==\"{ABSTAIN_TOKEN}\""),
            ));
        }
        Ok(())
    }

    fn describe_id(&self) -> String {
        self.example_id.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub model_tag: String,
    pub abstain: AbstainConfig,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            max_tokens: 32,
            max_in_flight: 8,
            model_tag: "default".into(),
            abstain: AbstainConfig::default(),
        }
    }
}

/// Probe every example closed-book, persisting one JSONL line per id to
/// `sink`. Ids already present in `sink` are skipped, so interrupted runs
/// resume where they stopped. Per-example failures are recorded with
/// quality=other and an error note; the run aborts if more than half of the
/// attempted examples fail.
pub fn probe_closed_book(
    examples: &[QAExample],
    spec: &ProbePromptSpec,
    client: &dyn GenerationClient,
    sink: &Path,
    options: &ProbeOptions,
) -> Result<Vec<ProbeResult>> {
    spec.validate()?;
    options.abstain.validate()?;

    let mut done: BTreeMap<String, ProbeResult> = BTreeMap::new();
    if sink.exists() {
        for result in corpus::load_jsonl::<ProbeResult>(sink)? {
            done.insert(result.example_id.clone(), result);
        }
    }

    let pending: Vec<&QAExample> = examples
        .iter()
        .filter(|e| !done.contains_key(&e.id))
        .collect();

    let mut failures = 0usize;
    for chunk in pending.chunks(options.max_in_flight.max(1)) {
        let mut batch: Vec<ProbeResult> = Vec::with_capacity(chunk.len());
        let mut requests = Vec::with_capacity(chunk.len());
        let mut request_owner = Vec::with_capacity(chunk.len());
        for example in chunk {
            match build_probe_prompt(spec, &probe_question(example)) {
                Ok(prompt) => {
                    requests.push(GenRequest::new(prompt, options.max_tokens, &options.model_tag));
                    request_owner.push(*example);
                }
                Err(e) => {
                    failures += 1;
                    batch.push(failed_result(example, format!("prompt: {e}")));
                }
            }
        }
        let responses = generate_bulk(client, &requests, options.max_in_flight);
        for (example, response) in request_owner.iter().zip(responses) {
            match response {
                Ok(generated) => {
                    let answer =
                        normalize_abstain(&truncate_output(&generated.text), &options.abstain);
                    let quality = classify_answer(&answer, &example.answers);
                    batch.push(ProbeResult {
                        schema_version: corpus::SCHEMA_VERSION,
                        example_id: example.id.clone(),
                        raw: generated.text,
                        answer,
                        quality,
                        note: None,
                    });
                }
                Err(e) => {
                    failures += 1;
                    batch.push(failed_result(example, format!("generation: {e}")));
                }
            }
        }
        // One writer, input order within the chunk.
        batch.sort_by_key(|r| chunk.iter().position(|e| e.id == r.example_id));
        corpus::append_jsonl(&batch, sink)?;
        for result in batch {
            done.insert(result.example_id.clone(), result);
        }
    }

    if !pending.is_empty() && failures * 2 > pending.len() {
        return Err(KaftError::Protocol(format!(
            "{failures} of {} probe attempts failed; aborting run",
            pending.len()
        )));
    }

    Ok(examples
        .iter()
        .filter_map(|e| done.get(&e.id).cloned())
        .collect())
}

fn failed_result(example: &QAExample, note: String) -> ProbeResult {
    ProbeResult {
        schema_version: corpus::SCHEMA_VERSION,
        example_id: example.id.clone(),
        raw: String::new(),
        answer: String::new(),
        quality: AnswerQuality::Other,
        note: Some(note),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dataset;

    fn spec_with_unknowns() -> ProbePromptSpec {
        ProbePromptSpec {
            style: ProbeStyle::StandardQa,
            header: None,
            abstain_token: "I don't know".into(),
            known_pairs: vec![KnownPair {
                question: "Into what body of water does the Hudson River terminate?".into(),
                answer: "The Atlantic Ocean".into(),
            }],
            unknown_questions: vec![UnknownQuestion {
                position: 1,
                question: "What method formally adds inverses to elements to any monoid?".into(),
            }],
        }
    }

    #[test]
    fn prompt_interleaves_known_and_unknown() {
        let prompt = build_probe_prompt(&spec_with_unknowns(), "Which nation contains the majority of the amazon forest?").unwrap();
        let expected = "Q: Into what body of water does the Hudson River terminate? A: The Atlantic Ocean.\n\
                        Q: What method formally adds inverses to elements to any monoid? A: I don't know.\n\
                        Q: Which nation contains the majority of the amazon forest? A:";
        assert_eq!(prompt, expected);
    }

    #[test]
    fn no_unknowns_renders_plain_pairs() {
        let mut spec = spec_with_unknowns();
        spec.unknown_questions.clear();
        let prompt = build_probe_prompt(&spec, "Who?").unwrap();
        assert!(prompt.contains("A: The Atlantic Ocean."));
        assert!(!prompt.contains("I don't know"));
        assert!(prompt.ends_with("Q: Who? A:"));
    }

    #[test]
    fn cloze_spec_rejects_standard_question() {
        let spec = ProbePromptSpec {
            style: ProbeStyle::Cloze,
            header: None,
            abstain_token: "?".into(),
            known_pairs: vec![KnownPair {
                question: "The Hudson River terminate into ___ .".into(),
                answer: "The Atlantic Ocean".into(),
            }],
            unknown_questions: vec![],
        };
        assert!(build_probe_prompt(&spec, "no blank here").is_err());
        assert!(build_probe_prompt(&spec, "goes to ___ .").is_ok());
    }

    #[test]
    fn classify_respects_normalization() {
        let gold = vec!["The Atlantic Ocean.".to_string()];
        assert_eq!(classify_answer("the Atlantic Ocean", &gold), AnswerQuality::Correct);
        assert_eq!(classify_answer("unsure", &gold), AnswerQuality::Abstain);
        assert_eq!(
            classify_answer("Pink Floyd", &["The Rolling Stones".into()]),
            AnswerQuality::Other
        );
    }

    #[test]
    fn normalization_drops_articles_and_punctuation() {
        assert_eq!(normalize_answer("The Atlantic Ocean."), "atlantic ocean");
        assert_eq!(normalize_answer("  a  Courts;  "), "courts");
    }

    #[test]
    fn probe_results_validate_abstain_consistency() {
        let mut result = ProbeResult {
            schema_version: corpus::SCHEMA_VERSION,
            example_id: "x".into(),
            raw: "?".into(),
            answer: "unsure".into(),
            quality: AnswerQuality::Abstain,
            note: None,
        };
        result.validate().unwrap();
        result.quality = AnswerQuality::Other;
        assert!(result.validate().is_err());
    }

    #[test]
    fn probing_with_mock_covers_three_qualities() {
        use std::collections::BTreeMap;
        let dir = tempfile::tempdir().unwrap();
        let sink = dir.path().join("probe.jsonl");
        let examples = vec![
            example("e1", "Dave Gilmour and Roger Waters were in which rock group?", "Pink Floyd"),
            example("e2", "In which country did Warsaw Pact officials meet to dissolve the alliance?", "Hungary"),
            example("e3", "Who is the prime minister of Japan in 2015?", "Shinzo Abe"),
        ];
        let client = crate::modelio::MockClient::substring(BTreeMap::from([
            ("rock group".into(), "Pink Floyd".into()),
            ("Warsaw Pact".into(), "I don't know".into()),
            ("Japan".into(), "London".into()),
        ]));
        let spec = spec_with_unknowns();
        let results =
            probe_closed_book(&examples, &spec, &client, &sink, &ProbeOptions::default()).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].quality, AnswerQuality::Correct);
        assert_eq!(results[1].quality, AnswerQuality::Abstain);
        assert_eq!(results[1].answer, "unsure");
        assert_eq!(results[2].quality, AnswerQuality::Other);

        // Resumable: a second run adds nothing.
        let before = std::fs::read_to_string(&sink).unwrap();
        probe_closed_book(&examples, &spec, &client, &sink, &ProbeOptions::default()).unwrap();
        assert_eq!(std::fs::read_to_string(&sink).unwrap(), before);
    }

    fn example(id: &str, question: &str, answer: &str) -> QAExample {
        QAExample {
            schema_version: corpus::SCHEMA_VERSION,
            id: id.into(),
            question: question.into(),
            answers: vec![answer.into()],
            context: None,
            relevance: None,
            dataset: Dataset::Triviaqa,
            format: QaFormat::OpenDomain,
            choices: None,
            gold_statements: None,
            triplet: None,
        }
    }
}
