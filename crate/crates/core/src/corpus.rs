//! Normalized data model for the four QA formats and lossless JSONL
//! ingestion/serialization for every pipeline stage.
//!
//! Every line of every JSONL file carries a `schema_version` field. Stages
//! are pure file-to-file transforms over these records, so intermediate
//! outputs can be audited and runs resumed.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{KaftError, Result};
use crate::textkit;

/// Version stamped on every JSONL line written by this toolchain.
pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Squad2,
    Trex,
    Qasc,
    Triviaqa,
    Custom,
}

impl Dataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dataset::Squad2 => "squad2",
            Dataset::Trex => "trex",
            Dataset::Qasc => "qasc",
            Dataset::Triviaqa => "triviaqa",
            Dataset::Custom => "custom",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "squad2" => Ok(Dataset::Squad2),
            "trex" => Ok(Dataset::Trex),
            "qasc" => Ok(Dataset::Qasc),
            "triviaqa" => Ok(Dataset::Triviaqa),
            "custom" => Ok(Dataset::Custom),
            other => Err(KaftError::Config(format!("unknown dataset tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaFormat {
    Extractive,
    Cloze,
    MultipleChoice,
    OpenDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    Irrelevant,
    Unknown,
}

/// A knowledge-base triplet; for TReX items the masked element is the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triplet {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

/// Cloze questions mark the masked span with this token.
pub const BLANK_MARKER: &str = "___";

/// One normalized QA item. The first answer is canonical; the rest are
/// paraphrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<Relevance>,
    pub dataset: Dataset,
    pub format: QaFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_statements: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet: Option<Triplet>,
}

impl QAExample {
    /// The canonical answer string (first list element).
    pub fn canonical_answer(&self) -> &str {
        &self.answers[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Relevant,
    IrrelevantEasy,
    IrrelevantHard,
    Empty,
    Counterfactual,
    TwoHop,
}

impl SliceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SliceKind::Relevant => "relevant",
            SliceKind::IrrelevantEasy => "irrelevant_easy",
            SliceKind::IrrelevantHard => "irrelevant_hard",
            SliceKind::Empty => "empty",
            SliceKind::Counterfactual => "counterfactual",
            SliceKind::TwoHop => "two_hop",
        }
    }

    /// Slices whose target is grounded in the built context (relevance 1 in
    /// the priority scheme); the rest fall back to the probed answer.
    pub fn is_grounded(&self) -> bool {
        matches!(
            self,
            SliceKind::Relevant | SliceKind::Counterfactual | SliceKind::TwoHop
        )
    }
}

/// A QA example paired with one constructed context of a declared kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub example: QAExample,
    pub slice_kind: SliceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_answer: Option<String>,
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerQuality {
    Correct,
    Abstain,
    Other,
}

impl AnswerQuality {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerQuality::Correct => "correct",
            AnswerQuality::Abstain => "abstain",
            AnswerQuality::Other => "other",
        }
    }
}

/// The three target-sequence suffix tags. Exactly one terminates every
/// knowledge-aware target; baseline modes emit tagless targets.
pub const TAG_FROM_CONTEXT: &str = "(from context)";
pub const TAG_IRRELEVANT: &str = "(irrelevant context)";
pub const TAG_EMPTY: &str = "(empty context)";

pub const SUFFIX_TAGS: [&str; 3] = [TAG_FROM_CONTEXT, TAG_IRRELEVANT, TAG_EMPTY];

/// A final (input sequence, target sequence) training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaftRecord {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub input_sequence: String,
    pub target_sequence: String,
    pub dataset: Dataset,
    pub slice_kind: SliceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_quality: Option<AnswerQuality>,
}

impl KaftRecord {
    /// The suffix tag terminating the target, if any.
    pub fn suffix_tag(&self) -> Option<&'static str> {
        SUFFIX_TAGS
            .iter()
            .find(|t| self.target_sequence.ends_with(**t))
            .copied()
    }

    /// The target with any suffix tag removed.
    pub fn target_answer(&self) -> &str {
        match self.suffix_tag() {
            Some(tag) => self.target_sequence[..self.target_sequence.len() - tag.len()].trim_end(),
            None => &self.target_sequence,
        }
    }
}

/// A record kind that can live in a JSONL file.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    /// Human-readable kind name for schema errors.
    const KIND: &'static str;
    /// Every key this kind may carry.
    const FIELDS: &'static [&'static str];
    /// Keys that must be present on every line.
    const REQUIRED: &'static [&'static str];

    fn validate(&self) -> Result<()>;

    /// Identifier used in error messages.
    fn describe_id(&self) -> String;
}

impl JsonlRecord for QAExample {
    const KIND: &'static str = "QAExample";
    const FIELDS: &'static [&'static str] = &[
        "schema_version",
        "id",
        "question",
        "answers",
        "context",
        "relevance",
        "dataset",
        "format",
        "choices",
        "gold_statements",
        "triplet",
    ];
    const REQUIRED: &'static [&'static str] =
        &["id", "question", "answers", "dataset", "format"];

    fn validate(&self) -> Result<()> {
        let id = &self.id;
        if self.answers.is_empty() {
            return Err(KaftError::validation(id, "answers", "answers non-empty"));
        }
        if self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(KaftError::validation(
                id,
                "answers",
                "every answer non-empty after whitespace trim",
            ));
        }
        if self.format == QaFormat::MultipleChoice {
            let choices = self.choices.as_ref().ok_or_else(|| {
                KaftError::validation(id, "choices", "multiple_choice requires choices")
            })?;
            if !choices.iter().any(|c| c == self.canonical_answer()) {
                return Err(KaftError::validation(
                    id,
                    "choices",
                    "canonical answer must be one of the choices",
                ));
            }
        }
        if self.format == QaFormat::Cloze {
            let blanks = self.question.matches(BLANK_MARKER).count();
            if blanks != 1 {
                return Err(KaftError::validation(
                    id,
                    "question",
                    format!("cloze question must contain exactly one \"{BLANK_MARKER}\", found {blanks}"),
                ));
            }
        }
        if self.dataset == Dataset::Trex {
            let triplet = self.triplet.as_ref().ok_or_else(|| {
                KaftError::validation(id, "triplet", "trex examples require a triplet")
            })?;
            let canonical = self.canonical_answer();
            if canonical != triplet.subject && canonical != triplet.object {
                return Err(KaftError::validation(
                    id,
                    "triplet",
                    "canonical answer must equal the masked triplet element",
                ));
            }
        }
        Ok(())
    }

    fn describe_id(&self) -> String {
        self.id.clone()
    }
}

impl JsonlRecord for SliceRecord {
    const KIND: &'static str = "SliceRecord";
    const FIELDS: &'static [&'static str] = &[
        "schema_version",
        "id",
        "question",
        "answers",
        "context",
        "relevance",
        "dataset",
        "format",
        "choices",
        "gold_statements",
        "triplet",
        "slice_kind",
        "built_context",
        "cf_answer",
        "provenance",
    ];
    const REQUIRED: &'static [&'static str] = &[
        "id",
        "question",
        "answers",
        "dataset",
        "format",
        "slice_kind",
        "provenance",
    ];

    fn validate(&self) -> Result<()> {
        self.example.validate()?;
        let id = &self.example.id;
        match self.slice_kind {
            SliceKind::Empty => {
                if self.built_context.is_some() {
                    return Err(KaftError::validation(
                        id,
                        "built_context",
                        "empty slices carry no context",
                    ));
                }
            }
            SliceKind::Relevant | SliceKind::TwoHop => {
                if self.built_context.as_deref().is_none_or(str::is_empty) {
                    return Err(KaftError::validation(
                        id,
                        "built_context",
                        "relevant/two_hop slices require a non-empty context",
                    ));
                }
            }
            SliceKind::Counterfactual => {
                let context = self.built_context.as_deref().unwrap_or_default();
                let cf = self.cf_answer.as_deref().ok_or_else(|| {
                    KaftError::validation(id, "cf_answer", "counterfactual slices require cf_answer")
                })?;
                if !textkit::contains_phrase_ci(context, cf) {
                    return Err(KaftError::validation(
                        id,
                        "built_context",
                        "cf_answer must appear verbatim in built_context",
                    ));
                }
                if let Some(answer) = self
                    .example
                    .answers
                    .iter()
                    .find(|a| textkit::contains_phrase_ci(context, a))
                {
                    return Err(KaftError::validation(
                        id,
                        "built_context",
                        format!("original answer \"{answer}\" still present in counterfactual context"),
                    ));
                }
            }
            _ => {}
        }
        if self.cf_answer.is_some() && self.slice_kind != SliceKind::Counterfactual {
            return Err(KaftError::validation(
                id,
                "cf_answer",
                "cf_answer is only valid on counterfactual slices",
            ));
        }
        Ok(())
    }

    fn describe_id(&self) -> String {
        self.example.id.clone()
    }
}

impl JsonlRecord for KaftRecord {
    const KIND: &'static str = "KaftRecord";
    const FIELDS: &'static [&'static str] = &[
        "schema_version",
        "id",
        "input_sequence",
        "target_sequence",
        "dataset",
        "slice_kind",
        "answer_quality",
    ];
    const REQUIRED: &'static [&'static str] = &[
        "id",
        "input_sequence",
        "target_sequence",
        "dataset",
        "slice_kind",
    ];

    fn validate(&self) -> Result<()> {
        let id = &self.id;
        // Tag discipline: zero tags (baseline modes) or exactly one trailing
        // tag; never a tag mid-sequence or stacked tags.
        let prefix = match self.suffix_tag() {
            Some(tag) => &self.target_sequence[..self.target_sequence.len() - tag.len()],
            None => self.target_sequence.as_str(),
        };
        if SUFFIX_TAGS.iter().any(|t| prefix.contains(t)) {
            return Err(KaftError::validation(
                id,
                "target_sequence",
                "suffix tag may only appear once, at the end",
            ));
        }
        if let Some(tag) = self.suffix_tag() {
            let expected = match self.slice_kind {
                SliceKind::Relevant | SliceKind::Counterfactual | SliceKind::TwoHop => {
                    TAG_FROM_CONTEXT
                }
                SliceKind::IrrelevantEasy | SliceKind::IrrelevantHard => TAG_IRRELEVANT,
                SliceKind::Empty => TAG_EMPTY,
            };
            if tag != expected {
                return Err(KaftError::validation(
                    id,
                    "target_sequence",
                    format!("slice kind {} must carry \"{expected}\", found \"{tag}\"", self.slice_kind.as_str()),
                ));
            }
        }
        Ok(())
    }

    fn describe_id(&self) -> String {
        self.id.clone()
    }
}

/// Load a JSONL file of one record kind, validating every invariant.
/// Records come back in file order; errors carry 1-based line numbers.
pub fn load_jsonl<T: JsonlRecord>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|source| KaftError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line::<T>(line, path, lineno)?);
    }
    Ok(records)
}

/// Parse and validate one JSONL line.
pub fn parse_line<T: JsonlRecord>(line: &str, path: &Path, lineno: usize) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| KaftError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
    let object = value.as_object().ok_or_else(|| KaftError::Schema {
        path: path.to_path_buf(),
        line: lineno,
        expected: T::KIND,
        message: "line is not a JSON object".into(),
    })?;
    let allowed: BTreeSet<&str> = T::FIELDS.iter().copied().collect();
    for key in object.keys() {
        if !allowed.contains(key.as_str()) {
            return Err(KaftError::Schema {
                path: path.to_path_buf(),
                line: lineno,
                expected: T::KIND,
                message: format!("unexpected field `{key}`"),
            });
        }
    }
    for key in T::REQUIRED {
        if !object.contains_key(*key) {
            return Err(KaftError::Schema {
                path: path.to_path_buf(),
                line: lineno,
                expected: T::KIND,
                message: format!("missing required field `{key}`"),
            });
        }
    }
    if let Some(v) = object.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(KaftError::Schema {
                path: path.to_path_buf(),
                line: lineno,
                expected: T::KIND,
                message: format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"),
            });
        }
    }
    let record: T = serde_json::from_value(value).map_err(|e| KaftError::Schema {
        path: path.to_path_buf(),
        line: lineno,
        expected: T::KIND,
        message: e.to_string(),
    })?;
    record.validate()?;
    Ok(record)
}

/// Serialize one record per line, keys in the documented order.
pub fn dump_jsonl<T: JsonlRecord>(records: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| KaftError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut out = Vec::new();
    for record in records {
        record.validate()?;
        serde_json::to_writer(&mut out, record).expect("record serialization cannot fail");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|source| KaftError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Append records to an existing JSONL file (creating it if missing);
/// used by resumable bulk stages.
pub fn append_jsonl<T: JsonlRecord>(records: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| KaftError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    for record in records {
        record.validate()?;
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(file, "{line}").map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}
