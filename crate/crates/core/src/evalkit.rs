//! Scoring of prediction files: controllability, robustness, exact match,
//! head-question selection, and aggregate reporting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, AnswerQuality, JsonlRecord, SliceRecord, SUFFIX_TAGS};
use crate::error::{KaftError, Result};
use crate::probe::{normalize_answer, ProbeResult};
use crate::textkit::{self, StopwordList};

pub const DEFAULT_CONTROLLABILITY_THRESHOLD: f64 = 0.8;
pub const DEFAULT_ROBUSTNESS_THRESHOLD: f64 = 0.5;

fn default_schema_version() -> u32 {
    corpus::SCHEMA_VERSION
}

/// One model prediction, joined to an evaluation example by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub example_id: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_used: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_answer: Option<String>,
}

impl JsonlRecord for PredictionRecord {
    const KIND: &'static str = "PredictionRecord";
    const FIELDS: &'static [&'static str] = &[
        "schema_version",
        "example_id",
        "prediction",
        "context_used",
        "cf_answer",
    ];
    const REQUIRED: &'static [&'static str] = &["example_id", "prediction"];

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn describe_id(&self) -> String {
        self.example_id.clone()
    }
}

/// Remove the output-format suffix tags so they can never game a metric.
pub fn strip_suffix_tags(text: &str) -> String {
    let mut out = text.to_string();
    for tag in SUFFIX_TAGS {
        out = out.replace(tag, " ");
    }
    out
}

/// Controllability: the prediction must cover more than `threshold` of the
/// counterfactual answer's unigrams (stopwords removed; raw unigrams when
/// the answer is all stopwords).
pub fn controllability_hit(
    prediction: &str,
    cf_answer: &str,
    threshold: f64,
    stopwords: &StopwordList,
) -> bool {
    let mut reference = textkit::unigrams(cf_answer, true, stopwords);
    let candidate;
    if reference.distinct().is_empty() {
        reference = textkit::unigrams(cf_answer, false, stopwords);
        candidate = textkit::unigrams(prediction, false, stopwords);
    } else {
        candidate = textkit::unigrams(prediction, true, stopwords);
    }
    textkit::unigram_recall(&reference, &candidate) > threshold
}

/// Robustness: the irrelevant context must contain less than `threshold` of
/// the prediction's unigrams (stopwords removed). Suffix tags are stripped
/// from the prediction before tokenization.
pub fn robustness_avoided(
    prediction: &str,
    context: &str,
    threshold: f64,
    stopwords: &StopwordList,
) -> bool {
    let stripped = strip_suffix_tags(prediction);
    let contained = textkit::unigrams(&stripped, true, stopwords);
    let container = textkit::unigrams(context, true, stopwords);
    textkit::containment_fraction(&container, &contained) < threshold
}

/// Normalized exact match against any gold answer; suffix tags are stripped
/// from the prediction first.
pub fn exact_match(prediction: &str, gold: &[String]) -> bool {
    let normalized = normalize_answer(&strip_suffix_tags(prediction));
    gold.iter().any(|g| normalize_answer(g) == normalized)
}

/// Head questions selected from per-model probe files.
#[derive(Debug, Clone, Default)]
pub struct HeadSelection {
    pub ids: std::collections::BTreeSet<String>,
    /// ids missing from at least one probe file, listed and excluded.
    pub misaligned: Vec<String>,
}

/// Select the ids every model answers correctly closed-book (`require_all`),
/// or answered correctly by at least `min_correct` models.
pub fn select_head_questions(
    probe_files: &[std::path::PathBuf],
    require_all: bool,
    min_correct: Option<usize>,
) -> Result<HeadSelection> {
    if probe_files.is_empty() {
        return Err(KaftError::Config("no probe files given".into()));
    }
    let mut per_file: Vec<BTreeMap<String, AnswerQuality>> = Vec::new();
    for path in probe_files {
        let results = corpus::load_jsonl::<ProbeResult>(path)?;
        per_file.push(
            results
                .into_iter()
                .map(|r| (r.example_id, r.quality))
                .collect(),
        );
    }
    let mut all_ids: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for file in &per_file {
        all_ids.extend(file.keys().cloned());
    }
    let needed = if require_all {
        per_file.len()
    } else {
        min_correct.unwrap_or(per_file.len()).min(per_file.len())
    };
    let mut selection = HeadSelection::default();
    for id in all_ids {
        let present = per_file.iter().filter(|f| f.contains_key(&id)).count();
        if present < per_file.len() {
            selection.misaligned.push(id);
            continue;
        }
        let correct = per_file
            .iter()
            .filter(|f| f.get(&id) == Some(&AnswerQuality::Correct))
            .count();
        if correct >= needed {
            selection.ids.insert(id);
        }
    }
    Ok(selection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Controllability,
    Robustness,
    ExactMatch,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Controllability => "controllability",
            Metric::Robustness => "robustness",
            Metric::ExactMatch => "exact_match",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "controllability" => Ok(Metric::Controllability),
            "robustness" => Ok(Metric::Robustness),
            "em" | "exact_match" => Ok(Metric::ExactMatch),
            other => Err(KaftError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleVerdict {
    pub example_id: String,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub rate: f64,
    pub positives: usize,
    pub n: usize,
}

/// Thresholds and versions echoed into every report so runs are
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub controllability_threshold: f64,
    pub robustness_threshold: f64,
    pub stopwords_version: String,
    pub stopwords_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllability: Option<MetricBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<MetricBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<MetricBlock>,
    pub verdicts: Vec<ExampleVerdict>,
    pub config: EvalConfigEcho,
}

impl EvalReport {
    pub fn block(&self) -> &MetricBlock {
        match self.metric {
            Metric::Controllability => self.controllability.as_ref(),
            Metric::Robustness => self.robustness.as_ref(),
            Metric::ExactMatch => self.exact_match.as_ref(),
        }
        .expect("block for the computed metric")
    }

    /// Aligned-column text rendering.
    pub fn render_table(&self) -> String {
        let block = self.block();
        let mut lines = vec![
            format!("{:<18} {:>10} {:>10} {:>10}", "metric", "rate", "positives", "n"),
            format!(
                "{:<18} {:>10.4} {:>10} {:>10}",
                self.metric.as_str(),
                block.rate,
                block.positives,
                block.n
            ),
            String::new(),
            format!(
                "thresholds: controllability > {}, robustness < {}; stopwords {} ({} words)",
                self.config.controllability_threshold,
                self.config.robustness_threshold,
                self.config.stopwords_version,
                self.config.stopwords_count
            ),
        ];
        lines.push(String::new());
        lines.push(format!("{:<40} {:>6}", "example", "hit"));
        for verdict in &self.verdicts {
            lines.push(format!("{:<40} {:>6}", verdict.example_id, verdict.hit));
        }
        lines.join("\n")
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub controllability_threshold: f64,
    pub robustness_threshold: f64,
    pub stopwords: StopwordList,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            controllability_threshold: DEFAULT_CONTROLLABILITY_THRESHOLD,
            robustness_threshold: DEFAULT_ROBUSTNESS_THRESHOLD,
            stopwords: StopwordList::builtin(),
        }
    }
}

/// Score a prediction file against reference slices. Every prediction id
/// must resolve; the reference supplies cf answers, contexts, and gold
/// answers unless the prediction record carries its own.
pub fn evaluate(
    predictions: &[PredictionRecord],
    references: &[SliceRecord],
    metric: Metric,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &SliceRecord> = references
        .iter()
        .map(|r| (r.example.id.as_str(), r))
        .collect();
    let unresolved: Vec<&str> = predictions
        .iter()
        .filter(|p| !by_id.contains_key(p.example_id.as_str()))
        .map(|p| p.example_id.as_str())
        .collect();
    if !unresolved.is_empty() {
        return Err(KaftError::validation(
            unresolved.join(","),
            "example_id",
            "prediction ids do not resolve against the references",
        ));
    }

    let mut verdicts = Vec::with_capacity(predictions.len());
    for prediction in predictions {
        let reference = by_id[prediction.example_id.as_str()];
        let hit = match metric {
            Metric::Controllability => {
                let cf = prediction
                    .cf_answer
                    .as_deref()
                    .or(reference.cf_answer.as_deref())
                    .ok_or_else(|| {
                        KaftError::validation(
                            &prediction.example_id,
                            "cf_answer",
                            "controllability needs a counterfactual answer",
                        )
                    })?;
                controllability_hit(
                    &prediction.prediction,
                    cf,
                    options.controllability_threshold,
                    &options.stopwords,
                )
            }
            Metric::Robustness => {
                let context = prediction
                    .context_used
                    .as_deref()
                    .or(reference.built_context.as_deref())
                    .ok_or_else(|| {
                        KaftError::validation(
                            &prediction.example_id,
                            "context_used",
                            "robustness needs the irrelevant context",
                        )
                    })?;
                robustness_avoided(
                    &prediction.prediction,
                    context,
                    options.robustness_threshold,
                    &options.stopwords,
                )
            }
            Metric::ExactMatch => exact_match(&prediction.prediction, &reference.example.answers),
        };
        verdicts.push(ExampleVerdict {
            example_id: prediction.example_id.clone(),
            hit,
        });
    }

    let positives = verdicts.iter().filter(|v| v.hit).count();
    let n = verdicts.len();
    let block = MetricBlock {
        rate: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
        positives,
        n,
    };
    // Internal consistency: the rate is the mean of the verdicts.
    debug_assert!(n == 0 || (block.rate - positives as f64 / n as f64).abs() < 1e-15);

    let mut report = EvalReport {
        schema_version: corpus::SCHEMA_VERSION,
        metric,
        controllability: None,
        robustness: None,
        exact_match: None,
        verdicts,
        config: EvalConfigEcho {
            controllability_threshold: options.controllability_threshold,
            robustness_threshold: options.robustness_threshold,
            stopwords_version: options.stopwords.version().to_string(),
            stopwords_count: options.stopwords.len(),
        },
    };
    match metric {
        Metric::Controllability => report.controllability = Some(block),
        Metric::Robustness => report.robustness = Some(block),
        Metric::ExactMatch => report.exact_match = Some(block),
    }
    Ok(report)
}

/// Convenience file-level wrapper around [`evaluate`].
pub fn evaluate_files(
    predictions: &Path,
    references: &Path,
    metric: Metric,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let predictions = corpus::load_jsonl::<PredictionRecord>(predictions)?;
    let references = corpus::load_jsonl::<SliceRecord>(references)?;
    evaluate(&predictions, &references, metric, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, QAExample, QaFormat, Relevance, SliceKind, SCHEMA_VERSION};

    const NORMAN_CONTEXT: &str = "In Britain, Norman art primarily survives as stonework or \
metalwork, such as capitals and baptismal fonts. In southern Italy, however, Norman artwork \
survives plentifully in forms strongly influenced by its Greek, Lombard, and Arab forebears. \
Of the royal regalia preserved in Palermo, the crown is Byzantine…";

    fn stop() -> StopwordList {
        StopwordList::builtin()
    }

    #[test]
    fn controllability_on_model_output_rows() {
        // Grounded output covers the counterfactual answer; parametric
        // answers do not.
        assert!(controllability_hit(
            "The Rolling Stones (from context).",
            "The Rolling Stones",
            0.8,
            &stop()
        ));
        assert!(!controllability_hit("Pink Floyd", "The Rolling Stones", 0.8, &stop()));
        assert!(controllability_hit("Courts", "Courts", 0.8, &stop()));
    }

    #[test]
    fn controllability_falls_back_for_stopword_answers() {
        assert!(controllability_hit("the the", "The The", 0.8, &stop()));
        assert!(!controllability_hit("something else", "The The", 0.8, &stop()));
    }

    #[test]
    fn robustness_on_model_output_rows() {
        assert!(robustness_avoided(
            "In museums (irrelevant context).",
            NORMAN_CONTEXT,
            0.5,
            &stop()
        ));
        assert!(!robustness_avoided("stonework or metalwork", NORMAN_CONTEXT, 0.5, &stop()));
        assert!(!robustness_avoided(
            "stonework or metalwork, such as capitals and baptismal fonts",
            NORMAN_CONTEXT,
            0.5,
            &stop()
        ));
        assert!(!robustness_avoided(NORMAN_CONTEXT, NORMAN_CONTEXT, 0.5, &stop()));
    }

    #[test]
    fn exact_match_normalizes_and_strips_tags() {
        assert!(exact_match("Pink Floyd", &["Pink Floyd".into()]));
        assert!(exact_match("pink floyd.", &["Pink Floyd".into()]));
        assert!(exact_match("Pink Floyd (from context).", &["Pink Floyd".into()]));
        assert!(!exact_match("Floyd", &["Pink Floyd".into()]));
    }

    fn reference(id: &str, cf: Option<&str>, context: Option<&str>) -> SliceRecord {
        SliceRecord {
            schema_version: SCHEMA_VERSION,
            example: QAExample {
                schema_version: SCHEMA_VERSION,
                id: id.into(),
                question: "q".into(),
                answers: vec!["Pink Floyd".into()],
                context: None,
                relevance: Some(Relevance::Unknown),
                dataset: Dataset::Triviaqa,
                format: QaFormat::OpenDomain,
                choices: None,
                gold_statements: None,
                triplet: None,
            },
            slice_kind: if cf.is_some() {
                SliceKind::Counterfactual
            } else {
                SliceKind::IrrelevantHard
            },
            built_context: context.map(str::to_string).or(cf.map(|c| format!("about {c}."))),
            cf_answer: cf.map(str::to_string),
            provenance: "test".into(),
        }
    }

    #[test]
    fn evaluate_reports_rates_and_echoes_config() {
        let references = vec![
            reference("a", Some("The Rolling Stones"), None),
            reference("b", Some("Russia"), None),
        ];
        let predictions = vec![
            PredictionRecord {
                schema_version: SCHEMA_VERSION,
                example_id: "a".into(),
                prediction: "The Rolling Stones (from context).".into(),
                context_used: None,
                cf_answer: None,
            },
            PredictionRecord {
                schema_version: SCHEMA_VERSION,
                example_id: "b".into(),
                prediction: "Hungary".into(),
                context_used: None,
                cf_answer: None,
            },
        ];
        let report = evaluate(
            &predictions,
            &references,
            Metric::Controllability,
            &EvalOptions::default(),
        )
        .unwrap();
        let block = report.block();
        assert_eq!((block.positives, block.n), (1, 2));
        assert!((block.rate - 0.5).abs() < 1e-15);
        assert_eq!(report.config.stopwords_version, "v1");
        assert_eq!(report.config.stopwords_count, 179);
        let table = report.render_table();
        assert!(table.contains("controllability"));
        assert!(table.contains("0.5000"));
    }

    #[test]
    fn evaluate_rejects_unresolved_ids() {
        let references = vec![reference("a", Some("x"), None)];
        let predictions = vec![PredictionRecord {
            schema_version: SCHEMA_VERSION,
            example_id: "ghost".into(),
            prediction: "y".into(),
            context_used: None,
            cf_answer: None,
        }];
        let err = evaluate(
            &predictions,
            &references,
            Metric::Controllability,
            &EvalOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn head_selection_intersects_probe_files() {
        use crate::corpus::dump_jsonl;
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, rows: &[(&str, AnswerQuality)]| {
            let path = dir.path().join(name);
            let records: Vec<ProbeResult> = rows
                .iter()
                .map(|(id, q)| ProbeResult {
                    schema_version: SCHEMA_VERSION,
                    example_id: id.to_string(),
                    raw: "x".into(),
                    answer: if *q == AnswerQuality::Abstain { "unsure".into() } else { "x".into() },
                    quality: *q,
                    note: None,
                })
                .collect();
            dump_jsonl(&records, &path).unwrap();
            path
        };
        use AnswerQuality::*;
        let f1 = mk("m1.jsonl", &[("a", Correct), ("b", Correct), ("c", Other)]);
        let f2 = mk("m2.jsonl", &[("a", Correct), ("b", Other), ("c", Correct)]);
        let selection = select_head_questions(&[f1.clone(), f2.clone()], true, None).unwrap();
        assert_eq!(selection.ids.iter().collect::<Vec<_>>(), vec!["a"]);
        assert!(selection.misaligned.is_empty());

        // Disjoint correct sets intersect to nothing.
        let f3 = mk("m3.jsonl", &[("a", Other), ("b", Correct)]);
        let selection = select_head_questions(&[f2, f3], true, None).unwrap();
        assert!(selection.ids.is_empty());
        assert_eq!(selection.misaligned, vec!["c".to_string()]);
    }
}
