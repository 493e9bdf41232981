//! Construction of relevant, easy-irrelevant, hard-irrelevant, empty, and
//! two-hop context slices per dataset family, with the relevance filters.
//!
//! Every builder is a pure function of (inputs, rng_seed): byte-identical
//! outputs across runs and platforms. Drivers derive per-example seeds as
//! `seed ^ hash(example id)` so sharding never changes the output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    Dataset, JsonlRecord, QAExample, QaFormat, Relevance, SliceKind, SliceRecord, Triplet,
    SCHEMA_VERSION,
};
use crate::error::{KaftError, Result};
use crate::textkit::{self, StopwordList};

/// Sampling attempts before easy-irrelevant construction gives up; keeps
/// tiny corpora from looping forever.
pub const RESAMPLE_CAP: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceFilterConfig {
    /// Clause (a): a kept context must contain some answer string verbatim.
    pub require_answer_containment: bool,
    /// Clause (b): minimum fraction of question unigrams (stopwords removed)
    /// the context must cover. 0 disables the clause, which together with no
    /// entailment client degrades to the naive exact-match filter.
    pub min_question_overlap: f64,
    /// Clause (c): minimum entailment score when a client is supplied.
    pub entailment_threshold: Option<f64>,
    /// Distractor statements mixed into TReX contexts.
    pub distractor_count: usize,
}

impl Default for RelevanceFilterConfig {
    fn default() -> Self {
        Self {
            require_answer_containment: true,
            min_question_overlap: 0.3,
            entailment_threshold: None,
            distractor_count: 4,
        }
    }
}

impl RelevanceFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_question_overlap) {
            return Err(KaftError::Config("min_question_overlap must be in [0,1]".into()));
        }
        if let Some(t) = self.entailment_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(KaftError::Config("entailment_threshold must be in [0,1]".into()));
            }
        }
        if self.distractor_count == 0 {
            return Err(KaftError::Config("distractor_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scores whether a premise logically entails a hypothesis. Integrating a
/// real model is deployment configuration; the bundled implementation is a
/// constant.
pub trait EntailmentClient: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> f64;
}

/// Mock entailment client returning a fixed score.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEntailment(pub f64);

impl EntailmentClient for ConstantEntailment {
    fn score(&self, _premise: &str, _hypothesis: &str) -> f64 {
        self.0
    }
}

/// Seed for one example: global seed xor a stable hash of the id.
pub fn derive_seed(global_seed: u64, example_id: &str) -> u64 {
    let digest = Sha256::digest(example_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    global_seed ^ u64::from_le_bytes(bytes)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The id prefix before any `#`; retrieved contexts of one question share a
/// base id.
pub fn base_id(id: &str) -> &str {
    id.split('#').next().unwrap_or(id)
}

/// Render a knowledge-base triplet as a statement; relation underscores
/// become spaces.
pub fn render_triplet(triplet: &Triplet) -> String {
    format!(
        "{} {} {}.",
        triplet.subject,
        triplet.relation.replace('_', " "),
        triplet.object
    )
}

fn split_statements(context: &str) -> Vec<String> {
    context
        .split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| format!("{s}."))
        .collect()
}

fn join_statements(statements: &[String]) -> String {
    statements.join(" ")
}

fn slice(example: &QAExample, kind: SliceKind, context: Option<String>, provenance: String) -> SliceRecord {
    SliceRecord {
        schema_version: SCHEMA_VERSION,
        example: example.clone(),
        slice_kind: kind,
        built_context: context,
        cf_answer: None,
        provenance,
    }
}

fn answer_in_context(example: &QAExample, context: &str) -> bool {
    example
        .answers
        .iter()
        .any(|a| textkit::contains_substring_ci(context, a))
}

/// Build the relevant slice for one example.
///
/// squad2: the gold context passes through (requires the dataset's own
/// relevant label). trex: the triplet statement mixed with sampled
/// distractors, order shuffled. qasc: one randomly chosen gold statement
/// inserted into the retrieved-statement context at a seeded position.
pub fn build_relevant(
    example: &QAExample,
    pool: &[String],
    cfg: &RelevanceFilterConfig,
    rng_seed: u64,
) -> Result<SliceRecord> {
    cfg.validate()?;
    let mut rng = rng_for(rng_seed);
    match example.dataset {
        Dataset::Squad2 | Dataset::Custom => {
            let context = example
                .context
                .as_deref()
                .filter(|c| !c.is_empty())
                .ok_or_else(|| KaftError::skip(&example.id, "no gold context"))?;
            if example.relevance != Some(Relevance::Relevant) {
                return Err(KaftError::skip(&example.id, "context not labeled relevant"));
            }
            Ok(slice(
                example,
                SliceKind::Relevant,
                Some(context.to_string()),
                "gold context pass-through".into(),
            ))
        }
        Dataset::Trex => {
            let triplet = example
                .triplet
                .as_ref()
                .ok_or_else(|| KaftError::skip(&example.id, "no triplet statement"))?;
            let statement = render_triplet(triplet);
            let take = cfg.distractor_count.min(pool.len());
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            let mut statements: Vec<String> = vec![statement];
            statements.extend(order.into_iter().take(take).map(|i| pool[i].clone()));
            statements.shuffle(&mut rng);
            Ok(slice(
                example,
                SliceKind::Relevant,
                Some(join_statements(&statements)),
                format!("triplet statement + {take} sampled distractors, seed {rng_seed}"),
            ))
        }
        Dataset::Qasc => {
            let golds = example
                .gold_statements
                .as_deref()
                .filter(|g| !g.is_empty())
                .ok_or_else(|| KaftError::skip(&example.id, "no gold statements"))?;
            let retrieved = example.context.as_deref().unwrap_or_default();
            let gold = golds[rng.random_range(0..golds.len())].clone();
            let mut statements = split_statements(retrieved);
            let at = rng.random_range(0..=statements.len());
            statements.insert(at, ensure_period(&gold));
            let built = join_statements(&statements);
            if !answer_in_context(example, &built) {
                return Err(KaftError::Construction {
                    id: example.id.clone(),
                    message: "built relevant context does not contain any answer string".into(),
                });
            }
            Ok(slice(
                example,
                SliceKind::Relevant,
                Some(built),
                format!("retrieved statements + one gold statement at seeded position, seed {rng_seed}"),
            ))
        }
        Dataset::Triviaqa => Err(KaftError::skip(
            &example.id,
            "triviaqa relevant contexts come from filter_triviaqa_relevant",
        )),
    }
}

fn ensure_period(statement: &str) -> String {
    let trimmed = statement.trim();
    if trimmed.ends_with('.') {
        trimmed.to_string()
    } else {
        format!("{trimmed}.")
    }
}

/// Keep a retrieved context iff (a) it contains some answer string verbatim,
/// (b) it covers at least `min_question_overlap` of the question unigrams
/// (stopwords removed), and (c) an entailment client, when supplied, scores
/// context -> question + answer at or above the threshold.
///
/// With `min_question_overlap = 0` and no entailment client this degrades to
/// the naive exact-match filter (the EM-filter ablation).
pub fn filter_triviaqa_relevant(
    example: &QAExample,
    retrieved: &[String],
    cfg: &RelevanceFilterConfig,
    entailment: Option<&dyn EntailmentClient>,
    stopwords: &StopwordList,
) -> Result<Vec<SliceRecord>> {
    cfg.validate()?;
    let question_bag = textkit::unigrams(&example.question, true, stopwords);
    let hypothesis = format!("{} {}", example.question, example.canonical_answer());
    let mut kept = Vec::new();
    for context in retrieved {
        if cfg.require_answer_containment && !answer_in_context(example, context) {
            continue;
        }
        let context_bag = textkit::unigrams(context, true, stopwords);
        let overlap = textkit::containment_fraction(&context_bag, &question_bag);
        if overlap < cfg.min_question_overlap {
            continue;
        }
        if let Some(client) = entailment {
            let threshold = cfg.entailment_threshold.unwrap_or(0.5);
            if client.score(context, &hypothesis) < threshold {
                continue;
            }
        }
        kept.push(slice(
            example,
            SliceKind::Relevant,
            Some(context.clone()),
            format!("answer containment + question overlap {overlap:.3} filter"),
        ));
    }
    Ok(kept)
}

/// Sample one context from a different example (seeded); the sample must
/// fail the answer-containment test, resampling up to [`RESAMPLE_CAP`] times.
pub fn build_irrelevant_easy(
    example: &QAExample,
    corpus_contexts: &[(String, String)],
    rng_seed: u64,
) -> Result<SliceRecord> {
    let own_base = base_id(&example.id);
    let candidates: Vec<&(String, String)> = corpus_contexts
        .iter()
        .filter(|(owner, _)| base_id(owner) != own_base)
        .collect();
    if candidates.is_empty() {
        return Err(KaftError::Construction {
            id: example.id.clone(),
            message: "no foreign contexts available to sample".into(),
        });
    }
    let mut rng = rng_for(rng_seed);
    for _ in 0..RESAMPLE_CAP {
        let (owner, context) = candidates[rng.random_range(0..candidates.len())];
        if !answer_in_context(example, context) {
            return Ok(slice(
                example,
                SliceKind::IrrelevantEasy,
                Some(context.clone()),
                format!("sampled from {owner}, seed {rng_seed}"),
            ));
        }
    }
    Err(KaftError::Construction {
        id: example.id.clone(),
        message: format!("no answer-free context found in {RESAMPLE_CAP} samples"),
    })
}

/// Hard-irrelevant contexts: squad2 passes through contexts the dataset
/// itself labels irrelevant; triviaqa keeps retrieved contexts in which no
/// answer paraphrase appears verbatim.
pub fn build_irrelevant_hard(example: &QAExample, retrieved: &[String]) -> Vec<SliceRecord> {
    match example.dataset {
        Dataset::Squad2 | Dataset::Custom => {
            if example.relevance == Some(Relevance::Irrelevant) {
                if let Some(context) = example.context.as_deref().filter(|c| !c.is_empty()) {
                    return vec![slice(
                        example,
                        SliceKind::IrrelevantHard,
                        Some(context.to_string()),
                        "human-labeled irrelevant context".into(),
                    )];
                }
            }
            Vec::new()
        }
        Dataset::Triviaqa => retrieved
            .iter()
            .filter(|context| !answer_in_context(example, context))
            .map(|context| {
                slice(
                    example,
                    SliceKind::IrrelevantHard,
                    Some(context.clone()),
                    "retrieved context with no answer paraphrase".into(),
                )
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// The empty slice: the bare question with no context.
pub fn build_empty(example: &QAExample) -> SliceRecord {
    slice(example, SliceKind::Empty, None, "no context provided".into())
}

/// Build a two-hop relevant slice from two triplets sharing a bridge entity
/// (`t1.object == t2.subject`). The synthesized cloze question mentions
/// `t1.subject`, masks `t2.object`, and never names the bridge.
pub fn build_trex_two_hop(
    t1: &Triplet,
    t2: &Triplet,
    pool: &[String],
    rng_seed: u64,
) -> Result<SliceRecord> {
    if t1.object != t2.subject {
        return Err(KaftError::Config(format!(
            "two-hop triplets must share a bridge entity: {:?} vs {:?}",
            t1.object, t2.subject
        )));
    }
    let question = format!(
        "The entity that {} {} also {} ___ .",
        t1.subject,
        t1.relation.replace('_', " "),
        t2.relation.replace('_', " ")
    );
    let mut hasher = Sha256::new();
    hasher.update(render_triplet(t1).as_bytes());
    hasher.update(render_triplet(t2).as_bytes());
    let digest = hasher.finalize();
    let example = QAExample {
        schema_version: SCHEMA_VERSION,
        id: format!("twohop-{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3]),
        question,
        answers: vec![t2.object.clone()],
        context: None,
        relevance: Some(Relevance::Relevant),
        dataset: Dataset::Trex,
        format: QaFormat::Cloze,
        choices: None,
        gold_statements: None,
        triplet: Some(t2.clone()),
    };
    let mut statements = vec![render_triplet(t1), render_triplet(t2)];
    statements.extend(pool.iter().cloned());
    let mut rng = rng_for(rng_seed);
    statements.shuffle(&mut rng);
    let record = slice(
        &example,
        SliceKind::TwoHop,
        Some(join_statements(&statements)),
        format!("two-hop over bridge entity, seed {rng_seed}"),
    );
    record.example.validate()?;
    Ok(record)
}
