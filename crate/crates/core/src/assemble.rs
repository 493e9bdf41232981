//! Assembly of training pairs from context slices plus probe results, the
//! baseline dataset variants, and mixture-weighted stream sampling.
//!
//! Target encoding for the knowledge-aware modes: grounded slices (relevant,
//! two-hop, counterfactual) fit the answer implied by the context and carry
//! "(from context)"; irrelevant and empty slices fit the pretrained model's
//! probed answer and carry "(irrelevant context)" / "(empty context)". The
//! separator between context and question is a single newline; the suffix
//! tag is separated from the answer by a single space.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    AnswerQuality, Dataset, KaftRecord, SliceKind, SliceRecord, SCHEMA_VERSION, TAG_EMPTY,
    TAG_FROM_CONTEXT, TAG_IRRELEVANT,
};
use crate::error::{KaftError, Result};
use crate::probe::{probe_question, ProbeResult};

/// The shipped default mixture weights.
pub const DEFAULT_MIXTURE: &str = include_str!("../resources/mixture_table8.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Full knowledge-aware targets.
    Kaft,
    /// The ground-truth label regardless of context relevance; counterfactual
    /// slices are excluded.
    NoisyFt,
    /// Only relevant (and two-hop) slices, ground-truth labels.
    RelevantOnly,
    /// Knowledge-aware targets without counterfactual slices.
    KaftNocf,
    /// As `kaft_nocf`, additionally dropping every triviaqa record.
    KaftNocfNotqa,
}

impl BuildMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BuildMode::Kaft => "kaft",
            BuildMode::NoisyFt => "noisy_ft",
            BuildMode::RelevantOnly => "relevant_only",
            BuildMode::KaftNocf => "kaft_nocf",
            BuildMode::KaftNocfNotqa => "kaft_nocf_notqa",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "kaft" => Ok(BuildMode::Kaft),
            "noisy_ft" => Ok(BuildMode::NoisyFt),
            "relevant_only" => Ok(BuildMode::RelevantOnly),
            "kaft_nocf" => Ok(BuildMode::KaftNocf),
            "kaft_nocf_notqa" => Ok(BuildMode::KaftNocfNotqa),
            other => Err(KaftError::Config(format!("unknown build mode `{other}`"))),
        }
    }

    fn is_knowledge_aware(&self) -> bool {
        matches!(self, BuildMode::Kaft | BuildMode::KaftNocf | BuildMode::KaftNocfNotqa)
    }
}

/// One assembled slice: either a training record or a counted filter reason.
#[derive(Debug, Clone)]
pub enum Assembly {
    Built(KaftRecord),
    Filtered(&'static str),
}

/// Encode one slice (plus its probe result where required) into a training
/// pair under the given mode.
pub fn make_target(
    slice: &SliceRecord,
    probe: Option<&ProbeResult>,
    mode: BuildMode,
) -> Result<Assembly> {
    let example = &slice.example;
    let kind = slice.slice_kind;

    match mode {
        BuildMode::NoisyFt if kind == SliceKind::Counterfactual => {
            return Ok(Assembly::Filtered("counterfactual_excluded"));
        }
        BuildMode::RelevantOnly if !matches!(kind, SliceKind::Relevant | SliceKind::TwoHop) => {
            return Ok(Assembly::Filtered(if kind == SliceKind::Counterfactual {
                "counterfactual_excluded"
            } else {
                "non_relevant_excluded"
            }));
        }
        BuildMode::KaftNocf | BuildMode::KaftNocfNotqa if kind == SliceKind::Counterfactual => {
            return Ok(Assembly::Filtered("counterfactual_excluded"));
        }
        _ => {}
    }
    if mode == BuildMode::KaftNocfNotqa && example.dataset == Dataset::Triviaqa {
        return Ok(Assembly::Filtered("triviaqa_excluded"));
    }

    let target_sequence = if mode.is_knowledge_aware() {
        match kind {
            SliceKind::Relevant | SliceKind::TwoHop => {
                format!("{} {TAG_FROM_CONTEXT}", example.canonical_answer())
            }
            SliceKind::Counterfactual => {
                let cf = slice.cf_answer.as_deref().ok_or_else(|| {
                    KaftError::validation(&example.id, "cf_answer", "counterfactual slice without cf_answer")
                })?;
                format!("{cf} {TAG_FROM_CONTEXT}")
            }
            SliceKind::IrrelevantEasy | SliceKind::IrrelevantHard => {
                let probed = require_probe(slice, probe)?;
                format!("{} {TAG_IRRELEVANT}", probed.answer)
            }
            SliceKind::Empty => {
                let probed = require_probe(slice, probe)?;
                format!("{} {TAG_EMPTY}", probed.answer)
            }
        }
    } else {
        example.canonical_answer().to_string()
    };

    let question = probe_question(example);
    let input_sequence = match slice.built_context.as_deref() {
        Some(context) => format!("{context}\n{question}"),
        None => question,
    };

    let answer_quality = match kind {
        SliceKind::IrrelevantEasy | SliceKind::IrrelevantHard | SliceKind::Empty => {
            probe.map(|p| p.quality)
        }
        _ => None,
    };

    Ok(Assembly::Built(KaftRecord {
        schema_version: SCHEMA_VERSION,
        id: format!("{}::{}", example.id, kind.as_str()),
        input_sequence,
        target_sequence,
        dataset: example.dataset,
        slice_kind: kind,
        answer_quality,
    }))
}

fn require_probe<'a>(slice: &SliceRecord, probe: Option<&'a ProbeResult>) -> Result<&'a ProbeResult> {
    probe.ok_or_else(|| {
        KaftError::validation(
            &slice.example.id,
            "probe",
            format!("{} slice requires a probe result", slice.slice_kind.as_str()),
        )
    })
}

/// Per-build accounting emitted next to every assembled dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildManifest {
    pub mode: String,
    pub total_in: usize,
    pub total_out: usize,
    /// dataset -> slice kind -> quality ("-" when not applicable) -> count
    pub counts: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>,
    /// filter reason -> count
    pub filtered: BTreeMap<String, usize>,
    /// ids whose required probe result was missing
    pub join_failures: Vec<String>,
}

/// Assemble every admissible slice into a training record, joining probe
/// results by example id. Join failures are listed in the manifest and the
/// record skipped.
pub fn build_dataset(
    slices: &[SliceRecord],
    probes: &[ProbeResult],
    mode: BuildMode,
) -> (Vec<KaftRecord>, BuildManifest) {
    let probe_by_id: BTreeMap<&str, &ProbeResult> =
        probes.iter().map(|p| (p.example_id.as_str(), p)).collect();

    let mut manifest = BuildManifest {
        mode: mode.as_str().into(),
        total_in: slices.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for slice in slices {
        let probe = probe_by_id.get(slice.example.id.as_str()).copied();
        match make_target(slice, probe, mode) {
            Ok(Assembly::Built(record)) => {
                let quality = record
                    .answer_quality
                    .map(|q| q.as_str().to_string())
                    .unwrap_or_else(|| "-".into());
                *manifest
                    .counts
                    .entry(record.dataset.as_str().into())
                    .or_default()
                    .entry(record.slice_kind.as_str().into())
                    .or_default()
                    .entry(quality)
                    .or_default() += 1;
                records.push(record);
            }
            Ok(Assembly::Filtered(reason)) => {
                *manifest.filtered.entry(reason.into()).or_default() += 1;
            }
            Err(_) => {
                manifest.join_failures.push(slice.example.id.clone());
            }
        }
    }
    manifest.total_out = records.len();
    (records, manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceWeight {
    pub tag: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetWeights {
    pub tag: String,
    pub weight: f64,
    pub slices: Vec<SliceWeight>,
}

/// Dataset weights and per-slice weights, plus the sampling seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub seed: u64,
    pub datasets: Vec<DatasetWeights>,
}

impl MixtureSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: MixtureSpec =
            toml::from_str(text).map_err(|e| KaftError::Config(format!("bad mixture spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The shipped default weights.
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_MIXTURE).expect("builtin mixture spec parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(KaftError::Config("mixture spec has no datasets".into()));
        }
        let mut dataset_tags = std::collections::BTreeSet::new();
        for dataset in &self.datasets {
            if !dataset_tags.insert(&dataset.tag) {
                return Err(KaftError::Config(format!("duplicate dataset tag `{}`", dataset.tag)));
            }
            if !(dataset.weight > 0.0) {
                return Err(KaftError::Config(format!(
                    "dataset `{}` weight must be strictly positive",
                    dataset.tag
                )));
            }
            if dataset.slices.is_empty() {
                return Err(KaftError::Config(format!("dataset `{}` has no slices", dataset.tag)));
            }
            let mut slice_tags = std::collections::BTreeSet::new();
            for slice in &dataset.slices {
                if !slice_tags.insert(&slice.tag) {
                    return Err(KaftError::Config(format!(
                        "duplicate slice tag `{}` under `{}`",
                        slice.tag, dataset.tag
                    )));
                }
                if !(slice.weight > 0.0) {
                    return Err(KaftError::Config(format!(
                        "slice `{}/{}` weight must be strictly positive",
                        dataset.tag, slice.tag
                    )));
                }
            }
        }
        Ok(())
    }

    fn dataset(&self, tag: &str) -> Result<&DatasetWeights> {
        self.datasets
            .iter()
            .find(|d| d.tag == tag)
            .ok_or_else(|| KaftError::UnknownTag(format!("dataset `{tag}`")))
    }
}

/// `R(d, s)`: the product of the normalized dataset-level rate and the
/// normalized slice-level rate.
pub fn mixture_ratio(spec: &MixtureSpec, dataset: &str, slice: &str) -> Result<f64> {
    let dataset_sum: f64 = spec.datasets.iter().map(|d| d.weight).sum();
    let d = spec.dataset(dataset)?;
    let slice_sum: f64 = d.slices.iter().map(|s| s.weight).sum();
    let s = d
        .slices
        .iter()
        .find(|s| s.tag == slice)
        .ok_or_else(|| KaftError::UnknownTag(format!("slice `{dataset}/{slice}`")))?;
    Ok((d.weight / dataset_sum) * (s.weight / slice_sum))
}

/// Every (dataset, slice) cell with its sampling ratio, in spec order.
pub fn ratio_grid(spec: &MixtureSpec) -> Vec<(String, String, f64)> {
    let dataset_sum: f64 = spec.datasets.iter().map(|d| d.weight).sum();
    let mut grid = Vec::new();
    for dataset in &spec.datasets {
        let slice_sum: f64 = dataset.slices.iter().map(|s| s.weight).sum();
        for slice in &dataset.slices {
            grid.push((
                dataset.tag.clone(),
                slice.tag.clone(),
                (dataset.weight / dataset_sum) * (slice.weight / slice_sum),
            ));
        }
    }
    grid
}

/// Map an assembled record to its mixture slice tag. Irrelevant and empty
/// slices are conditioned on the probed answer quality; datasets without a
/// dedicated abstain cell fold abstain into other, and datasets without
/// dedicated empty cells fold empty into their irrelevant cells.
pub fn mixture_slice_tag(record: &KaftRecord) -> Result<String> {
    let quality = |fold_abstain: bool| -> Result<&'static str> {
        let q = record.answer_quality.ok_or_else(|| {
            KaftError::UnknownTag(format!(
                "record `{}` has no answer_quality for slice conditioning",
                record.id
            ))
        })?;
        Ok(match (q, fold_abstain) {
            (AnswerQuality::Abstain, true) => "other",
            (q, _) => q.as_str(),
        })
    };
    let tag = match record.slice_kind {
        SliceKind::Relevant => "relevant".to_string(),
        SliceKind::TwoHop => "two_hop_relevant".to_string(),
        SliceKind::Counterfactual => "counterfactual".to_string(),
        kind => match record.dataset {
            Dataset::Squad2 | Dataset::Custom => match kind {
                SliceKind::IrrelevantHard => format!("original_irrelevant_{}", quality(false)?),
                SliceKind::IrrelevantEasy => format!("sampled_irrelevant_{}", quality(false)?),
                _ => format!("empty_{}", quality(false)?),
            },
            Dataset::Trex => format!("irrelevant_{}", quality(false)?),
            Dataset::Qasc => format!("irrelevant_{}", quality(true)?),
            Dataset::Triviaqa => format!("irrelevant_empty_{}", quality(true)?),
        },
    };
    Ok(tag)
}

/// Group records into per-(dataset, slice tag) pools for stream sampling.
pub fn build_pools(records: &[KaftRecord]) -> Result<BTreeMap<(String, String), Vec<KaftRecord>>> {
    let mut pools: BTreeMap<(String, String), Vec<KaftRecord>> = BTreeMap::new();
    for record in records {
        let tag = mixture_slice_tag(record)?;
        pools
            .entry((record.dataset.as_str().to_string(), tag))
            .or_default()
            .push(record.clone());
    }
    Ok(pools)
}

/// Emit `n` records by seeded categorical draws over the ratio grid; within
/// a cell the pool cycles in shuffled order, reshuffling each epoch. Fully
/// deterministic given the spec's seed.
pub fn sample_stream(
    pools: &BTreeMap<(String, String), Vec<KaftRecord>>,
    spec: &MixtureSpec,
    n: usize,
) -> Result<Vec<KaftRecord>> {
    spec.validate()?;
    let grid = ratio_grid(spec);
    for (dataset, slice, _) in &grid {
        let key = (dataset.clone(), slice.clone());
        if pools.get(&key).is_none_or(|pool| pool.is_empty()) {
            return Err(KaftError::Config(format!(
                "empty pool for mixture cell `{dataset}/{slice}` with positive ratio"
            )));
        }
    }
    for key in pools.keys() {
        if !grid.iter().any(|(d, s, _)| *d == key.0 && *s == key.1) {
            return Err(KaftError::Config(format!(
                "input pool `{}/{}` is not covered by the mixture grid",
                key.0, key.1
            )));
        }
    }

    struct CellState<'a> {
        pool: &'a [KaftRecord],
        order: Vec<usize>,
        cursor: usize,
        rng: ChaCha8Rng,
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = grid.iter().map(|(_, _, r)| *r).collect();
    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| KaftError::Config(format!("bad mixture ratios: {e}")))?;

    let mut cells: Vec<CellState> = grid
        .iter()
        .enumerate()
        .map(|(i, (dataset, slice, _))| {
            let pool = pools
                .get(&(dataset.clone(), slice.clone()))
                .expect("pool presence checked")
                .as_slice();
            let mut cell_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1 + i as u64));
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut cell_rng);
            CellState {
                pool,
                order,
                cursor: 0,
                rng: cell_rng,
            }
        })
        .collect();

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cell = &mut cells[chooser.sample(&mut rng)];
        if cell.cursor == cell.order.len() {
            cell.order.shuffle(&mut cell.rng);
            cell.cursor = 0;
        }
        out.push(cell.pool[cell.order[cell.cursor]].clone());
        cell.cursor += 1;
    }
    Ok(out)
}
