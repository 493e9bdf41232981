//! The seven pipeline stages as library functions: ingest, probe, slices,
//! counterfactual, assemble, mix, eval. Each stage is a pure file-to-file
//! transform under the working directory, writes a manifest, and is skipped
//! on re-runs when its config fingerprint and input/output hashes are
//! unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::json;

use kaft_core::assemble::{self, BuildMode};
use kaft_core::corpus::{
    self, Dataset, QAExample, QaFormat, Relevance, SliceKind, SliceRecord,
    SCHEMA_VERSION,
};
use kaft_core::counterfact::{self, CfVerdict};
use kaft_core::error::{KaftError, Result};
use kaft_core::evalkit::{self, EvalOptions, Metric, PredictionRecord};
use kaft_core::modelio::{
    client_from_endpoint, generate_bulk, normalize_abstain, truncate_output, AbstainConfig,
    GenRequest,
};
use kaft_core::probe::{self, probe_question, ProbeOptions, ProbeResult};
use kaft_core::resources;
use kaft_core::slices as slicekit;

use crate::config::StageContext;
use crate::manifest::{file_sha256, fingerprint, StageManifest};

pub const STAGE_ORDER: [&str; 7] = [
    "ingest",
    "probe",
    "slices",
    "counterfactual",
    "assemble",
    "mix",
    "eval",
];

#[derive(Debug)]
pub enum StageOutcome {
    Ran(StageManifest),
    Skipped,
}

impl StageOutcome {
    pub fn describe(&self) -> &'static str {
        match self {
            StageOutcome::Ran(_) => "ran",
            StageOutcome::Skipped => "skipped (up-to-date)",
        }
    }
}

fn base_command(ctx: &StageContext, stage: &str) -> Vec<String> {
    let mut cmd = vec!["kaft".to_string(), stage.to_string()];
    if let Some(path) = &ctx.config_path {
        cmd.push("--config".into());
        cmd.push(path.to_string_lossy().into_owned());
    }
    cmd.push("--seed".into());
    cmd.push(ctx.seed().to_string());
    if let Some(endpoint) = &ctx.overrides.endpoint {
        cmd.push("--endpoint".into());
        cmd.push(endpoint.clone());
    }
    if let Some(stopwords) = &ctx.overrides.stopwords {
        cmd.push("--stopwords".into());
        cmd.push(stopwords.clone());
    }
    cmd
}

fn input_hashes(pairs: &[(&str, &Path)]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (name, path) in pairs {
        map.insert(name.to_string(), file_sha256(path)?);
    }
    Ok(map)
}

fn finish_stage(
    ctx: &StageContext,
    mut manifest: StageManifest,
    outputs: &[&str],
) -> Result<StageOutcome> {
    for rel in outputs {
        manifest
            .outputs
            .insert(rel.to_string(), file_sha256(&ctx.out(rel))?);
    }
    manifest.write(&ctx.workdir)?;
    Ok(StageOutcome::Ran(manifest))
}

/// Validate the raw corpus and write the normalized file.
pub fn run_ingest(ctx: &StageContext) -> Result<StageOutcome> {
    let input = ctx.resolve(&ctx.config.ingest.input);
    if ctx.config.ingest.input.is_empty() {
        return Err(KaftError::Config("ingest.input is not configured".into()));
    }
    let fp = fingerprint(&json!({"ingest": &ctx.config.ingest}));
    let inputs = input_hashes(&[("corpus", Path::new(&input))])?;
    if StageManifest::allows_skip(&ctx.workdir, "ingest", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let examples: Vec<QAExample> = corpus::load_jsonl(Path::new(&input))?;
    corpus::dump_jsonl(&examples, &ctx.out("normalized.jsonl"))?;

    let mut manifest = StageManifest::new("ingest", ctx.seed(), fp, base_command(ctx, "ingest"));
    manifest.inputs = inputs;
    for example in &examples {
        *manifest
            .counts
            .entry(example.dataset.as_str().to_string())
            .or_default() += 1;
    }
    manifest.counts.insert("total".into(), examples.len() as u64);
    finish_stage(ctx, manifest, &["normalized.jsonl"])
}

fn format_tag(format: QaFormat) -> &'static str {
    match format {
        QaFormat::Extractive => "extractive",
        QaFormat::Cloze => "cloze",
        QaFormat::MultipleChoice => "multiple_choice",
        QaFormat::OpenDomain => "open_domain",
    }
}

/// Probe every example closed-book through the configured endpoint,
/// resumably, one probe spec per question format.
pub fn run_probe(ctx: &StageContext) -> Result<StageOutcome> {
    let normalized = ctx.out("normalized.jsonl");
    let fp = fingerprint(&json!({
        "probe": &ctx.config.probe,
        "endpoint": ctx.endpoint(),
    }));
    let inputs = input_hashes(&[("normalized.jsonl", &normalized)])?;
    if StageManifest::allows_skip(&ctx.workdir, "probe", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let examples: Vec<QAExample> = corpus::load_jsonl(&normalized)?;
    let client = client_from_endpoint(&ctx.endpoint())?;
    let sink = ctx.out("probe.jsonl");

    let mut by_format: BTreeMap<&'static str, Vec<QAExample>> = BTreeMap::new();
    for example in examples {
        by_format.entry(format_tag(example.format)).or_default().push(example);
    }

    let options = ProbeOptions {
        max_tokens: ctx.config.probe.max_tokens,
        max_in_flight: ctx.config.probe.max_in_flight,
        model_tag: ctx.config.probe.model_tag.clone(),
        abstain: AbstainConfig::default(),
    };

    let mut manifest = StageManifest::new("probe", ctx.seed(), fp, base_command(ctx, "probe"));
    manifest.inputs = inputs;
    for (tag, group) in &by_format {
        let designator = ctx.config.probe.specs.get(*tag).ok_or_else(|| {
            KaftError::Config(format!("no probe spec configured for format `{tag}`"))
        })?;
        let spec = resources::probe_spec(&ctx.resolve(designator))?;
        let results = probe::probe_closed_book(group, &spec, client.as_ref(), &sink, &options)?;
        for result in results {
            *manifest
                .counts
                .entry(format!("{tag}:{}", result.quality.as_str()))
                .or_default() += 1;
        }
    }
    finish_stage(ctx, manifest, &["probe.jsonl"])
}

fn context_pool(dataset: Dataset, examples: &[&QAExample]) -> Vec<(String, String)> {
    examples
        .iter()
        .filter_map(|e| match dataset {
            Dataset::Trex => e
                .triplet
                .as_ref()
                .map(|t| (e.id.clone(), slicekit::render_triplet(t))),
            _ => e.context.as_ref().map(|c| (e.id.clone(), c.clone())),
        })
        .collect()
}

/// Construct every context slice for every dataset present in the corpus.
pub fn run_slices(ctx: &StageContext) -> Result<StageOutcome> {
    let normalized = ctx.out("normalized.jsonl");
    let stopwords = resources::stopword_list(&ctx.resolve(&ctx.stopwords_designator()))?;
    let fp = fingerprint(&json!({
        "slices": &ctx.config.slices,
        "seed": ctx.seed(),
        "stopwords": stopwords.version(),
    }));
    let inputs = input_hashes(&[("normalized.jsonl", &normalized)])?;
    if StageManifest::allows_skip(&ctx.workdir, "slices", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let examples: Vec<QAExample> = corpus::load_jsonl(&normalized)?;
    let cfg = &ctx.config.slices.filter;
    let seed = ctx.seed();

    let mut by_dataset: BTreeMap<Dataset, Vec<&QAExample>> = BTreeMap::new();
    for example in &examples {
        by_dataset.entry(example.dataset).or_default().push(example);
    }
    let mut records: Vec<SliceRecord> = Vec::new();
    let mut notes: Vec<String> = Vec::new();

    for (dataset, group) in &by_dataset {
        let pool = context_pool(*dataset, group);
        let statement_pool: Vec<String> = pool.iter().map(|(_, s)| s.clone()).collect();
        let mut seen_bases: BTreeSet<String> = BTreeSet::new();

        for example in group {
            let id = &example.id;
            match dataset {
                Dataset::Squad2 | Dataset::Custom | Dataset::Qasc => {
                    let relevant_ok = *dataset == Dataset::Qasc
                        || example.relevance == Some(Relevance::Relevant);
                    if relevant_ok {
                        match slicekit::build_relevant(
                            example,
                            &statement_pool,
                            cfg,
                            slicekit::derive_seed(seed, &format!("relevant:{id}")),
                        ) {
                            Ok(record) => records.push(record),
                            Err(e) => notes.push(e.to_string()),
                        }
                    }
                    records.extend(slicekit::build_irrelevant_hard(example, &[]));
                    match slicekit::build_irrelevant_easy(
                        example,
                        &pool,
                        slicekit::derive_seed(seed, &format!("easy:{id}")),
                    ) {
                        Ok(record) => records.push(record),
                        Err(e) => notes.push(e.to_string()),
                    }
                    records.push(slicekit::build_empty(example));
                }
                Dataset::Trex => {
                    let distractors: Vec<String> = pool
                        .iter()
                        .filter(|(owner, _)| owner != id)
                        .map(|(_, s)| s.clone())
                        .collect();
                    match slicekit::build_relevant(
                        example,
                        &distractors,
                        cfg,
                        slicekit::derive_seed(seed, &format!("relevant:{id}")),
                    ) {
                        Ok(record) => records.push(record),
                        Err(e) => notes.push(e.to_string()),
                    }
                    match slicekit::build_irrelevant_easy(
                        example,
                        &pool,
                        slicekit::derive_seed(seed, &format!("easy:{id}")),
                    ) {
                        Ok(record) => records.push(record),
                        Err(e) => notes.push(e.to_string()),
                    }
                    records.push(slicekit::build_empty(example));
                }
                Dataset::Triviaqa => {
                    let own_context: Vec<String> =
                        example.context.iter().cloned().collect();
                    records.extend(slicekit::filter_triviaqa_relevant(
                        example,
                        &own_context,
                        cfg,
                        None,
                        &stopwords,
                    )?);
                    records.extend(slicekit::build_irrelevant_hard(example, &own_context));
                    if seen_bases.insert(slicekit::base_id(id).to_string()) {
                        match slicekit::build_irrelevant_easy(
                            example,
                            &pool,
                            slicekit::derive_seed(seed, &format!("easy:{id}")),
                        ) {
                            Ok(record) => records.push(record),
                            Err(e) => notes.push(e.to_string()),
                        }
                        records.push(slicekit::build_empty(example));
                    }
                }
            }
        }

        // Two-hop slices over shared bridge entities.
        if *dataset == Dataset::Trex {
            for left in group.iter() {
                for right in group.iter() {
                    if left.id == right.id {
                        continue;
                    }
                    let (Some(t1), Some(t2)) = (&left.triplet, &right.triplet) else {
                        continue;
                    };
                    if t1.object != t2.subject {
                        continue;
                    }
                    let pair_seed = slicekit::derive_seed(
                        seed,
                        &format!("twohop:{}+{}", left.id, right.id),
                    );
                    let distractors: Vec<String> = {
                        use rand::seq::SliceRandom;
                        use rand::SeedableRng;
                        let mut all: Vec<String> = pool
                            .iter()
                            .filter(|(owner, _)| *owner != left.id && *owner != right.id)
                            .map(|(_, s)| s.clone())
                            .collect();
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(pair_seed);
                        all.shuffle(&mut rng);
                        all.truncate(cfg.distractor_count);
                        all
                    };
                    match slicekit::build_trex_two_hop(t1, t2, &distractors, pair_seed) {
                        Ok(record) => records.push(record),
                        Err(e) => notes.push(e.to_string()),
                    }
                }
            }
        }
    }

    corpus::dump_jsonl(&records, &ctx.out("slices.jsonl"))?;

    let mut manifest = StageManifest::new("slices", seed, fp, base_command(ctx, "slices"));
    manifest.inputs = inputs;
    manifest.notes = notes;
    for record in &records {
        *manifest
            .counts
            .entry(format!(
                "{}:{}",
                record.example.dataset.as_str(),
                record.slice_kind.as_str()
            ))
            .or_default() += 1;
    }
    finish_stage(ctx, manifest, &["slices.jsonl"])
}

/// Generate, validate, and substitute counterfactual answers for every
/// relevant slice of the datasets that carry counterfactuals.
pub fn run_counterfactual(ctx: &StageContext) -> Result<StageOutcome> {
    let slices_path = ctx.out("slices.jsonl");
    let fp = fingerprint(&json!({
        "counterfactual": &ctx.config.counterfactual,
        "endpoint": ctx.endpoint(),
    }));
    let inputs = input_hashes(&[("slices.jsonl", &slices_path)])?;
    if StageManifest::allows_skip(&ctx.workdir, "counterfactual", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let slices: Vec<SliceRecord> = corpus::load_jsonl(&slices_path)?;
    let client = client_from_endpoint(&ctx.endpoint())?;
    let cfg = &ctx.config.counterfactual;
    let stopwords = resources::stopword_list(&ctx.resolve(&ctx.stopwords_designator()))?;

    let mut out: Vec<SliceRecord> = Vec::new();
    let mut manifest =
        StageManifest::new("counterfactual", ctx.seed(), fp, base_command(ctx, "counterfactual"));
    manifest.inputs = inputs;
    let bump = |counts: &mut BTreeMap<String, u64>, key: &str| {
        *counts.entry(key.to_string()).or_default() += 1;
    };

    for slice in slices.iter().filter(|s| s.slice_kind == SliceKind::Relevant) {
        if slice.example.dataset == Dataset::Qasc {
            bump(&mut manifest.counts, "qasc_excluded");
            continue;
        }
        let candidate =
            match counterfact::generate_cf_answer(&slice.example, cfg, client.as_ref()) {
                Ok(candidate) => candidate,
                Err(e) => {
                    bump(&mut manifest.counts, "generation_failed");
                    manifest.notes.push(e.to_string());
                    continue;
                }
            };
        match counterfact::validate_cf_answer(slice.example.canonical_answer(), &candidate, cfg) {
            CfVerdict::Reject(reason) => {
                bump(&mut manifest.counts, &format!("rejected_{reason}"));
                continue;
            }
            CfVerdict::Accept => {}
        }
        match counterfact::counterfactual_slice(slice, &candidate) {
            Ok(record) => {
                bump(&mut manifest.counts, "generated");
                out.push(record);
            }
            Err(e) => {
                bump(&mut manifest.counts, "substitution_failed");
                manifest.notes.push(e.to_string());
            }
        }
    }

    let cf_answers: Vec<String> = out.iter().filter_map(|r| r.cf_answer.clone()).collect();
    let violations =
        counterfact::audit_entity_disjointness(&cfg.fewshot_answers, &cf_answers, &stopwords);
    if !violations.is_empty() {
        manifest.notes.push(format!(
            "entity-disjointness violations vs fewshot pool `{}`: {}",
            cfg.fewshot_pool_tag,
            violations.join(", ")
        ));
    }

    corpus::dump_jsonl(&out, &ctx.out("counterfactual.jsonl"))?;
    finish_stage(ctx, manifest, &["counterfactual.jsonl"])
}

/// Join slices and probe results into training records under the configured
/// build mode.
pub fn run_assemble(ctx: &StageContext) -> Result<StageOutcome> {
    let slices_path = ctx.out("slices.jsonl");
    let cf_path = ctx.out("counterfactual.jsonl");
    let probe_path = ctx.out("probe.jsonl");
    let fp = fingerprint(&json!({"assemble": &ctx.config.assemble}));
    let inputs = input_hashes(&[
        ("slices.jsonl", &slices_path),
        ("counterfactual.jsonl", &cf_path),
        ("probe.jsonl", &probe_path),
    ])?;
    if StageManifest::allows_skip(&ctx.workdir, "assemble", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let mode = BuildMode::parse(&ctx.config.assemble.mode)?;
    let mut slices: Vec<SliceRecord> = corpus::load_jsonl(&slices_path)?;
    slices.extend(corpus::load_jsonl::<SliceRecord>(&cf_path)?);
    let probes: Vec<ProbeResult> = corpus::load_jsonl(&probe_path)?;

    let (records, build_manifest) = assemble::build_dataset(&slices, &probes, mode);
    corpus::dump_jsonl(&records, &ctx.out("kaft.jsonl"))?;
    std::fs::write(
        ctx.out("build_manifest.json"),
        serde_json::to_string_pretty(&build_manifest).expect("manifest serializes"),
    )
    .map_err(|source| KaftError::Io {
        path: ctx.out("build_manifest.json"),
        source,
    })?;

    let mut manifest = StageManifest::new("assemble", ctx.seed(), fp, base_command(ctx, "assemble"));
    manifest.inputs = inputs;
    manifest.counts.insert("in".into(), build_manifest.total_in as u64);
    manifest.counts.insert("out".into(), build_manifest.total_out as u64);
    for (reason, count) in &build_manifest.filtered {
        manifest.counts.insert(format!("filtered_{reason}"), *count as u64);
    }
    manifest
        .counts
        .insert("join_failures".into(), build_manifest.join_failures.len() as u64);
    finish_stage(ctx, manifest, &["kaft.jsonl", "build_manifest.json"])
}

/// Sample the training stream according to the mixture spec.
pub fn run_mix(ctx: &StageContext) -> Result<StageOutcome> {
    let kaft_path = ctx.out("kaft.jsonl");
    let spec_designator = ctx.resolve(&ctx.config.mix.spec);
    let mut spec = resources::mixture_spec(&spec_designator)?;
    spec.seed = ctx.seed();
    let fp = fingerprint(&json!({
        "mix": &ctx.config.mix,
        "seed": ctx.seed(),
        "spec": &spec,
    }));
    let inputs = input_hashes(&[("kaft.jsonl", &kaft_path)])?;
    if StageManifest::allows_skip(&ctx.workdir, "mix", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let records: Vec<corpus::KaftRecord> = corpus::load_jsonl(&kaft_path)?;
    let pools = assemble::build_pools(&records)?;
    let stream = assemble::sample_stream(&pools, &spec, ctx.config.mix.n)?;
    corpus::dump_jsonl(&stream, &ctx.out("mix.jsonl"))?;

    let mut manifest = StageManifest::new("mix", ctx.seed(), fp, base_command(ctx, "mix"));
    manifest.inputs = inputs;
    manifest.counts.insert("emitted".into(), stream.len() as u64);
    for ((dataset, slice), pool) in &pools {
        manifest
            .counts
            .insert(format!("pool:{dataset}/{slice}"), pool.len() as u64);
    }
    finish_stage(ctx, manifest, &["mix.jsonl"])
}

fn input_sequence_for(reference: &SliceRecord) -> String {
    let question = probe_question(&reference.example);
    match reference.built_context.as_deref() {
        Some(context) => format!("{context}\n{question}"),
        None => question,
    }
}

/// Generate predictions for the evaluation slices through the endpoint and
/// score them.
pub fn run_eval(ctx: &StageContext) -> Result<StageOutcome> {
    let slices_path = ctx.out("slices.jsonl");
    let cf_path = ctx.out("counterfactual.jsonl");
    let probe_path = ctx.out("probe.jsonl");
    let stopwords = resources::stopword_list(&ctx.resolve(&ctx.stopwords_designator()))?;
    let fp = fingerprint(&json!({
        "eval": &ctx.config.eval,
        "endpoint": ctx.endpoint(),
        "stopwords": stopwords.version(),
    }));
    let inputs = input_hashes(&[
        ("slices.jsonl", &slices_path),
        ("counterfactual.jsonl", &cf_path),
        ("probe.jsonl", &probe_path),
    ])?;
    if StageManifest::allows_skip(&ctx.workdir, "eval", &fp, &inputs) {
        return Ok(StageOutcome::Skipped);
    }

    let slices: Vec<SliceRecord> = corpus::load_jsonl(&slices_path)?;
    let cf: Vec<SliceRecord> = corpus::load_jsonl(&cf_path)?;
    let probes: Vec<ProbeResult> = corpus::load_jsonl(&probe_path)?;
    let client = client_from_endpoint(&ctx.endpoint())?;

    let heads: BTreeSet<&str> = probes
        .iter()
        .filter(|p| p.quality == corpus::AnswerQuality::Correct)
        .map(|p| p.example_id.as_str())
        .collect();

    let options = EvalOptions {
        controllability_threshold: ctx.config.eval.controllability_threshold,
        robustness_threshold: ctx.config.eval.robustness_threshold,
        stopwords,
    };

    let mut manifest = StageManifest::new("eval", ctx.seed(), fp, base_command(ctx, "eval"));
    manifest.inputs = inputs;
    let mut rendered = Vec::new();
    let mut outputs: Vec<String> = Vec::new();

    for metric_tag in &ctx.config.eval.metrics {
        let metric = Metric::parse(metric_tag)?;
        let references: Vec<SliceRecord> = match metric {
            Metric::Controllability => cf
                .iter()
                .filter(|r| !ctx.config.eval.head_questions || heads.contains(r.example.id.as_str()))
                .cloned()
                .collect(),
            Metric::Robustness => slices
                .iter()
                .filter(|r| {
                    r.example.dataset == Dataset::Squad2
                        && r.slice_kind == SliceKind::IrrelevantHard
                })
                .cloned()
                .collect(),
            Metric::ExactMatch => slices
                .iter()
                .filter(|r| r.slice_kind.is_grounded())
                .cloned()
                .collect(),
        };

        let requests: Vec<GenRequest> = references
            .iter()
            .map(|r| {
                GenRequest::new(
                    input_sequence_for(r),
                    ctx.config.eval.max_tokens,
                    &ctx.config.probe.model_tag,
                )
            })
            .collect();
        let responses = generate_bulk(client.as_ref(), &requests, ctx.config.probe.max_in_flight);
        let mut predictions = Vec::with_capacity(references.len());
        for (reference, response) in references.iter().zip(responses) {
            let text = response.map(|r| r.text).unwrap_or_default();
            predictions.push(PredictionRecord {
                schema_version: SCHEMA_VERSION,
                example_id: reference.example.id.clone(),
                prediction: normalize_abstain(&truncate_output(&text), &AbstainConfig::default()),
                context_used: None,
                cf_answer: None,
            });
        }

        let predictions_rel = format!("predictions_{}.jsonl", metric.as_str());
        corpus::dump_jsonl(&predictions, &ctx.out(&predictions_rel))?;

        let report = evalkit::evaluate(&predictions, &references, metric, &options)?;
        let report_rel = format!("eval_{}.json", metric.as_str());
        std::fs::write(
            ctx.out(&report_rel),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(|source| KaftError::Io {
            path: ctx.out(&report_rel),
            source,
        })?;
        rendered.push(report.render_table());

        let block = report.block();
        manifest
            .counts
            .insert(format!("{}_n", metric.as_str()), block.n as u64);
        manifest
            .counts
            .insert(format!("{}_positives", metric.as_str()), block.positives as u64);
        outputs.push(predictions_rel);
        outputs.push(report_rel);
    }

    std::fs::write(ctx.out("eval_report.txt"), rendered.join("\n\n"))
        .map_err(|source| KaftError::Io {
            path: ctx.out("eval_report.txt"),
            source,
        })?;
    outputs.push("eval_report.txt".into());

    let output_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    finish_stage(ctx, manifest, &output_refs)
}

/// Run one stage by name.
pub fn run_stage(ctx: &StageContext, stage: &str) -> Result<StageOutcome> {
    match stage {
        "ingest" => run_ingest(ctx),
        "probe" => run_probe(ctx),
        "slices" => run_slices(ctx),
        "counterfactual" => run_counterfactual(ctx),
        "assemble" => run_assemble(ctx),
        "mix" => run_mix(ctx),
        "eval" => run_eval(ctx),
        other => Err(KaftError::Config(format!("unknown stage `{other}`"))),
    }
}

/// Run every stage in dependency order, short-circuiting on failure.
/// Returns one (stage, outcome description) line per stage.
pub fn run_pipeline(ctx: &StageContext) -> Result<Vec<(String, String)>> {
    let mut lines = Vec::new();
    for stage in STAGE_ORDER {
        let outcome = run_stage(ctx, stage)?;
        lines.push((stage.to_string(), outcome.describe().to_string()));
    }
    Ok(lines)
}

/// Print the stage plan without touching anything.
pub fn dry_run_plan(ctx: &StageContext) -> Vec<(String, String)> {
    STAGE_ORDER
        .iter()
        .map(|stage| {
            let status = match StageManifest::load(&ctx.workdir, stage) {
                Some(_) => "would check fingerprints (manifest present)",
                None => "would run (no manifest)",
            };
            (stage.to_string(), status.to_string())
        })
        .collect()
}

/// Summarize the manifests and eval reports of a working directory.
pub fn render_report(workdir: &Path) -> Result<String> {
    let mut lines = vec![format!("{:<16} {:<10} {}", "stage", "version", "counts")];
    for stage in STAGE_ORDER {
        match StageManifest::load(workdir, stage) {
            Some(manifest) => {
                let counts: Vec<String> = manifest
                    .counts
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                lines.push(format!(
                    "{:<16} {:<10} {}",
                    manifest.stage,
                    manifest.tool_version,
                    counts.join(" ")
                ));
                if !manifest.notes.is_empty() {
                    for note in &manifest.notes {
                        lines.push(format!("{:<16} note: {note}", ""));
                    }
                }
            }
            None => lines.push(format!("{stage:<16} (not run)")),
        }
    }
    let eval_report = workdir.join("eval_report.txt");
    if eval_report.exists() {
        lines.push(String::new());
        lines.push(std::fs::read_to_string(&eval_report).map_err(|source| KaftError::Io {
            path: eval_report,
            source,
        })?);
    }
    Ok(lines.join("\n"))
}
