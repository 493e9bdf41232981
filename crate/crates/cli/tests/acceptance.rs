//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line (visible with `--nocapture`). Tolerances are pinned in the
//! assertions.

#[path = "support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::time::Instant;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use kaft_core::assemble::{
    build_dataset, build_pools, mixture_ratio, ratio_grid, sample_stream, BuildMode, MixtureSpec,
};
use kaft_core::corpus::{
    self, Dataset, JsonlRecord, KaftRecord, QAExample, QaFormat, Relevance, SliceKind,
    SliceRecord, SCHEMA_VERSION,
};
use kaft_core::counterfact::{
    generate_cf_answer, substitute, validate_cf_answer, CfGenConfig, CfVerdict,
};
use kaft_core::evalkit::{controllability_hit, robustness_avoided};
use kaft_core::modelio::{normalize_abstain, truncate_output, AbstainConfig, MockClient};
use kaft_core::probe::ProbeResult;
use kaft_core::textkit::StopwordList;

use support::{fixtures_dir, run_fixture_pipeline};

/// Dataset and slice weights, transcribed by hand for an arithmetic oracle
/// independent of the shipped mixture resource.
const WEIGHTS: &[(&str, f64, &[(&str, f64)])] = &[
    (
        "squad2",
        1.3,
        &[
            ("relevant", 0.8),
            ("counterfactual", 0.1),
            ("original_irrelevant_correct", 0.01),
            ("original_irrelevant_abstain", 0.1),
            ("original_irrelevant_other", 0.1),
            ("empty_correct", 0.33),
            ("empty_abstain", 0.02),
            ("empty_other", 0.05),
            ("sampled_irrelevant_correct", 0.33),
            ("sampled_irrelevant_abstain", 0.02),
            ("sampled_irrelevant_other", 0.03),
        ],
    ),
    (
        "qasc",
        0.3,
        &[("relevant", 0.5), ("irrelevant_correct", 0.25), ("irrelevant_other", 0.02)],
    ),
    (
        "trex",
        0.1,
        &[
            ("relevant", 0.4),
            ("counterfactual", 0.4),
            ("two_hop_relevant", 6.0),
            ("irrelevant_correct", 0.15),
            ("irrelevant_abstain", 0.03),
            ("irrelevant_other", 0.03),
        ],
    ),
    (
        "triviaqa",
        0.2,
        &[
            ("relevant", 0.8),
            ("counterfactual", 0.15),
            ("irrelevant_empty_correct", 0.5),
            ("irrelevant_empty_other", 0.2),
        ],
    ),
];

#[test]
fn acceptance_01_mixture_formula() {
    let started = Instant::now();
    let spec = MixtureSpec::builtin();
    let grid = ratio_grid(&spec);
    assert_eq!(grid.len(), 24, "the weight table spans 24 grid cells");

    let dataset_sum: f64 = WEIGHTS.iter().map(|(_, w, _)| w).sum();
    let mut checked = 0;
    for (dataset, dataset_weight, slices) in WEIGHTS {
        let slice_sum: f64 = slices.iter().map(|(_, w)| w).sum();
        for (slice, slice_weight) in *slices {
            let expected = (dataset_weight / dataset_sum) * (slice_weight / slice_sum);
            let got = mixture_ratio(&spec, dataset, slice).unwrap();
            assert!(
                (got - expected).abs() < 1e-9,
                "{dataset}/{slice}: {got} vs {expected}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 24);

    let total: f64 = grid.iter().map(|(_, _, r)| r).sum();
    assert!((total - 1.0).abs() < 1e-12, "grid sums to {total}");

    // The worked example: the formula gives 0.10253, not the printed 0.0831.
    let qasc_relevant = mixture_ratio(&spec, "qasc", "relevant").unwrap();
    assert!((qasc_relevant - 0.10253).abs() < 1e-5, "formula value {qasc_relevant}");
    assert!(
        (qasc_relevant - 0.0831).abs() > 0.019,
        "the printed value 0.0831 does not satisfy the formula"
    );

    let squad_relevant = mixture_ratio(&spec, "squad2", "relevant").unwrap();
    assert!((squad_relevant - (1.3 / 1.9) * (0.8 / 1.89)).abs() < 1e-12);

    assert!(started.elapsed().as_secs() < 1, "runtime under one second");
    println!("[PASS] mixture formula: 24 cells at 1e-9, grid sums to 1, 0.10253 vs printed 0.0831 documented");
}

fn tiny_record(id: &str, dataset: Dataset, kind: SliceKind) -> KaftRecord {
    KaftRecord {
        schema_version: SCHEMA_VERSION,
        id: id.into(),
        input_sequence: "c\nq".into(),
        target_sequence: match kind {
            SliceKind::IrrelevantEasy | SliceKind::IrrelevantHard => "a (irrelevant context)".into(),
            SliceKind::Empty => "a (empty context)".into(),
            _ => "a (from context)".into(),
        },
        dataset,
        slice_kind: kind,
        answer_quality: None,
    }
}

#[test]
fn acceptance_02_sampler_convergence() {
    let started = Instant::now();

    // Two cells at 0.75/0.25: empirical frequencies within +-0.01 at n=100k.
    let two_cell = MixtureSpec::from_toml_str(
        r#"
seed = 7
[[datasets]]
tag = "squad2"
weight = 1.0
slices = [ { tag = "relevant", weight = 0.75 }, { tag = "counterfactual", weight = 0.25 } ]
"#,
    )
    .unwrap();
    let mut pools = BTreeMap::new();
    pools.insert(
        ("squad2".to_string(), "relevant".to_string()),
        (0..3).map(|i| tiny_record(&format!("r{i}"), Dataset::Squad2, SliceKind::Relevant)).collect::<Vec<_>>(),
    );
    pools.insert(
        ("squad2".to_string(), "counterfactual".to_string()),
        (0..3).map(|i| tiny_record(&format!("c{i}"), Dataset::Squad2, SliceKind::Counterfactual)).collect::<Vec<_>>(),
    );
    let stream = sample_stream(&pools, &two_cell, 100_000).unwrap();
    let relevant = stream.iter().filter(|r| r.slice_kind == SliceKind::Relevant).count();
    let freq = relevant as f64 / 100_000.0;
    assert!((freq - 0.75).abs() <= 0.01, "relevant frequency {freq}");
    assert!((1.0 - freq - 0.25).abs() <= 0.01);

    // Full weight table at n=500k: chi-square p-value above 0.001.
    let spec = MixtureSpec::builtin();
    let grid = ratio_grid(&spec);
    let mut pools = BTreeMap::new();
    for (dataset, slice, _) in &grid {
        let ds = Dataset::parse(dataset).unwrap();
        let kind = match slice.as_str() {
            "relevant" => SliceKind::Relevant,
            "two_hop_relevant" => SliceKind::TwoHop,
            "counterfactual" => SliceKind::Counterfactual,
            s if s.starts_with("empty") => SliceKind::Empty,
            s if s.starts_with("original") => SliceKind::IrrelevantHard,
            _ => SliceKind::IrrelevantEasy,
        };
        let records: Vec<KaftRecord> = (0..2)
            .map(|i| tiny_record(&format!("{dataset}-{slice}-{i}"), ds, kind))
            .collect();
        pools.insert((dataset.clone(), slice.clone()), records);
    }
    let n = 500_000usize;
    let stream = sample_stream(&pools, &spec, n).unwrap();
    let mut observed: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &stream {
        *observed.entry(record.id.rsplit_once('-').unwrap().0).or_default() += 1;
    }
    let mut statistic = 0.0;
    for (dataset, slice, ratio) in &grid {
        let cell = format!("{dataset}-{slice}");
        let observed = *observed.get(cell.as_str()).unwrap_or(&0) as f64;
        let expected = ratio * n as f64;
        statistic += (observed - expected).powi(2) / expected;
    }
    let dof = (grid.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(statistic);
    assert!(p > 0.001, "chi-square statistic {statistic}, p {p}");

    assert!(started.elapsed().as_secs() < 30, "runtime under thirty seconds");
    println!("[PASS] sampler convergence: 0.75/0.25 within +-0.01 at n=100k; chi-square p={p:.4} > 0.001 at n=500k");
}

const NORMAN_CONTEXT: &str = "In Britain, Norman art primarily survives as stonework or \
metalwork, such as capitals and baptismal fonts. In southern Italy, however, Norman artwork \
survives plentifully in forms strongly influenced by its Greek, Lombard, and Arab forebears. \
Of the royal regalia preserved in Palermo, the crown is Byzantine…";

#[test]
fn acceptance_03_model_output_verdicts() {
    let started = Instant::now();
    let stop = StopwordList::builtin();
    let cf_answer = "The Rolling Stones";

    // (controllability output, robustness output) per finetuning approach.
    let rows = [
        ("knowledge-aware", "The Rolling Stones (from context).", "In museums (irrelevant context).", true, true),
        ("noisy finetuning", "Pink Floyd", "stonework or metalwork", false, false),
        ("general-purpose QA", "Pink Floyd", "stonework or metalwork, such as capitals and baptismal fonts", false, false),
        ("pretrained", "Pink Floyd", "As stonework and metalwork, such ascapi-tals and baptismal fonts", false, false),
    ];
    for (label, control_out, robust_out, want_control, want_robust) in rows {
        let control = controllability_hit(control_out, cf_answer, 0.8, &stop);
        let robust = robustness_avoided(robust_out, NORMAN_CONTEXT, 0.5, &stop);
        assert_eq!(control, want_control, "{label} controllability");
        assert_eq!(robust, want_robust, "{label} robustness");
    }
    assert!(started.elapsed().as_secs() < 1);
    println!("[PASS] metric verdicts reproduce the published example rows (true/true vs false/false)");
}

const WARSAW_CONTEXT: &str = "On 25 February 1991, the Warsaw Pact was declared disbanded at \
a meeting of defense and foreign ministers from remaining Pact countries meeting in Hungary.";

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[test]
fn acceptance_04_counterfactual_round_trip() {
    let started = Instant::now();
    let example = QAExample {
        schema_version: SCHEMA_VERSION,
        id: "warsaw".into(),
        question: "In which country did Warsaw Pact officials meet to dissolve the alliance?"
            .into(),
        answers: vec!["Hungary".into()],
        context: Some(WARSAW_CONTEXT.into()),
        relevance: Some(Relevance::Relevant),
        dataset: Dataset::Squad2,
        format: QaFormat::Extractive,
        choices: None,
        gold_statements: None,
        triplet: None,
    };
    let cfg = CfGenConfig::default();
    let prompt = cfg.render_prompt(&example.question, "Hungary");
    let client = MockClient::exact(BTreeMap::from([(prompt, "Russia".to_string())]));

    let candidate = generate_cf_answer(&example, &cfg, &client).unwrap();
    assert_eq!(candidate, "Russia");
    assert_eq!(validate_cf_answer("Hungary", &candidate, &cfg), CfVerdict::Accept);

    let counterfactual = substitute(WARSAW_CONTEXT, &example.answers, &candidate).unwrap();
    let expected = "On 25 February 1991, the Warsaw Pact was declared disbanded at a meeting \
of defense and foreign ministers from remaining Pact countries meeting in Russia.";
    assert_eq!(normalize_ws(&counterfactual), normalize_ws(expected));

    let restored = substitute(&counterfactual, &["Russia".into()], "Hungary").unwrap();
    assert_eq!(restored, WARSAW_CONTEXT);

    assert!(started.elapsed().as_secs() < 1);
    println!("[PASS] counterfactual round-trip: generate -> accept -> substitute reproduces the published pair; swap-back restores the original");
}

#[test]
fn acceptance_05_target_grounding_contract() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(dir.path(), None);

    let records: Vec<KaftRecord> = corpus::load_jsonl(&dir.path().join("kaft.jsonl")).unwrap();
    let probes: Vec<ProbeResult> = corpus::load_jsonl(&dir.path().join("probe.jsonl")).unwrap();
    let probe_by_id: BTreeMap<&str, &ProbeResult> =
        probes.iter().map(|p| (p.example_id.as_str(), p)).collect();

    assert!(!records.is_empty());
    let mut grounded = 0;
    let mut fallback = 0;
    for record in &records {
        let answer = record.target_answer();
        let example_id = record.id.rsplit_once("::").unwrap().0;
        if record.slice_kind.is_grounded() {
            // The context part of the input must contain the target answer.
            let context = record.input_sequence.rsplit_once('\n').map(|(c, _)| c).unwrap_or("");
            assert!(
                kaft_core::textkit::contains_substring_ci(context, answer),
                "{}: answer {answer:?} not grounded in context",
                record.id
            );
            grounded += 1;
        } else {
            let probe = probe_by_id
                .get(example_id)
                .unwrap_or_else(|| panic!("{}: no probe result", record.id));
            assert_eq!(answer, probe.answer, "{}: target must equal the probed answer", record.id);
            fallback += 1;
        }
    }
    assert!(grounded > 0 && fallback > 0);
    println!("[PASS] target grounding: {grounded} grounded targets contained in context, {fallback} fallback targets equal the probed answer, zero violations");
}

#[test]
fn acceptance_06_postprocessing_suite() {
    let started = Instant::now();
    // Truncation marker classes.
    assert_eq!(truncate_output("Pink Floyd. Q: Who is the CEO?"), "Pink Floyd");
    assert_eq!(truncate_output("The Atlantic Ocean. Question: next"), "The Atlantic Ocean");
    assert_eq!(truncate_output("Courts CONTEXT: something"), "Courts");
    assert_eq!(truncate_output("demands A: more"), "demands");
    assert_eq!(truncate_output("Brazil\nQ: next"), "Brazil");
    assert_eq!(truncate_output("<extra_id_1> anything"), "");
    assert_eq!(truncate_output("HgO <extra_id_0>"), "HgO");
    assert_eq!(truncate_output("Brazil"), "Brazil");

    // Abstain classes.
    let cfg = AbstainConfig::default();
    assert_eq!(normalize_abstain("I don't know", &cfg), "unsure");
    assert_eq!(normalize_abstain("i don't know, sorry", &cfg), "unsure");
    assert_eq!(normalize_abstain("?", &cfg), "unsure");
    assert_eq!(normalize_abstain("unsure", &cfg), "unsure");
    assert_eq!(normalize_abstain("Shinzo Abe", &cfg), "Shinzo Abe");

    // Idempotence over 10 000 fuzzed strings.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let vocabulary = [
        "Q:", "Question:", "CONTEXT:", "A:", "\n", "<extra_id_3>", "?", "unsure",
        "I don't know", "Pink Floyd", "...", "x", " ", ".", "The Atlantic Ocean",
    ];
    for _ in 0..10_000 {
        let parts: Vec<&str> = (0..rng.random_range(0..8))
            .map(|_| vocabulary[rng.random_range(0..vocabulary.len())])
            .collect();
        let raw = parts.join("");
        let once = truncate_output(&raw);
        assert_eq!(truncate_output(&once), once, "raw={raw:?}");
        let normalized = normalize_abstain(&once, &cfg);
        assert_eq!(
            normalize_abstain(&truncate_output(&normalized), &cfg),
            normalized,
            "raw={raw:?}"
        );
    }
    assert!(started.elapsed().as_secs() < 5);
    println!("[PASS] postprocessing: marker classes verified; truncate idempotent over 10000 fuzzed strings");
}

#[test]
fn acceptance_07_baseline_mode_audits() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(dir.path(), None);

    let mut slices: Vec<SliceRecord> = corpus::load_jsonl(&dir.path().join("slices.jsonl")).unwrap();
    slices.extend(corpus::load_jsonl::<SliceRecord>(&dir.path().join("counterfactual.jsonl")).unwrap());
    let probes: Vec<ProbeResult> = corpus::load_jsonl(&dir.path().join("probe.jsonl")).unwrap();
    let cf_total = slices.iter().filter(|s| s.slice_kind == SliceKind::Counterfactual).count();
    assert!(cf_total > 0);

    let (records, manifest) = build_dataset(&slices, &probes, BuildMode::RelevantOnly);
    assert!(records
        .iter()
        .all(|r| matches!(r.slice_kind, SliceKind::Relevant | SliceKind::TwoHop)));
    assert!(manifest.filtered["counterfactual_excluded"] > 0);
    for dataset in manifest.counts.values() {
        for kind in dataset.keys() {
            assert!(kind == "relevant" || kind == "two_hop", "unexpected kind {kind}");
        }
    }

    let (records, manifest) = build_dataset(&slices, &probes, BuildMode::NoisyFt);
    assert!(records.iter().all(|r| r.suffix_tag().is_none()), "zero suffix tags");
    assert!(records.iter().all(|r| r.slice_kind != SliceKind::Counterfactual));
    assert_eq!(manifest.filtered["counterfactual_excluded"], cf_total);
    assert!(!manifest.counts.contains_key("counterfactual"));

    let (records, manifest) = build_dataset(&slices, &probes, BuildMode::KaftNocfNotqa);
    assert!(records.iter().all(|r| r.dataset != Dataset::Triviaqa));
    assert!(!manifest.counts.contains_key("triviaqa"), "manifest counts no triviaqa");
    assert!(manifest.filtered["triviaqa_excluded"] > 0);
    assert!(manifest.filtered["counterfactual_excluded"] > 0);

    println!("[PASS] baseline modes: relevant_only keeps only relevant slices; noisy_ft is tagless and counterfactual-free; kaft_nocf_notqa holds zero triviaqa records");
}

#[test]
fn acceptance_08_pipeline_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_fixture_pipeline(a.path(), None);
    run_fixture_pipeline(b.path(), None);

    let listing_a = support::file_listing(a.path());
    let listing_b = support::file_listing(b.path());
    assert_eq!(listing_a, listing_b);
    for rel in &listing_a {
        let bytes_a = std::fs::read(a.path().join(rel)).unwrap();
        let bytes_b = std::fs::read(b.path().join(rel)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{rel:?} differs between identical runs");
    }

    // A different seed changes the sampled stream but never the probe file.
    let c = tempfile::tempdir().unwrap();
    run_fixture_pipeline(c.path(), Some(18));
    assert_eq!(
        std::fs::read(a.path().join("probe.jsonl")).unwrap(),
        std::fs::read(c.path().join("probe.jsonl")).unwrap()
    );
    assert_ne!(
        std::fs::read(a.path().join("mix.jsonl")).unwrap(),
        std::fs::read(c.path().join("mix.jsonl")).unwrap()
    );
    println!("[PASS] determinism: end-to-end runs byte-identical; seed change alters mix output only");
}

#[test]
fn acceptance_09_invariant_suites_present() {
    // The per-module invariant suites run as part of `cargo test --workspace`
    // (the prop_* targets in the core crate); this check pins their case
    // budget so they cannot silently shrink below the gate.
    let tests_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests");
    let mut suites = 0;
    for entry in std::fs::read_dir(&tests_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("prop_") && name.ends_with(".rs") {
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(
                text.contains("ProptestConfig::with_cases(1024)"),
                "{name} must run at least 1000 cases"
            );
            suites += 1;
        }
    }
    assert_eq!(suites, 8, "one property suite per library module");
    println!("[PASS] invariant suites: 8 property suites at 1024 cases each run under cargo test --workspace");
}

#[test]
fn memorization_rate_reproduces_hand_count() {
    let fixture: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures_dir().join("memorization_30.json")).unwrap(),
    )
    .unwrap();
    let closed: Vec<String> = fixture["closed_book"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let cf: Vec<String> = fixture["cf_answers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let expected = fixture["expected_matches"].as_u64().unwrap() as f64 / closed.len() as f64;
    let rate = kaft_core::counterfact::memorization_rate(&closed, &cf).unwrap();
    assert!((rate - expected).abs() < 1e-12);
    // Paper-scale formatting: 2/30 prints as 6.7%.
    assert_eq!(format!("{:.1}%", rate * 100.0), "6.7%");
}

#[test]
fn mix_pools_cover_every_weight_cell() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(dir.path(), None);
    let records: Vec<KaftRecord> = corpus::load_jsonl(&dir.path().join("kaft.jsonl")).unwrap();
    let pools = build_pools(&records).unwrap();
    let grid = ratio_grid(&MixtureSpec::builtin());
    assert_eq!(grid.len(), 24);
    for (dataset, slice, _) in &grid {
        let pool = pools
            .get(&(dataset.clone(), slice.clone()))
            .unwrap_or_else(|| panic!("missing pool {dataset}/{slice}"));
        assert!(!pool.is_empty());
    }
}
