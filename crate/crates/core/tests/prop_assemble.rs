//! Assembly and mixture properties: suffix-tag discipline, grid
//! normalization, and sampler determinism/convergence.

use std::collections::BTreeMap;

use proptest::prelude::*;

use kaft_core::assemble::{
    make_target, mixture_ratio, ratio_grid, sample_stream, Assembly, BuildMode, DatasetWeights,
    MixtureSpec, SliceWeight,
};
use kaft_core::corpus::{
    AnswerQuality, Dataset, JsonlRecord, QAExample, QaFormat, Relevance, SliceKind, SliceRecord,
    SCHEMA_VERSION, TAG_FROM_CONTEXT,
};
use kaft_core::probe::ProbeResult;

fn example(id: &str) -> QAExample {
    QAExample {
        schema_version: SCHEMA_VERSION,
        id: id.into(),
        question: "q?".into(),
        answers: vec!["Zzanswer".into()],
        context: None,
        relevance: Some(Relevance::Relevant),
        dataset: Dataset::Squad2,
        format: QaFormat::Extractive,
        choices: None,
        gold_statements: None,
        triplet: None,
    }
}

fn slice(id: &str, kind: SliceKind) -> SliceRecord {
    SliceRecord {
        schema_version: SCHEMA_VERSION,
        example: example(id),
        slice_kind: kind,
        built_context: match kind {
            SliceKind::Empty => None,
            SliceKind::Counterfactual => Some("about Zzfake here.".into()),
            _ => Some("about Zzanswer here.".into()),
        },
        cf_answer: (kind == SliceKind::Counterfactual).then(|| "Zzfake".into()),
        provenance: "prop".into(),
    }
}

fn probe(id: &str, quality: AnswerQuality) -> ProbeResult {
    ProbeResult {
        schema_version: SCHEMA_VERSION,
        example_id: id.into(),
        raw: "x".into(),
        answer: if quality == AnswerQuality::Abstain { "unsure".into() } else { "x".into() },
        quality,
        note: None,
    }
}

fn mixture() -> impl Strategy<Value = MixtureSpec> {
    let slice_weights = prop::collection::vec(0.01f64..10.0, 1..5);
    let datasets = prop::collection::vec((0.01f64..10.0, slice_weights), 1..4);
    (any::<u64>(), datasets).prop_map(|(seed, datasets)| MixtureSpec {
        seed,
        datasets: datasets
            .into_iter()
            .enumerate()
            .map(|(d, (weight, slices))| DatasetWeights {
                tag: format!("d{d}"),
                weight,
                slices: slices
                    .into_iter()
                    .enumerate()
                    .map(|(s, weight)| SliceWeight {
                        tag: format!("s{s}"),
                        weight,
                    })
                    .collect(),
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    /// Every knowledge-aware record ends with exactly one suffix tag and
    /// passes record validation; grounded slices carry "(from context)".
    #[test]
    fn emitted_records_keep_tag_discipline(kind_pick in 0..6usize, quality_pick in 0..3usize) {
        let kind = [
            SliceKind::Relevant,
            SliceKind::IrrelevantEasy,
            SliceKind::IrrelevantHard,
            SliceKind::Empty,
            SliceKind::Counterfactual,
            SliceKind::TwoHop,
        ][kind_pick];
        let quality = [AnswerQuality::Correct, AnswerQuality::Abstain, AnswerQuality::Other][quality_pick];
        let slice = slice("p", kind);
        let probe = probe("p", quality);
        let Assembly::Built(record) = make_target(&slice, Some(&probe), BuildMode::Kaft).unwrap()
        else {
            panic!("kaft mode builds every slice");
        };
        record.validate().unwrap();
        prop_assert!(record.suffix_tag().is_some());
        if kind.is_grounded() {
            prop_assert_eq!(record.suffix_tag(), Some(TAG_FROM_CONTEXT));
        } else {
            prop_assert_ne!(record.suffix_tag(), Some(TAG_FROM_CONTEXT));
        }
    }

    /// The ratio grid of any valid spec sums to one, and each cell matches
    /// the two-factor product.
    #[test]
    fn ratio_grid_is_normalized(spec in mixture()) {
        let grid = ratio_grid(&spec);
        let sum: f64 = grid.iter().map(|(_, _, r)| r).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
        let dataset_sum: f64 = spec.datasets.iter().map(|d| d.weight).sum();
        for dataset in &spec.datasets {
            let slice_sum: f64 = dataset.slices.iter().map(|s| s.weight).sum();
            for s in &dataset.slices {
                let expected = (dataset.weight / dataset_sum) * (s.weight / slice_sum);
                let got = mixture_ratio(&spec, &dataset.tag, &s.tag).unwrap();
                prop_assert!((got - expected).abs() < 1e-15);
                prop_assert!(got > 0.0 && got <= 1.0);
            }
        }
    }

    /// Identical seeds give identical streams; the stream has exactly n
    /// records drawn from the pools.
    #[test]
    fn sampling_is_deterministic(spec in mixture(), n in 0..400usize) {
        let mut pools = BTreeMap::new();
        for (d, s, _) in ratio_grid(&spec) {
            let records: Vec<_> = (0..3)
                .map(|i| {
                    let slice = slice(&format!("{d}-{s}-{i}"), SliceKind::Relevant);
                    match make_target(&slice, None, BuildMode::Kaft).unwrap() {
                        Assembly::Built(r) => r,
                        _ => unreachable!(),
                    }
                })
                .collect();
            pools.insert((d, s), records);
        }
        let a = sample_stream(&pools, &spec, n).unwrap();
        let b = sample_stream(&pools, &spec, n).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
    }
}
