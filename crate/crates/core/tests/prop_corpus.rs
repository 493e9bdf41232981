//! Round-trip and validation-totality properties of the record schemas.

use proptest::prelude::*;
use tempfile::tempdir;

use kaft_core::corpus::{
    dump_jsonl, load_jsonl, Dataset, KaftRecord, QAExample, QaFormat, Relevance, SliceKind,
    SliceRecord, Triplet, SCHEMA_VERSION, TAG_EMPTY, TAG_FROM_CONTEXT, TAG_IRRELEVANT,
};

fn word() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,10}"
}

fn text() -> impl Strategy<Value = String> {
    // Printable ASCII plus a few multi-byte codepoints to keep UTF-8 honest.
    "[ -~éß…]{1,60}".prop_filter("non-empty after trim", |s| !s.trim().is_empty())
}

prop_compose! {
    fn qa_example()(
        id in "[a-z0-9-]{1,16}",
        question in text(),
        answers in prop::collection::vec(text(), 1..4),
        context in prop::option::of(text()),
        relevance in prop::option::of(prop_oneof![
            Just(Relevance::Relevant),
            Just(Relevance::Irrelevant),
            Just(Relevance::Unknown)
        ]),
        format_pick in 0..3u8,
        subject in word(),
        relation in word(),
        choice_extra in prop::collection::vec(word(), 1..4),
    ) -> QAExample {
        let mut example = QAExample {
            schema_version: SCHEMA_VERSION,
            id,
            question,
            answers,
            context,
            relevance,
            dataset: Dataset::Custom,
            format: QaFormat::Extractive,
            choices: None,
            gold_statements: None,
            triplet: None,
        };
        match format_pick {
            0 => example.format = QaFormat::OpenDomain,
            1 => {
                example.format = QaFormat::MultipleChoice;
                let mut choices = choice_extra;
                choices.push(example.answers[0].clone());
                example.choices = Some(choices);
            }
            _ => {
                example.format = QaFormat::Cloze;
                example.question = format!("{} ___ .", subject);
                example.dataset = Dataset::Trex;
                example.triplet = Some(Triplet::new(subject, relation, example.answers[0].clone()));
            }
        }
        example
    }
}

fn slice_record(example: QAExample, pick: u8, filler: String) -> SliceRecord {
    let (kind, built_context, cf_answer) = match pick % 4 {
        0 => (SliceKind::Relevant, Some(format!("{} {}", filler, example.answers[0])), None),
        1 => (SliceKind::Empty, None, None),
        2 => (SliceKind::IrrelevantEasy, Some(filler), None),
        _ => (SliceKind::IrrelevantHard, Some(filler), None),
    };
    SliceRecord {
        schema_version: SCHEMA_VERSION,
        example,
        slice_kind: kind,
        built_context,
        cf_answer,
        provenance: "prop".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn qa_examples_round_trip(example in qa_example()) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        dump_jsonl(&[example.clone()], &path).unwrap();
        let loaded: Vec<QAExample> = load_jsonl(&path).unwrap();
        prop_assert_eq!(loaded, vec![example]);
    }

    #[test]
    fn slice_records_round_trip(example in qa_example(), pick in 0..4u8, filler in "[a-z ]{5,30}") {
        let record = slice_record(example, pick, filler);
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        dump_jsonl(&[record.clone()], &path).unwrap();
        let loaded: Vec<SliceRecord> = load_jsonl(&path).unwrap();
        prop_assert_eq!(loaded, vec![record]);
    }

    #[test]
    fn kaft_records_round_trip(
        id in "[a-z0-9:-]{1,20}",
        answer in "[A-Za-z ]{1,20}",
        input in "[ -~]{1,60}",
        kind_pick in 0..6usize,
    ) {
        let kind = [
            SliceKind::Relevant,
            SliceKind::IrrelevantEasy,
            SliceKind::IrrelevantHard,
            SliceKind::Empty,
            SliceKind::Counterfactual,
            SliceKind::TwoHop,
        ][kind_pick];
        let tag = match kind {
            SliceKind::Relevant | SliceKind::Counterfactual | SliceKind::TwoHop => TAG_FROM_CONTEXT,
            SliceKind::IrrelevantEasy | SliceKind::IrrelevantHard => TAG_IRRELEVANT,
            SliceKind::Empty => TAG_EMPTY,
        };
        let record = KaftRecord {
            schema_version: SCHEMA_VERSION,
            id,
            input_sequence: input,
            target_sequence: format!("{answer} {tag}"),
            dataset: Dataset::Squad2,
            slice_kind: kind,
            answer_quality: None,
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        dump_jsonl(&[record.clone()], &path).unwrap();
        let loaded: Vec<KaftRecord> = load_jsonl(&path).unwrap();
        let expected_answer =
            &loaded[0].target_sequence[..loaded[0].target_sequence.len() - tag.len() - 1];
        prop_assert_eq!(loaded[0].target_answer(), expected_answer.trim_end());
        prop_assert_eq!(loaded, vec![record]);
    }

    /// Mutated lines never load silently: each mutation class is rejected.
    #[test]
    fn mutated_lines_never_load(example in qa_example(), mutation in 0..5u8, junk in "[a-z_]{3,10}") {
        let line = serde_json::to_string(&example).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&line).unwrap();
        let object = value.as_object_mut().unwrap();
        let mutated = match mutation {
            0 => {
                object.remove("question");
                value.to_string()
            }
            1 => {
                object["answers"] = serde_json::json!([]);
                value.to_string()
            }
            2 => {
                object.insert(junk, serde_json::json!(true));
                value.to_string()
            }
            3 => {
                object["schema_version"] = serde_json::json!(99);
                value.to_string()
            }
            _ => {
                let mut cut = line.len() / 2;
                while !line.is_char_boundary(cut) {
                    cut -= 1;
                }
                line[..cut].to_string()
            }
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, mutated).unwrap();
        prop_assert!(load_jsonl::<QAExample>(&path).is_err());
    }
}
