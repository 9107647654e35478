use cascadekit::jsonl::{parse_dump, write_dump, Strictness};
use cascadekit_core::{GenerationRecord, Header, LogitsRecord, Record};
use proptest::prelude::*;

fn logits_record(q: usize) -> impl Strategy<Value = Record> {
    (
        "[a-z0-9_-]{1,12}",
        "[a-z]{1,6}",
        prop::collection::vec(-1e6f64..1e6, q),
        prop::option::of(0..q),
        "[a-z]{1,4}",
        prop::option::of(".{0,20}"),
    )
        .prop_map(|(example_id, model_id, logits, label, group, raw_text)| {
            Record::Logits(LogitsRecord {
                example_id,
                model_id,
                logits,
                label,
                group,
                raw_text,
            })
        })
}

fn generation_record() -> impl Strategy<Value = Record> {
    (1usize..8)
        .prop_flat_map(|len| {
            (
                "[a-z0-9]{1,8}",
                prop::collection::vec(any::<u32>(), len),
                prop::collection::vec(1e-300f64..=1.0, len),
                ".{0,16}",
                prop::option::of(".{0,16}"),
            )
        })
        .prop_map(|(example_id, token_ids, token_probs, answer_text, reference_answer)| {
            Record::Generation(GenerationRecord {
                example_id,
                model_id: "gen".into(),
                token_ids,
                token_probs,
                answer_text,
                reference_answer,
                group: "en".into(),
            })
        })
}

fn roundtrip(header: &Header, records: &[Record]) -> Vec<Record> {
    let mut buf = Vec::new();
    write_dump(&mut buf, header, records).unwrap();
    let dump = parse_dump(buf.as_slice(), "mem", Strictness::Strict).unwrap();
    assert_eq!(&dump.header, header);
    assert!(dump.diagnostics.is_empty());
    dump.records
}

proptest! {
    #[test]
    fn logits_dump_roundtrips(
        (q, records) in (2usize..6).prop_flat_map(|q| (Just(q), prop::collection::vec(logits_record(q), 0..20)))
    ) {
        let back = roundtrip(&Header::classification(q), &records);
        // float_roundtrip makes this exact, which is well inside 1e-15.
        prop_assert_eq!(back, records);
    }

    #[test]
    fn generation_dump_roundtrips(records in prop::collection::vec(generation_record(), 0..20)) {
        let back = roundtrip(&Header::generation(), &records);
        prop_assert_eq!(back, records);
    }
}

#[test]
fn lenient_skips_bad_lines_and_keeps_line_numbers() {
    let text = concat!(
        "{\"type\":\"header\",\"mode\":\"classification\",\"num_classes\":2}\n",
        "{\"type\":\"logits\",\"example_id\":\"a\",\"model_id\":\"m\",\"logits\":[1,0],\"group\":\"en\"}\n",
        "{\"type\":\"logits\",\"example_id\":\"b\",\"model_id\":\"m\",\"logits\":[1,0,2],\"group\":\"en\"}\n",
        "not json\n",
        "{\"type\":\"header\",\"mode\":\"generation\"}\n",
    );
    assert!(parse_dump(text.as_bytes(), "t", Strictness::Strict).is_err());
    let dump = parse_dump(text.as_bytes(), "t", Strictness::Lenient).unwrap();
    assert_eq!(dump.records.len(), 1);
    let lines: Vec<usize> = dump.diagnostics.iter().map(|d| d.line).collect();
    assert_eq!(lines, [3, 4, 5]);
}

#[test]
fn header_is_required_even_when_lenient() {
    let rec = "{\"type\":\"logits\",\"example_id\":\"a\",\"model_id\":\"m\",\"logits\":[1,0],\"group\":\"en\"}\n";
    assert!(parse_dump(rec.as_bytes(), "t", Strictness::Lenient).is_err());
    assert!(parse_dump(&b""[..], "t", Strictness::Lenient).is_err());
}
