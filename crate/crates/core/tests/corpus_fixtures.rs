mod common;

use std::fs;

use slrscreen::corpus::{assemble_corpus, load_votes, parse_and_validate, parse_report, to_bibtex, ErrorKind};

#[test]
fn well_formed_fixtures_parse() {
    for name in ["train_included.bib", "train_excluded.bib", "test_included.bib", "test_excluded.bib"] {
        let records = parse_and_validate(&fs::read(common::fixture(name)).unwrap()).unwrap();
        assert!(!records.is_empty(), "{name}");
        assert!(records.iter().all(|r| r.is_english()), "{name}");
        let again = parse_and_validate(to_bibtex(&records).as_bytes()).unwrap();
        assert_eq!(again, records);
    }
}

#[test]
fn invalid_fixture_reports_every_error() {
    let bytes = fs::read(common::fixture("invalid.bib")).unwrap();
    let errors = parse_and_validate(&bytes).unwrap_err();
    let kinds: Vec<(&str, &ErrorKind)> = errors.iter().map(|e| (e.entry_id.as_str(), &e.kind)).collect();
    assert!(kinds.contains(&("noAbstract", &ErrorKind::MissingField("abstract".into()))));
    assert!(kinds.contains(&("dupKey", &ErrorKind::DuplicateEntry)));
    assert!(kinds.contains(&("badYear", &ErrorKind::MalformedYear)));
    let report = parse_report(&bytes);
    assert_eq!(report.entry_count, 4);
    assert_eq!(report.records.len() + report.rejected_count, report.entry_count);
}

#[test]
fn fixture_corpora_assemble() {
    let read = |n: &str| parse_and_validate(&fs::read(common::fixture(n)).unwrap()).unwrap();
    let train = assemble_corpus(&read("train_included.bib"), &read("train_excluded.bib")).unwrap();
    assert_eq!((train.n_included, train.n_excluded), (4, 4));
    let test = assemble_corpus(&read("test_included.bib"), &read("test_excluded.bib")).unwrap();
    assert_eq!((test.n_included, test.n_excluded), (2, 2));
}

#[test]
fn vote_fixture_loads() {
    let t = load_votes(fs::read(common::fixture("votes_sample.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(t.len(), 5);
    assert_eq!(t.reviewers, ["R1", "R2", "R3"]);
    let first = t.get("First Study").unwrap();
    assert_eq!((first.final_result, first.votes.clone()), (1, vec![2, 1, 2]));
}

#[test]
fn synthetic_corpus_counts() {
    let (inc, exc) = common::synthetic_records(common::SyntheticSpec::default(), 1);
    let corpus = assemble_corpus(&inc, &exc).unwrap();
    assert_eq!((corpus.n_included, corpus.n_excluded), (24, 36));
    assert!(corpus.dropped.is_empty());
}
