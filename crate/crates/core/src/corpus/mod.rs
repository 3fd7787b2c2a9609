//! Study records, BibTeX ingestion, labeled corpora and reviewer vote tables.

pub mod bibtex;
mod votes;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textprep;

pub use votes::{load_votes, VoteError, VoteRow, VoteTable};

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;

/// Minimum share of English stopwords among title+abstract tokens for a
/// record to count as English.
pub const ENGLISH_STOPWORD_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Include,
    Exclude,
}

impl Label {
    pub fn as_binary(self) -> u8 {
        match self {
            Label::Include => 1,
            Label::Exclude => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    /// Citation key.
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub keywords: String,
    pub year: i32,
    pub authors: Vec<String>,
    pub label: Option<Label>,
}

impl StudyRecord {
    /// Case-folded, whitespace-collapsed title; the second half of the dedup key.
    pub fn title_key(&self) -> String {
        self.title.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
    }

    pub fn is_duplicate_of(&self, other: &StudyRecord) -> bool {
        self.id == other.id || (self.year == other.year && self.title_key() == other.title_key())
    }

    pub fn is_english(&self) -> bool {
        let text = format!("{} {}", self.title, self.abstract_text);
        textprep::stopword_ratio(&text) >= ENGLISH_STOPWORD_RATIO
    }

    /// Renders the record as a BibTeX `@article` entry that [`parse_and_validate`]
    /// reads back field-for-field.
    pub fn to_bibtex(&self) -> String {
        let mut s = format!("@article{{{},\n", self.id);
        s.push_str(&format!("  title = {{{}}},\n", self.title));
        s.push_str(&format!("  author = {{{}}},\n", self.authors.join(" and ")));
        s.push_str(&format!("  year = {},\n", self.year));
        s.push_str(&format!("  abstract = {{{}}},\n", self.abstract_text));
        if !self.keywords.is_empty() {
            s.push_str(&format!("  keywords = {{{}}},\n", self.keywords));
        }
        s.push_str("}\n");
        s
    }
}

pub fn to_bibtex(records: &[StudyRecord]) -> String {
    records.iter().map(StudyRecord::to_bibtex).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    MissingField(String),
    DuplicateEntry,
    NonEnglish,
    EmptyAbstract,
    MalformedYear,
    ParseError(usize),
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorKind::MissingField(name) => write!(f, "MissingField({name})"),
            ErrorKind::DuplicateEntry => f.write_str("DuplicateEntry"),
            ErrorKind::NonEnglish => f.write_str("NonEnglish"),
            ErrorKind::EmptyAbstract => f.write_str("EmptyAbstract"),
            ErrorKind::MalformedYear => f.write_str("MalformedYear"),
            ErrorKind::ParseError(pos) => write!(f, "ParseError({pos})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    /// Citation key, or `@<offset>` when the parser never reached the key.
    pub entry_id: String,
    pub kind: ErrorKind,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.entry_id, self.kind)
    }
}

/// Outcome of reading one `.bib` source, entry by entry.
#[derive(Debug, Default)]
pub struct ParseReport {
    pub records: Vec<StudyRecord>,
    pub errors: Vec<ValidationError>,
    /// Entries seen, including ones that failed to parse.
    pub entry_count: usize,
    /// Entries with at least one error.
    pub rejected_count: usize,
}

fn record_from_entry(entry: &bibtex::RawEntry) -> Result<StudyRecord, Vec<ErrorKind>> {
    let mut kinds = Vec::new();
    let field = |name: &str| entry.fields.get(name).map(String::as_str);

    let title = field("title").unwrap_or("").trim().to_string();
    if title.is_empty() {
        kinds.push(ErrorKind::MissingField("title".into()));
    }
    let year = match field("year") {
        None => {
            kinds.push(ErrorKind::MissingField("year".into()));
            0
        }
        Some(y) => match y.trim().parse::<i32>() {
            Ok(v) if (MIN_YEAR..=MAX_YEAR).contains(&v) => v,
            _ => {
                kinds.push(ErrorKind::MalformedYear);
                0
            }
        },
    };
    let abstract_text = match field("abstract") {
        None => {
            kinds.push(ErrorKind::MissingField("abstract".into()));
            String::new()
        }
        Some(a) if a.trim().is_empty() => {
            kinds.push(ErrorKind::EmptyAbstract);
            String::new()
        }
        Some(a) => a.trim().to_string(),
    };
    let authors = bibtex::split_authors(field("author").unwrap_or(""));
    if authors.is_empty() {
        kinds.push(ErrorKind::MissingField("author".into()));
    }
    if !kinds.is_empty() {
        return Err(kinds);
    }
    Ok(StudyRecord {
        id: entry.key.clone(),
        title,
        abstract_text,
        keywords: field("keywords").unwrap_or("").trim().to_string(),
        year,
        authors,
        label: None,
    })
}

/// Parses and validates a BibTeX document, keeping every entry's outcome.
pub fn parse_report(bib_source: &[u8]) -> ParseReport {
    let scanned = bibtex::scan(bib_source);
    let mut report = ParseReport {
        entry_count: scanned.entries.len() + scanned.errors.len(),
        ..Default::default()
    };
    for e in &scanned.errors {
        report.errors.push(ValidationError {
            entry_id: e.key.clone().unwrap_or_else(|| format!("@{}", e.position)),
            kind: ErrorKind::ParseError(e.position),
        });
        report.rejected_count += 1;
    }
    for entry in &scanned.entries {
        match record_from_entry(entry) {
            Ok(rec) => {
                if report.records.iter().any(|r| r.is_duplicate_of(&rec)) {
                    report.errors.push(ValidationError { entry_id: rec.id, kind: ErrorKind::DuplicateEntry });
                    report.rejected_count += 1;
                } else {
                    report.records.push(rec);
                }
            }
            Err(kinds) => {
                report.rejected_count += 1;
                report.errors.extend(kinds.into_iter().map(|kind| ValidationError { entry_id: entry.key.clone(), kind }));
            }
        }
    }
    report
}

/// Returns every record when all entries are valid, otherwise the complete
/// list of errors.
pub fn parse_and_validate(bib_source: &[u8]) -> Result<Vec<StudyRecord>, Vec<ValidationError>> {
    let report = parse_report(bib_source);
    if report.errors.is_empty() {
        Ok(report.records)
    } else {
        Err(report.errors)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("no {0:?} records left after filtering")]
    EmptyCorpus(Label),
    #[error("record {included_id} (included) duplicates {excluded_id} (excluded)")]
    ConflictingLabel { included_id: String, excluded_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub id: String,
    pub reason: ErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub records: Vec<StudyRecord>,
    pub n_included: usize,
    pub n_excluded: usize,
    pub dropped: Vec<DroppedRecord>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label.map_or(0, Label::as_binary)).collect()
    }

    /// SHA-256 over the records in id order; insensitive to input ordering.
    pub fn fingerprint(&self) -> String {
        let mut sorted: Vec<&StudyRecord> = self.records.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut h = Sha256::new();
        for r in sorted {
            h.update(serde_json::to_vec(r).expect("record serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn drop_reason(r: &StudyRecord) -> Option<ErrorKind> {
    if r.abstract_text.trim().is_empty() {
        Some(ErrorKind::EmptyAbstract)
    } else if !r.is_english() {
        Some(ErrorKind::NonEnglish)
    } else {
        None
    }
}

/// Labels both lists, drops non-English or abstract-less records, and
/// rejects records that appear on both sides. Records are ordered by id so
/// the result does not depend on input order.
pub fn assemble_corpus(included: &[StudyRecord], excluded: &[StudyRecord]) -> Result<LabeledCorpus, CorpusError> {
    let excluded_ids: HashMap<&str, &StudyRecord> = excluded.iter().map(|r| (r.id.as_str(), r)).collect();
    let excluded_titles: HashMap<(String, i32), &StudyRecord> =
        excluded.iter().map(|r| ((r.title_key(), r.year), r)).collect();
    let mut conflicts: Vec<(String, String)> = Vec::new();
    for inc in included {
        let hit = excluded_ids
            .get(inc.id.as_str())
            .or_else(|| excluded_titles.get(&(inc.title_key(), inc.year)));
        if let Some(exc) = hit {
            conflicts.push((inc.id.clone(), exc.id.clone()));
        }
    }
    if let Some((included_id, excluded_id)) = conflicts.into_iter().min() {
        return Err(CorpusError::ConflictingLabel { included_id, excluded_id });
    }

    let mut records = Vec::with_capacity(included.len() + excluded.len());
    let mut dropped = Vec::new();
    for (list, label) in [(included, Label::Include), (excluded, Label::Exclude)] {
        for r in list {
            if let Some(reason) = drop_reason(r) {
                log::info!("dropping {}: {}", r.id, reason);
                dropped.push(DroppedRecord { id: r.id.clone(), reason });
                continue;
            }
            let mut r = r.clone();
            r.label = Some(label);
            records.push(r);
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id).then(a.label.map(Label::as_binary).cmp(&b.label.map(Label::as_binary))));
    dropped.sort_by(|a, b| a.id.cmp(&b.id));

    let n_included = records.iter().filter(|r| r.label == Some(Label::Include)).count();
    let n_excluded = records.len() - n_included;
    if n_included == 0 {
        return Err(CorpusError::EmptyCorpus(Label::Include));
    }
    if n_excluded == 0 {
        return Err(CorpusError::EmptyCorpus(Label::Exclude));
    }
    Ok(LabeledCorpus { records, n_included, n_excluded, dropped })
}

/// Ids that occur more than once across the given record lists.
pub fn duplicate_ids<'a>(lists: impl IntoIterator<Item = &'a [StudyRecord]>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups = BTreeMap::new();
    for list in lists {
        for r in list {
            if !seen.insert(r.id.as_str()) {
                dups.insert(r.id.clone(), ());
            }
        }
    }
    dups.into_keys().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn rec(id: &str, title: &str) -> StudyRecord {
        StudyRecord {
            id: id.into(),
            title: title.into(),
            abstract_text: format!("This is the abstract of {title} and it is written in English."),
            keywords: String::new(),
            year: 2020,
            authors: vec!["Doe, A.".into()],
            label: None,
        }
    }

    const MINIMAL: &str = "@article{k1, title={T}, year=2020, abstract={An abstract.}, author={Doe, A.}}";

    #[test]
    fn minimal_entry_parses() {
        let recs = parse_and_validate(MINIMAL.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "k1");
        assert_eq!(recs[0].year, 2020);
        assert_eq!(recs[0].keywords, "");
    }

    #[test]
    fn missing_abstract_reported() {
        let errs = parse_and_validate(b"@article{k1, title={T}, year=2020, author={Doe, A.}}").unwrap_err();
        assert_eq!(errs, vec![ValidationError { entry_id: "k1".into(), kind: ErrorKind::MissingField("abstract".into()) }]);
    }

    #[test]
    fn duplicate_key_reported() {
        let src = format!("{MINIMAL}\n@article{{k1, title={{Other}}, year=2021, abstract={{B.}}, author={{X}}}}");
        let errs = parse_and_validate(src.as_bytes()).unwrap_err();
        assert_eq!(errs, vec![ValidationError { entry_id: "k1".into(), kind: ErrorKind::DuplicateEntry }]);
    }

    #[test]
    fn duplicate_title_and_year_reported() {
        let src = format!("{MINIMAL}\n@misc{{k2, title={{  t }}, year=2020, abstract={{B.}}, author={{X}}}}");
        let errs = parse_and_validate(src.as_bytes()).unwrap_err();
        assert_eq!(errs[0].kind, ErrorKind::DuplicateEntry);
        assert_eq!(errs[0].entry_id, "k2");
        // Same title, different year: not a duplicate.
        let src = format!("{MINIMAL}\n@misc{{k2, title={{T}}, year=2021, abstract={{B.}}, author={{X}}}}");
        assert_eq!(parse_and_validate(src.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn all_errors_are_reported_not_just_the_first() {
        let src = b"@article{a, title={T}}\n@article{b, title={U}, year=abc, abstract={x}, author={Y}}\n@article{c, year=1850, title={V}, abstract={ }, author={Z}}";
        let errs = parse_and_validate(src).unwrap_err();
        let kinds: Vec<(&str, &ErrorKind)> = errs.iter().map(|e| (e.entry_id.as_str(), &e.kind)).collect();
        assert!(kinds.contains(&("a", &ErrorKind::MissingField("year".into()))));
        assert!(kinds.contains(&("a", &ErrorKind::MissingField("abstract".into()))));
        assert!(kinds.contains(&("a", &ErrorKind::MissingField("author".into()))));
        assert!(errs.iter().any(|e| e.entry_id == "b" && matches!(e.kind, ErrorKind::ParseError(_))));
        assert!(kinds.contains(&("c", &ErrorKind::MalformedYear)));
        assert!(kinds.contains(&("c", &ErrorKind::EmptyAbstract)));
    }

    #[test]
    fn quoted_year_with_bad_range_is_malformed() {
        let errs = parse_and_validate(b"@article{k, title={T}, year={2101}, abstract={A}, author={B}}").unwrap_err();
        assert_eq!(errs[0].kind, ErrorKind::MalformedYear);
    }

    #[test]
    fn counts_for_45_included_83_excluded() {
        let inc: Vec<_> = (0..45).map(|i| rec(&format!("inc{i}"), &format!("Included study {i}"))).collect();
        let exc: Vec<_> = (0..83).map(|i| rec(&format!("exc{i}"), &format!("Excluded study {i}"))).collect();
        let c = assemble_corpus(&inc, &exc).unwrap();
        assert_eq!((c.n_included, c.n_excluded), (45, 83));
        assert!(c.dropped.is_empty());
    }

    #[test]
    fn empty_abstract_dropped() {
        let mut inc = vec![rec("a", "A"), rec("b", "B")];
        inc[1].abstract_text = "   ".into();
        let c = assemble_corpus(&inc, &[rec("c", "C")]).unwrap();
        assert_eq!((c.n_included, c.n_excluded), (1, 1));
        assert_eq!(c.dropped, vec![DroppedRecord { id: "b".into(), reason: ErrorKind::EmptyAbstract }]);
    }

    #[test]
    fn non_english_dropped() {
        let mut inc = vec![rec("a", "A"), rec("b", "B")];
        inc[1].title = "Estudio".into();
        inc[1].abstract_text = "Estudio empírico sobre pruebas automatizadas".into();
        let c = assemble_corpus(&inc, &[rec("c", "C")]).unwrap();
        assert_eq!(c.dropped[0].reason, ErrorKind::NonEnglish);
    }

    #[test]
    fn conflicting_label_detected_by_key_and_by_title() {
        let err = assemble_corpus(&[rec("a", "A")], &[rec("a", "Z")]).unwrap_err();
        assert!(matches!(err, CorpusError::ConflictingLabel { .. }));
        let err = assemble_corpus(&[rec("a", "Same Title")], &[rec("b", "same   title")]).unwrap_err();
        assert_eq!(err, CorpusError::ConflictingLabel { included_id: "a".into(), excluded_id: "b".into() });
    }

    #[test]
    fn empty_class_rejected() {
        assert_eq!(assemble_corpus(&[], &[rec("a", "A")]).unwrap_err(), CorpusError::EmptyCorpus(Label::Include));
        let mut e = rec("b", "B");
        e.abstract_text.clear();
        assert_eq!(assemble_corpus(&[rec("a", "A")], &[e]).unwrap_err(), CorpusError::EmptyCorpus(Label::Exclude));
    }

    #[test]
    fn duplicate_ids_across_lists() {
        let a = vec![rec("x", "X"), rec("y", "Y")];
        let b = vec![rec("y", "Y2"), rec("z", "Z")];
        assert_eq!(duplicate_ids([a.as_slice(), b.as_slice()]), vec!["y".to_string()]);
    }

    fn arb_record() -> impl Strategy<Value = StudyRecord> {
        (
            "[a-z][a-z0-9_]{0,8}",
            "[A-Z][a-z]{1,8}( [a-z]{1,8}){0,5}",
            "[A-Z][a-z]{1,8}( [a-z]{1,8}){1,12}\\.",
            "([a-z]{2,8}(; [a-z]{2,8}){0,3})?",
            1900i32..=2100,
            proptest::collection::vec("[A-Z][a-z]{1,6}, [A-Z]\\.", 1..4),
        )
            .prop_map(|(id, title, abstract_text, keywords, year, authors)| StudyRecord {
                id,
                title,
                abstract_text,
                keywords,
                year,
                authors,
                label: None,
            })
    }

    proptest! {
        #[test]
        fn bibtex_round_trip(records in proptest::collection::vec(arb_record(), 1..6)) {
            let mut uniq: Vec<StudyRecord> = Vec::new();
            for r in records {
                if !uniq.iter().any(|u| u.is_duplicate_of(&r)) {
                    uniq.push(r);
                }
            }
            let parsed = parse_and_validate(to_bibtex(&uniq).as_bytes()).unwrap();
            prop_assert_eq!(parsed, uniq);
        }

        #[test]
        fn every_entry_accounted_for(records in proptest::collection::vec(arb_record(), 0..8), breakage in proptest::collection::vec(0u8..4, 8)) {
            let mut src = String::new();
            for (i, r) in records.iter().enumerate() {
                let mut text = r.to_bibtex();
                match breakage[i] {
                    1 => text = text.replace("  abstract", "  note"),
                    2 => text = text.replace("year = ", "year = {x"),
                    _ => {}
                }
                src.push_str(&text);
                src.push('\n');
            }
            let report = parse_report(src.as_bytes());
            prop_assert_eq!(report.entry_count, records.len());
            prop_assert_eq!(report.records.len() + report.rejected_count, report.entry_count);
            let inc: Vec<StudyRecord> = report.records.iter().step_by(2).cloned().collect();
            let exc: Vec<StudyRecord> = report.records.iter().skip(1).step_by(2).cloned().collect();
            if let Ok(corpus) = assemble_corpus(&inc, &exc) {
                prop_assert_eq!(corpus.len() + corpus.dropped.len() + report.rejected_count, report.entry_count);
            }
        }

        #[test]
        fn assembly_is_order_insensitive(
            records in proptest::collection::vec(arb_record(), 2..10),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut uniq: Vec<StudyRecord> = Vec::new();
            for r in records {
                if !uniq.iter().any(|u| u.is_duplicate_of(&r)) {
                    uniq.push(r);
                }
            }
            prop_assume!(uniq.len() >= 2);
            let (inc, exc) = uniq.split_at(uniq.len() / 2);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut inc2 = inc.to_vec();
            let mut exc2 = exc.to_vec();
            inc2.shuffle(&mut rng);
            exc2.shuffle(&mut rng);
            prop_assert_eq!(assemble_corpus(inc, exc), assemble_corpus(&inc2, &exc2));
        }
    }
}
