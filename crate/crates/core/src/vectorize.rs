//! TF-IDF vocabulary fitting and sparse document-term matrices.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1` over the N training documents;
//! entries are raw counts times idf, then each row is L2-normalized.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featsel::FeatureMask;
use crate::textprep::TokenDocument;

pub const VOCAB_FORMAT_HEADER: &str = "# slrscreen vocabulary v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VectorizeError {
    #[error("training set has no tokens")]
    EmptyTrainingSet,
    #[error("vocabulary file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
}

/// SHA-256 of token documents taken in study-id order.
pub fn docs_fingerprint<'a>(docs: impl IntoIterator<Item = &'a TokenDocument>) -> String {
    let mut sorted: Vec<&TokenDocument> = docs.into_iter().collect();
    sorted.sort_by(|a, b| a.study_id.cmp(&b.study_id).then_with(|| a.tokens.cmp(&b.tokens)));
    let mut h = Sha256::new();
    for d in sorted {
        h.update(d.study_id.as_bytes());
        h.update(b"\0");
        for t in &d.tokens {
            h.update(t.as_bytes());
            h.update(b" ");
        }
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    fitted_on: String,
    n_docs: usize,
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, idf: Vec<f64>, fitted_on: String, n_docs: usize) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, index, idf, fitted_on, n_docs }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }

    pub fn fitted_on(&self) -> &str {
        &self.fitted_on
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// SHA-256 over the index map and exact idf bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (t, idf) in self.terms.iter().zip(&self.idf) {
            h.update(t.as_bytes());
            h.update(b"\0");
            h.update(idf.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Identifier of the unmasked column layout this vocabulary produces.
    pub fn column_space(&self) -> String {
        format!("vocab:{}", self.fingerprint())
    }

    /// Flat text form: a header, a metadata comment, then `term\tindex\tidf` per line.
    pub fn to_flat_file(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{VOCAB_FORMAT_HEADER}").unwrap();
        writeln!(out, "# fitted_on {} n_docs {}", self.fitted_on, self.n_docs).unwrap();
        for (i, (t, idf)) in self.terms.iter().zip(&self.idf).enumerate() {
            writeln!(out, "{t}\t{i}\t{idf}").unwrap();
        }
        out
    }

    pub fn from_flat_file(text: &str) -> Result<Self, VectorizeError> {
        let err = |line: usize, message: &str| VectorizeError::VocabFormat { line, message: message.into() };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == VOCAB_FORMAT_HEADER => {}
            _ => return Err(err(1, "missing or unsupported format header")),
        }
        let meta = lines.next().ok_or_else(|| err(2, "missing metadata line"))?.1;
        let parts: Vec<&str> = meta.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "#" || parts[1] != "fitted_on" || parts[3] != "n_docs" {
            return Err(err(2, "malformed metadata line"));
        }
        let fitted_on = parts[2].to_string();
        let n_docs: usize = parts[4].parse().map_err(|_| err(2, "bad n_docs"))?;
        let mut terms = Vec::new();
        let mut idf = Vec::new();
        for (no, line) in lines {
            let line_no = no + 1;
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != 3 {
                return Err(err(line_no, "expected term, index and idf"));
            }
            let index: usize = cells[1].parse().map_err(|_| err(line_no, "bad index"))?;
            if index != terms.len() {
                return Err(err(line_no, "indices must be contiguous from 0"));
            }
            let weight: f64 = cells[2].parse().map_err(|_| err(line_no, "bad idf"))?;
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(err(line_no, "idf must be positive"));
            }
            terms.push(cells[0].to_string());
            idf.push(weight);
        }
        Ok(Self::from_parts(terms, idf, fitted_on, n_docs))
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyData {
    terms: Vec<String>,
    idf: Vec<f64>,
    fitted_on: String,
    n_docs: usize,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        Self::from_parts(d.terms, d.idf, d.fitted_on, d.n_docs)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        Self { terms: v.terms, idf: v.idf, fitted_on: v.fitted_on, n_docs: v.n_docs }
    }
}

/// Learns the vocabulary and smoothed idf from the training documents only.
/// Column indices follow lexicographic term order.
pub fn fit(train_docs: &[TokenDocument]) -> Result<Vocabulary, VectorizeError> {
    fit_rows(train_docs, 0..train_docs.len())
}

/// [`fit`] restricted to the given rows of `docs`; other rows are never read.
pub fn fit_rows(docs: &[TokenDocument], rows: impl IntoIterator<Item = usize>) -> Result<Vocabulary, VectorizeError> {
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut used = Vec::new();
    for r in rows {
        let doc = &docs[r];
        used.push(doc);
        let distinct: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(VectorizeError::EmptyTrainingSet);
    }
    let n = used.len() as f64;
    let (terms, idf): (Vec<String>, Vec<f64>) = df
        .into_iter()
        .map(|(t, d)| (t.to_string(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .unzip();
    Ok(Vocabulary::from_parts(terms, idf, docs_fingerprint(used.iter().copied()), used.len()))
}

/// Compressed-sparse-row matrix with study ids attached to rows and an
/// identifier for the column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    row_ids: Vec<String>,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    column_space: String,
}

impl FeatureMatrix {
    /// Builds from per-row `(column, value)` lists; zeros are dropped and
    /// columns sorted.
    pub fn from_rows(row_ids: Vec<String>, rows: Vec<Vec<(usize, f64)>>, n_cols: usize, column_space: impl Into<String>) -> Self {
        assert_eq!(row_ids.len(), rows.len());
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                assert!(c < n_cols, "column {c} out of range for {n_cols} columns");
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { row_ids, n_cols, indptr, indices, values, column_space: column_space.into() }
    }

    pub fn from_dense(row_ids: Vec<String>, rows: &[Vec<f64>], column_space: impl Into<String>) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let sparse = rows
            .iter()
            .map(|r| {
                assert_eq!(r.len(), n_cols, "ragged dense rows");
                r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect()
            })
            .collect();
        Self::from_rows(row_ids, sparse, n_cols, column_space)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn column_space(&self) -> &str {
        &self.column_space
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|i| {
                let mut dense = vec![0.0; self.n_cols];
                let (cols, vals) = self.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    dense[c] = v;
                }
                dense
            })
            .collect()
    }

    pub fn take_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let ids = rows.iter().map(|&r| self.row_ids[r].clone()).collect();
        let data = rows
            .iter()
            .map(|&r| {
                let (c, v) = self.row(r);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        Self::from_rows(ids, data, self.n_cols, self.column_space.clone())
    }

    /// Keeps the mask's columns, renumbered `0..k` in ascending order. Rows
    /// are not re-normalized.
    pub fn select_columns(&self, mask: &FeatureMask) -> FeatureMatrix {
        let remap: HashMap<usize, usize> = mask.kept().iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let data = (0..self.n_rows())
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter()
                    .zip(v)
                    .filter_map(|(old, val)| remap.get(old).map(|&new| (new, *val)))
                    .collect()
            })
            .collect();
        Self::from_rows(self.row_ids.clone(), data, mask.len(), masked_column_space(&self.column_space, mask))
    }
}

pub fn masked_column_space(base: &str, mask: &FeatureMask) -> String {
    format!("{base}|mask:{}", mask.fingerprint())
}

/// Raw counts times idf, L2-normalized per row. Unknown terms are ignored.
pub fn transform(docs: &[TokenDocument], vocab: &Vocabulary) -> FeatureMatrix {
    let rows = docs
        .iter()
        .map(|doc| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for t in &doc.tokens {
                if let Some(i) = vocab.index_of(t) {
                    *counts.entry(i).or_default() += 1.0;
                }
            }
            let mut row: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c * vocab.idf[i])).collect();
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, v) in &mut row {
                    *v /= norm;
                }
            }
            row
        })
        .collect();
    FeatureMatrix::from_rows(
        docs.iter().map(|d| d.study_id.clone()).collect(),
        rows,
        vocab.len(),
        vocab.column_space(),
    )
}
