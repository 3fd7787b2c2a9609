//! Univariate feature scoring (chi-square, ANOVA F, point-biserial Pearson)
//! and top-k selection, plus [`FeatureSpace`], the fitted vectorizer +
//! selector pair that every training split goes through.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textprep::TokenDocument;
use crate::vectorize::{self, FeatureMatrix, VectorizeError, Vocabulary};

pub const DEFAULT_K: usize = 1200;
/// Range of k examined when sweeping feature counts.
pub const K_SWEEP_RANGE: (usize, usize) = (900, 1500);

/// A column whose total sum of squares about its mean is at most this
/// fraction of its raw sum of squares is treated as constant.
pub const DEGENERATE_VARIANCE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreMethod {
    Chi2,
    AnovaF,
    Pearson,
}

impl ScoreMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Chi2 => "chi2",
            ScoreMethod::AnovaF => "anova_f",
            ScoreMethod::Pearson => "pearson",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" => Ok(ScoreMethod::Chi2),
            "anova_f" => Ok(ScoreMethod::AnovaF),
            "pearson" => Ok(ScoreMethod::Pearson),
            other => Err(format!("unknown feature-selection method {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatselError {
    #[error("labels contain a single class")]
    SingleClassInput,
    #[error("{rows} matrix rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("chi-square needs nonnegative values; column {0} has a negative entry")]
    NegativeValue(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub method: ScoreMethod,
    pub scores: Vec<f64>,
    /// False where the score is undefined (zero variance, empty column).
    pub valid: Vec<bool>,
}

impl FeatureScores {
    /// The value ranked by [`select_top_k`].
    pub fn ranking_key(&self, col: usize) -> f64 {
        match self.method {
            ScoreMethod::Pearson => self.scores[col].abs(),
            _ => self.scores[col],
        }
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// CSV with columns `column,term,method,score,valid`.
    pub fn to_csv(&self, vocab: &Vocabulary) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["column", "term", "method", "score", "valid"]).unwrap();
        for (c, (s, v)) in self.scores.iter().zip(&self.valid).enumerate() {
            w.write_record([c.to_string(), vocab.term(c).to_string(), self.method.to_string(), s.to_string(), v.to_string()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

#[derive(Default, Clone, Copy)]
struct ColumnStats {
    sum: [f64; 2],
    nnz: [usize; 2],
    sumsq: f64,
}

/// Scores every column of `matrix` against binary `labels` (1 = include).
pub fn score_features(matrix: &FeatureMatrix, labels: &[u8], method: ScoreMethod) -> Result<FeatureScores, FeatselError> {
    if matrix.n_rows() != labels.len() {
        return Err(FeatselError::LengthMismatch { rows: matrix.n_rows(), labels: labels.len() });
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(FeatselError::SingleClassInput);
    }
    let n_cols = matrix.n_cols();
    let mut stats = vec![ColumnStats::default(); n_cols];
    for (i, &y) in labels.iter().enumerate() {
        let class = (y == 1) as usize;
        let (cols, vals) = matrix.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if method == ScoreMethod::Chi2 && v < 0.0 {
                return Err(FeatselError::NegativeValue(c));
            }
            let s = &mut stats[c];
            s.sum[class] += v;
            s.nnz[class] += 1;
            s.sumsq += v * v;
        }
    }
    let n_class = [n0 as f64, n1 as f64];
    let n = labels.len() as f64;
    let means: Vec<([f64; 2], f64)> = stats
        .iter()
        .map(|s| ([s.sum[0] / n_class[0], s.sum[1] / n_class[1]], (s.sum[0] + s.sum[1]) / n))
        .collect();

    // Second pass: squared deviations, with implicit zeros added per column.
    let mut within = vec![[0.0f64; 2]; n_cols];
    let mut total = vec![0.0f64; n_cols];
    if method != ScoreMethod::Chi2 {
        for (i, &y) in labels.iter().enumerate() {
            let class = (y == 1) as usize;
            let (cols, vals) = matrix.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let (m, g) = means[c];
                within[c][class] += (v - m[class]).powi(2);
                total[c] += (v - g).powi(2);
            }
        }
    }

    let scored: Vec<(f64, bool)> = (0..n_cols)
        .into_par_iter()
        .map(|c| {
            let s = &stats[c];
            let (m, g) = means[c];
            match method {
                ScoreMethod::Chi2 => {
                    let t = s.sum[0] + s.sum[1];
                    if t <= 0.0 {
                        return (0.0, false);
                    }
                    let chi2 = (0..2)
                        .map(|k| {
                            let expected = t * n_class[k] / n;
                            (s.sum[k] - expected).powi(2) / expected
                        })
                        .sum();
                    (chi2, true)
                }
                ScoreMethod::AnovaF | ScoreMethod::Pearson => {
                    let zeros = [n_class[0] - s.nnz[0] as f64, n_class[1] - s.nnz[1] as f64];
                    let ssw: f64 = (0..2).map(|k| within[c][k] + zeros[k] * m[k] * m[k]).sum();
                    let sst = total[c] + (n - (s.nnz[0] + s.nnz[1]) as f64) * g * g;
                    if sst <= DEGENERATE_VARIANCE_RATIO * s.sumsq {
                        return (0.0, false);
                    }
                    if method == ScoreMethod::AnovaF {
                        if labels.len() < 3 {
                            return (0.0, false);
                        }
                        let ssb: f64 = (0..2).map(|k| n_class[k] * (m[k] - g).powi(2)).sum();
                        let msw = ssw / (n - 2.0);
                        let f = if msw == 0.0 { f64::INFINITY } else { ssb / msw };
                        (f, true)
                    } else {
                        let sxy = (n_class[0] * s.sum[1] - n_class[1] * s.sum[0]) / n;
                        let syy = n_class[0] * n_class[1] / n;
                        let r = (sxy / (sst * syy).sqrt()).clamp(-1.0, 1.0);
                        (r, true)
                    }
                }
            }
        })
        .collect();
    let (scores, valid) = scored.into_iter().unzip();
    Ok(FeatureScores { method, scores, valid })
}

/// Sorted column indices kept after selection, with the width of the
/// column space they index into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    kept: Vec<usize>,
    n_source_cols: usize,
}

impl FeatureMask {
    pub fn from_kept(mut kept: Vec<usize>, n_source_cols: usize) -> Self {
        kept.sort_unstable();
        kept.dedup();
        assert!(kept.last().is_none_or(|&c| c < n_source_cols));
        Self { kept, n_source_cols }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn n_source_cols(&self) -> usize {
        self.n_source_cols
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_source_cols as u64).to_le_bytes());
        for &c in &self.kept {
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Keeps the `k` highest-ranked valid columns; ties go to the lower index.
pub fn select_top_k(scores: &FeatureScores, k: usize) -> FeatureMask {
    let mut candidates: Vec<usize> = (0..scores.scores.len()).filter(|&c| scores.valid[c]).collect();
    candidates.sort_by(|&a, &b| scores.ranking_key(b).total_cmp(&scores.ranking_key(a)).then(a.cmp(&b)));
    candidates.truncate(k);
    FeatureMask::from_kept(candidates, scores.scores.len())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureSpaceError {
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error("no column has a defined {0} score")]
    NoValidFeatures(ScoreMethod),
}

/// Vocabulary, idf, scores and mask fitted on a set of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub vocab: Vocabulary,
    pub scores: FeatureScores,
    pub mask: FeatureMask,
    pub k: usize,
}

impl FeatureSpace {
    /// Fits on `train_rows` of `docs`/`labels` only. Rows outside
    /// `train_rows` are never read, so held-out documents may share the
    /// slices.
    pub fn fit(
        docs: &[TokenDocument],
        labels: &[u8],
        train_rows: &[usize],
        method: ScoreMethod,
        k: usize,
    ) -> Result<Self, FeatureSpaceError> {
        let vocab = vectorize::fit_rows(docs, train_rows.iter().copied())?;
        let train_docs: Vec<TokenDocument> = train_rows.iter().map(|&r| docs[r].clone()).collect();
        let train_labels: Vec<u8> = train_rows.iter().map(|&r| labels[r]).collect();
        let matrix = vectorize::transform(&train_docs, &vocab);
        let scores = score_features(&matrix, &train_labels, method)?;
        let mask = select_top_k(&scores, k);
        if mask.is_empty() {
            return Err(FeatureSpaceError::NoValidFeatures(method));
        }
        Ok(Self { vocab, scores, mask, k })
    }

    /// Vectorizes and masks documents into the model's column space.
    pub fn transform(&self, docs: &[TokenDocument]) -> FeatureMatrix {
        vectorize::transform(docs, &self.vocab).select_columns(&self.mask)
    }

    pub fn column_space(&self) -> String {
        vectorize::masked_column_space(&self.vocab.column_space(), &self.mask)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocab.fingerprint().as_bytes());
        h.update(self.scores.method.as_str().as_bytes());
        for (s, v) in self.scores.scores.iter().zip(&self.scores.valid) {
            h.update(s.to_bits().to_le_bytes());
            h.update([*v as u8]);
        }
        h.update(self.mask.fingerprint().as_bytes());
        h.update((self.k as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}
