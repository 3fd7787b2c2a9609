//! Stratified k-fold plans and grid search over classifier specs.
//!
//! Vectorization and feature selection are re-fit inside every fold's
//! training split, and each fold records the fingerprint of the feature
//! space it used.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalr::{self, Truth};
use crate::featsel::{FeatureSpace, ScoreMethod};
use crate::models::{self, derive_seed, ClassifierSpec};
use crate::textprep::TokenDocument;

pub const DEFAULT_FOLDS: usize = 5;
pub const CV_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TuningError {
    #[error("{n} rows cannot be split into {k} folds")]
    TooFewRows { n: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("smallest class has {0} member(s); cannot form two stratified folds")]
    ClassTooSmall(usize),
    #[error("the grid is empty")]
    EmptyGrid,
    #[error("{docs} documents but {labels} labels")]
    LengthMismatch { docs: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetMetric {
    F1,
    Recall,
}

impl TargetMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMetric::F1 => "f1",
            TargetMetric::Recall => "recall",
        }
    }

    pub fn of(self, m: &evalr::Metrics) -> f64 {
        match self {
            TargetMetric::F1 => m.f_score,
            TargetMetric::Recall => m.recall,
        }
    }
}

impl fmt::Display for TargetMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(TargetMetric::F1),
            "recall" => Ok(TargetMetric::Recall),
            other => Err(format!("unknown target metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(training rows, held-out rows)` for one fold, each ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != fold)
    }
}

/// Deals each class's shuffled rows round-robin over the folds, continuing
/// from where the previous class stopped so fold sizes stay balanced. Every
/// class needs at least two rows so each training split sees both classes.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    if k < 2 {
        return Err(TuningError::InvalidK(k));
    }
    if labels.len() < k {
        return Err(TuningError::TooFewRows { n: labels.len(), k });
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let smallest = members.iter().map(Vec::len).min().unwrap_or(0);
    if smallest < 2 {
        return Err(TuningError::ClassTooSmall(smallest));
    }
    if smallest < k {
        log::warn!("smallest class has {smallest} rows; some of the {k} folds will hold none of it");
    }
    let mut assignments = vec![0; labels.len()];
    let mut offset = 0;
    for (class, rows) in classes.iter().zip(members) {
        let mut rows = rows;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, *class as u64));
        rows.shuffle(&mut rng);
        for (j, r) in rows.iter().enumerate() {
            assignments[*r] = (offset + j) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Feature selection settings re-applied inside each training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub method: ScoreMethod,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub train_rows: usize,
    pub held_out_rows: usize,
    /// `None` when the feature space could not be fitted.
    pub feature_space: Option<String>,
    pub vocab: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub spec: ClassifierSpec,
    pub fold_scores: Vec<f64>,
    /// Negative infinity for failed candidates.
    pub mean: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub target: TargetMetric,
    pub candidates: Vec<CandidateResult>,
    pub folds: Vec<FoldTrace>,
    pub best: usize,
}

impl GridResult {
    pub fn best_spec(&self) -> &ClassifierSpec {
        &self.candidates[self.best].spec
    }

    pub fn best_score(&self) -> f64 {
        self.candidates[self.best].mean
    }

    /// `candidate,params,fold_0..fold_{k-1},mean,error`.
    pub fn to_csv(&self) -> String {
        let k = self.folds.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["candidate".to_string(), "params".to_string()];
        header.extend((0..k).map(|f| format!("fold_{f}")));
        header.push("mean".into());
        header.push("error".into());
        w.write_record(&header).unwrap();
        for (i, c) in self.candidates.iter().enumerate() {
            let mut rec = vec![i.to_string(), c.spec.to_string()];
            for f in 0..k {
                rec.push(c.fold_scores.get(f).map_or(String::new(), |s| format!("{s:.4}")));
            }
            rec.push(format!("{:.4}", c.mean));
            rec.push(c.error.clone().unwrap_or_default());
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

struct PreparedFold {
    train_x: crate::vectorize::FeatureMatrix,
    train_y: Vec<u8>,
    held_out_x: crate::vectorize::FeatureMatrix,
    truth: Truth,
}

fn score_candidate(spec: &ClassifierSpec, folds: &[Result<PreparedFold, String>], target: TargetMetric) -> CandidateResult {
    let mut fold_scores = Vec::with_capacity(folds.len());
    for (f, prepared) in folds.iter().enumerate() {
        let outcome = prepared.as_ref().map_err(Clone::clone).and_then(|p| {
            let model = models::train(spec, &p.train_x, &p.train_y).map_err(|e| e.to_string())?;
            let preds = model.predict_proba(&p.held_out_x).map_err(|e| e.to_string())?;
            let cm = evalr::confusion_at_threshold(&preds, &p.truth, CV_THRESHOLD).map_err(|e| e.to_string())?;
            Ok(target.of(&evalr::metrics_from_confusion(&cm)))
        });
        match outcome {
            Ok(s) => fold_scores.push(s),
            Err(e) => {
                return CandidateResult {
                    spec: *spec,
                    fold_scores,
                    mean: f64::NEG_INFINITY,
                    error: Some(format!("fold {f}: {e}")),
                }
            }
        }
    }
    let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
    CandidateResult { spec: *spec, fold_scores, mean, error: None }
}

/// Cross-validates every spec in `grid` and picks the highest mean target
/// score; ties go to the earlier spec. Candidates that fail score -inf.
pub fn grid_search(
    grid: &[ClassifierSpec],
    docs: &[TokenDocument],
    labels: &[u8],
    features: FeatureConfig,
    folds: &FoldPlan,
    target: TargetMetric,
) -> Result<GridResult, TuningError> {
    if grid.is_empty() {
        return Err(TuningError::EmptyGrid);
    }
    if docs.len() != labels.len() || folds.assignments.len() != labels.len() {
        return Err(TuningError::LengthMismatch { docs: docs.len(), labels: labels.len() });
    }
    let mut traces = Vec::with_capacity(folds.k);
    let mut prepared = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (train_rows, held_out) = folds.split(fold);
        let space = FeatureSpace::fit(docs, labels, &train_rows, features.method, features.n_features);
        traces.push(FoldTrace {
            fold,
            train_rows: train_rows.len(),
            held_out_rows: held_out.len(),
            feature_space: space.as_ref().ok().map(FeatureSpace::fingerprint),
            vocab: space.as_ref().ok().map(|s| s.vocab.fingerprint()),
        });
        prepared.push(space.map_err(|e| e.to_string()).map(|space| {
            let train_docs: Vec<TokenDocument> = train_rows.iter().map(|&r| docs[r].clone()).collect();
            let held_docs: Vec<TokenDocument> = held_out.iter().map(|&r| docs[r].clone()).collect();
            PreparedFold {
                train_x: space.transform(&train_docs),
                train_y: train_rows.iter().map(|&r| labels[r]).collect(),
                held_out_x: space.transform(&held_docs),
                truth: held_out.iter().map(|&r| (docs[r].study_id.clone(), labels[r])).collect::<HashMap<_, _>>(),
            }
        }));
    }

    let candidates: Vec<CandidateResult> = grid.par_iter().map(|spec| score_candidate(spec, &prepared, target)).collect();
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean > candidates[best].mean {
            best = i;
        }
    }
    Ok(GridResult { target, candidates, folds: traces, best })
}
