//! Classifier settings, training, calibrated probabilities and the
//! persisted model bundle.

pub mod forest;
pub mod platt;
pub mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Label;
use crate::featsel::FeatureSpace;
use crate::tuning;
use crate::vectorize::FeatureMatrix;

pub use forest::{DecisionTree, ForestParams, RandomForest};
pub use platt::PlattParams;
pub use svm::{LinearSvm, SvmParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Folds used to collect out-of-fold SVM scores for calibration.
pub const CALIBRATION_FOLDS: usize = 3;

/// SplitMix64 over `seed ^ stream`, used to give trees, epochs and folds
/// independent generator seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("training matrix has no nonzero entries")]
    DegenerateMatrix,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
    #[error("feature columns do not match the model (expected {expected}, got {found})")]
    MaskMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    RandomForest,
    LinearSvm,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "rf",
            ClassifierKind::LinearSvm => "svm",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rf" => Ok(ClassifierKind::RandomForest),
            "svm" => Ok(ClassifierKind::LinearSvm),
            other => Err(format!("unknown classifier {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hyperparameters {
    RandomForest(ForestParams),
    LinearSvm(SvmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
}

impl ClassifierSpec {
    pub fn random_forest(params: ForestParams, seed: u64) -> Self {
        Self { hyperparameters: Hyperparameters::RandomForest(params), seed, class_weighting: false }
    }

    pub fn linear_svm(params: SvmParams, seed: u64) -> Self {
        Self { hyperparameters: Hyperparameters::LinearSvm(params), seed, class_weighting: false }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self.hyperparameters {
            Hyperparameters::RandomForest(_) => ClassifierKind::RandomForest,
            Hyperparameters::LinearSvm(_) => ClassifierKind::LinearSvm,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match &self.hyperparameters {
            Hyperparameters::RandomForest(p) => {
                if p.n_trees == 0 {
                    return Err(ModelError::InvalidSpec("n_trees must be at least 1".into()));
                }
                if p.min_samples_leaf == 0 {
                    return Err(ModelError::InvalidSpec("min_samples_leaf must be at least 1".into()));
                }
                if p.features_per_split == Some(0) {
                    return Err(ModelError::InvalidSpec("features_per_split must be at least 1".into()));
                }
            }
            Hyperparameters::LinearSvm(p) => {
                if !(p.c > 0.0 && p.c.is_finite()) {
                    return Err(ModelError::InvalidSpec("C must be positive".into()));
                }
                if p.epochs == 0 {
                    return Err(ModelError::InvalidSpec("epochs must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.hyperparameters {
            Hyperparameters::RandomForest(p) => {
                let depth = p.max_depth.map_or("none".to_string(), |d| d.to_string());
                let per_split = p.features_per_split.map_or("sqrt".to_string(), |k| k.to_string());
                write!(
                    f,
                    "rf n_trees={} max_depth={depth} min_samples_leaf={} features_per_split={per_split} bootstrap={}",
                    p.n_trees, p.min_samples_leaf, p.bootstrap
                )?;
            }
            Hyperparameters::LinearSvm(p) => write!(f, "svm c={} epochs={}", p.c, p.epochs)?,
        }
        write!(f, " class_weighting={} seed={}", self.class_weighting, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub study_id: String,
    pub probability: f64,
}

impl Prediction {
    pub fn decision(&self, threshold: f64) -> Label {
        if self.probability >= threshold {
            Label::Include
        } else {
            Label::Exclude
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learned {
    Forest(RandomForest),
    Svm { svm: LinearSvm, calibrator: PlattParams },
}

/// A trained classifier bound to the column layout it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedClassifier {
    pub spec: ClassifierSpec,
    pub learned: Learned,
    pub column_space: String,
    pub n_features: usize,
}

fn class_weights(labels: &[u8], enabled: bool) -> [f64; 2] {
    if !enabled {
        return [1.0, 1.0];
    }
    let n = labels.len() as f64;
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    [n / (2.0 * (n - n1)), n / (2.0 * n1)]
}

/// Row indices sorted by study id; training only ever sees rows in this
/// order, so permuting the input does not change the model.
fn canonical_order(x: &FeatureMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    order.sort_by(|&a, &b| x.row_ids()[a].cmp(&x.row_ids()[b]));
    order
}

fn svm_rows(x: &FeatureMatrix, order: &[usize]) -> Vec<svm::SparseRow> {
    order
        .iter()
        .map(|&r| {
            let (c, v) = x.row(r);
            (c.to_vec(), v.to_vec())
        })
        .collect()
}

fn fit_svm_scores(rows: &[svm::SparseRow], labels: &[u8], n_features: usize, params: &SvmParams, weighting: bool, seed: u64) -> LinearSvm {
    let cw = class_weights(labels, weighting);
    let sw: Vec<f64> = labels.iter().map(|&y| cw[y as usize]).collect();
    LinearSvm::fit(rows, labels, &sw, n_features, params, seed)
}

/// Decision scores for each row from models that never saw it. Falls back
/// to in-sample scores when a class is too small to stratify.
fn out_of_fold_scores(rows: &[svm::SparseRow], labels: &[u8], n_features: usize, params: &SvmParams, weighting: bool, seed: u64) -> Vec<f64> {
    let plan = tuning::stratified_folds(labels, CALIBRATION_FOLDS, derive_seed(seed, u64::MAX));
    match plan {
        Ok(plan) if plan.k >= 2 => {
            let mut scores = vec![0.0; rows.len()];
            for fold in 0..plan.k {
                let (train_idx, test_idx) = plan.split(fold);
                let tr_rows: Vec<svm::SparseRow> = train_idx.iter().map(|&i| rows[i].clone()).collect();
                let tr_labels: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
                let model = fit_svm_scores(&tr_rows, &tr_labels, n_features, params, weighting, derive_seed(seed, fold as u64));
                for &i in &test_idx {
                    scores[i] = model.decision(&rows[i].0, &rows[i].1);
                }
            }
            scores
        }
        _ => {
            log::warn!("too few rows per class for calibration folds; calibrating on training scores");
            let model = fit_svm_scores(rows, labels, n_features, params, weighting, seed);
            rows.iter().map(|(c, v)| model.decision(c, v)).collect()
        }
    }
}

/// Fits the classifier described by `spec` on a masked feature matrix.
pub fn train(spec: &ClassifierSpec, x: &FeatureMatrix, y: &[u8]) -> Result<FittedClassifier, ModelError> {
    spec.validate()?;
    if x.n_rows() != y.len() {
        return Err(ModelError::LengthMismatch { rows: x.n_rows(), labels: y.len() });
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    if n1 == 0 || n1 == y.len() {
        return Err(ModelError::SingleClassInput);
    }
    if x.nnz() == 0 {
        return Err(ModelError::DegenerateMatrix);
    }
    let order = canonical_order(x);
    let labels: Vec<u8> = order.iter().map(|&r| y[r]).collect();
    let learned = match &spec.hyperparameters {
        Hyperparameters::RandomForest(p) => {
            let dense = x.to_dense();
            let rows: Vec<Vec<f64>> = order.iter().map(|&r| dense[r].clone()).collect();
            let cols = forest::Columns::from_rows(&rows, x.n_cols());
            let cw = class_weights(&labels, spec.class_weighting);
            Learned::Forest(RandomForest::fit(&cols, &labels, cw, p, spec.seed))
        }
        Hyperparameters::LinearSvm(p) => {
            let rows = svm_rows(x, &order);
            let svm = fit_svm_scores(&rows, &labels, x.n_cols(), p, spec.class_weighting, spec.seed);
            let oof = out_of_fold_scores(&rows, &labels, x.n_cols(), p, spec.class_weighting, spec.seed);
            let calibrator = platt::fit(&oof, &labels);
            Learned::Svm { svm, calibrator }
        }
    };
    Ok(FittedClassifier { spec: *spec, learned, column_space: x.column_space().to_string(), n_features: x.n_cols() })
}

impl FittedClassifier {
    fn check_columns(&self, x: &FeatureMatrix) -> Result<(), ModelError> {
        if x.column_space() != self.column_space || x.n_cols() != self.n_features {
            return Err(ModelError::MaskMismatch { expected: self.column_space.clone(), found: x.column_space().to_string() });
        }
        Ok(())
    }

    /// Raw SVM decision values; `None` for forests.
    pub fn decision_scores(&self, x: &FeatureMatrix) -> Result<Option<Vec<f64>>, ModelError> {
        self.check_columns(x)?;
        Ok(match &self.learned {
            Learned::Svm { svm, .. } => Some(
                (0..x.n_rows())
                    .map(|i| {
                        let (c, v) = x.row(i);
                        svm.decision(c, v)
                    })
                    .collect(),
            ),
            Learned::Forest(_) => None,
        })
    }

    /// Per-tree leaf probabilities for each row; `None` for SVMs.
    pub fn tree_probabilities(&self, x: &FeatureMatrix) -> Result<Option<Vec<Vec<f64>>>, ModelError> {
        self.check_columns(x)?;
        Ok(match &self.learned {
            Learned::Forest(f) => Some(x.to_dense().iter().map(|row| f.tree_probabilities(row)).collect()),
            Learned::Svm { .. } => None,
        })
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<Prediction>, ModelError> {
        self.check_columns(x)?;
        let probs: Vec<f64> = match &self.learned {
            Learned::Forest(f) => x.to_dense().iter().map(|row| f.predict(row)).collect(),
            Learned::Svm { svm, calibrator } => (0..x.n_rows())
                .map(|i| {
                    let (c, v) = x.row(i);
                    calibrator.probability(svm.decision(c, v))
                })
                .collect(),
        };
        Ok(x.row_ids()
            .iter()
            .zip(probs)
            .map(|(id, probability)| Prediction { study_id: id.clone(), probability })
            .collect())
    }
}

/// Everything needed to score new documents: the fitted feature space, the
/// classifier, and a fingerprint of the configuration and training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub fingerprint: String,
    pub features: FeatureSpace,
    pub classifier: FittedClassifier,
}

impl TrainedModel {
    /// `inputs_fingerprint` covers the configuration and training data; the
    /// stored fingerprint also folds in the feature space and spec.
    pub fn new(features: FeatureSpace, classifier: FittedClassifier, inputs_fingerprint: &str) -> Self {
        let mut h = Sha256::new();
        h.update(MODEL_FORMAT_VERSION.to_le_bytes());
        h.update(inputs_fingerprint.as_bytes());
        h.update(features.fingerprint().as_bytes());
        h.update(classifier.spec.to_string().as_bytes());
        h.update(crate::textprep::resource_fingerprint().as_bytes());
        let fingerprint = hex::encode(h.finalize());
        Self { format_version: MODEL_FORMAT_VERSION, fingerprint, features, classifier }
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.classifier.spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: TrainedModel = serde_json::from_str(text).map_err(|e| ModelError::Persist(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Persist(format!("unsupported format version {}", model.format_version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Persist(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Persist(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Calibrated inclusion probabilities for `x`, which must come from the
/// model's own feature space.
pub fn predict_proba(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<Prediction>, ModelError> {
    model.classifier.predict_proba(x)
}
