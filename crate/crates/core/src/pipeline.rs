//! End-to-end run: preprocess, fit features on the training corpus, tune,
//! train, then score the test corpus.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledCorpus;
use crate::evalr::{self, SweepRow, Truth};
use crate::featsel::{FeatureSpace, ScoreMethod, DEFAULT_K};
use crate::models::{self, ClassifierKind, ClassifierSpec, ForestParams, Prediction, SvmParams, TrainedModel};
use crate::textprep::{self, TokenDocument};
use crate::tuning::{self, FeatureConfig, GridResult, TargetMetric, DEFAULT_FOLDS};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fs_method: ScoreMethod,
    pub n_features: usize,
    pub classifier: ClassifierKind,
    pub target_metric: TargetMetric,
    pub cv_folds: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fs_method: ScoreMethod::AnovaF,
            n_features: DEFAULT_K,
            classifier: ClassifierKind::RandomForest,
            target_metric: TargetMetric::F1,
            cv_folds: DEFAULT_FOLDS,
            threshold: DEFAULT_THRESHOLD,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}: {reason}")]
    InvalidValue { line: usize, key: String, value: String, reason: String },
    #[error("line {line}: expected KEY=VALUE")]
    Malformed { line: usize },
}

impl ConfigError {
    pub fn line(&self) -> usize {
        match self {
            ConfigError::UnknownKey { line, .. } | ConfigError::InvalidValue { line, .. } | ConfigError::Malformed { line } => *line,
        }
    }
}

const KEYS: [&str; 7] = ["FS_METHOD", "N_FEATURES", "CLASSIFIER", "TARGET_METRIC", "CV_FOLDS", "THRESHOLD", "SEED"];

fn set_key(cfg: &mut PipelineConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "FS_METHOD" => cfg.fs_method = value.parse()?,
        "N_FEATURES" => {
            let n: usize = value.parse().map_err(|e| format!("{e}"))?;
            if n == 0 {
                return Err("must be at least 1".into());
            }
            cfg.n_features = n;
        }
        "CLASSIFIER" => cfg.classifier = value.parse()?,
        "TARGET_METRIC" => cfg.target_metric = value.parse()?,
        "CV_FOLDS" => {
            let k: usize = value.parse().map_err(|e| format!("{e}"))?;
            if k < 2 {
                return Err("must be at least 2".into());
            }
            cfg.cv_folds = k;
        }
        "THRESHOLD" => {
            let t: f64 = value.parse().map_err(|e| format!("{e}"))?;
            if !(0.0..=1.0).contains(&t) {
                return Err("must lie in [0, 1]".into());
            }
            cfg.threshold = t;
        }
        "SEED" => cfg.seed = value.parse().map_err(|e| format!("{e}"))?,
        _ => unreachable!("key checked by caller"),
    }
    Ok(())
}

/// Reads `KEY=VALUE` lines. Blank lines and `#` comments are skipped,
/// values may be quoted, and missing keys keep their defaults.
pub fn parse_config(source: &[u8]) -> Result<PipelineConfig, ConfigError> {
    let text = String::from_utf8_lossy(source);
    let mut cfg = PipelineConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let trimmed = trimmed.strip_prefix("export ").unwrap_or(trimmed);
        let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Malformed { line })?;
        let key = key.trim();
        let value = value.trim().trim_matches(|c| c == '"' || c == '\'');
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        set_key(&mut cfg, key, value).map_err(|reason| ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason,
        })?;
    }
    Ok(cfg)
}

impl PipelineConfig {
    /// The resolved configuration in `.env` form; parses back to `self`.
    pub fn echo(&self) -> String {
        format!(
            "FS_METHOD={}\nN_FEATURES={}\nCLASSIFIER={}\nTARGET_METRIC={}\nCV_FOLDS={}\nTHRESHOLD={}\nSEED={}\n",
            self.fs_method, self.n_features, self.classifier, self.target_metric, self.cv_folds, self.threshold, self.seed
        )
    }

    pub fn grid(&self) -> Vec<ClassifierSpec> {
        default_grid(self.classifier, self.seed)
    }
}

/// Hyperparameter grid searched for each classifier family.
pub fn default_grid(kind: ClassifierKind, seed: u64) -> Vec<ClassifierSpec> {
    match kind {
        ClassifierKind::RandomForest => {
            let mut grid = Vec::new();
            for n_trees in [100, 300] {
                for max_depth in [None, Some(10), Some(20)] {
                    for min_samples_leaf in [1, 3] {
                        let p = ForestParams { n_trees, max_depth, min_samples_leaf, ..Default::default() };
                        grid.push(ClassifierSpec::random_forest(p, seed));
                    }
                }
            }
            grid
        }
        ClassifierKind::LinearSvm => [0.01, 0.1, 1.0, 10.0]
            .into_iter()
            .map(|c| ClassifierSpec::linear_svm(SvmParams { c, ..Default::default() }, seed))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Validate,
    Preprocess,
    Features,
    Tune,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Preprocess => "preprocess",
            Stage::Features => "features",
            Stage::Tune => "tune",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
        move |e| PipelineError { stage, message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub config: PipelineConfig,
    pub config_echo: String,
    pub model: TrainedModel,
    pub grid: GridResult,
    pub predictions: Vec<Prediction>,
    pub titles: HashMap<String, String>,
    pub sweep: Vec<SweepRow>,
    pub timings: Vec<StageTiming>,
}

/// Thresholds swept after a run: 0.05 to 0.95 in steps of 0.05, plus the
/// configured threshold.
pub fn sweep_thresholds(config: &PipelineConfig) -> Vec<f64> {
    let mut t: Vec<f64> = (1..=19).map(|i| i as f64 / 20.0).collect();
    if !t.iter().any(|x| (x - config.threshold).abs() < 1e-12) {
        t.push(config.threshold);
    }
    t.sort_by(f64::total_cmp);
    t
}

/// Hash of everything training depends on: the training corpus, the
/// configuration and the text resources.
pub fn inputs_fingerprint(config: &PipelineConfig, train: &LabeledCorpus) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(train.fingerprint().as_bytes());
    h.update(config.echo().as_bytes());
    h.update(textprep::resource_fingerprint().as_bytes());
    hex::encode(h.finalize())
}

struct Timer {
    timings: Vec<StageTiming>,
    started: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { timings: Vec::new(), started: Instant::now() }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.timings.push(StageTiming { stage, seconds: (now - self.started).as_secs_f64() });
        self.started = now;
    }
}

/// Fits everything on `train` only and returns the model, its grid trace
/// and stage timings.
pub fn train_model(config: &PipelineConfig, train: &LabeledCorpus) -> Result<(TrainedModel, GridResult, Vec<StageTiming>), PipelineError> {
    let mut timer = Timer::new();
    if train.n_included == 0 || train.n_excluded == 0 {
        return Err(PipelineError { stage: Stage::Validate, message: "training corpus needs both classes".into() });
    }
    timer.lap(Stage::Validate);

    let docs: Vec<TokenDocument> = train.records.iter().map(textprep::preprocess).collect();
    let labels = train.labels();
    timer.lap(Stage::Preprocess);

    let all_rows: Vec<usize> = (0..docs.len()).collect();
    let space = FeatureSpace::fit(&docs, &labels, &all_rows, config.fs_method, config.n_features).map_err(PipelineError::at(Stage::Features))?;
    let x = space.transform(&docs);
    timer.lap(Stage::Features);

    let folds = if config.cv_folds > docs.len() {
        log::warn!("reducing folds from {} to {}: only {} training studies", config.cv_folds, docs.len(), docs.len());
        docs.len()
    } else {
        config.cv_folds
    };
    let plan = tuning::stratified_folds(&labels, folds, config.seed).map_err(PipelineError::at(Stage::Tune))?;
    let features = FeatureConfig { method: config.fs_method, n_features: config.n_features };
    let grid = tuning::grid_search(&config.grid(), &docs, &labels, features, &plan, config.target_metric)
        .map_err(PipelineError::at(Stage::Tune))?;
    log::info!("best candidate {} with mean {} {:.4}", grid.best_spec(), config.target_metric, grid.best_score());
    timer.lap(Stage::Tune);

    let classifier = models::train(grid.best_spec(), &x, &labels).map_err(PipelineError::at(Stage::Train))?;
    let model = TrainedModel::new(space, classifier, &inputs_fingerprint(config, train));
    timer.lap(Stage::Train);
    Ok((model, grid, timer.timings))
}

pub fn run_pipeline(config: &PipelineConfig, train: &LabeledCorpus, test: &LabeledCorpus) -> Result<RunArtifacts, PipelineError> {
    let (model, grid, mut timings) = train_model(config, train)?;
    let mut timer = Timer::new();

    if test.is_empty() {
        return Err(PipelineError { stage: Stage::Predict, message: "test corpus is empty".into() });
    }
    let test_docs: Vec<TokenDocument> = test.records.iter().map(textprep::preprocess).collect();
    let x_test = model.features.transform(&test_docs);
    let predictions = models::predict_proba(&model, &x_test).map_err(PipelineError::at(Stage::Predict))?;
    timer.lap(Stage::Predict);

    let truth: Truth = test.records.iter().zip(test.labels()).map(|(r, y)| (r.id.clone(), y)).collect();
    let sweep = evalr::threshold_sweep(&predictions, &truth, &sweep_thresholds(config)).map_err(PipelineError::at(Stage::Evaluate))?;
    timer.lap(Stage::Evaluate);
    timings.extend(timer.timings);

    Ok(RunArtifacts {
        config: *config,
        config_echo: config.echo(),
        model,
        grid,
        titles: test.records.iter().map(|r| (r.id.clone(), r.title.clone())).collect(),
        predictions,
        sweep,
        timings,
    })
}

impl RunArtifacts {
    /// Rows in study id order.
    pub fn predictions_csv(&self) -> String {
        let mut rows: Vec<&Prediction> = self.predictions.iter().collect();
        rows.sort_by(|a, b| a.study_id.cmp(&b.study_id));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["study_id", "title", "inclusion_probability", "decision", "threshold"]).unwrap();
        for p in rows {
            let decision = match p.decision(self.config.threshold) {
                crate::corpus::Label::Include => "INCLUDE",
                crate::corpus::Label::Exclude => "EXCLUDE",
            };
            let title = self.titles.get(&p.study_id).map_or("", String::as_str);
            w.write_record([
                p.study_id.as_str(),
                title,
                &format!("{:.4}", p.probability),
                decision,
                &format!("{:.4}", self.config.threshold),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("stage,seconds\n");
        for t in &self.timings {
            out.push_str(&format!("{},{:.4}\n", t.stage, t.seconds));
        }
        out
    }

    /// Writes model.json, predictions.csv, sweep.csv, grid.csv,
    /// config.echo and timings.csv into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.json"), self.model.to_json())?;
        fs::write(dir.join("predictions.csv"), self.predictions_csv())?;
        fs::write(dir.join("sweep.csv"), evalr::sweep_to_csv(&self.sweep))?;
        fs::write(dir.join("grid.csv"), self.grid.to_csv())?;
        fs::write(dir.join("config.echo"), &self.config_echo)?;
        fs::write(dir.join("timings.csv"), self.timings_csv())?;
        Ok(())
    }
}
