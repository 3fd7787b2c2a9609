//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage error, 3 pipeline
//! error. Every failure prints at least one `ERROR <stage> <entry_id> <kind>`
//! line on standard error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agreement::{self, ScoreVector, VoteScaleMap};
use crate::corpus::{self, LabeledCorpus, StudyRecord};
use crate::evalr::{self, Truth};
use crate::models::Prediction;
use crate::pipeline::{self, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "slrscreen", version, about = "Score candidate studies for a systematic review update")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CorpusArgs {
    #[arg(long, value_name = "BIB")]
    pub train_included: PathBuf,
    #[arg(long, value_name = "BIB")]
    pub train_excluded: PathBuf,
    #[arg(long, value_name = "BIB")]
    pub test_included: PathBuf,
    #[arg(long, value_name = "BIB")]
    pub test_excluded: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the four BibTeX inputs and report every invalid entry.
    Validate {
        #[command(flatten)]
        corpora: CorpusArgs,
    },
    /// Train on the training corpus and score the test corpus.
    Run {
        #[command(flatten)]
        corpora: CorpusArgs,
        /// `.env` style configuration; defaults apply when omitted.
        #[arg(long, value_name = "ENVFILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Precision, recall, F-score and effort reduction over thresholds.
    Sweep {
        #[arg(long, value_name = "CSV")]
        predictions: PathBuf,
        /// `study_id,label` with labels 0/1 or INCLUDE/EXCLUDE.
        #[arg(long, value_name = "CSV")]
        truth: PathBuf,
        #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
    },
    /// Distance of reviewer and model combinations to the final result.
    Agreement {
        #[arg(long, value_name = "CSV")]
        votes: PathBuf,
        #[arg(long, value_name = "CSV")]
        predictions: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Column name for the model in the report.
        #[arg(long, default_value = "MODEL")]
        model_name: String,
    },
    /// Counts of studies per probability bin.
    Histogram {
        #[arg(long, value_name = "CSV")]
        predictions: PathBuf,
        #[arg(long, value_name = "W")]
        bin_width: f64,
    },
}

/// A failure with its exit code and the error lines to print.
#[derive(Debug)]
struct Failure {
    code: i32,
    lines: Vec<String>,
}

impl Failure {
    fn new(code: i32, stage: &str, entry_id: &str, kind: impl std::fmt::Display) -> Self {
        Self { code, lines: vec![error_line(stage, entry_id, kind)] }
    }
}

/// Whitespace inside fields is squashed so the line stays four columns wide
/// for the first three.
fn error_line(stage: &str, entry_id: &str, kind: impl std::fmt::Display) -> String {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join("_");
    let entry = if entry_id.is_empty() { "-".to_string() } else { squash(entry_id) };
    format!("ERROR {} {} {}", squash(stage), entry, kind)
}

fn read_file(path: &Path, stage: &str, code: i32) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::new(code, stage, &path.display().to_string(), format!("IoError({e})")))
}

fn write_file(path: &Path, contents: &str, stage: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_PIPELINE, stage, &path.display().to_string(), format!("IoError({e})")))
}

struct LoadedCorpora {
    train: LabeledCorpus,
    test: LabeledCorpus,
    summary: Vec<String>,
}

fn load_corpora(args: &CorpusArgs) -> Result<LoadedCorpora, Failure> {
    let inputs = [
        ("train_included", &args.train_included),
        ("train_excluded", &args.train_excluded),
        ("test_included", &args.test_included),
        ("test_excluded", &args.test_excluded),
    ];
    let mut lines = Vec::new();
    let mut summary = Vec::new();
    let mut parsed: Vec<Vec<StudyRecord>> = Vec::new();
    for (name, path) in inputs {
        let bytes = read_file(path, "validate", EXIT_VALIDATION)?;
        let report = corpus::parse_report(&bytes);
        summary.push(format!(
            "{name} entries={} accepted={} rejected={}",
            report.entry_count,
            report.records.len(),
            report.rejected_count
        ));
        for e in &report.errors {
            lines.push(error_line("validate", &e.entry_id, &e.kind));
        }
        parsed.push(report.records);
    }
    if !lines.is_empty() {
        return Err(Failure { code: EXIT_VALIDATION, lines });
    }
    let assemble = |inc: &[StudyRecord], exc: &[StudyRecord], which: &str| {
        corpus::assemble_corpus(inc, exc).map_err(|e| {
            let entry = match &e {
                corpus::CorpusError::ConflictingLabel { included_id, .. } => included_id.clone(),
                corpus::CorpusError::EmptyCorpus(_) => which.to_string(),
            };
            Failure::new(EXIT_VALIDATION, "validate", &entry, format!("{e:?}").split_whitespace().collect::<String>())
        })
    };
    let train = assemble(&parsed[0], &parsed[1], "train")?;
    let test = assemble(&parsed[2], &parsed[3], "test")?;
    for d in train.dropped.iter().chain(&test.dropped) {
        summary.push(format!("dropped {} {}", d.id, d.reason));
    }
    for id in corpus::duplicate_ids([&train.records[..], &test.records[..]]) {
        log::warn!("study {id} appears in both the training and the test corpus");
    }
    Ok(LoadedCorpora { train, test, summary })
}

fn parse_config_file(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let Some(path) = path else { return Ok(PipelineConfig::default()) };
    let bytes = read_file(path, "config", EXIT_USAGE)?;
    pipeline::parse_config(&bytes).map_err(|e| {
        let kind = match &e {
            pipeline::ConfigError::UnknownKey { key, .. } => format!("UnknownKey({key})"),
            pipeline::ConfigError::InvalidValue { key, .. } => format!("InvalidValue({key})"),
            pipeline::ConfigError::Malformed { .. } => "Malformed".to_string(),
        };
        Failure::new(EXIT_USAGE, "config", &format!("line{}", e.line()), kind)
    })
}

/// Reads `study_id` and `inclusion_probability` columns by header name.
pub fn read_predictions(bytes: &[u8]) -> Result<Vec<Prediction>, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("missing column {name}"));
    let (id_col, p_col) = (col("study_id")?, col("inclusion_probability")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let study_id = rec.get(id_col).unwrap_or("").to_string();
        let raw = rec.get(p_col).unwrap_or("");
        let probability: f64 = raw.parse().map_err(|_| format!("line {}: bad probability {raw:?}", i + 2))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(format!("line {}: probability {probability} outside [0, 1]", i + 2));
        }
        out.push(Prediction { study_id, probability });
    }
    Ok(out)
}

/// Reads a `study_id,label` table; labels are 1/0 or INCLUDE/EXCLUDE.
pub fn read_truth(bytes: &[u8]) -> Result<Truth, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("missing column {name}"));
    let (id_col, label_col) = (col("study_id")?, col("label")?);
    let mut truth = Truth::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let label = match rec.get(label_col).unwrap_or("").to_ascii_uppercase().as_str() {
            "1" | "INCLUDE" => 1,
            "0" | "EXCLUDE" => 0,
            other => return Err(format!("line {}: bad label {other:?}", i + 2)),
        };
        truth.insert(rec.get(id_col).unwrap_or("").to_string(), label);
    }
    Ok(truth)
}

fn cmd_validate(args: &CorpusArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let loaded = load_corpora(args)?;
    for line in &loaded.summary {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(
        out,
        "train included={} excluded={}\ntest included={} excluded={}",
        loaded.train.n_included, loaded.train.n_excluded, loaded.test.n_included, loaded.test.n_excluded
    );
    Ok(())
}

fn cmd_run(args: &CorpusArgs, config: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let config = parse_config_file(config)?;
    let loaded = load_corpora(args)?;
    let run = pipeline::run_pipeline(&config, &loaded.train, &loaded.test)
        .map_err(|e| Failure::new(EXIT_PIPELINE, e.stage.as_str(), "-", e.message))?;
    run.write_to(dir).map_err(|e| Failure::new(EXIT_PIPELINE, "write", &dir.display().to_string(), format!("IoError({e})")))?;
    let _ = writeln!(out, "model {}", run.model.fingerprint);
    let _ = writeln!(out, "best {}", run.grid.best_spec());
    let _ = writeln!(out, "scored {} studies into {}", run.predictions.len(), dir.display());
    Ok(())
}

fn cmd_sweep(predictions: &Path, truth: &Path, thresholds: &[f64], out: &mut dyn Write) -> Result<(), Failure> {
    let preds = read_predictions(&read_file(predictions, "sweep", EXIT_USAGE)?)
        .map_err(|e| Failure::new(EXIT_USAGE, "sweep", &predictions.display().to_string(), e))?;
    let truth_map = read_truth(&read_file(truth, "sweep", EXIT_USAGE)?).map_err(|e| Failure::new(EXIT_USAGE, "sweep", &truth.display().to_string(), e))?;
    let rows = evalr::threshold_sweep(&preds, &truth_map, thresholds).map_err(|e| {
        let entry = match &e {
            evalr::EvalError::MissingTruth(id) => id.clone(),
            _ => "-".to_string(),
        };
        Failure::new(EXIT_USAGE, "sweep", &entry, format!("{e:?}").split_whitespace().collect::<String>())
    })?;
    let _ = out.write_all(evalr::sweep_to_csv(&rows).as_bytes());
    Ok(())
}

fn cmd_agreement(votes: &Path, predictions: &Path, report: &Path, model_name: &str) -> Result<(), Failure> {
    let table = corpus::load_votes(read_file(votes, "agreement", EXIT_USAGE)?.as_slice()).map_err(|e| {
        let entry = e.study_id().unwrap_or("-").to_string();
        Failure::new(EXIT_VALIDATION, "agreement", &entry, format!("{e:?}").split_whitespace().collect::<String>())
    })?;
    let preds = read_predictions(&read_file(predictions, "agreement", EXIT_USAGE)?)
        .map_err(|e| Failure::new(EXIT_USAGE, "agreement", &predictions.display().to_string(), e))?;
    let fail = |e: agreement::AgreementError| Failure::new(EXIT_VALIDATION, "agreement", "-", e);
    let model = ScoreVector::from_predictions(model_name, &preds, &VoteScaleMap::default()).map_err(fail)?;
    let rows = agreement::report_with_model(&table, &model).map_err(fail)?;
    write_file(report, &agreement::report_to_csv(&rows), "agreement")
}

fn cmd_histogram(predictions: &Path, bin_width: f64, out: &mut dyn Write) -> Result<(), Failure> {
    let preds = read_predictions(&read_file(predictions, "histogram", EXIT_USAGE)?)
        .map_err(|e| Failure::new(EXIT_USAGE, "histogram", &predictions.display().to_string(), e))?;
    let bins = evalr::probability_histogram(&preds, bin_width).map_err(|e| Failure::new(EXIT_USAGE, "histogram", "-", format!("{e:?}")))?;
    let _ = out.write_all(evalr::histogram_to_csv(&bins).as_bytes());
    Ok(())
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{e}");
            let _ = writeln!(err, "{}", error_line("usage", "-", format!("{:?}", e.kind())));
            return EXIT_USAGE;
        }
    };
    let result = match &cli.command {
        Command::Validate { corpora } => cmd_validate(corpora, out),
        Command::Run { corpora, config, out: dir } => cmd_run(corpora, config.as_deref(), dir, out),
        Command::Sweep { predictions, truth, thresholds } => cmd_sweep(predictions, truth, thresholds, out),
        Command::Agreement { votes, predictions, out: report, model_name } => cmd_agreement(votes, predictions, report, model_name),
        Command::Histogram { predictions, bin_width } => cmd_histogram(predictions, *bin_width, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            for line in f.lines {
                let _ = writeln!(err, "{line}");
            }
            f.code
        }
    }
}
