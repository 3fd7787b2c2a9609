use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("votes csv: {0}")]
    Csv(String),
    #[error("votes csv header must start with study_id,final_result")]
    BadHeader,
    #[error("line {line}: study {study_id} has no final_result")]
    MissingFinalResult { line: u64, study_id: String },
    #[error("line {line}: final_result {value:?} for {study_id} must be 0 or 1")]
    InvalidFinalResult { line: u64, study_id: String, value: String },
    #[error("line {line}: score {value:?} from {reviewer} for {study_id} is outside 0..=2")]
    OutOfRangeScore { line: u64, study_id: String, reviewer: String, value: String },
    #[error("line {line}: study {study_id} appears twice")]
    DuplicateStudy { line: u64, study_id: String },
    #[error("line {line}: expected {expected} cells, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
}

impl VoteError {
    /// Study id the error refers to, if any.
    pub fn study_id(&self) -> Option<&str> {
        match self {
            VoteError::MissingFinalResult { study_id, .. }
            | VoteError::InvalidFinalResult { study_id, .. }
            | VoteError::OutOfRangeScore { study_id, .. }
            | VoteError::DuplicateStudy { study_id, .. } => Some(study_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRow {
    pub study_id: String,
    pub final_result: u8,
    /// Scores in the same order as [`VoteTable::reviewers`].
    pub votes: Vec<u8>,
}

/// Reviewer screening votes (0 exclude, 1 unsure, 2 include) per study,
/// plus the consensus final result (1 include, 0 exclude).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteTable {
    pub reviewers: Vec<String>,
    pub rows: Vec<VoteRow>,
}

impl VoteTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, study_id: &str) -> Option<&VoteRow> {
        self.rows.iter().find(|r| r.study_id == study_id)
    }

    /// One reviewer's votes keyed by study id.
    pub fn reviewer_votes(&self, reviewer: &str) -> Option<BTreeMap<String, u8>> {
        let col = self.reviewers.iter().position(|r| r == reviewer)?;
        Some(self.rows.iter().map(|r| (r.study_id.clone(), r.votes[col])).collect())
    }
}

fn parse_score(cell: &str, max: u8) -> Option<u8> {
    match cell.trim().parse::<u8>() {
        Ok(v) if v <= max => Some(v),
        _ => None,
    }
}

/// Reads a `study_id,final_result,<reviewer>...` table.
pub fn load_votes(csv_source: &[u8]) -> Result<VoteTable, VoteError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_source);
    let header = reader.headers().map_err(|e| VoteError::Csv(e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "study_id" || &header[1] != "final_result" {
        return Err(VoteError::BadHeader);
    }
    let reviewers: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut table = VoteTable { reviewers, rows: Vec::new() };
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| VoteError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let study_id = record.get(0).unwrap_or("").to_string();
        let fr_cell = record.get(1).unwrap_or("");
        if fr_cell.is_empty() {
            return Err(VoteError::MissingFinalResult { line, study_id });
        }
        if record.len() != header.len() {
            return Err(VoteError::RaggedRow { line, expected: header.len(), found: record.len() });
        }
        let final_result = parse_score(fr_cell, 1)
            .ok_or_else(|| VoteError::InvalidFinalResult { line, study_id: study_id.clone(), value: fr_cell.into() })?;
        let mut votes = Vec::with_capacity(table.reviewers.len());
        for (reviewer, cell) in table.reviewers.iter().zip(record.iter().skip(2)) {
            let v = parse_score(cell, 2).ok_or_else(|| VoteError::OutOfRangeScore {
                line,
                study_id: study_id.clone(),
                reviewer: reviewer.clone(),
                value: cell.into(),
            })?;
            votes.push(v);
        }
        if !seen.insert(study_id.clone()) {
            return Err(VoteError::DuplicateStudy { line, study_id });
        }
        table.rows.push(VoteRow { study_id, final_result, votes });
    }
    Ok(table)
}
