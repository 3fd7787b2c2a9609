//! Agreement between reviewer votes, the final screening result and model
//! probabilities, measured as Euclidean distance over aligned studies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VoteTable;
use crate::models::Prediction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("score vectors cover different studies: {0}")]
    StudySetMismatch(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("cut points must satisfy 0 <= low < high <= 1, got {low} and {high}")]
    InvalidScale { low: f64, high: f64 },
    #[error("duplicate study id {0}")]
    DuplicateStudy(String),
    #[error("probability {value} for {study_id} is outside [0, 1]")]
    ProbabilityOutOfRange { study_id: String, value: f64 },
}

/// Maps a probability onto the 0/1/2 vote scale: `p <= low` is 0,
/// `p <= high` is 1, anything above is 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteScaleMap {
    low: f64,
    high: f64,
}

impl Default for VoteScaleMap {
    fn default() -> Self {
        Self { low: 0.50, high: 0.60 }
    }
}

impl VoteScaleMap {
    pub fn new(low: f64, high: f64) -> Result<Self, AgreementError> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return Err(AgreementError::InvalidScale { low, high });
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn map(&self, p: f64) -> u8 {
        if p <= self.low {
            0
        } else if p <= self.high {
            1
        } else {
            2
        }
    }
}

/// Per-study scores from one source, keyed by study id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub source: String,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreVector {
    pub fn new(source: impl Into<String>, scores: BTreeMap<String, f64>) -> Self {
        Self { source: source.into(), scores }
    }

    pub fn from_reviewer(votes: &VoteTable, reviewer: usize) -> Self {
        let scores = votes.rows.iter().map(|r| (r.study_id.clone(), r.votes[reviewer] as f64)).collect();
        Self::new(votes.reviewers[reviewer].clone(), scores)
    }

    pub fn final_result(votes: &VoteTable) -> ScaledFinalResult {
        ScaledFinalResult(Self::new("FR", votes.rows.iter().map(|r| (r.study_id.clone(), 2.0 * r.final_result as f64)).collect()))
    }

    pub fn from_predictions(source: impl Into<String>, preds: &[Prediction], scale: &VoteScaleMap) -> Result<Self, AgreementError> {
        let mut scores = BTreeMap::new();
        for p in preds {
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(AgreementError::ProbabilityOutOfRange { study_id: p.study_id.clone(), value: p.probability });
            }
            if scores.insert(p.study_id.clone(), scale.map(p.probability) as f64).is_some() {
                return Err(AgreementError::DuplicateStudy(p.study_id.clone()));
            }
        }
        Ok(Self::new(source, scores))
    }

    fn same_studies(&self, other: &ScoreVector) -> Result<(), AgreementError> {
        if self.scores.len() == other.scores.len() && self.scores.keys().zip(other.scores.keys()).all(|(a, b)| a == b) {
            return Ok(());
        }
        let missing: Vec<&str> = self
            .scores
            .keys()
            .filter(|k| !other.scores.contains_key(*k))
            .chain(other.scores.keys().filter(|k| !self.scores.contains_key(*k)))
            .map(String::as_str)
            .collect();
        Err(AgreementError::StudySetMismatch(format!("{} vs {}: {}", self.source, other.source, missing.join(","))))
    }
}

/// The final screening result on the 0/1/2 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledFinalResult(pub ScoreVector);

/// Element-wise mean of the members' scores. All members must cover the
/// same studies.
pub fn aggregate(members: &[&ScoreVector]) -> Result<ScoreVector, AgreementError> {
    let first = members.first().ok_or(AgreementError::Empty)?;
    for m in &members[1..] {
        first.same_studies(m)?;
    }
    let n = members.len() as f64;
    let scores = first
        .scores
        .keys()
        .map(|id| (id.clone(), members.iter().map(|m| m.scores[id]).sum::<f64>() / n))
        .collect();
    let source = members.iter().map(|m| m.source.as_str()).collect::<Vec<_>>().join("+");
    Ok(ScoreVector::new(source, scores))
}

pub fn distance_to_fr(v: &ScoreVector, fr: &ScaledFinalResult) -> Result<f64, AgreementError> {
    v.same_studies(&fr.0)?;
    Ok(v.scores.iter().map(|(id, s)| (s - fr.0.scores[id]).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub combination: String,
    pub members: usize,
    pub euclidean_distance: f64,
}

/// Distance to the final result for every combination of one, two and
/// three sources, in lexicographic order of source position.
pub fn agreement_report(sources: &[ScoreVector], fr: &ScaledFinalResult) -> Result<Vec<AgreementRow>, AgreementError> {
    let n = sources.len();
    let mut rows = Vec::new();
    for size in 1..=3.min(n) {
        for combo in combinations(n, size) {
            let members: Vec<&ScoreVector> = combo.iter().map(|&i| &sources[i]).collect();
            let agg = aggregate(&members)?;
            rows.push(AgreementRow { combination: agg.source.clone(), members: size, euclidean_distance: distance_to_fr(&agg, fr)? });
        }
    }
    Ok(rows)
}

/// Report over every reviewer in `votes` plus the model as a fourth source.
pub fn report_with_model(votes: &VoteTable, model: &ScoreVector) -> Result<Vec<AgreementRow>, AgreementError> {
    let mut sources: Vec<ScoreVector> = (0..votes.reviewers.len()).map(|r| ScoreVector::from_reviewer(votes, r)).collect();
    sources.push(model.clone());
    agreement_report(&sources, &ScoreVector::final_result(votes))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

pub fn report_to_csv(rows: &[AgreementRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["combination", "members", "euclidean_distance"]).unwrap();
    for r in rows {
        w.write_record([r.combination.clone(), r.members.to_string(), format!("{:.4}", r.euclidean_distance)]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_votes;
    use proptest::prelude::*;

    const SAMPLE: &str = "study_id,final_result,R1,R2,R3\n\
        S1,1,2,1,2\nS2,0,2,0,0\nS3,1,2,1,0\nS4,0,0,2,1\nS5,0,0,0,0\n";

    fn table() -> VoteTable {
        load_votes(SAMPLE.as_bytes()).unwrap()
    }

    fn sv(source: &str, pairs: &[(&str, f64)]) -> ScoreVector {
        ScoreVector::new(source, pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn scale_boundaries() {
        let m = VoteScaleMap::default();
        assert_eq!(m.map(0.30), 0);
        assert_eq!(m.map(0.55), 1);
        assert_eq!(m.map(0.50), 0);
        assert_eq!(m.map(0.5000001), 1);
        assert_eq!(m.map(0.60), 1);
        assert_eq!(m.map(0.61), 2);
        assert_eq!(m.map(0.0), 0);
        assert_eq!(m.map(1.0), 2);
        assert!(VoteScaleMap::new(0.6, 0.5).is_err());
        assert!(VoteScaleMap::new(-0.1, 0.5).is_err());
    }

    #[test]
    fn single_reviewer_distances() {
        let t = table();
        let fr = ScoreVector::final_result(&t);
        let d: Vec<f64> = (0..3).map(|r| distance_to_fr(&ScoreVector::from_reviewer(&t, r), &fr).unwrap()).collect();
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!((d[1] - 6f64.sqrt()).abs() < 1e-12);
        assert!((d[2] - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pair_distance_uses_mean_votes() {
        let t = table();
        let fr = ScoreVector::final_result(&t);
        let r2 = ScoreVector::from_reviewer(&t, 1);
        let r3 = ScoreVector::from_reviewer(&t, 2);
        let pair = aggregate(&[&r2, &r3]).unwrap();
        assert_eq!(pair.source, "R2+R3");
        assert!((distance_to_fr(&pair, &fr).unwrap() - 4.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_has_fourteen_rows_for_four_sources() {
        let t = table();
        let fr = ScoreVector::final_result(&t);
        let mut sources: Vec<ScoreVector> = (0..3).map(|r| ScoreVector::from_reviewer(&t, r)).collect();
        let preds: Vec<Prediction> =
            t.rows.iter().map(|r| Prediction { study_id: r.study_id.clone(), probability: r.final_result as f64 }).collect();
        sources.push(ScoreVector::from_predictions("RF", &preds, &VoteScaleMap::default()).unwrap());
        let rows = agreement_report(&sources, &fr).unwrap();
        assert_eq!(rows.len(), 14);
        assert_eq!(rows[0].combination, "R1");
        assert_eq!(rows[3].combination, "RF");
        assert_eq!(rows[3].euclidean_distance, 0.0);
        assert_eq!(rows[13].combination, "R2+R3+RF");
        let csv = report_to_csv(&rows);
        assert!(csv.starts_with("combination,members,euclidean_distance\nR1,1,2.0000\n"));
    }

    #[test]
    fn mismatched_study_sets_are_rejected() {
        let a = sv("A", &[("x", 1.0), ("y", 0.0)]);
        let b = sv("B", &[("x", 1.0), ("z", 0.0)]);
        assert!(matches!(aggregate(&[&a, &b]), Err(AgreementError::StudySetMismatch(_))));
        assert!(matches!(distance_to_fr(&a, &ScaledFinalResult(b)), Err(AgreementError::StudySetMismatch(_))));
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        let preds = [Prediction { study_id: "a".into(), probability: 1.2 }];
        assert!(ScoreVector::from_predictions("M", &preds, &VoteScaleMap::default()).is_err());
        let dup = [Prediction { study_id: "a".into(), probability: 0.2 }, Prediction { study_id: "a".into(), probability: 0.3 }];
        assert!(ScoreVector::from_predictions("M", &dup, &VoteScaleMap::default()).is_err());
    }

    #[test]
    fn model_identical_to_fr_is_in_the_closest_pair() {
        let t = table();
        let fr = ScoreVector::final_result(&t);
        let mut sources: Vec<ScoreVector> = (0..3).map(|r| ScoreVector::from_reviewer(&t, r)).collect();
        sources.push(ScoreVector::new("RF", fr.0.scores.clone()));
        let rows = agreement_report(&sources, &fr).unwrap();
        let best_pair = rows.iter().filter(|r| r.members == 2).min_by(|a, b| a.euclidean_distance.total_cmp(&b.euclidean_distance)).unwrap();
        assert!(best_pair.combination.contains("RF"));
    }

    #[test]
    fn aggregate_examples() {
        let a = sv("A", &[("x", 2.0)]);
        let b = sv("B", &[("x", 0.0)]);
        let c = sv("C", &[("x", 1.0)]);
        assert_eq!(aggregate(&[&a, &b]).unwrap().scores["x"], 1.0);
        assert_eq!(aggregate(&[&a, &c, &b]).unwrap().scores["x"], 1.0);
        assert_eq!(aggregate(&[&a]).unwrap().scores, a.scores);
    }

    fn arb_votes() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<u8>)> {
        (1usize..30).prop_flat_map(|n| {
            let v = || proptest::collection::vec(0u8..3, n);
            (v(), v(), v())
        })
    }

    fn to_sv(name: &str, v: &[u8]) -> ScoreVector {
        ScoreVector::new(name, v.iter().enumerate().map(|(i, &s)| (format!("s{i:03}"), s as f64)).collect())
    }

    proptest! {
        #[test]
        fn distance_is_zero_iff_equal((a, b, _) in arb_votes()) {
            let fr = ScaledFinalResult(to_sv("FR", &b));
            let d = distance_to_fr(&to_sv("A", &a), &fr).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, a == b);
        }

        #[test]
        fn aggregation_is_order_free((a, b, c) in arb_votes()) {
            let (x, y, z) = (to_sv("A", &a), to_sv("B", &b), to_sv("C", &c));
            let p = aggregate(&[&x, &y, &z]).unwrap();
            let q = aggregate(&[&z, &x, &y]).unwrap();
            for (k, v) in &p.scores {
                prop_assert!((v - q.scores[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn pair_distance_is_bounded_by_member_average((a, b, f) in arb_votes()) {
            let fr = ScaledFinalResult(to_sv("FR", &f));
            let (x, y) = (to_sv("A", &a), to_sv("B", &b));
            let dx = distance_to_fr(&x, &fr).unwrap();
            let dy = distance_to_fr(&y, &fr).unwrap();
            let dm = distance_to_fr(&aggregate(&[&x, &y]).unwrap(), &fr).unwrap();
            prop_assert!(dm <= (dx + dy) / 2.0 + 1e-12);
            let swapped = distance_to_fr(&aggregate(&[&y, &x]).unwrap(), &fr).unwrap();
            prop_assert!((dm - swapped).abs() < 1e-12);
        }
    }
}
