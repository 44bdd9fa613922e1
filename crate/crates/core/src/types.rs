//! Domain types shared by every stage of the pipeline.
//!
//! All values are immutable once built; constructors enforce the invariants
//! so downstream code can rely on them without re-checking.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordError, Result};

/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Allowed asymmetry of a covariance matrix.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Checks that `raw` is a point of the probability simplex with `k` entries.
///
/// The vector is returned unchanged; it is never renormalised.
pub fn validate_record(raw: Vec<f64>, k: usize) -> Result<Vec<f64>, RecordError> {
    if raw.len() != k {
        return Err(RecordError::WrongArity {
            expected: k,
            found: raw.len(),
        });
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(RecordError::NegativeEntry { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(RecordError::SumOutOfTolerance { sum });
    }
    Ok(raw)
}

/// One datapoint's class-probability vector with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRecord {
    pub subject_id: String,
    pub point_id: String,
    pub group: Option<String>,
    probs: Vec<f64>,
    pub true_label: Option<usize>,
}

impl ProbabilityRecord {
    pub fn new(
        subject_id: impl Into<String>,
        point_id: impl Into<String>,
        group: Option<String>,
        probs: Vec<f64>,
        true_label: Option<usize>,
    ) -> Result<Self> {
        let k = probs.len();
        if k < 2 {
            return Err(RecordError::WrongArity { expected: 2, found: k }.into());
        }
        let probs = validate_record(probs, k)?;
        if let Some(label) = true_label {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            point_id: point_id.into(),
            group,
            probs,
            true_label,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// All records of one subject, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    subject_id: String,
    records: Vec<ProbabilityRecord>,
}

impl SubjectDataset {
    pub fn new(subject_id: impl Into<String>, records: Vec<ProbabilityRecord>) -> Result<Self> {
        let subject_id = subject_id.into();
        if records.is_empty() {
            return Err(Error::Config(format!("subject {subject_id} has no records")));
        }
        if let Some(r) = records.iter().find(|r| r.subject_id != subject_id) {
            return Err(Error::Config(format!(
                "record {} belongs to subject {}, not {subject_id}",
                r.point_id, r.subject_id
            )));
        }
        Ok(Self { subject_id, records })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn records(&self) -> &[ProbabilityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Stable partition of records by subject. Subjects appear in order of first
/// occurrence and each subject keeps its records in input order.
pub fn partition_by_subject(records: Vec<ProbabilityRecord>) -> Vec<SubjectDataset> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut buckets: Vec<(String, Vec<ProbabilityRecord>)> = Vec::new();
    for record in records {
        let slot = *index.entry(record.subject_id.clone()).or_insert_with(|| {
            buckets.push((record.subject_id.clone(), Vec::new()));
            buckets.len() - 1
        });
        buckets[slot].1.push(record);
    }
    buckets
        .into_iter()
        .map(|(subject_id, records)| SubjectDataset { subject_id, records })
        .collect()
}

/// A raw input vector, as produced by the synthetic generator or read from a
/// samples file.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub point_id: String,
    pub group: Option<String>,
    pub label: Option<usize>,
    pub features: Vec<f64>,
}

/// Class count plus the clinically relevant subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    k: usize,
    relevant: BTreeSet<usize>,
    names: Option<Vec<String>>,
}

impl ClassSet {
    pub fn new(k: usize, relevant: impl IntoIterator<Item = usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {k}")));
        }
        let relevant: BTreeSet<usize> = relevant.into_iter().collect();
        if relevant.is_empty() {
            return Err(Error::Config("relevant class set is empty".into()));
        }
        if let Some(&bad) = relevant.iter().find(|&&c| c >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        Ok(Self {
            k,
            relevant,
            names: None,
        })
    }

    /// Every class is relevant.
    pub fn all(k: usize) -> Result<Self> {
        Self::new(k, 0..k)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Parses a list of class tokens. Integer tokens are class indices and take
    /// precedence; anything else is looked up in `names`.
    pub fn parse(k: usize, tokens: &[String], names: Option<&[String]>) -> Result<Self> {
        let mut relevant = Vec::with_capacity(tokens.len());
        for token in tokens {
            let token = token.trim();
            if let Ok(index) = token.parse::<usize>() {
                relevant.push(index);
                continue;
            }
            let found = names.and_then(|names| names.iter().position(|n| n == token));
            match found {
                Some(index) => relevant.push(index),
                None => return Err(Error::Config(format!("unknown class {token:?}"))),
            }
        }
        let set = Self::new(k, relevant)?;
        match names {
            Some(names) => set.with_names(names.to_vec()),
            None => Ok(set),
        }
    }

    /// The non-relevant classes as a class set, if any exist.
    pub fn complement(&self) -> Option<Self> {
        let rest: Vec<usize> = (0..self.k).filter(|c| !self.relevant.contains(c)).collect();
        if rest.is_empty() {
            return None;
        }
        Some(Self {
            k: self.k,
            relevant: rest.into_iter().collect(),
            names: self.names.clone(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn relevant(&self) -> &BTreeSet<usize> {
        &self.relevant
    }

    pub fn is_relevant(&self, class: usize) -> bool {
        self.relevant.contains(&class)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }
}

/// A subject's COBRA score. `score` is `None` exactly when no datapoint was
/// predicted in a relevant class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub score: Option<f64>,
    pub n_total: usize,
    pub n_relevant: usize,
}

/// Whether a higher clinical score means healthier (FMA) or sicker (KL grade).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    HigherIsHealthier,
    HigherIsMoreSevere,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::HigherIsHealthier => 1.0,
            Orientation::HigherIsMoreSevere => -1.0,
        }
    }
}

/// Clinical score per subject.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssessmentTable {
    pub name: String,
    pub orientation: Orientation,
    scores: BTreeMap<String, f64>,
}

impl AssessmentTable {
    pub fn new(name: impl Into<String>, orientation: Orientation) -> Self {
        Self {
            name: name.into(),
            orientation,
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, subject_id: impl Into<String>, score: f64) -> Result<()> {
        let subject_id = subject_id.into();
        if !score.is_finite() {
            return Err(Error::Config(format!("clinical score for {subject_id} is not finite")));
        }
        if self.scores.contains_key(&subject_id) {
            return Err(Error::Config(format!("duplicate subject id {subject_id}")));
        }
        self.scores.insert(subject_id, score);
        Ok(())
    }

    pub fn get(&self, subject_id: &str) -> Option<f64> {
        self.scores.get(subject_id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Sample mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, found: n });
        }
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self { mean, cov, n })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, point: &str, probs: &[f64]) -> ProbabilityRecord {
        ProbabilityRecord::new(subject, point, None, probs.to_vec(), None).unwrap()
    }

    #[test]
    fn accepts_exact_simplex_point() {
        assert_eq!(validate_record(vec![0.2, 0.3, 0.5], 3).unwrap(), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn rejects_bad_sum() {
        assert!(matches!(
            validate_record(vec![0.5, 0.6], 2),
            Err(RecordError::SumOutOfTolerance { .. })
        ));
    }

    #[test]
    fn rejects_negative_entry() {
        assert_eq!(
            validate_record(vec![0.3, -0.1, 0.8], 3),
            Err(RecordError::NegativeEntry { index: 1, value: -0.1 })
        );
    }

    #[test]
    fn rejects_wrong_arity_and_nan() {
        assert!(matches!(
            validate_record(vec![0.5, 0.5], 3),
            Err(RecordError::WrongArity { expected: 3, found: 2 })
        ));
        assert!(matches!(
            validate_record(vec![f64::NAN, 1.0], 2),
            Err(RecordError::NegativeEntry { .. })
        ));
    }

    #[test]
    fn tolerance_boundary() {
        assert!(validate_record(vec![0.5, 0.5 + 0.9e-6], 2).is_ok());
        assert!(validate_record(vec![0.5, 0.5 + 1.1e-6], 2).is_err());
    }

    #[test]
    fn partition_keeps_order() {
        let records = vec![
            rec("A", "1", &[1.0, 0.0]),
            rec("B", "2", &[1.0, 0.0]),
            rec("A", "3", &[0.0, 1.0]),
        ];
        let parts = partition_by_subject(records);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].subject_id(), "A");
        let ids: Vec<&str> = parts[0].records().iter().map(|r| r.point_id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
        assert_eq!(parts[1].len(), 1);
    }

    #[test]
    fn partition_edge_cases() {
        assert!(partition_by_subject(Vec::new()).is_empty());
        let records: Vec<_> = (0..7).map(|i| rec("S", &i.to_string(), &[0.5, 0.5])).collect();
        let parts = partition_by_subject(records);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 7);
    }

    #[test]
    fn class_set_validation() {
        assert!(ClassSet::new(3, []).is_err());
        assert!(ClassSet::new(3, [3]).is_err());
        assert!(ClassSet::new(1, [0]).is_err());
        let cs = ClassSet::new(5, [0, 1, 2]).unwrap();
        assert_eq!(
            cs.complement().unwrap().relevant().iter().copied().collect::<Vec<_>>(),
            [3, 4]
        );
        assert!(ClassSet::all(3).unwrap().complement().is_none());
    }

    #[test]
    fn class_set_parse_prefers_indices() {
        let names: Vec<String> = ["reach", "1", "rest"].iter().map(|s| s.to_string()).collect();
        let cs = ClassSet::parse(3, &["1".into(), "rest".into()], Some(&names)).unwrap();
        assert_eq!(cs.relevant().iter().copied().collect::<Vec<_>>(), [1, 2]);
        assert!(ClassSet::parse(3, &["walk".into()], Some(&names)).is_err());
    }

    #[test]
    fn assessment_rejects_duplicates() {
        let mut t = AssessmentTable::new("fma", Orientation::HigherIsHealthier);
        t.insert("a", 10.0).unwrap();
        assert!(t.insert("a", 11.0).is_err());
        assert_eq!(t.get("a"), Some(10.0));
    }

    #[test]
    fn gaussian_summary_checks() {
        let mean = DVector::from_vec(vec![0.0, 0.0]);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            GaussianSummary::new(mean.clone(), asym, 10),
            Err(Error::NotSymmetric(_))
        ));
        assert!(matches!(
            GaussianSummary::new(mean, DMatrix::identity(2, 2), 1),
            Err(Error::TooFewRows { .. })
        ));
    }
}
