//! Subject-level COBRA scores.
//!
//! Each datapoint is assigned its argmax class; the datapoints whose predicted
//! class is clinically relevant contribute their confidence (the maximum class
//! probability) and the subject's score is the arithmetic mean of those
//! confidences. Lower scores mean the model is less sure of itself on that
//! subject, i.e. the subject looks less like the healthy training population.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::types::{ClassSet, ProbabilityRecord, SubjectDataset, SubjectScore};

/// Group key for records that carry no group label.
pub const UNGROUPED: &str = "∅";

/// What to do with a subject that has no datapoint predicted in a relevant class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Report the score as missing; downstream statistics drop the subject.
    #[default]
    ExcludeSubject,
    ErrorOut,
}

#[derive(Debug, Clone)]
pub struct ScoreConfig {
    pub class_set: ClassSet,
    pub missing_policy: MissingPolicy,
}

impl ScoreConfig {
    pub fn new(class_set: ClassSet) -> Self {
        Self {
            class_set,
            missing_policy: MissingPolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: MissingPolicy) -> Self {
        self.missing_policy = policy;
        self
    }
}

/// Argmax; ties go to the lowest index.
pub fn predict_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

/// Largest class probability.
pub fn confidence(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn score_records<'a>(
    subject_id: &str,
    records: impl Iterator<Item = &'a ProbabilityRecord>,
    cfg: &ScoreConfig,
) -> Result<SubjectScore> {
    let k = cfg.class_set.num_classes();
    let mut n_total = 0;
    let mut confidences = Vec::new();
    for record in records {
        if record.num_classes() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: record.num_classes(),
            });
        }
        n_total += 1;
        let probs = record.probs();
        if cfg.class_set.is_relevant(predict_class(probs)) {
            confidences.push(confidence(probs));
        }
    }
    let n_relevant = confidences.len();
    let score = if n_relevant == 0 {
        if cfg.missing_policy == MissingPolicy::ErrorOut {
            return Err(Error::EmptyRelevantSubset {
                subject: subject_id.to_string(),
            });
        }
        None
    } else {
        Some(pairwise_sum(&confidences) / n_relevant as f64)
    };
    Ok(SubjectScore {
        subject_id: subject_id.to_string(),
        score,
        n_total,
        n_relevant,
    })
}

pub fn cobra_score(dataset: &SubjectDataset, cfg: &ScoreConfig) -> Result<SubjectScore> {
    score_records(dataset.subject_id(), dataset.records().iter(), cfg)
}

/// One score per subject, in input order.
pub fn cohort_scores(datasets: &[SubjectDataset], cfg: &ScoreConfig) -> Result<Vec<SubjectScore>> {
    datasets.iter().map(|d| cobra_score(d, cfg)).collect()
}

/// Scores computed separately from each group's records. A subject with no
/// records in a group is absent from that group's list.
pub fn cobra_by_group(datasets: &[SubjectDataset], cfg: &ScoreConfig) -> Result<BTreeMap<String, Vec<SubjectScore>>> {
    let mut out: BTreeMap<String, Vec<SubjectScore>> = BTreeMap::new();
    for dataset in datasets {
        let mut groups: Vec<&str> = Vec::new();
        for r in dataset.records() {
            let g = group_key(r);
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        for g in groups {
            let records = dataset.records().iter().filter(|r| group_key(r) == g);
            let score = score_records(dataset.subject_id(), records, cfg)?;
            out.entry(g.to_string()).or_default().push(score);
        }
    }
    Ok(out)
}

pub fn group_key(record: &ProbabilityRecord) -> &str {
    record.group.as_deref().unwrap_or(UNGROUPED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::partition_by_subject;

    fn dataset(subject: &str, rows: &[&[f64]]) -> SubjectDataset {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, p)| ProbabilityRecord::new(subject, i.to_string(), None, p.to_vec(), None).unwrap())
            .collect();
        SubjectDataset::new(subject, records).unwrap()
    }

    fn cfg(k: usize, relevant: &[usize]) -> ScoreConfig {
        ScoreConfig::new(ClassSet::new(k, relevant.iter().copied()).unwrap())
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(predict_class(&[0.1, 0.6, 0.3]), 1);
        assert_eq!(predict_class(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(predict_class(&[0.2; 5]), 0);
    }

    #[test]
    fn confidence_is_max() {
        assert_eq!(confidence(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(confidence(&[0.25; 4]), 0.25);
        assert_eq!(confidence(&[0.7, 0.2, 0.1]), 0.7);
    }

    #[test]
    fn two_record_example() {
        let d = dataset("s", &[&[0.7, 0.2, 0.1], &[0.4, 0.5, 0.1]]);
        let s = cobra_score(&d, &cfg(3, &[0, 1])).unwrap();
        assert!((s.score.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!((s.n_total, s.n_relevant), (2, 2));
    }

    #[test]
    fn certain_and_missing() {
        let d = dataset("s", &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(cobra_score(&d, &cfg(2, &[0])).unwrap().score, Some(1.0));

        let d = dataset("s", &[&[0.1, 0.9]]);
        let s = cobra_score(&d, &cfg(2, &[0])).unwrap();
        assert_eq!(s.score, None);
        assert_eq!((s.n_total, s.n_relevant), (1, 0));

        let strict = cfg(2, &[0]).with_policy(MissingPolicy::ErrorOut);
        assert!(matches!(
            cobra_score(&d, &strict),
            Err(Error::EmptyRelevantSubset { .. })
        ));
    }

    #[test]
    fn class_count_mismatch() {
        let d = dataset("s", &[&[0.5, 0.5]]);
        assert!(matches!(
            cobra_score(&d, &cfg(3, &[0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cohort_composition() {
        let a = dataset("a", &[&[0.7, 0.2, 0.1], &[0.4, 0.5, 0.1]]);
        let b = dataset("b", &[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        let scores = cohort_scores(&[a, b], &cfg(3, &[0, 1])).unwrap();
        let values: Vec<f64> = scores.iter().map(|s| s.score.unwrap()).collect();
        assert!((values[0] - 0.6).abs() < 1e-15);
        assert_eq!(values[1], 1.0);
        assert!(cohort_scores(&[], &cfg(3, &[0])).unwrap().is_empty());

        let c = dataset("c", &[&[0.1, 0.9]]);
        let scores = cohort_scores(&[c], &cfg(2, &[0])).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].score, None);
    }

    #[test]
    fn grouped_scores() {
        let records = vec![
            ProbabilityRecord::new("s", "0", Some("g1".into()), vec![1.0, 0.0], None).unwrap(),
            ProbabilityRecord::new("s", "1", Some("g2".into()), vec![0.5, 0.5], None).unwrap(),
            ProbabilityRecord::new("t", "0", Some("g1".into()), vec![0.8, 0.2], None).unwrap(),
        ];
        let parts = partition_by_subject(records);
        let by = cobra_by_group(&parts, &cfg(2, &[0])).unwrap();
        assert_eq!(by["g1"][0].score, Some(1.0));
        assert_eq!(by["g2"][0].score, Some(0.5));
        assert_eq!(by["g1"].len(), 2);
        assert_eq!(by["g2"].len(), 1);
    }

    #[test]
    fn ungrouped_records_single_group() {
        let a = dataset("a", &[&[0.7, 0.2, 0.1], &[0.4, 0.5, 0.1]]);
        let c = cfg(3, &[0, 1]);
        let by = cobra_by_group(std::slice::from_ref(&a), &c).unwrap();
        assert_eq!(by.len(), 1);
        assert_eq!(by[UNGROUPED], cohort_scores(&[a], &c).unwrap());
    }
}
