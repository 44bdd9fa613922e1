//! Accuracy and macro precision of the underlying classifier, optionally split
//! by group or by a per-subject label, with bootstrap intervals over datapoints.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::correlation::iteration_rng;
use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::scoring::{group_key, predict_class};
use crate::types::{ClassSet, ProbabilityRecord};

pub const DEFAULT_METRIC_BOOTSTRAP_ITERS: usize = 2000;

/// Label used when a subject is missing from a [`GroupBy::SubjectLabel`] map.
pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, Copy)]
pub enum GroupBy<'a> {
    None,
    Group,
    /// Per-subject label such as impairment level or cohort.
    SubjectLabel(&'a HashMap<String, String>),
}

/// Which datapoints and classes enter the metrics.
#[derive(Debug, Clone, Copy)]
pub enum MetricScope<'a> {
    All,
    /// Only datapoints predicted in a relevant class; precision is averaged
    /// over the relevant classes only.
    PredictedRelevant(&'a ClassSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub group: String,
    pub n: usize,
    pub accuracy: f64,
    pub accuracy_ci: (f64, f64),
    pub macro_precision: f64,
    pub macro_precision_ci: (f64, f64),
    /// Classes in scope that were never predicted; they count as precision 0.
    pub unpredicted_classes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    truth: usize,
    predicted: usize,
}

fn accuracy(outcomes: &[Outcome]) -> f64 {
    let correct = outcomes.iter().filter(|o| o.truth == o.predicted).count();
    correct as f64 / outcomes.len() as f64
}

fn macro_precision(outcomes: &[Outcome], classes: &[usize], k: usize) -> (f64, Vec<usize>) {
    let mut predicted = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for o in outcomes {
        predicted[o.predicted] += 1;
        if o.truth == o.predicted {
            correct[o.predicted] += 1;
        }
    }
    let mut unpredicted = Vec::new();
    let mut total = 0.0;
    for &c in classes {
        if predicted[c] == 0 {
            unpredicted.push(c);
        } else {
            total += correct[c] as f64 / predicted[c] as f64;
        }
    }
    (total / classes.len() as f64, unpredicted)
}

fn percentile_interval(mut values: Vec<f64>, level: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    (
        quantile_sorted(&values, alpha / 2.0),
        quantile_sorted(&values, 1.0 - alpha / 2.0),
    )
}

fn report_for(
    group: String,
    outcomes: &[Outcome],
    classes: &[usize],
    k: usize,
    iters: usize,
    seed: u64,
) -> PerformanceReport {
    let n = outcomes.len();
    let acc = accuracy(outcomes);
    let (prec, unpredicted_classes) = macro_precision(outcomes, classes, k);
    let mut accs = Vec::with_capacity(iters);
    let mut precs = Vec::with_capacity(iters);
    let mut sample = Vec::with_capacity(n);
    for i in 0..iters {
        let mut rng = iteration_rng(seed, i);
        sample.clear();
        sample.extend((0..n).map(|_| outcomes[rng.random_range(0..n)]));
        accs.push(accuracy(&sample));
        precs.push(macro_precision(&sample, classes, k).0);
    }
    PerformanceReport {
        group,
        n,
        accuracy: acc,
        accuracy_ci: percentile_interval(accs, 0.95),
        macro_precision: prec,
        macro_precision_ci: percentile_interval(precs, 0.95),
        unpredicted_classes,
    }
}

/// Classification performance per group (95% percentile bootstrap intervals).
pub fn performance_metrics(
    records: &[ProbabilityRecord],
    group_by: GroupBy<'_>,
    scope: MetricScope<'_>,
    iters: usize,
    seed: u64,
) -> Result<Vec<PerformanceReport>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let k = first.num_classes();
    let classes: Vec<usize> = match scope {
        MetricScope::All => (0..k).collect(),
        MetricScope::PredictedRelevant(cs) => {
            if cs.num_classes() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: cs.num_classes(),
                });
            }
            cs.relevant().iter().copied().collect()
        }
    };
    let mut groups: BTreeMap<String, Vec<Outcome>> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        if r.num_classes() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: r.num_classes(),
            });
        }
        let truth = r.true_label.ok_or(Error::MissingLabels { index })?;
        let predicted = predict_class(r.probs());
        if let MetricScope::PredictedRelevant(cs) = scope {
            if !cs.is_relevant(predicted) {
                continue;
            }
        }
        let key = match group_by {
            GroupBy::None => "all".to_string(),
            GroupBy::Group => group_key(r).to_string(),
            GroupBy::SubjectLabel(labels) => labels
                .get(&r.subject_id)
                .cloned()
                .unwrap_or_else(|| UNLABELED.to_string()),
        };
        groups.entry(key).or_default().push(Outcome { truth, predicted });
    }
    Ok(groups
        .into_iter()
        .map(|(g, outcomes)| report_for(g, &outcomes, &classes, k, iters, seed))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(subject: &str, group: &str, probs: &[f64], label: usize) -> ProbabilityRecord {
        ProbabilityRecord::new(subject, "p", Some(group.into()), probs.to_vec(), Some(label)).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let records = vec![record("a", "g", &[0.9, 0.1], 0), record("a", "g", &[0.2, 0.8], 1)];
        let r = &performance_metrics(&records, GroupBy::None, MetricScope::All, 200, 1).unwrap()[0];
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_precision, 1.0);
        assert_eq!(r.accuracy_ci, (1.0, 1.0));
    }

    #[test]
    fn binary_all_class_zero() {
        let records = vec![
            record("a", "g", &[0.9, 0.1], 0),
            record("a", "g", &[0.6, 0.4], 1),
            record("a", "g", &[0.7, 0.3], 0),
            record("a", "g", &[0.8, 0.2], 1),
        ];
        let r = &performance_metrics(&records, GroupBy::None, MetricScope::All, 200, 1).unwrap()[0];
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_precision, 0.25);
        assert_eq!(r.unpredicted_classes, vec![1]);
    }

    #[test]
    fn missing_labels() {
        let records = vec![ProbabilityRecord::new("a", "p", None, vec![0.5, 0.5], None).unwrap()];
        assert!(matches!(
            performance_metrics(&records, GroupBy::None, MetricScope::All, 10, 1),
            Err(Error::MissingLabels { index: 0 })
        ));
    }

    #[test]
    fn grouping_and_relevant_scope() {
        let records = vec![
            record("a", "g1", &[0.9, 0.05, 0.05], 0),
            record("a", "g2", &[0.1, 0.8, 0.1], 2),
            record("b", "g1", &[0.1, 0.1, 0.8], 2),
        ];
        let by_group = performance_metrics(&records, GroupBy::Group, MetricScope::All, 100, 3).unwrap();
        let names: Vec<&str> = by_group.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(names, ["g1", "g2"]);
        assert_eq!(by_group[0].accuracy, 1.0);
        assert_eq!(by_group[1].accuracy, 0.0);

        let labels: HashMap<String, String> = [("a".to_string(), "mild".to_string())].into();
        let by_label = performance_metrics(&records, GroupBy::SubjectLabel(&labels), MetricScope::All, 100, 3).unwrap();
        assert_eq!(by_label.len(), 2);
        assert_eq!(by_label[1].group, UNLABELED);

        let relevant = ClassSet::new(3, [0, 1]).unwrap();
        let r = &performance_metrics(
            &records,
            GroupBy::None,
            MetricScope::PredictedRelevant(&relevant),
            100,
            3,
        )
        .unwrap()[0];
        assert_eq!(r.n, 2);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_precision, 0.5);
    }
}
