//! End-to-end helpers: the synthetic healthy-train / impaired-test pipeline and
//! the comparison tables built on top of subject scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::{predict_dataset, train, DatasetPrediction, RefModel, TrainConfig, TrainingLog};
use crate::scoring::{cobra_by_group, cohort_scores, ScoreConfig};
use crate::stats::{correlate_scores, CiSpec, CorrelationReport};
use crate::synth::{generate_cohort, Cohort, SynthConfig};
use crate::types::{partition_by_subject, AssessmentTable, ClassSet, SubjectDataset, SubjectScore};

/// Everything produced by one synthetic run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub cohort: Cohort,
    pub model: RefModel,
    pub log: TrainingLog,
    pub test: DatasetPrediction,
    pub reference: DatasetPrediction,
    pub healthy: DatasetPrediction,
}

impl PipelineRun {
    pub fn datasets(&self) -> Vec<SubjectDataset> {
        partition_by_subject(self.test.records.clone())
    }
}

/// Generates a cohort, trains on its healthy part and predicts everything else.
pub fn run_synthetic_pipeline(synth: &SynthConfig, train_cfg: &TrainConfig) -> Result<PipelineRun> {
    let cohort = generate_cohort(synth)?;
    let (model, log) = train(&cohort.healthy, synth.classes, train_cfg)?;
    let test = predict_dataset(&model, &cohort.test_samples())?;
    let reference = predict_dataset(&model, &cohort.reference)?;
    let healthy = predict_dataset(&model, &cohort.healthy)?;
    Ok(PipelineRun {
        cohort,
        model,
        log,
        test,
        reference,
        healthy,
    })
}

/// Mean of the non-missing scores of each severity level, in grid order.
pub fn mean_score_by_severity(run: &PipelineRun, scores: &[SubjectScore]) -> Vec<(f64, f64)> {
    let severity: HashMap<&str, f64> = run
        .cohort
        .subjects
        .iter()
        .map(|s| (s.subject_id.as_str(), s.severity))
        .collect();
    let mut levels: Vec<f64> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for s in scores {
        let (Some(v), Some(&sev)) = (s.score, severity.get(s.subject_id.as_str())) else {
            continue;
        };
        let slot = match levels.iter().position(|&l| l == sev) {
            Some(i) => i,
            None => {
                levels.push(sev);
                sums.push((0.0, 0));
                levels.len() - 1
            }
        };
        sums[slot].0 += v;
        sums[slot].1 += 1;
    }
    levels
        .into_iter()
        .zip(sums)
        .map(|(l, (sum, n))| (l, sum / n as f64))
        .collect()
}

/// Correlation result or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Report {
        #[serde(flatten)]
        report: CorrelationReport,
        dropped_missing: usize,
    },
    Unavailable {
        error: String,
    },
}

impl Outcome {
    pub fn report(&self) -> Option<&CorrelationReport> {
        match self {
            Outcome::Report { report, .. } => Some(report),
            Outcome::Unavailable { .. } => None,
        }
    }
}

fn outcome(scores: &[SubjectScore], assess: &AssessmentTable, ci: CiSpec, level: f64) -> Outcome {
    match correlate_scores(scores, assess, ci, level) {
        Ok(c) => Outcome::Report {
            report: c.report,
            dropped_missing: c.dropped_missing,
        },
        Err(e) => Outcome::Unavailable { error: e.to_string() },
    }
}

/// Correlation with the clinical score using relevant classes, the remaining
/// classes, and all classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTable {
    pub relevant: Outcome,
    pub non_relevant: Outcome,
    pub all: Outcome,
}

pub fn relevance_table(
    datasets: &[SubjectDataset],
    classes: &ClassSet,
    assess: &AssessmentTable,
    ci: CiSpec,
    level: f64,
) -> Result<RelevanceTable> {
    let k = classes.num_classes();
    let score_with = |cs: &ClassSet| cohort_scores(datasets, &ScoreConfig::new(cs.clone()));
    let relevant = outcome(&score_with(classes)?, assess, ci, level);
    let non_relevant = match classes.complement() {
        Some(rest) => outcome(&score_with(&rest)?, assess, ci, level),
        None => Outcome::Unavailable {
            error: "every class is relevant".into(),
        },
    };
    let all = outcome(&score_with(&ClassSet::all(k)?)?, assess, ci, level);
    Ok(RelevanceTable {
        relevant,
        non_relevant,
        all,
    })
}

/// Correlation of per-group scores with the clinical score, one entry per group.
pub fn group_table(
    datasets: &[SubjectDataset],
    cfg: &ScoreConfig,
    assess: &AssessmentTable,
    ci: CiSpec,
    level: f64,
) -> Result<BTreeMap<String, Outcome>> {
    Ok(cobra_by_group(datasets, cfg)?
        .into_iter()
        .map(|(g, scores)| {
            let o = outcome(&scores, assess, ci, level);
            (g, o)
        })
        .collect())
}

/// Scores of every subject, keyed by id.
pub fn scores_by_id(scores: &[SubjectScore]) -> Result<HashMap<&str, &SubjectScore>> {
    let mut out = HashMap::new();
    for s in scores {
        if out.insert(s.subject_id.as_str(), s).is_some() {
            return Err(Error::Config(format!("duplicate subject id {}", s.subject_id)));
        }
    }
    Ok(out)
}
