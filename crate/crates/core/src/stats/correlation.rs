//! Pearson correlation with Fisher-z and percentile-bootstrap intervals, the
//! score/assessment join, and stratified correlation.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::{mean, quantile_sorted, ranks};
use crate::types::{AssessmentTable, SubjectScore};

/// Redraw budget for a single bootstrap iteration.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

pub const MIN_BOOTSTRAP_ITERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    FisherZ,
    Bootstrap,
}

/// How to build the interval for a correlation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiSpec {
    FisherZ,
    Bootstrap { iters: usize, seed: u64 },
}

impl CiSpec {
    pub fn method(self) -> CiMethod {
        match self {
            CiSpec::FisherZ => CiMethod::FisherZ,
            CiSpec::Bootstrap { .. } => CiMethod::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
    pub level: f64,
}

/// Product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPairs {
            needed: 3,
            found: xs.len(),
        });
    }
    pearson_unchecked(xs, ys)
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

fn pearson_unchecked(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if is_constant(xs) || is_constant(ys) {
        return Err(Error::DegenerateVariance("one of the variables is constant".into()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateVariance("zero sum of squares".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    pearson(&ranks(xs), &ranks(ys))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} must lie in (0, 1)")));
    }
    Ok(())
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Fisher-z interval: tanh(atanh(rho) +/- z / sqrt(n - 3)).
pub fn fisher_ci(rho: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::RhoOutOfRange(rho));
    }
    if n < 4 {
        return Err(Error::TooFewPairs { needed: 4, found: n });
    }
    check_level(level)?;
    let z = standard_normal_quantile((1.0 + level) / 2.0);
    let centre = rho.atanh();
    let half = z / ((n - 3) as f64).sqrt();
    Ok(((centre - half).tanh(), (centre + half).tanh()))
}

/// Percentile bootstrap interval for Pearson's rho.
///
/// Iteration `i` draws from its own ChaCha stream `(seed, i)`, so the result
/// does not depend on evaluation order. Resamples with a constant variable are
/// redrawn, up to [`MAX_RESAMPLE_ATTEMPTS`] times per iteration.
pub fn bootstrap_ci(pairs: &[(f64, f64)], level: f64, iters: usize, seed: u64) -> Result<(f64, f64)> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::TooFewPairs { needed: 4, found: n });
    }
    if iters < MIN_BOOTSTRAP_ITERS {
        return Err(Error::Config(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_ITERS} iterations, got {iters}"
        )));
    }
    check_level(level)?;
    let mut rhos = Vec::with_capacity(iters);
    let mut xs = vec![0.0; n];
    let mut ys = vec![0.0; n];
    for iteration in 0..iters {
        let mut rng = iteration_rng(seed, iteration);
        let mut attempts = 0;
        let rho = loop {
            if attempts == MAX_RESAMPLE_ATTEMPTS {
                return Err(Error::TooManyDegenerateResamples { iteration, attempts });
            }
            attempts += 1;
            for j in 0..n {
                let (x, y) = pairs[rng.random_range(0..n)];
                xs[j] = x;
                ys[j] = y;
            }
            match pearson_unchecked(&xs, &ys) {
                Ok(r) => break r,
                Err(Error::DegenerateVariance(_)) => continue,
                Err(e) => return Err(e),
            }
        };
        rhos.push(rho);
    }
    rhos.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lo = quantile_sorted(&rhos, alpha / 2.0).clamp(-1.0, 1.0);
    let hi = quantile_sorted(&rhos, 1.0 - alpha / 2.0).clamp(-1.0, 1.0);
    Ok((lo, hi))
}

pub(crate) fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Pearson's rho with an interval.
///
/// Two limiting cases of the Fisher interval are filled in rather than
/// rejected: with exactly three pairs the interval is (-1, 1), and a perfect
/// correlation gets the degenerate interval (rho, rho).
pub fn correlation_report(xs: &[f64], ys: &[f64], ci: CiSpec, level: f64) -> Result<CorrelationReport> {
    let rho = pearson(xs, ys)?;
    check_level(level)?;
    let n = xs.len();
    let (ci_low, ci_high) = match ci {
        CiSpec::FisherZ if rho.abs() >= 1.0 => (rho, rho),
        CiSpec::FisherZ if n == 3 => (-1.0, 1.0),
        CiSpec::FisherZ => fisher_ci(rho, n, level)?,
        CiSpec::Bootstrap { iters, seed } => {
            let pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
            if n == 3 {
                (-1.0, 1.0)
            } else {
                bootstrap_ci(&pairs, level, iters, seed)?
            }
        }
    };
    Ok(CorrelationReport {
        rho,
        n,
        ci_low,
        ci_high,
        ci_method: ci.method(),
        level,
    })
}

/// A subject present in both the score list and the assessment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedPair {
    pub subject_id: String,
    pub score: f64,
    pub clinical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCorrelation {
    pub report: CorrelationReport,
    /// Subjects dropped because their score was missing.
    pub dropped_missing: usize,
    /// Scored subjects with no clinical assessment.
    pub dropped_unassessed: usize,
    pub pairs: Vec<JoinedPair>,
}

/// Joins scores with assessments on subject id (score order is kept).
pub fn join_scores(scores: &[SubjectScore], assess: &AssessmentTable) -> (Vec<JoinedPair>, usize, usize) {
    let mut pairs = Vec::new();
    let mut missing = 0;
    let mut unassessed = 0;
    for s in scores {
        let Some(score) = s.score else {
            missing += 1;
            continue;
        };
        match assess.get(&s.subject_id) {
            Some(clinical) => pairs.push(JoinedPair {
                subject_id: s.subject_id.clone(),
                score,
                clinical,
            }),
            None => unassessed += 1,
        }
    }
    (pairs, missing, unassessed)
}

pub fn correlate_pairs(pairs: &[JoinedPair], ci: CiSpec, level: f64) -> Result<CorrelationReport> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.clinical).collect();
    correlation_report(&xs, &ys, ci, level)
}

/// Correlates subject scores with clinical scores.
pub fn correlate_scores(
    scores: &[SubjectScore],
    assess: &AssessmentTable,
    ci: CiSpec,
    level: f64,
) -> Result<ScoreCorrelation> {
    let (pairs, dropped_missing, dropped_unassessed) = join_scores(scores, assess);
    if pairs.len() < 3 {
        return Err(Error::InsufficientOverlap {
            needed: 3,
            found: pairs.len(),
        });
    }
    let report = correlate_pairs(&pairs, ci, level)?;
    Ok(ScoreCorrelation {
        report,
        dropped_missing,
        dropped_unassessed,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStratum {
    pub stratum: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub strata: BTreeMap<String, CorrelationReport>,
    pub skipped: Vec<SkippedStratum>,
    /// Pairs whose subject has no stratum; they only enter the pooled report.
    pub unassigned: usize,
    pub pooled: CorrelationReport,
}

/// Per-stratum correlation next to the pooled one. Strata with fewer than
/// three pairs, or with a constant variable, are listed as skipped.
pub fn stratified_correlation(
    pairs: &[JoinedPair],
    strata: &HashMap<String, String>,
    ci: CiSpec,
    level: f64,
) -> Result<StratifiedReport> {
    let pooled = correlate_pairs(pairs, ci, level)?;
    let mut grouped: BTreeMap<&str, Vec<JoinedPair>> = BTreeMap::new();
    let mut unassigned = 0;
    for p in pairs {
        match strata.get(&p.subject_id) {
            Some(s) => grouped.entry(s.as_str()).or_default().push(p.clone()),
            None => unassigned += 1,
        }
    }
    let mut reports = BTreeMap::new();
    let mut skipped = Vec::new();
    for (stratum, members) in grouped {
        if members.len() < 3 {
            skipped.push(SkippedStratum {
                stratum: stratum.to_string(),
                n: members.len(),
                reason: "fewer than 3 pairs".into(),
            });
            continue;
        }
        match correlate_pairs(&members, ci, level) {
            Ok(r) => {
                reports.insert(stratum.to_string(), r);
            }
            Err(Error::DegenerateVariance(msg)) => skipped.push(SkippedStratum {
                stratum: stratum.to_string(),
                n: members.len(),
                reason: msg,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(StratifiedReport {
        strata: reports,
        skipped,
        unassigned,
        pooled,
    })
}
