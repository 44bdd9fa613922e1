//! Fréchet distance between Gaussian fits of two feature sets.
//!
//! For summaries (mu_x, S_x) and (mu_y, S_y):
//!
//! ```text
//! d = |mu_x - mu_y|^2 + tr(S_x) + tr(S_y) - 2 tr((sqrt(S_x) S_y sqrt(S_x))^(1/2))
//! ```
//!
//! The trace of the square root uses the symmetric product
//! `sqrt(S_x) S_y sqrt(S_x) = M^T M` with `M = sqrt(S_y) sqrt(S_x)`, so it equals
//! the sum of the singular values of `M`. Taking singular values directly
//! avoids square roots of eigenvalues that are pure rounding noise, which
//! matters for rank-deficient covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{correlation_report, CiSpec, CorrelationReport};
use crate::types::{max_asymmetry, AssessmentTable, GaussianSummary, SYMMETRY_TOLERANCE};

/// Ridge added to each covariance before taking square roots.
pub const COVARIANCE_RIDGE: f64 = 1e-10;

/// Negative distances no smaller than this are rounding noise and become 0.
pub const NEGATIVE_CLAMP: f64 = 1e-8;

pub const REFERENCE_ID: &str = "REFERENCE";

/// Feature vectors of one subject, or of the reference population.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub id: String,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(id: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let d = first.len();
            if let Some(bad) = rows.iter().find(|r| r.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: bad.len(),
                });
            }
        }
        Ok(Self { id: id.into(), rows })
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }
}

/// Sample mean and unbiased (n - 1) covariance, symmetrised.
pub fn summarize(features: &FeatureSet) -> Result<GaussianSummary> {
    let n = features.rows.len();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, found: n });
    }
    let d = features.rows[0].len();
    let mut mean = DVector::zeros(d);
    for row in &features.rows {
        mean += DVector::from_column_slice(row);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in &features.rows {
        let centred = DVector::from_column_slice(row) - &mean;
        cov.ger(1.0, &centred, &centred, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianSummary::new(mean, cov, n)
}

/// Principal square root of a symmetric positive semi-definite matrix.
///
/// Negative eigenvalues (rounding noise on PSD input) are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&roots);
    let s = scaled * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn ridge(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov + DMatrix::identity(cov.nrows(), cov.ncols()) * COVARIANCE_RIDGE
}

/// Fréchet distance between two Gaussian summaries.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mean_gap = (a.mean() - b.mean()).norm_squared();
    let sa = ridge(a.cov());
    let sb = ridge(b.cov());
    let root_a = matrix_sqrt_psd(&sa)?;
    let root_b = matrix_sqrt_psd(&sb)?;
    let cross: f64 = (root_b * root_a).singular_values().sum();
    let d = mean_gap + sa.trace() + sb.trace() - 2.0 * cross;
    if (-NEGATIVE_CLAMP..0.0).contains(&d) {
        return Ok(0.0);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDistance {
    pub subject_id: String,
    pub n_rows: usize,
    pub distance: f64,
    pub clinical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub reference_rows: usize,
    pub distances: Vec<SubjectDistance>,
    /// Subjects with fewer than two feature rows.
    pub skipped: Vec<String>,
    pub correlation: CorrelationReport,
}

/// Distance of every subject with at least two feature rows to the reference
/// population. Returns the distances and the ids of skipped subjects.
pub fn subject_distances(
    reference: &FeatureSet,
    subjects: &[FeatureSet],
    assess: &AssessmentTable,
) -> Result<(Vec<SubjectDistance>, Vec<String>)> {
    let reference_summary = summarize(reference)?;
    let mut distances = Vec::with_capacity(subjects.len());
    let mut skipped = Vec::new();
    for subject in subjects {
        if subject.rows.len() < 2 {
            skipped.push(subject.id.clone());
            continue;
        }
        let summary = summarize(subject)?;
        let distance = frechet_distance(&reference_summary, &summary)?;
        distances.push(SubjectDistance {
            subject_id: subject.id.clone(),
            n_rows: subject.rows.len(),
            distance,
            clinical: assess.get(&subject.id),
        });
    }
    Ok((distances, skipped))
}

/// Pearson correlation of distances with clinical scores over assessed subjects.
pub fn correlate_distances(distances: &[SubjectDistance], ci: CiSpec, level: f64) -> Result<CorrelationReport> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = distances
        .iter()
        .filter_map(|d| d.clinical.map(|c| (d.distance, c)))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientOverlap {
            needed: 3,
            found: xs.len(),
        });
    }
    correlation_report(&xs, &ys, ci, level)
}

/// Distance of every subject to the reference population and the correlation
/// of those distances with the clinical scores.
pub fn fid_report(
    reference: &FeatureSet,
    subjects: &[FeatureSet],
    assess: &AssessmentTable,
    ci: CiSpec,
    level: f64,
) -> Result<FidReport> {
    let (distances, skipped) = subject_distances(reference, subjects, assess)?;
    let correlation = correlate_distances(&distances, ci, level)?;
    Ok(FidReport {
        reference_rows: reference.rows.len(),
        distances,
        skipped,
        correlation,
    })
}
