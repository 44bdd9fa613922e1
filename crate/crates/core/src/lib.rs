//! Confidence-based subject-level anomaly scoring (COBRA).
//!
//! A classifier trained only on healthy subjects is applied to the data of a
//! new subject. The subject's score is the mean confidence of the model over
//! the datapoints it assigns to clinically relevant classes; impaired subjects
//! look less like the training population and receive lower scores.
//!
//! Modules:
//! - [`types`]: records, class sets, scores, assessments; validation.
//! - [`io`]: CSV formats.
//! - [`scoring`]: argmax/confidence and the subject score.
//! - [`stats`]: Pearson correlation, Fisher-z and bootstrap intervals,
//!   stratification, KDE, classifier metrics.
//! - [`fid`]: Fréchet distance to a healthy reference population.
//! - [`refmodel`]: a small MLP classifier used for desk-scale runs.
//! - [`synth`]: synthetic cohorts with controllable severity and confounders.
//! - [`analysis`]: end-to-end pipeline helpers.

#![forbid(unsafe_code)]

pub mod analysis;
pub mod error;
pub mod fid;
pub mod io;
pub mod numeric;
pub mod refmodel;
pub mod scoring;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, ErrorClass, RecordError, Result};
pub use types::{
    partition_by_subject, validate_record, AssessmentTable, ClassSet, GaussianSummary, Orientation, ProbabilityRecord,
    Sample, SubjectDataset, SubjectScore,
};
