//! Synthetic cohorts with a controllable impairment severity.
//!
//! Every class is an isotropic Gaussian around its class mean. Impairment of
//! severity `s` pulls the means of the degraded classes towards their common
//! centroid, `m_k(s) = (1 - s) m_k + s m_bar`, so those classes overlap more
//! and more and a classifier trained on healthy data loses confidence on them.
//! An optional confounder adds a fixed shift to every point of a subset of
//! subjects, independently of severity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AssessmentTable, ClassSet, Orientation, Sample};

/// Clinical score of an unimpaired subject (FMA-like scale).
pub const MAX_CLINICAL_SCORE: f64 = 66.0;

pub const STRATUM_CONFOUNDED: &str = "confounded";
pub const STRATUM_CLEAN: &str = "clean";

const ROLE_HEALTHY: u64 = 1;
const ROLE_REFERENCE: u64 = 2;
const ROLE_TEST: u64 = 3;
const ROLE_CONFOUNDER_PICK: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfounderConfig {
    /// Length of the shift vector.
    pub magnitude: f64,
    /// Fraction of test subjects (per severity level) that are shifted.
    pub fraction: f64,
    /// Shift direction; normalised before use. Defaults to the direction from
    /// the centroid of the relevant class means to the centroid of the others.
    pub direction: Option<Vec<f64>>,
}

impl Default for ConfounderConfig {
    fn default() -> Self {
        Self {
            magnitude: 2.5,
            fraction: 0.5,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub class_names: Vec<String>,
    pub relevant: Vec<usize>,
    /// Classes whose means move with severity; defaults to `relevant`.
    pub degraded: Option<Vec<usize>>,
    pub dim: usize,
    /// Explicit class means; defaults to `mean_scale` times the first basis vectors.
    pub class_means: Option<Vec<Vec<f64>>>,
    pub mean_scale: f64,
    pub spread: f64,
    pub points_per_subject: usize,
    pub healthy_subjects: usize,
    pub reference_subjects: usize,
    pub subjects_per_level: usize,
    pub severity_grid: Vec<f64>,
    /// Group labels (activities) assigned uniformly to points; empty for none.
    pub groups: Vec<String>,
    pub confounder: Option<ConfounderConfig>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            class_names: ["reach", "reposition", "transport", "stabilize", "rest"]
                .map(String::from)
                .to_vec(),
            relevant: vec![0, 1, 2],
            degraded: None,
            dim: 8,
            class_means: None,
            mean_scale: 3.5,
            spread: 1.0,
            points_per_subject: 200,
            healthy_subjects: 20,
            reference_subjects: 2,
            subjects_per_level: 10,
            severity_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            groups: ["glasses", "shelf", "table-top"].map(String::from).to_vec(),
            confounder: None,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim == 0 {
            return bad("feature dimension must be positive".into());
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad(format!("spread must be positive, got {}", self.spread));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.classes {
            return bad(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.classes
            ));
        }
        ClassSet::new(self.classes, self.relevant.iter().copied())?;
        if let Some(d) = &self.degraded {
            if d.is_empty() || d.iter().any(|&c| c >= self.classes) {
                return bad("degraded classes must be a non-empty subset of the classes".into());
            }
        }
        match &self.class_means {
            Some(means) => {
                if means.len() != self.classes || means.iter().any(|m| m.len() != self.dim) {
                    return bad(format!(
                        "class_means must be {} vectors of length {}",
                        self.classes, self.dim
                    ));
                }
            }
            None if self.classes > self.dim => {
                return bad(format!(
                    "default class means need classes <= dim ({} > {})",
                    self.classes, self.dim
                ));
            }
            None => {}
        }
        if self.points_per_subject == 0 {
            return bad("points_per_subject must be positive".into());
        }
        if let Some(s) = self.severity_grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return bad(format!("severity {s} outside [0, 1]"));
        }
        if let Some(c) = &self.confounder {
            if !(0.0..=1.0).contains(&c.fraction) || !c.magnitude.is_finite() {
                return bad("confounder fraction must lie in [0, 1] with a finite magnitude".into());
            }
            if let Some(dir) = &c.direction {
                if dir.len() != self.dim || dir.iter().all(|&v| v == 0.0) {
                    return bad("confounder direction must be a non-zero vector of length dim".into());
                }
            }
        }
        Ok(())
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        let cs = ClassSet::new(self.classes, self.relevant.iter().copied())?;
        if self.class_names.is_empty() {
            Ok(cs)
        } else {
            cs.with_names(self.class_names.clone())
        }
    }

    pub fn degraded_classes(&self) -> Vec<usize> {
        self.degraded.clone().unwrap_or_else(|| self.relevant.clone())
    }

    /// Healthy class means.
    pub fn base_means(&self) -> Vec<Vec<f64>> {
        match &self.class_means {
            Some(means) => means.clone(),
            None => (0..self.classes)
                .map(|k| {
                    let mut m = vec![0.0; self.dim];
                    m[k] = self.mean_scale;
                    m
                })
                .collect(),
        }
    }

    /// Centroid of the degraded classes' healthy means.
    pub fn degraded_centroid(&self) -> Vec<f64> {
        centroid(&self.base_means(), &self.degraded_classes(), self.dim)
    }

    /// Class means at severity `s`.
    pub fn means_at(&self, severity: f64) -> Vec<Vec<f64>> {
        let centre = self.degraded_centroid();
        let degraded = self.degraded_classes();
        self.base_means()
            .into_iter()
            .enumerate()
            .map(|(k, m)| {
                if !degraded.contains(&k) {
                    return m;
                }
                if severity == 1.0 {
                    return centre.clone();
                }
                m.iter()
                    .zip(&centre)
                    .map(|(a, c)| (1.0 - severity) * a + severity * c)
                    .collect()
            })
            .collect()
    }

    /// Confounder shift vector, if a confounder is configured.
    pub fn confounder_shift(&self) -> Option<Vec<f64>> {
        let conf = self.confounder.as_ref()?;
        let direction = match &conf.direction {
            Some(d) => d.clone(),
            None => {
                let means = self.base_means();
                let others: Vec<usize> = (0..self.classes).filter(|c| !self.relevant.contains(c)).collect();
                if others.is_empty() {
                    let mut axis = vec![0.0; self.dim];
                    axis[0] = 1.0;
                    axis
                } else {
                    let from = centroid(&means, &self.relevant, self.dim);
                    let to = centroid(&means, &others, self.dim);
                    to.iter().zip(&from).map(|(t, f)| t - f).collect()
                }
            }
        };
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        Some(direction.iter().map(|v| v / norm * conf.magnitude).collect())
    }
}

fn centroid(means: &[Vec<f64>], classes: &[usize], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for &k in classes {
        for (acc, v) in c.iter_mut().zip(&means[k]) {
            *acc += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= classes.len() as f64);
    c
}

/// Seed for subject `index` of a given role, decorrelated from the master seed.
pub fn derive_seed(master: u64, role: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64((role << 40) ^ index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub subject_id: String,
    pub severity: f64,
    pub confounded: bool,
    pub samples: Vec<Sample>,
}

impl SynthSubject {
    /// FMA-like score: 66 for healthy, 0 for maximal impairment.
    pub fn clinical_score(&self) -> f64 {
        MAX_CLINICAL_SCORE * (1.0 - self.severity)
    }
}

fn draw_points(
    cfg: &SynthConfig,
    subject_id: &str,
    means: &[Vec<f64>],
    shift: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    (0..cfg.points_per_subject)
        .map(|i| {
            let label = rng.random_range(0..cfg.classes);
            let group = if cfg.groups.is_empty() {
                None
            } else {
                Some(cfg.groups[rng.random_range(0..cfg.groups.len())].clone())
            };
            let mut features: Vec<f64> = means[label]
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + cfg.spread * z
                })
                .collect();
            if let Some(shift) = shift {
                features.iter_mut().zip(shift).for_each(|(f, s)| *f += s);
            }
            Sample {
                subject_id: subject_id.to_string(),
                point_id: format!("{subject_id}-{i:04}"),
                group,
                label: Some(label),
                features,
            }
        })
        .collect()
}

/// One subject at severity `s`, drawn from `seed`.
pub fn generate_subject(
    cfg: &SynthConfig,
    subject_id: &str,
    severity: f64,
    confounded: bool,
    seed: u64,
) -> Result<SynthSubject> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Config(format!("severity {severity} outside [0, 1]")));
    }
    let means = cfg.means_at(severity);
    let shift = if confounded { cfg.confounder_shift() } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = draw_points(cfg, subject_id, &means, shift.as_deref(), &mut rng);
    Ok(SynthSubject {
        subject_id: subject_id.to_string(),
        severity,
        confounded: confounded && shift.is_some(),
        samples,
    })
}

fn healthy_population(cfg: &SynthConfig, prefix: &str, role: u64, count: usize) -> Vec<Sample> {
    let means = cfg.base_means();
    (0..count)
        .flat_map(|i| {
            let id = format!("{prefix}{i:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, role, i as u64));
            draw_points(cfg, &id, &means, None, &mut rng)
        })
        .collect()
}

/// Labelled training data from `healthy_subjects` unimpaired subjects.
pub fn generate_healthy(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    Ok(healthy_population(cfg, "H", ROLE_HEALTHY, cfg.healthy_subjects))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub healthy: Vec<Sample>,
    /// Held-out healthy subjects forming the reference population for distances.
    pub reference: Vec<Sample>,
    pub subjects: Vec<SynthSubject>,
    pub assessments: AssessmentTable,
    /// Subject id to confounder stratum.
    pub strata: BTreeMap<String, String>,
}

impl Cohort {
    pub fn test_samples(&self) -> Vec<Sample> {
        self.subjects.iter().flat_map(|s| s.samples.iter().cloned()).collect()
    }

    /// Subject id to a severity label such as `s=0.25`.
    pub fn severity_labels(&self) -> BTreeMap<String, String> {
        self.subjects
            .iter()
            .map(|s| (s.subject_id.clone(), format!("s={}", s.severity)))
            .collect()
    }
}

/// Training set, reference set and a test cohort of `subjects_per_level`
/// subjects at every severity in the grid.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let healthy = healthy_population(cfg, "H", ROLE_HEALTHY, cfg.healthy_subjects);
    let reference = healthy_population(cfg, "R", ROLE_REFERENCE, cfg.reference_subjects);

    let mut subjects = Vec::new();
    let mut assessments = AssessmentTable::new("fma_like", Orientation::HigherIsHealthier);
    let mut strata = BTreeMap::new();
    let mut index = 0u64;
    for (level, &severity) in cfg.severity_grid.iter().enumerate() {
        let n = cfg.subjects_per_level;
        let mut confounded = vec![false; n];
        if let Some(conf) = &cfg.confounder {
            let count = (conf.fraction * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ROLE_CONFOUNDER_PICK, level as u64));
            order.shuffle(&mut rng);
            for &j in &order[..count] {
                confounded[j] = true;
            }
        }
        for flag in confounded {
            let id = format!("T{index:03}");
            let subject = generate_subject(cfg, &id, severity, flag, derive_seed(cfg.seed, ROLE_TEST, index))?;
            assessments.insert(id.clone(), subject.clinical_score())?;
            let stratum = if subject.confounded {
                STRATUM_CONFOUNDED
            } else {
                STRATUM_CLEAN
            };
            strata.insert(id, stratum.to_string());
            subjects.push(subject);
            index += 1;
        }
    }
    Ok(Cohort {
        healthy,
        reference,
        subjects,
        assessments,
        strata,
    })
}
