//! Small reference classifier: one tanh hidden layer and a softmax output,
//! trained with plain mini-batch gradient descent on cross-entropy.
//!
//! The hidden activations double as the feature representation for the
//! Fréchet distance.
//!
//! Parameters live in one flat buffer laid out as `w1 | b1 | w2 | b2`, with
//! `w1` of shape `hidden x inputs` and `w2` of shape `classes x hidden`, both
//! row-major. Gradients use the same layout.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fid::FeatureSet;
use crate::scoring::predict_class;
use crate::types::{ClassSet, ProbabilityRecord, Sample};

pub const CHECKPOINT_FORMAT: &str = "cobra-refmodel";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RefModel {
    inputs: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier on the default init range 1/sqrt(fan_in).
    pub init_scale: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 32,
            seed: 42,
            init_scale: 1.0,
            hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "epochs, batch size and hidden width must be at least 1".into(),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probs: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Numerically stable softmax (max subtracted before exponentiating).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

impl RefModel {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        let len = hidden * inputs + hidden + classes * hidden + classes;
        Self {
            inputs,
            hidden,
            classes,
            params: vec![0.0; len],
        }
    }

    /// Uniform init in [-s, s], s = scale / sqrt(fan_in); biases start at zero.
    pub fn init(inputs: usize, hidden: usize, classes: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(inputs, hidden, classes);
        let s1 = scale / (inputs as f64).sqrt();
        let s2 = scale / (hidden as f64).sqrt();
        let (w1, _, w2, _) = model.split_mut();
        for w in w1.iter_mut() {
            *w = rng.random_range(-1.0..=1.0) * s1;
        }
        for w in w2.iter_mut() {
            *w = rng.random_range(-1.0..=1.0) * s2;
        }
        model
    }

    pub fn from_parts(
        inputs: usize,
        hidden: usize,
        classes: usize,
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
    ) -> Result<Self> {
        let expected = [hidden * inputs, hidden, classes * hidden, classes];
        let found = [w1.len(), b1.len(), w2.len(), b2.len()];
        if expected != found {
            return Err(Error::Checkpoint(format!(
                "size mismatch: layer sizes [{inputs}, {hidden}, {classes}] need arrays of {expected:?}, found {found:?}"
            )));
        }
        if classes < 2 || inputs == 0 || hidden == 0 {
            return Err(Error::Checkpoint(format!(
                "size mismatch: invalid layer sizes [{inputs}, {hidden}, {classes}]"
            )));
        }
        let params: Vec<f64> = [w1, b1, w2, b2].concat();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
            params,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        [0, b1, w2, b2]
    }

    /// Views of `(w1, b1, w2, b2)`.
    pub fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        split_params(&self.params, self.offsets())
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [_, o1, o2, o3] = self.offsets();
        let (w1, rest) = self.params.split_at_mut(o1);
        let (b1, rest) = rest.split_at_mut(o2 - o1);
        let (w2, b2) = rest.split_at_mut(o3 - o2);
        (w1, b1, w2, b2)
    }

    /// Panics if `x` does not have `inputs` entries.
    pub fn forward(&self, x: &[f64]) -> Forward {
        assert_eq!(x.len(), self.inputs, "input dimension");
        let (w1, b1, w2, b2) = self.split();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.inputs..(j + 1) * self.inputs];
                (b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &w2[c * self.hidden..(c + 1) * self.hidden];
                b2[c] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        Forward {
            probs: softmax(&logits),
            hidden,
            logits,
        }
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter (same layout as [`RefModel::params`]).
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let offsets = self.offsets();
        let (_, _, w2, _) = self.split();
        let mut loss = 0.0;
        let mut dz = vec![0.0; self.classes];
        let mut da = vec![0.0; self.hidden];
        for &(x, label) in batch {
            let fwd = self.forward(x);
            loss += log_sum_exp(&fwd.logits) - fwd.logits[label];
            for (c, (d, p)) in dz.iter_mut().zip(&fwd.probs).enumerate() {
                *d = p - if c == label { 1.0 } else { 0.0 };
            }
            let (gw1, gb1, gw2, gb2) = split_params_mut(&mut grad, offsets);
            for c in 0..self.classes {
                gb2[c] += dz[c];
                let row = &mut gw2[c * self.hidden..(c + 1) * self.hidden];
                for (g, h) in row.iter_mut().zip(&fwd.hidden) {
                    *g += dz[c] * h;
                }
            }
            for j in 0..self.hidden {
                let back: f64 = (0..self.classes).map(|c| w2[c * self.hidden + j] * dz[c]).sum();
                da[j] = back * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                gb1[j] += da[j];
                let row = &mut gw1[j * self.inputs..(j + 1) * self.inputs];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += da[j] * v;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, grad)
    }

    /// Mean cross-entropy over a labelled dataset.
    pub fn loss(&self, batch: &[(&[f64], usize)]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let total: f64 = batch
            .iter()
            .map(|&(x, label)| {
                let logits = self.forward(x).logits;
                log_sum_exp(&logits) - logits[label]
            })
            .sum();
        total / batch.len() as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (w1, b1, w2, b2) = self.split();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            sizes: [self.inputs, self.hidden, self.classes],
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let [inputs, hidden, classes] = ck.sizes;
        Self::from_parts(inputs, hidden, classes, &ck.w1, &ck.b1, &ck.w2, &ck.b2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        Self::from_checkpoint(&ck)
    }
}

fn split_params(p: &[f64], [_, o1, o2, o3]: [usize; 4]) -> (&[f64], &[f64], &[f64], &[f64]) {
    (&p[..o1], &p[o1..o2], &p[o2..o3], &p[o3..])
}

fn split_params_mut(p: &mut [f64], [_, o1, o2, o3]: [usize; 4]) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
    let (w1, rest) = p.split_at_mut(o1);
    let (b1, rest) = rest.split_at_mut(o2 - o1);
    let (w2, b2) = rest.split_at_mut(o3 - o2);
    (w1, b1, w2, b2)
}

/// On-disk model: layer sizes plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub sizes: [usize; 3],
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mini-batch loss of every update step, before the step is applied.
    pub step_losses: Vec<f64>,
}

/// Trains a fresh model on labelled samples. Every one of the `classes` labels
/// must occur in the data.
pub fn train(data: &[Sample], classes: usize, cfg: &TrainConfig) -> Result<(RefModel, TrainingLog)> {
    cfg.validate()?;
    let Some(first) = data.first() else {
        return Err(Error::Config("training set is empty".into()));
    };
    let inputs = first.features.len();
    let mut seen = vec![false; classes];
    let mut examples: Vec<(&[f64], usize)> = Vec::with_capacity(data.len());
    for (index, s) in data.iter().enumerate() {
        if s.features.len() != inputs {
            return Err(Error::DimensionMismatch {
                expected: inputs,
                found: s.features.len(),
            });
        }
        let label = s.label.ok_or(Error::MissingLabels { index })?;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        seen[label] = true;
        examples.push((&s.features, label));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!(
            "class {missing} does not occur in the training data"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = RefModel::init(inputs, cfg.hidden, classes, cfg.init_scale, &mut rng);
    let initial_loss = model.loss(&examples);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step_losses = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (loss, grad) = model.loss_and_grad(&batch);
            step_losses.push(loss);
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }
    let final_loss = model.loss(&examples);
    Ok((
        model,
        TrainingLog {
            initial_loss,
            final_loss,
            step_losses,
        },
    ))
}

/// Probabilities and hidden activations for a set of samples, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPrediction {
    pub records: Vec<ProbabilityRecord>,
    pub hidden: Vec<Vec<f64>>,
}

impl DatasetPrediction {
    /// Hidden-layer features grouped per subject (first-appearance order).
    /// With `only` set, keeps rows whose predicted class is relevant.
    pub fn feature_sets(&self, only: Option<&ClassSet>) -> Vec<FeatureSet> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut sets: Vec<FeatureSet> = Vec::new();
        for (record, hidden) in self.records.iter().zip(&self.hidden) {
            let slot = *index.entry(record.subject_id.as_str()).or_insert_with(|| {
                sets.push(FeatureSet {
                    id: record.subject_id.clone(),
                    rows: Vec::new(),
                });
                sets.len() - 1
            });
            if let Some(cs) = only {
                if !cs.is_relevant(predict_class(record.probs())) {
                    continue;
                }
            }
            sets[slot].rows.push(hidden.clone());
        }
        sets
    }

    /// Fraction of labelled records whose argmax equals the label.
    pub fn accuracy(&self) -> Option<f64> {
        let labelled: Vec<_> = self
            .records
            .iter()
            .filter_map(|r| r.true_label.map(|l| (r, l)))
            .collect();
        if labelled.is_empty() {
            return None;
        }
        let correct = labelled.iter().filter(|(r, l)| predict_class(r.probs()) == *l).count();
        Some(correct as f64 / labelled.len() as f64)
    }
}

/// Runs the model over every sample.
pub fn predict_dataset(model: &RefModel, samples: &[Sample]) -> Result<DatasetPrediction> {
    let mut records = Vec::with_capacity(samples.len());
    let mut hidden = Vec::with_capacity(samples.len());
    for s in samples {
        if s.features.len() != model.inputs {
            return Err(Error::DimensionMismatch {
                expected: model.inputs,
                found: s.features.len(),
            });
        }
        let fwd = model.forward(&s.features);
        let label = s.label.filter(|&l| l < model.classes);
        records.push(ProbabilityRecord::new(
            s.subject_id.clone(),
            s.point_id.clone(),
            s.group.clone(),
            fwd.probs,
            label,
        )?);
        hidden.push(fwd.hidden);
    }
    Ok(DatasetPrediction { records, hidden })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_uniform() {
        let m = RefModel::zeros(3, 4, 5);
        let f = m.forward(&[1.0, -2.0, 0.5]);
        for p in f.probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = [0.3, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!((big[0] - 1.0).abs() < 1e-15 && big[1] >= 0.0);
    }

    #[test]
    fn hand_set_two_class_model() {
        // h = tanh(atanh(0.5) * 1) = 0.5; logits = (4 * 0.5, 0) = (2, 0)
        let m = RefModel::from_parts(1, 1, 2, &[0.5f64.atanh()], &[0.0], &[4.0, 0.0], &[0.0, 0.0]).unwrap();
        let f = m.forward(&[1.0]);
        let e2 = 2f64.exp();
        assert!((f.probs[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((f.probs[0] - 0.8808).abs() < 1e-4);
        assert!((f.probs[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn uniform_loss_is_ln_k() {
        let m = RefModel::zeros(2, 3, 4);
        let x = [0.1, 0.2];
        let (loss, _) = m.loss_and_grad(&[(&x, 1), (&x, 3)]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_loss_near_zero() {
        let m = RefModel::from_parts(1, 1, 2, &[0.0], &[10.0], &[50.0, -50.0], &[0.0, 0.0]).unwrap();
        let (loss, _) = m.loss_and_grad(&[(&[0.0], 0)]);
        assert!(loss < 1e-30);
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = RefModel::init(3, 4, 2, 1.0, &mut rng);
        let back = RefModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);

        let mut ck = m.to_checkpoint();
        ck.w2.pop();
        let err = RefModel::from_checkpoint(&ck).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
        assert!(RefModel::from_json("{\"format\": 3}").is_err());
    }

    #[test]
    fn train_rejects_bad_labels() {
        let sample = |label| Sample {
            subject_id: "s".into(),
            point_id: "0".into(),
            group: None,
            label: Some(label),
            features: vec![0.0],
        };
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&[sample(0), sample(5)], 2, &cfg),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
        assert!(train(&[sample(0), sample(0)], 2, &cfg).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&[sample(0), sample(1)], 2, &bad).is_err());
    }
}
