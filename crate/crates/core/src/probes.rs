//! Linear softmax probes and per-group F1 evaluation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cohorts::{CohortPlan, DemographicVariable, Setting, DEFAULT_TEST_FRACTION};
use crate::embedding_store::PhonemeSample;
use crate::error::{Error, Result};
use crate::numeric::rows_to_matrix;

/// Caveat attached to SG-separability results.
pub const SG_PROBE_CAVEAT: &str =
    "SG separability also reflects residual speaker information; treat it as a diagnostic, not a bias measure";

/// Curvature pairs kept by the quasi-Newton search.
const LBFGS_MEMORY: usize = 10;
/// Sufficient-decrease constant of the line search.
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeHyper {
    /// Step tried first whenever the curvature history is empty.
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the relative loss change drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper { learning_rate: 1.0, l2: 1e-4, max_epochs: 5000, tolerance: 1e-7, seed: 0 }
    }
}

impl ProbeHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 weight must be non-negative, got {}", self.l2)));
        }
        if self.max_epochs == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::Config("max_epochs must be >= 1 and tolerance >= 0".into()));
        }
        Ok(())
    }
}

/// Feature vectors with class indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn push(&mut self, v: Vec<f64>, label: usize) {
        self.features.push(v);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub classes: Vec<String>,
    /// `C × D`, applied to raw (unstandardized) features.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub final_loss: f64,
    pub epochs: usize,
    pub hyper: ProbeHyper,
}

impl ProbeModel {
    pub fn logits(&self, v: &[f64]) -> DVector<f64> {
        &self.weights * DVector::from_column_slice(v) + &self.bias
    }

    /// Argmax class index; ties go to the lower index.
    pub fn predict(&self, v: &[f64]) -> usize {
        argmax(self.logits(v).as_slice())
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = self.weights.row_iter().map(|r| r.iter().copied().collect()).collect();
        json!({
            "classes": self.classes,
            "weights": rows,
            "bias": self.bias.as_slice(),
            "final_loss": self.final_loss,
            "epochs": self.epochs,
            "hyper": self.hyper,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            classes: Vec<String>,
            weights: Vec<Vec<f64>>,
            bias: Vec<f64>,
            final_loss: f64,
            epochs: usize,
            hyper: ProbeHyper,
        }
        let raw: Raw = serde_json::from_value(v.clone()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let c = raw.classes.len();
        if raw.weights.len() != c || raw.bias.len() != c {
            return Err(Error::InvalidInput("probe weights do not match class count".into()));
        }
        let d = raw.weights.first().map_or(0, Vec::len);
        if raw.weights.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged probe weight rows".into()));
        }
        Ok(ProbeModel {
            classes: raw.classes,
            weights: rows_to_matrix(&raw.weights),
            bias: DVector::from_vec(raw.bias),
            final_loss: raw.final_loss,
            epochs: raw.epochs,
            hyper: raw.hyper,
        })
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy plus `l2/2 · ‖W‖²` (bias unpenalized), with its
/// gradient with respect to `weights` and `bias`.
pub fn loss_and_gradient(
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2: f64,
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let n = x.nrows();
    let mut probs = x * weights.transpose();
    let mut loss = 0.0;
    for (i, mut row) in probs.row_iter_mut().enumerate() {
        row += bias.transpose();
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let z = row.sum();
        loss += z.ln() + max - (row[labels[i]].ln() + max);
        row /= z;
        row[labels[i]] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    let grad_w = probs.transpose() * x * inv_n + weights * l2;
    let grad_b = probs.row_sum().transpose() * inv_n;
    (loss * inv_n + 0.5 * l2 * weights.norm_squared(), grad_w, grad_b)
}

fn check_labels(set: &LabeledSet, n_classes: usize) -> Result<usize> {
    if set.features.len() != set.labels.len() {
        return Err(Error::InvalidInput("features and labels differ in length".into()));
    }
    let d = set.features.first().map_or(0, Vec::len);
    if let Some(v) = set.features.iter().find(|v| v.len() != d) {
        return Err(Error::DimMismatch { expected: d, found: v.len() });
    }
    if let Some(l) = set.labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!("label {l} out of range for {n_classes} classes")));
    }
    if set.features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DataQuality("non-finite probe feature".into()));
    }
    Ok(d)
}

/// L-BFGS search direction from the stored `(s, y, 1 / s·y)` pairs.
fn lbfgs_direction(grad: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&q);
        q.axpy(a - beta, s, 1.0);
    }
    -q
}

/// Trains a softmax probe on the full batch with L-BFGS directions and a
/// step-halving line search, so the loss never increases between epochs.
///
/// Features are standardized internally and the learned weights mapped back,
/// so the returned model applies to raw features.
pub fn train_probe(train: &LabeledSet, classes: &[String], hyper: &ProbeHyper) -> Result<ProbeModel> {
    hyper.validate()?;
    let c = classes.len();
    if c < 2 {
        return Err(Error::InvalidInput(format!("probe needs >= 2 classes, got {c}")));
    }
    let d = check_labels(train, c)?;
    let present: BTreeSet<usize> = train.labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::InvalidInput("training data contains a single class".into()));
    }
    if present.len() < c {
        let missing: Vec<&str> = (0..c).filter(|i| !present.contains(i)).map(|i| classes[i].as_str()).collect();
        return Err(Error::InvalidInput(format!("classes without training samples: {}", missing.join(", "))));
    }

    let mut x = rows_to_matrix(&train.features);
    let n = x.nrows() as f64;
    let mut shift = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            col.apply(|v| *v = (*v - mean) / sd);
            shift[j] = mean;
            scale[j] = 1.0 / sd;
        } else {
            col.fill(0.0);
        }
    }

    let n_weights = c * d;
    let eval = |theta: &DVector<f64>| {
        let w = DMatrix::from_column_slice(c, d, &theta.as_slice()[..n_weights]);
        let b = DVector::from_column_slice(&theta.as_slice()[n_weights..]);
        let (loss, gw, gb) = loss_and_gradient(&w, &b, &x, &train.labels, hyper.l2);
        (loss, DVector::from_iterator(n_weights + c, gw.iter().chain(gb.iter()).copied()))
    };
    let mut theta = DVector::zeros(n_weights + c);
    let (mut loss, mut grad) = eval(&theta);
    if !loss.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut epochs = 0;
    'outer: while epochs < hyper.max_epochs {
        epochs += 1;
        let mut direction = lbfgs_direction(&grad, &history);
        let mut slope = grad.dot(&direction);
        if !(slope < 0.0) {
            history.clear();
            direction = -&grad;
            slope = -grad.norm_squared();
        }
        if slope == 0.0 {
            break;
        }
        let mut step = if history.is_empty() { hyper.learning_rate } else { 1.0 };
        loop {
            let candidate = &theta + &direction * step;
            let (cl, cg) = eval(&candidate);
            if cl.is_finite() && cl <= loss + ARMIJO * step * slope {
                let rel = (loss - cl) / loss.abs().max(f64::MIN_POSITIVE);
                let s = &candidate - &theta;
                let y = &cg - &grad;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() {
                    if history.len() == LBFGS_MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                (theta, loss, grad) = (candidate, cl, cg);
                if rel < hyper.tolerance {
                    break 'outer;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                if cl.is_finite() {
                    // no descent left at machine precision
                    break 'outer;
                }
                return Err(Error::Diverged { step: epochs });
            }
        }
    }
    let mut w = DMatrix::from_column_slice(c, d, &theta.as_slice()[..n_weights]);
    let mut b = DVector::from_column_slice(&theta.as_slice()[n_weights..]);

    // fold the standardization back into raw-space weights
    for (j, &s) in scale.iter().enumerate() {
        let mut col = w.column_mut(j);
        col *= s;
    }
    let offset = &w * DVector::from_vec(shift);
    b -= offset;
    if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step: epochs });
    }
    Ok(ProbeModel { classes: classes.to_vec(), weights: w, bias: b, final_loss: loss, epochs, hyper: *hyper })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    /// Indexed like the model's classes.
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean F1 over classes with test support.
    pub macro_f1: f64,
}

/// Precision, recall and F1 per class from predicted/actual label pairs.
pub fn confusion_scores(predicted: &[usize], actual: &[usize], n_classes: usize) -> GroupScores {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fneg = vec![0usize; n_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p == a {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[a] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassScore> = (0..n_classes)
        .map(|k| ClassScore {
            precision: ratio(tp[k], tp[k] + fp[k]),
            recall: ratio(tp[k], tp[k] + fneg[k]),
            f1: ratio(2 * tp[k], 2 * tp[k] + fp[k] + fneg[k]),
            support: tp[k] + fneg[k],
        })
        .collect();
    let supported: Vec<f64> = per_class.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
    let macro_f1 = if supported.is_empty() { 0.0 } else { supported.iter().sum::<f64>() / supported.len() as f64 };
    GroupScores { per_class, macro_f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_sg: BTreeMap<String, GroupScores>,
    /// Scores over all SGs' test samples pooled.
    pub overall: GroupScores,
}

pub fn evaluate_probe(model: &ProbeModel, test_by_sg: &BTreeMap<String, LabeledSet>) -> Result<EvalResult> {
    let c = model.classes.len();
    let mut per_sg = BTreeMap::new();
    let (mut all_pred, mut all_true) = (Vec::new(), Vec::new());
    for (sg, set) in test_by_sg {
        if set.is_empty() {
            warn!("speaker group {sg} has no test samples; omitted");
            continue;
        }
        let d = check_labels(set, c)?;
        if d != model.weights.ncols() {
            return Err(Error::DimMismatch { expected: model.weights.ncols(), found: d });
        }
        let pred: Vec<usize> = set.features.iter().map(|v| model.predict(v)).collect();
        per_sg.insert(sg.clone(), confusion_scores(&pred, &set.labels, c));
        all_pred.extend(pred);
        all_true.extend_from_slice(&set.labels);
    }
    Ok(EvalResult { per_sg, overall: confusion_scores(&all_pred, &all_true, c) })
}

#[derive(Debug, Clone)]
pub struct SgProbeOutcome {
    pub model: ProbeModel,
    /// Macro F1 over SG classes on held-out speakers.
    pub macro_f1: f64,
    pub caveat: &'static str,
}

/// Predicts a speaker's SG from samples of a single phoneme, scored on
/// held-out speakers.
pub fn train_sg_probe(
    samples: &[PhonemeSample],
    variable: DemographicVariable,
    hyper: &ProbeHyper,
) -> Result<SgProbeOutcome> {
    let mut sg_of = BTreeMap::new();
    for s in samples {
        if let Some(g) = s.groups.get(variable.as_str()) {
            sg_of.insert(s.speaker_id.clone(), g.clone());
        }
    }
    let classes: Vec<String> = sg_of.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidInput(format!("SG probe needs >= 2 groups for {variable}, got {}", classes.len())));
    }
    let plan = CohortPlan::new(&sg_of, variable, hyper.seed, DEFAULT_TEST_FRACTION)?;
    let cohort = plan.cohort(&plan.spec(Setting::Balanced, None, 0))?;
    let test_speakers: BTreeSet<&String> = cohort.test_speakers_by_sg.values().flatten().collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let (mut train, mut test) = (LabeledSet::default(), LabeledSet::default());
    for s in samples {
        let Some(sg) = sg_of.get(&s.speaker_id) else { continue };
        let label = index[sg.as_str()];
        if test_speakers.contains(&s.speaker_id) {
            test.push(s.vector_f64(), label);
        } else if cohort.train_speakers.contains(&s.speaker_id) {
            train.push(s.vector_f64(), label);
        }
    }
    let model = train_probe(&train, &classes, hyper)?;
    let pred: Vec<usize> = test.features.iter().map(|v| model.predict(v)).collect();
    let macro_f1 = confusion_scores(&pred, &test.labels, classes.len()).macro_f1;
    Ok(SgProbeOutcome { model, macro_f1, caveat: SG_PROBE_CAVEAT })
}
