//! Final per-participant scores, distribution distances, classifier metrics
//! and communication accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::ContributionTensor;
use crate::numerics::{self, argmax, normalize_to_simplex, NumericsError, SimplexVector};

/// Additive smoothing applied to both arguments of [`kl_divergence`].
pub const KL_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("tensor still has {0} missing cells")]
    Incomplete(usize),
    #[error("all contributions are zero")]
    AllZero,
    #[error("empty evaluation set")]
    Empty,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Weights over rounds (`rounds`) and over classes (`classes`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionVectors {
    pub rounds: SimplexVector,
    pub classes: SimplexVector,
}

impl DistributionVectors {
    pub fn uniform(rounds: usize, classes: usize) -> Self {
        Self { rounds: SimplexVector::uniform(rounds), classes: SimplexVector::uniform(classes) }
    }

    /// Normalizes user-supplied weights; an empty list means uniform.
    pub fn from_weights(rounds: usize, classes: usize, round_w: &[f64], class_w: &[f64]) -> Result<Self, EvaluationError> {
        let pick = |n: usize, w: &[f64]| -> Result<SimplexVector, EvaluationError> {
            if w.is_empty() {
                return Ok(SimplexVector::uniform(n));
            }
            if w.len() != n {
                return Err(EvaluationError::LengthMismatch(n, w.len()));
            }
            Ok(normalize_to_simplex(w)?)
        };
        Ok(Self { rounds: pick(rounds, round_w)?, classes: pick(classes, class_w)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub config_hash: String,
    /// File or record the scores were derived from.
    pub source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionResult {
    pub scores: SimplexVector,
    pub provenance: Provenance,
}

impl ContributionResult {
    /// `client,contribution` rows.
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        crate::io::csv_bytes(
            &["client", "contribution"],
            self.scores.as_slice().iter().enumerate().map(|(k, v)| [k.to_string(), v.to_string()]),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("contribution result serializes")
    }
}

/// `CE_k ∝ Σ_t a_t Σ_c b_c X̂[t,k,c]`, normalized over clients.
pub fn final_contributions(
    completed: &ContributionTensor,
    weights: &DistributionVectors,
) -> Result<SimplexVector, EvaluationError> {
    let (rounds, clients, classes) = completed.dims();
    if weights.rounds.len() != rounds {
        return Err(EvaluationError::LengthMismatch(rounds, weights.rounds.len()));
    }
    if weights.classes.len() != classes {
        return Err(EvaluationError::LengthMismatch(classes, weights.classes.len()));
    }
    if !completed.is_complete() {
        return Err(EvaluationError::Incomplete(completed.missing_count()));
    }
    let mut totals = vec![0.0; clients];
    for (k, total) in totals.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in 0..rounds {
            let mut inner = 0.0;
            for c in 0..classes {
                inner += weights.classes[c] * completed.get(t, k, c).expect("complete tensor");
            }
            acc += weights.rounds[t] * inner;
        }
        *total = acc;
    }
    normalize_to_simplex(&totals).map_err(|e| match e {
        NumericsError::DegenerateNormalization => EvaluationError::AllZero,
        other => other.into(),
    })
}

fn smooth(p: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = p.iter().map(|x| x.max(0.0) + KL_SMOOTHING).collect();
    let total = numerics::sum(&s);
    s.into_iter().map(|x| x / total).collect()
}

/// `Σ P_i ln(P_i / Q_i)` after smoothing both arguments by 1e-9 and
/// renormalizing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, EvaluationError> {
    if p.len() != q.len() {
        return Err(EvaluationError::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let (ps, qs) = (smooth(p), smooth(q));
    let kl = ps
        .iter()
        .zip(&qs)
        .fold(0.0, |acc, (a, b)| if *a > 0.0 { acc + a * (a / b).ln() } else { acc });
    Ok(kl.max(0.0))
}

pub fn euclidean_distance(p: &[f64], q: &[f64]) -> Result<f64, EvaluationError> {
    if p.len() != q.len() {
        return Err(EvaluationError::LengthMismatch(p.len(), q.len()));
    }
    Ok(numerics::euclidean_distance(p, q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Argmax accuracy and macro-F1. Classes that appear neither as a label nor
/// as a prediction are left out of the macro average.
pub fn accuracy_and_macro_f1(logits: &[Vec<f64>], labels: &[usize]) -> Result<ClassificationMetrics, EvaluationError> {
    if logits.is_empty() {
        return Err(EvaluationError::Empty);
    }
    if logits.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch(logits.len(), labels.len()));
    }
    let classes = logits
        .iter()
        .map(|l| l.len())
        .max()
        .unwrap_or(0)
        .max(labels.iter().max().map_or(0, |m| m + 1));
    let predictions: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    classification_metrics(&predictions, labels, classes)
}

pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ClassificationMetrics, EvaluationError> {
    if predictions.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        counted += 1;
        f1_sum += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
    }
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / predictions.len() as f64,
        macro_f1: if counted > 0 { f1_sum / counted as f64 } else { 0.0 },
    })
}

/// Share of per-round traffic taken by prototype uploads, counting the model
/// twice (download and upload): `p / (2m + p)`.
pub fn communication_ratio(prototype_floats: usize, model_params: usize) -> f64 {
    if prototype_floats == 0 {
        return 0.0;
    }
    prototype_floats as f64 / (2.0 * model_params as f64 + prototype_floats as f64)
}
