//! Confidence-rate functions computed from raw classifier outputs.
//!
//! Two scores are provided: the softmax response (the largest class
//! probability) and the MC-dropout score (minus the variance, across
//! stochastic forward passes, of the response at the most probable class).
//! Only the ordering induced by a confidence score matters downstream.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::selective::{ScoredDataset, ScoredExample};
use crate::{Error, Result};

/// Tolerance on `sum(scores) = 1` when scores are declared to be probabilities.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Per-example class scores and the true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scores: Vec<f64>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        validate_row(&self.scores)?;
        validate_label(self.label, self.scores.len())
    }
}

/// `T x C` matrix of per-pass class responses from stochastic forward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDropoutRecord {
    pub passes: Vec<Vec<f64>>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl McDropoutRecord {
    pub fn validate(&self) -> Result<()> {
        if self.passes.len() < 2 {
            return Err(Error::domain(format!(
                "MC-dropout record needs T >= 2 passes, got {}",
                self.passes.len()
            )));
        }
        let classes = self.passes[0].len();
        for (t, row) in self.passes.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::domain(format!(
                    "pass {t} has {} classes, pass 0 has {classes}",
                    row.len()
                )));
            }
            validate_row(row)?;
        }
        validate_label(self.label, classes)
    }

    pub fn class_count(&self) -> usize {
        self.passes.first().map_or(0, Vec::len)
    }

    /// Per-class mean response across passes.
    pub fn mean_response(&self) -> Vec<f64> {
        let t = self.passes.len() as f64;
        let mut mean = vec![0.0; self.class_count()];
        for row in &self.passes {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= t);
        mean
    }
}

fn validate_row(scores: &[f64]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 class scores, got {}",
            scores.len()
        )));
    }
    if let Some(j) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::domain(format!("score {j} is not finite")));
    }
    Ok(())
}

fn validate_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::domain(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// How the raw score vector of a [`PredictionRecord`] should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreScale {
    Logits,
    Probabilities,
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    validate_row(scores)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

fn check_distribution(scores: &[f64]) -> Result<()> {
    if let Some(j) = scores.iter().position(|&s| s < 0.0) {
        return Err(Error::NotAProbability(format!(
            "entry {j} is negative ({})",
            scores[j]
        )));
    }
    let sum: f64 = scores.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::NotAProbability(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Softmax response: the largest class probability.
pub fn softmax_response(rec: &PredictionRecord, scale: ScoreScale) -> Result<f64> {
    rec.validate()?;
    max_probability(&rec.scores, scale)
}

fn max_probability(scores: &[f64], scale: ScoreScale) -> Result<f64> {
    let probs = match scale {
        ScoreScale::Logits => softmax(scores)?,
        ScoreScale::Probabilities => {
            check_distribution(scores)?;
            scores.to_vec()
        }
    };
    Ok(probs.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > values[best] { j } else { best })
}

/// MC-dropout confidence: minus the unbiased sample variance of the responses
/// at the class with the largest mean response. Always `<= 0`.
pub fn mc_dropout_kappa(rec: &McDropoutRecord) -> Result<f64> {
    rec.validate()?;
    let mean = rec.mean_response();
    let j = argmax(&mean);
    let mu = mean[j];
    let ss: f64 = rec.passes.iter().map(|row| (row[j] - mu).powi(2)).sum();
    let var = ss / (rec.passes.len() - 1) as f64;
    Ok(-var)
}

/// 0/1 top-k loss: 0 iff the label is among the `k` highest scores, with ties
/// ordered by class index.
pub fn topk_loss(rec: &PredictionRecord, k: usize) -> Result<u8> {
    rec.validate()?;
    topk_loss_of(&rec.scores, rec.label, k)
}

fn topk_loss_of(scores: &[f64], label: usize, k: usize) -> Result<u8> {
    if k == 0 || k > scores.len() {
        return Err(Error::domain(format!(
            "top-k with k = {k} needs 1 <= k <= {}",
            scores.len()
        )));
    }
    let target = scores[label];
    // classes ranked strictly before the label under (score desc, index asc)
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count();
    Ok(u8::from(ahead >= k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaKind {
    SoftmaxResponse,
    McDropout,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    TopK(usize),
    Precomputed,
}

impl LossKind {
    pub const TOP1: LossKind = LossKind::TopK(1);
    pub const TOP5: LossKind = LossKind::TopK(5);
}

/// A homogeneous batch of input records.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordBatch {
    Scored(Vec<ScoredExample>),
    Prediction(Vec<PredictionRecord>),
    McDropout(Vec<McDropoutRecord>),
}

impl RecordBatch {
    pub fn len(&self) -> usize {
        match self {
            RecordBatch::Scored(v) => v.len(),
            RecordBatch::Prediction(v) => v.len(),
            RecordBatch::McDropout(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Turns raw records into a scored dataset, one example per record in input
/// order.
///
/// Prediction records support the softmax response; MC-dropout records
/// support the MC-dropout score and the softmax response of the mean pass.
/// For MC-dropout records the top-k loss is taken on the mean response.
/// Scored records pass through and require both kinds to be `Precomputed`.
pub fn score_dataset(
    records: &RecordBatch,
    kappa: KappaKind,
    loss: LossKind,
    scale: ScoreScale,
) -> Result<ScoredDataset> {
    let examples = match records {
        RecordBatch::Scored(v) => {
            if kappa != KappaKind::Precomputed || loss != LossKind::Precomputed {
                return Err(Error::domain(
                    "scored records carry kappa and loss; both kinds must be precomputed",
                ));
            }
            v.clone()
        }
        RecordBatch::Prediction(v) => {
            if kappa != KappaKind::SoftmaxResponse {
                return Err(Error::domain(format!(
                    "prediction records support only the softmax response, not {kappa:?}"
                )));
            }
            let LossKind::TopK(k) = loss else {
                return Err(Error::domain("prediction records need a top-k loss"));
            };
            v.par_iter()
                .enumerate()
                .map(|(i, rec)| {
                    score_prediction(rec, k, scale).map_err(|e| e.at_record(i, rec.id.as_deref()))
                })
                .collect::<Result<Vec<_>>>()?
        }
        RecordBatch::McDropout(v) => {
            if kappa == KappaKind::Precomputed {
                return Err(Error::domain(
                    "MC-dropout records have no precomputed kappa",
                ));
            }
            let LossKind::TopK(k) = loss else {
                return Err(Error::domain("MC-dropout records need a top-k loss"));
            };
            v.par_iter()
                .enumerate()
                .map(|(i, rec)| {
                    score_mc(rec, kappa, k).map_err(|e| e.at_record(i, rec.id.as_deref()))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(ScoredDataset::new(examples))
}

fn score_prediction(rec: &PredictionRecord, k: usize, scale: ScoreScale) -> Result<ScoredExample> {
    let kappa = softmax_response(rec, scale)?;
    let loss = topk_loss_of(&rec.scores, rec.label, k)?;
    let mut ex = ScoredExample::new(kappa, loss)?;
    ex.set_id(rec.id.clone());
    Ok(ex)
}

fn score_mc(rec: &McDropoutRecord, kind: KappaKind, k: usize) -> Result<ScoredExample> {
    rec.validate()?;
    let mean = rec.mean_response();
    let kappa = match kind {
        KappaKind::McDropout => mc_dropout_kappa(rec)?,
        _ => max_probability(&mean, ScoreScale::Probabilities)?,
    };
    let loss = topk_loss_of(&mean, rec.label, k)?;
    let mut ex = ScoredExample::new(kappa, loss)?;
    ex.set_id(rec.id.clone());
    Ok(ex)
}
