//! Video-level binary classification metrics.
//!
//! Macro F1 averages the F1 of the positive and negative class. A class that
//! never occurs and is never predicted has an undefined F1 (zero
//! denominator) and is left out of the average rather than counted as 0 or 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::sigmoid;
use crate::model::{Model, ModelInput, Mode};
use crate::train::Example;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(preds: &[bool], labels: &[bool]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &l) in preds.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// F1 of the positive class, `None` when undefined.
    pub fn f1_positive(&self) -> Option<f64> {
        f1(self.tp, self.fp, self.fn_)
    }

    /// F1 of the negative class, `None` when undefined.
    pub fn f1_negative(&self) -> Option<f64> {
        f1(self.tn, self.fn_, self.fp)
    }

    pub fn macro_f1(&self) -> f64 {
        let defined: Vec<f64> = [self.f1_positive(), self.f1_negative()]
            .into_iter()
            .flatten()
            .collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

/// Macro F1 of binary predictions.
pub fn macro_f1(preds: &[bool], labels: &[bool]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Shape("macro F1 of zero videos".into()));
    }
    Ok(ConfusionCounts::from_predictions(preds, labels)?.macro_f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub macro_f1: f64,
    pub counts: ConfusionCounts,
}

/// Eval-mode predictions `σ(logit) ≥ threshold` over prepared examples.
pub fn evaluate_inputs(model: &Model, examples: &[Example], threshold: f64) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let mut preds = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        preds.push(predict(model, &ex.input, threshold)?);
        labels.push(ex.label);
    }
    let counts = ConfusionCounts::from_predictions(&preds, &labels)?;
    Ok(Evaluation {
        macro_f1: counts.macro_f1(),
        counts,
    })
}

pub fn predict(model: &Model, input: &ModelInput, threshold: f64) -> Result<bool> {
    Ok(sigmoid(model.forward(input, Mode::Eval)?) >= threshold)
}

/// Evaluates a model on raw samples.
pub fn evaluate(
    model: &Model,
    samples: &[&crate::data::VideoSample],
    threshold: f64,
) -> Result<Evaluation> {
    let examples = crate::train::prepare(samples, &model.config)?;
    evaluate_inputs(model, &examples, threshold)
}

/// Results-table row: variant name and F1 to four decimals.
pub fn format_table_row(variant: &str, f1: f64) -> String {
    format!("{variant} {f1:.4}")
}
