//! Accuracy, per-class precision/recall/F1, macro and micro F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold examples of this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Unweighted mean F1 over classes that occur in the gold labels.
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n_examples: usize,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(predictions: &[usize], gold: &[usize], class_count: usize) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            expected: gold.len(),
            found: predictions.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::InvalidParameter("cannot evaluate zero examples".into()));
    }
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (row, (&p, &g)) in predictions.iter().zip(gold).enumerate() {
        if p >= class_count || g >= class_count {
            return Err(Error::LabelOutOfRange {
                row,
                label: p.max(g) as u64,
                class_count,
            });
        }
        confusion[g][p] += 1;
    }
    let n = gold.len();
    let correct: usize = (0..class_count).map(|c| confusion[c][c]).sum();

    let per_class: Vec<ClassMetrics> = (0..class_count)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64;
    // Single-label multiclass: micro precision = micro recall = accuracy.
    let micro_f1 = ratio(correct, n);

    Ok(EvalReport {
        accuracy: ratio(correct, n),
        macro_f1,
        micro_f1,
        per_class,
        n_examples: n,
        confusion,
    })
}
