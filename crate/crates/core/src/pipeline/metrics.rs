use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean over classes with a defined one-vs-rest AUC; `None` if no class has one.
    pub macro_auc: Option<f64>,
    pub per_class_f1: Vec<f64>,
    pub per_class_auc: Vec<Option<f64>>,
    /// Classes absent from both truth and predictions (they score F1 = 0).
    pub absent_classes: Vec<usize>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// One-vs-rest ROC-AUC by the Mann-Whitney statistic with average ranks for
/// tied scores. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn compute_metrics(
    predictions: &[usize],
    probabilities: &Tensor,
    truth: &[usize],
    num_classes: usize,
) -> Result<Metrics> {
    let n = truth.len();
    if n == 0 {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidInput("metrics need at least 2 classes".into()));
    }
    if predictions.len() != n || probabilities.rows() != n || probabilities.cols() != num_classes {
        return Err(Error::InvalidInput(format!(
            "misaligned inputs: {} predictions, probabilities {:?}, {n} labels, {num_classes} classes",
            predictions.len(),
            probabilities.shape()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::InvalidInput(format!("class {bad} outside [0, {num_classes})")));
    }

    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predictions) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();

    let mut warnings = Vec::new();
    let mut absent_classes = Vec::new();
    let mut per_class_f1 = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let tp = confusion[k][k] as f64;
        let actual: usize = confusion[k].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[k]).sum();
        if actual + predicted == 0 {
            absent_classes.push(k);
            warnings.push(format!("class {k} absent from truth and predictions; F1 counted as 0"));
            per_class_f1.push(0.0);
        } else {
            per_class_f1.push(2.0 * tp / (actual + predicted) as f64);
        }
    }

    let mut per_class_auc = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let scores: Vec<f64> = (0..n).map(|i| probabilities.get(i, k)).collect();
        let positive: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        let auc = binary_auc(&scores, &positive);
        if auc.is_none() {
            warnings.push(format!("AUC undefined for class {k} (single-class truth); excluded from macro AUC"));
        }
        per_class_auc.push(auc);
    }
    let defined: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

    Ok(Metrics {
        accuracy: correct as f64 / n as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / num_classes as f64,
        macro_auc,
        per_class_f1,
        per_class_auc,
        absent_classes,
        confusion,
        warnings,
    })
}
