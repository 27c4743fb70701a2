//! Accuracy bookkeeping and summary statistics.

use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    /// Absent when the split has no yes/no questions.
    pub binary_accuracy: Option<f64>,
    /// Absent when the split has no open questions.
    pub open_accuracy: Option<f64>,
    pub n_binary: usize,
    pub n_open: usize,
    pub mean_objects: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Ground truth for one evaluated instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truth {
    pub answer: usize,
    pub binary: bool,
    pub n_objects: usize,
}

pub fn compute_metrics(predictions: &[usize], truth: &[Truth], seed: u64, config_hash: &str) -> Result<MetricsRecord> {
    if predictions.len() != truth.len() {
        return Err(LabError::Contract(format!(
            "{} predictions for {} instances",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(LabError::Contract("no instances to score".into()));
    }
    let (mut nb, mut cb, mut no, mut co) = (0usize, 0usize, 0usize, 0usize);
    let mut objects = 0usize;
    for (p, t) in predictions.iter().zip(truth) {
        let ok = (*p == t.answer) as usize;
        if t.binary {
            nb += 1;
            cb += ok;
        } else {
            no += 1;
            co += ok;
        }
        objects += t.n_objects;
    }
    let n = truth.len();
    let accuracy = (cb + co) as f64 / n as f64;
    let binary_accuracy = (nb > 0).then(|| cb as f64 / nb as f64);
    let open_accuracy = (no > 0).then(|| co as f64 / no as f64);
    let recombined = (binary_accuracy.unwrap_or(0.0) * nb as f64 + open_accuracy.unwrap_or(0.0) * no as f64) / n as f64;
    debug_assert!((recombined - accuracy).abs() < 1e-12);
    Ok(MetricsRecord {
        accuracy,
        binary_accuracy,
        open_accuracy,
        n_binary: nb,
        n_open: no,
        mean_objects: objects as f64 / n as f64,
        seed,
        config_hash: config_hash.into(),
    })
}

/// Area under the ROC curve with tied scores counted as half; `None` when
/// either class is missing.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
