//! Ranking metrics: ROC-AUC with midrank tie handling, ROC curves, and
//! k-shot labeled-set selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Argument(format!("label {l} is not 0/1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes (positives {n_pos}, negatives {n_neg})"
        )));
    }
    Ok((n_pos, n_neg))
}

/// Twice the Mann-Whitney U statistic of the positives: each
/// (positive, negative) pair contributes 2 when the positive scores higher
/// and 1 on a tie. Integer arithmetic keeps the result exact.
fn doubled_u(scores: &[f64], labels: &[u8]) -> u128 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut negatives_below: u128 = 0;
    let mut total: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&v| labels[v] == 1).count() as u128;
        let neg = group.len() as u128 - pos;
        total += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    total
}

/// Area under the ROC curve for higher-is-more-anomalous scores. Tied
/// scores count one half, which equals the midrank form of the statistic.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let denom = 2 * n_pos as u128 * n_neg as u128;
    Ok(doubled_u(scores, labels) as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in self.fpr.iter().zip(&self.tpr) {
            s.push_str(&format!("{f:.16e},{t:.16e}\n"));
        }
        s
    }
}

/// ROC points from a descending threshold sweep, starting at (0, 0) and
/// ending at (1, 1). Tied scores move both rates in one step.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
        i = j;
    }
    Ok(RocCurve {
        fpr,
        tpr,
        auc: auc_roc(scores, labels)?,
        n_pos,
        n_neg,
    })
}

/// Labeled anomalies for a few-shot run, and the nodes left for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotSplit {
    pub labeled: Vec<usize>,
    pub eval_nodes: Vec<usize>,
}

/// Draws `k` anomalies uniformly without replacement; every other node is
/// held out for evaluation. Both lists come back ascending.
pub fn kshot_split(labels: &[u8], k: usize, seed: u64) -> Result<KShotSplit> {
    let mut anomalies: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == 1).collect();
    if k > anomalies.len() {
        return Err(Error::Capacity(format!(
            "{k} labeled anomalies requested but only {} exist",
            anomalies.len()
        )));
    }
    let mut rng = rng::stream(seed, &[tag::EVAL]);
    let (chosen, _) = anomalies.partial_shuffle(&mut rng, k);
    let mut labeled = chosen.to_vec();
    labeled.sort_unstable();
    let eval_nodes = (0..labels.len())
        .filter(|v| labeled.binary_search(v).is_err())
        .collect();
    Ok(KShotSplit { labeled, eval_nodes })
}

/// Mean and sample standard deviation over runs.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
