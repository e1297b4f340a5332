//! Evaluation metrics: accuracy, AUROC, L1 loss, mean phi over models or
//! ensembles, and Pareto frontiers over (accuracy, phi) clouds.

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::losses::{BackgroundVariant, BatchRef, DomainLoss, DomainLossSpec};
use crate::nn::{forward, grad_input, softmax, OutputHead, ParamVector};
use crate::posterior::Ensemble;

/// Fraction of exact label matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::InvalidShape(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half (Mann-Whitney form; exact under ties).
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidShape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "AUROC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    // Average ranks with ties sharing the mean rank.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Mean absolute error over all coordinates.
pub fn l1_loss(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    if preds.n_rows() != targets.n_rows() || preds.n_cols() != targets.n_cols() {
        return Err(Error::InvalidShape(format!(
            "prediction shape {}x{} vs target {}x{}",
            preds.n_rows(),
            preds.n_cols(),
            targets.n_rows(),
            targets.n_cols()
        )));
    }
    if preds.n_rows() == 0 {
        return Err(Error::InvalidShape("empty prediction matrix".to_string()));
    }
    let total: f64 = preds
        .flat()
        .iter()
        .zip(targets.flat())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / preds.flat().len() as f64)
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_class(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// How phi is attributed to an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiMode {
    /// phi of the logit-averaged ensemble predictor (model-average view).
    EnsembleAverage,
    /// Mean of per-member phi (prior/posterior sampling view).
    PerSample,
}

/// Mean phi of one weight vector over an evaluation batch.
pub fn mean_phi_model(
    params: &ParamVector,
    batch: &BatchRef<'_>,
    spec: &dyn DomainLoss,
) -> Result<f64> {
    let values = spec.values(params, batch)?;
    if values.is_empty() {
        return Err(Error::DegenerateBatch("empty evaluation batch".to_string()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean phi of an ensemble: either of the averaged predictor or averaged
/// across members.
pub fn mean_phi_ensemble(
    ensemble: &Ensemble,
    batch: &BatchRef<'_>,
    spec: &DomainLossSpec,
    mode: PhiMode,
) -> Result<f64> {
    match mode {
        PhiMode::PerSample => {
            let mut acc = 0.0;
            for m in ensemble.members() {
                acc += mean_phi_model(m, batch, spec)?;
            }
            Ok(acc / ensemble.members().len() as f64)
        }
        PhiMode::EnsembleAverage => ensemble_phi(ensemble, batch, spec),
    }
}

/// phi evaluated on the logit-averaged ensemble predictor.
fn ensemble_phi(ensemble: &Ensemble, batch: &BatchRef<'_>, spec: &DomainLossSpec) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::DegenerateBatch("empty evaluation batch".to_string()));
    }
    let members = ensemble.members();
    let k = members.len() as f64;
    match spec {
        DomainLossSpec::Background {
            background_mask,
            variant,
        } => {
            let out_dim = ensemble.arch().output_dim();
            let mut total = 0.0;
            for i in 0..n {
                let x = batch.x(i);
                let mask = batch.mask(i).unwrap_or(background_mask.as_slice());
                // Mean logits and mean Jacobian across members.
                let mut mean_logits = vec![0.0; out_dim];
                let mut mean_jac = vec![vec![0.0; x.len()]; out_dim];
                for m in members {
                    let z = forward(m, x)?;
                    for (a, b) in mean_logits.iter_mut().zip(&z) {
                        *a += b / k;
                    }
                    let jac = grad_input(m, x)?;
                    for c in 0..out_dim {
                        for (a, b) in mean_jac[c].iter_mut().zip(&jac[c]) {
                            *a += b / k;
                        }
                    }
                }
                let is_softmax = ensemble.arch().output_head == OutputHead::SoftmaxLogits;
                let value = match (is_softmax, variant) {
                    (true, BackgroundVariant::SumLogSoftmax) => {
                        let ps = softmax(&mean_logits);
                        let coeff: Vec<f64> =
                            ps.iter().map(|p| 1.0 - out_dim as f64 * p).collect();
                        mask.iter()
                            .map(|&j| {
                                let vj: f64 =
                                    (0..out_dim).map(|c| coeff[c] * mean_jac[c][j]).sum();
                                vj * vj
                            })
                            .sum::<f64>()
                    }
                    _ => mask
                        .iter()
                        .map(|&j| {
                            (0..out_dim).map(|c| mean_jac[c][j] * mean_jac[c][j]).sum::<f64>()
                        })
                        .sum::<f64>(),
                };
                total += value;
            }
            Ok(total / n as f64)
        }
        DomainLossSpec::GroupFairness { group_attr_index } => {
            let mut p = [0.0f64; 2];
            let mut counts = [0usize; 2];
            for i in 0..n {
                let x = batch.x(i);
                let g = match batch.group(i) {
                    Some(g) => g,
                    None => x[*group_attr_index] > 0.5,
                };
                let z = ensemble.mean_logits(x)?;
                let prob = crate::nn::sigmoid(z[0]);
                p[usize::from(g)] += prob;
                counts[usize::from(g)] += 1;
            }
            if counts[0] == 0 || counts[1] == 0 {
                return Err(Error::DegenerateBatch(
                    "fairness evaluation set is missing a group".to_string(),
                ));
            }
            let gap = p[1] / counts[1] as f64 - p[0] / counts[0] as f64;
            Ok(gap * gap)
        }
        DomainLossSpec::Clinical { region } => {
            let mut total = 0.0;
            for i in 0..n {
                let x = batch.x(i);
                if !region.contains(x) {
                    continue;
                }
                let z = ensemble.mean_logits(x)?;
                total += (1.0 - crate::nn::sigmoid(z[0])).max(0.0);
            }
            Ok(total / n as f64)
        }
        DomainLossSpec::EnergyDamping { pendulum } => {
            let mut total = 0.0;
            for i in 0..n {
                let x = batch.x(i);
                let z = ensemble.mean_logits(x)?;
                let e_in = crate::data::pendulum_energy(
                    &crate::data::PendulumState::from_slice(x)?,
                    pendulum,
                );
                let e_pred = crate::data::pendulum_energy(
                    &crate::data::PendulumState::from_slice(&z)?,
                    pendulum,
                );
                total += (e_pred - e_in).max(0.0);
            }
            Ok(total / n as f64)
        }
    }
}

/// One point of the accuracy/phi cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub accuracy: f64,
    pub phi: f64,
}

/// Marks the non-dominated subset under (maximize accuracy, minimize phi).
/// A point is dominated when another point is at least as good in both
/// coordinates and strictly better in one; exact duplicates stay on the
/// frontier together.
pub fn pareto_points(points: &[ParetoPoint]) -> Result<Vec<bool>> {
    if points.is_empty() {
        return Err(Error::InvalidShape("empty point cloud".to_string()));
    }
    let dominated = |a: &ParetoPoint, b: &ParetoPoint| {
        // b dominates a.
        b.accuracy >= a.accuracy
            && b.phi <= a.phi
            && (b.accuracy > a.accuracy || b.phi < a.phi)
    };
    Ok(points
        .iter()
        .map(|a| !points.iter().any(|b| dominated(a, b)))
        .collect())
}

/// Sample mean and standard error (sample std / sqrt(n)).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
