//! Domain-knowledge loss functions phi(h, x) >= 0 and their exact parameter
//! gradients, plus the batch evaluator used by the trainers.
//!
//! Four losses are provided: background input-gradient penalties for
//! classifiers/regressors, a differentiable demographic-parity gap, a
//! clinical rule-region hinge, and an energy-damping hinge for the double
//! pendulum. A [`DomainLoss`] trait abstracts over them so trainers (and
//! tests) can plug in other losses.

use serde::{Deserialize, Serialize};

use crate::data::{pendulum_energy, pendulum_energy_grad, Matrix, PendulumConfig, PendulumState};
use crate::error::{Error, Result};
use crate::nn::{
    self, forward, grad_params, input_gradient, masked_input_grad_sq, masked_jacobian_frobenius,
    OutputHead, ParamVector, Scalarize,
};

/// First clinical rule: high lactate and low bicarbonate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalRuleA {
    pub lactate_index: usize,
    pub lactate_threshold_std: f64,
    pub bicarbonate_index: usize,
    pub bicarbonate_threshold_std: f64,
}

/// Second clinical rule: high creatinine, high BUN, low urine output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalRuleB {
    pub creatinine_index: usize,
    pub creatinine_threshold_std: f64,
    pub bun_index: usize,
    pub bun_threshold_std: f64,
    pub urine_index: usize,
    pub urine_threshold_std: f64,
}

/// Rule region X_c in standardized feature units: rule A or rule B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalRegion {
    pub rule_a: ClinicalRuleA,
    pub rule_b: ClinicalRuleB,
}

impl ClinicalRegion {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let idx = [
            self.rule_a.lactate_index,
            self.rule_a.bicarbonate_index,
            self.rule_b.creatinine_index,
            self.rule_b.bun_index,
            self.rule_b.urine_index,
        ];
        for &i in &idx {
            if i >= feature_dim {
                return Err(Error::InvalidConfig(format!(
                    "clinical rule index {i} out of range for {feature_dim} features"
                )));
            }
        }
        for a in 0..idx.len() {
            for b in (a + 1)..idx.len() {
                if idx[a] == idx[b] {
                    return Err(Error::InvalidConfig(
                        "clinical rule indices must be distinct".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Membership test on a standardized feature row.
    pub fn contains(&self, x: &[f64]) -> bool {
        let a = x[self.rule_a.lactate_index] > self.rule_a.lactate_threshold_std
            && x[self.rule_a.bicarbonate_index] < self.rule_a.bicarbonate_threshold_std;
        let b = x[self.rule_b.creatinine_index] > self.rule_b.creatinine_threshold_std
            && x[self.rule_b.bun_index] > self.rule_b.bun_threshold_std
            && x[self.rule_b.urine_index] < self.rule_b.urine_threshold_std;
        a || b
    }
}

/// How the background penalty scalarizes a multi-class output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundVariant {
    /// Squared masked gradient of the summed log-softmax outputs
    /// (the gradient-regularization convention for classifiers).
    #[default]
    SumLogSoftmax,
    /// Frobenius norm of the masked raw-output Jacobian.
    LogitFrobenius,
}

/// Tagged selection of one of the four domain-knowledge losses plus its
/// auxiliary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainLossSpec {
    Background {
        /// Fallback mask when the batch carries no per-example masks.
        background_mask: Vec<usize>,
        #[serde(default)]
        variant: BackgroundVariant,
    },
    GroupFairness {
        /// Feature column carrying the group indicator.
        group_attr_index: usize,
    },
    Clinical {
        region: ClinicalRegion,
    },
    EnergyDamping {
        pendulum: PendulumConfig,
    },
}

impl DomainLossSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DomainLossSpec::Background { .. } => "background",
            DomainLossSpec::GroupFairness { .. } => "group_fairness",
            DomainLossSpec::Clinical { .. } => "clinical",
            DomainLossSpec::EnergyDamping { .. } => "energy_damping",
        }
    }
}

/// A batch of inputs with optional per-row side data. `idx` selects the rows
/// of `xs` forming the batch; `masks`/`groups` are parallel to the *full*
/// row set of `xs`.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a> {
    xs: &'a Matrix,
    idx: Option<&'a [usize]>,
    masks: Option<&'a [Vec<usize>]>,
    groups: Option<&'a [bool]>,
}

impl<'a> BatchRef<'a> {
    pub fn full(xs: &'a Matrix) -> Self {
        Self {
            xs,
            idx: None,
            masks: None,
            groups: None,
        }
    }

    pub fn with_idx(mut self, idx: &'a [usize]) -> Self {
        self.idx = Some(idx);
        self
    }

    pub fn with_masks(mut self, masks: Option<&'a [Vec<usize>]>) -> Self {
        self.masks = masks;
        self
    }

    pub fn with_groups(mut self, groups: Option<&'a [bool]>) -> Self {
        self.groups = groups;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.idx.map(|i| i.len()).unwrap_or_else(|| self.xs.n_rows())
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn row_of(&self, k: usize) -> usize {
        self.idx.map(|i| i[k]).unwrap_or(k)
    }

    #[inline]
    pub fn x(&self, k: usize) -> &'a [f64] {
        self.xs.row(self.row_of(k))
    }

    #[inline]
    pub fn mask(&self, k: usize) -> Option<&'a [usize]> {
        self.masks.map(|m| m[self.row_of(k)].as_slice())
    }

    #[inline]
    pub fn group(&self, k: usize) -> Option<bool> {
        self.groups.map(|g| g[self.row_of(k)])
    }
}

/// A domain-knowledge loss over a batch. Per-example losses return one
/// (value, grad) pair per row; batch-level losses (fairness) return exactly
/// one pair for the whole batch.
pub trait DomainLoss {
    /// Per-entry phi values and their parameter gradients.
    fn eval_batch(&self, params: &ParamVector, batch: &BatchRef<'_>)
        -> Result<Vec<(f64, Vec<f64>)>>;

    /// phi values only; cheaper than [`DomainLoss::eval_batch`] where a
    /// gradient-free path exists.
    fn values(&self, params: &ParamVector, batch: &BatchRef<'_>) -> Result<Vec<f64>> {
        Ok(self
            .eval_batch(params, batch)?
            .into_iter()
            .map(|(v, _)| v)
            .collect())
    }

    /// True when the loss produces one value per batch instead of per row.
    fn batch_level(&self) -> bool {
        false
    }
}

/// Background penalty: masked squared input-gradient norm.
///
/// For softmax-logit heads the default differentiates the summed log-softmax
/// outputs; identity heads (regressors) and the `LogitFrobenius` variant use
/// the raw-output Jacobian Frobenius norm. Returns the value and its exact
/// parameter gradient via the double-backward pass.
pub fn phi_background(
    params: &ParamVector,
    x: &[f64],
    mask: &[usize],
    variant: BackgroundVariant,
) -> Result<(f64, Vec<f64>)> {
    let head = params.arch().output_head;
    match (head, variant) {
        (OutputHead::SoftmaxLogits, BackgroundVariant::SumLogSoftmax) => {
            masked_input_grad_sq(params, x, mask, Scalarize::SumLogSoftmax)
        }
        _ => masked_jacobian_frobenius(params, x, mask),
    }
}

fn phi_background_value(
    params: &ParamVector,
    x: &[f64],
    mask: &[usize],
    variant: BackgroundVariant,
) -> Result<f64> {
    let arch = params.arch();
    for &j in mask {
        if j >= arch.input_dim() {
            return Err(Error::InvalidMask(format!(
                "mask index {j} out of range for input dim {}",
                arch.input_dim()
            )));
        }
    }
    let head = arch.output_head;
    let logits = forward(params, x)?;
    let masked_sq = |v: &[f64]| mask.iter().map(|&j| v[j] * v[j]).sum::<f64>();
    match (head, variant) {
        (OutputHead::SoftmaxLogits, BackgroundVariant::SumLogSoftmax) => {
            let n_classes = logits.len() as f64;
            let upstream: Vec<f64> = nn::softmax(&logits)
                .into_iter()
                .map(|p| 1.0 - n_classes * p)
                .collect();
            let v = input_gradient(params, x, &upstream)?;
            Ok(masked_sq(&v))
        }
        _ => {
            let mut total = 0.0;
            for c in 0..logits.len() {
                let mut upstream = vec![0.0; logits.len()];
                upstream[c] = 1.0;
                let v = input_gradient(params, x, &upstream)?;
                total += masked_sq(&v);
            }
            Ok(total)
        }
    }
}

/// Squared demographic-parity gap over a batch: (p_a - p_b)^2 with p_g the
/// mean predicted positive probability of group g. Returns the single
/// batch-level value and its gradient.
pub fn phi_group_fairness_batch(
    params: &ParamVector,
    batch: &BatchRef<'_>,
    groups: &[bool],
) -> Result<(f64, Vec<f64>)> {
    if params.arch().output_dim() != 1 {
        return Err(Error::InvalidConfig(
            "group-fairness loss needs a single-logit binary head".to_string(),
        ));
    }
    if groups.len() != batch.len() {
        return Err(Error::InvalidShape(format!(
            "{} group labels for a batch of {}",
            groups.len(),
            batch.len()
        )));
    }
    let (mut n_a, mut n_b) = (0usize, 0usize);
    for &g in groups {
        if g {
            n_a += 1;
        } else {
            n_b += 1;
        }
    }
    if n_a == 0 || n_b == 0 {
        return Err(Error::DegenerateBatch(format!(
            "fairness batch has {n_a} group-a rows and {n_b} group-b rows"
        )));
    }

    let mut p = [0.0f64; 2];
    let mut probs = Vec::with_capacity(batch.len());
    for k in 0..batch.len() {
        let z = forward(params, batch.x(k))?[0];
        let pr = sigmoid(z);
        probs.push(pr);
        p[usize::from(groups[k])] += pr;
    }
    let p_a = p[1] / n_a as f64;
    let p_b = p[0] / n_b as f64;
    let gap = p_a - p_b;
    let value = gap * gap;

    // d value / d w = 2 gap * (d p_a - d p_b), chained through each sigmoid.
    let mut grad = vec![0.0; params.len()];
    for k in 0..batch.len() {
        let pr = probs[k];
        let sign = if groups[k] {
            1.0 / n_a as f64
        } else {
            -1.0 / n_b as f64
        };
        let coeff = 2.0 * gap * sign * pr * (1.0 - pr);
        if coeff == 0.0 {
            continue;
        }
        let g = grad_params(params, batch.x(k), &[coeff])?;
        for (gi, gk) in grad.iter_mut().zip(&g) {
            *gi += gk;
        }
    }
    Ok((value, grad))
}

/// Clinical rule hinge: 1[x in X_c] * max(0, 1 - h(x)) with h the sigmoid
/// output. Zero value and gradient outside the region.
pub fn phi_clinical(
    params: &ParamVector,
    x: &[f64],
    region: &ClinicalRegion,
) -> Result<(f64, Vec<f64>)> {
    if params.arch().output_dim() != 1 {
        return Err(Error::InvalidConfig(
            "clinical loss needs a single-logit binary head".to_string(),
        ));
    }
    region.validate(params.arch().input_dim())?;
    if !region.contains(x) {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    let z = forward(params, x)?[0];
    let h = sigmoid(z);
    let value = (1.0 - h).max(0.0);
    if value == 0.0 {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    // d/dw max(0, 1 - sigmoid(z)) = -sigmoid'(z) dz/dw inside the hinge.
    let coeff = -h * (1.0 - h);
    let grad = grad_params(params, x, &[coeff])?;
    Ok((value, grad))
}

/// Energy-damping hinge: max(E(h(x)) - E(x), 0), zero gradient where the
/// hinge is inactive (including at exact equality).
pub fn phi_energy_damping(
    params: &ParamVector,
    x: &[f64],
    cfg: &PendulumConfig,
) -> Result<(f64, Vec<f64>)> {
    if params.arch().input_dim() != 4 || params.arch().output_dim() != 4 {
        return Err(Error::InvalidConfig(
            "energy-damping loss needs a 4-in 4-out state predictor".to_string(),
        ));
    }
    let state_in = PendulumState::from_slice(x)?;
    let pred = forward(params, x)?;
    let state_pred = PendulumState::from_slice(&pred)?;
    let diff = pendulum_energy(&state_pred, cfg) - pendulum_energy(&state_in, cfg);
    if diff <= 0.0 {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    let upstream = pendulum_energy_grad(&state_pred, cfg);
    let grad = grad_params(params, x, &upstream)?;
    Ok((diff, grad))
}

fn phi_energy_value(params: &ParamVector, x: &[f64], cfg: &PendulumConfig) -> Result<f64> {
    let state_in = PendulumState::from_slice(x)?;
    let pred = forward(params, x)?;
    let state_pred = PendulumState::from_slice(&pred)?;
    Ok((pendulum_energy(&state_pred, cfg) - pendulum_energy(&state_in, cfg)).max(0.0))
}

fn sigmoid(z: f64) -> f64 {
    nn::sigmoid(z)
}

impl DomainLossSpec {
    fn fairness_groups(&self, batch: &BatchRef<'_>, col: usize) -> Result<Vec<bool>> {
        let mut groups = Vec::with_capacity(batch.len());
        for k in 0..batch.len() {
            groups.push(match batch.group(k) {
                Some(g) => g,
                None => {
                    let x = batch.x(k);
                    if col >= x.len() {
                        return Err(Error::InvalidConfig(format!(
                            "group column {col} out of range for {} features",
                            x.len()
                        )));
                    }
                    x[col] > 0.5
                }
            });
        }
        Ok(groups)
    }
}

impl DomainLoss for DomainLossSpec {
    fn eval_batch(
        &self,
        params: &ParamVector,
        batch: &BatchRef<'_>,
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        if batch.is_empty() {
            return Err(Error::DegenerateBatch("empty batch".to_string()));
        }
        match self {
            DomainLossSpec::Background {
                background_mask,
                variant,
            } => (0..batch.len())
                .map(|k| {
                    let mask = batch.mask(k).unwrap_or(background_mask.as_slice());
                    phi_background(params, batch.x(k), mask, *variant)
                })
                .collect(),
            DomainLossSpec::GroupFairness { group_attr_index } => {
                let groups = self.fairness_groups(batch, *group_attr_index)?;
                Ok(vec![phi_group_fairness_batch(params, batch, &groups)?])
            }
            DomainLossSpec::Clinical { region } => (0..batch.len())
                .map(|k| phi_clinical(params, batch.x(k), region))
                .collect(),
            DomainLossSpec::EnergyDamping { pendulum } => (0..batch.len())
                .map(|k| phi_energy_damping(params, batch.x(k), pendulum))
                .collect(),
        }
    }

    fn values(&self, params: &ParamVector, batch: &BatchRef<'_>) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::DegenerateBatch("empty batch".to_string()));
        }
        match self {
            DomainLossSpec::Background {
                background_mask,
                variant,
            } => (0..batch.len())
                .map(|k| {
                    let mask = batch.mask(k).unwrap_or(background_mask.as_slice());
                    phi_background_value(params, batch.x(k), mask, *variant)
                })
                .collect(),
            DomainLossSpec::GroupFairness { group_attr_index } => {
                let groups = self.fairness_groups(batch, *group_attr_index)?;
                let (mut n_a, mut n_b) = (0usize, 0usize);
                let mut p = [0.0f64; 2];
                for k in 0..batch.len() {
                    if groups[k] {
                        n_a += 1;
                    } else {
                        n_b += 1;
                    }
                    let z = forward(params, batch.x(k))?[0];
                    p[usize::from(groups[k])] += sigmoid(z);
                }
                if n_a == 0 || n_b == 0 {
                    return Err(Error::DegenerateBatch(
                        "fairness batch is missing a group".to_string(),
                    ));
                }
                let gap = p[1] / n_a as f64 - p[0] / n_b as f64;
                Ok(vec![gap * gap])
            }
            DomainLossSpec::Clinical { region } => {
                region.validate(params.arch().input_dim())?;
                (0..batch.len())
                    .map(|k| {
                        let x = batch.x(k);
                        if !region.contains(x) {
                            return Ok(0.0);
                        }
                        let z = forward(params, x)?[0];
                        Ok((1.0 - sigmoid(z)).max(0.0))
                    })
                    .collect()
            }
            DomainLossSpec::EnergyDamping { pendulum } => (0..batch.len())
                .map(|k| phi_energy_value(params, batch.x(k), pendulum))
                .collect(),
        }
    }

    fn batch_level(&self) -> bool {
        matches!(self, DomainLossSpec::GroupFairness { .. })
    }
}

/// Mean phi and mean gradient over a batch. For batch-level losses the
/// single value is returned as-is.
pub fn phi_batch_mean(
    params: &ParamVector,
    batch: &BatchRef<'_>,
    spec: &dyn DomainLoss,
) -> Result<(f64, Vec<f64>)> {
    let pairs = spec.eval_batch(params, batch)?;
    if pairs.is_empty() {
        return Err(Error::DegenerateBatch("empty batch".to_string()));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (v, g) in &pairs {
        value += v * scale;
        for (gi, gk) in grad.iter_mut().zip(g) {
            *gi += gk * scale;
        }
    }
    Ok((value, grad))
}
