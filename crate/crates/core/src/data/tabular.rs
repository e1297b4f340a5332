//! Synthetic tabular generators: a fairness task with a group indicator and
//! a clinical task with a rule region over 8 physiological features.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// 80th-percentile standard-normal quantile, used for the generator-quantile
/// rule thresholds.
const Z_80: f64 = 0.841_621_233_572_914_3;

// ---------------------------------------------------------------------------
// Fairness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairnessGenConfig {
    /// Number of non-group feature columns; the group indicator is appended
    /// as the last column.
    pub feature_dim: usize,
    /// Base-rate gap delta added to group a's positive probability.
    pub base_rate_gap: f64,
    /// Scale of the group-dependent feature offset (orthogonal to the label
    /// direction, so it shifts features without moving the label scores).
    pub group_correlation: f64,
}

impl Default for FairnessGenConfig {
    fn default() -> Self {
        Self {
            feature_dim: 6,
            base_rate_gap: 0.3,
            group_correlation: 0.5,
        }
    }
}

impl FairnessGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig(
                "fairness generator needs at least 2 feature columns".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.base_rate_gap) {
            return Err(Error::InvalidConfig(format!(
                "base-rate gap must be a probability, got {}",
                self.base_rate_gap
            )));
        }
        Ok(())
    }

    /// Index of the group column in the emitted feature matrix.
    pub fn group_col(&self) -> usize {
        self.feature_dim
    }
}

fn unit_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Generates `n` rows. Rows come in (group a, group b) pairs in random
/// order, so any contiguous window of >= 8 rows contains both groups.
/// Returns (features incl. group column, labels, group flags).
pub fn fairness_dataset<R: Rng + ?Sized>(
    cfg: &FairnessGenConfig,
    n: usize,
    rng: &mut R,
) -> Result<(Matrix, Vec<usize>, Vec<bool>)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig(
            "fairness dataset needs a positive row count".to_string(),
        ));
    }
    let d = cfg.feature_dim;
    // Fixed per-dataset directions: label scores along beta, group offset
    // along a direction orthogonal to beta.
    let beta: Vec<f64> = unit_normal_vec(d, rng).into_iter().map(|x| 0.8 * x).collect();
    let mut offset = unit_normal_vec(d, rng);
    let beta_norm_sq: f64 = beta.iter().map(|b| b * b).sum();
    let proj: f64 = beta.iter().zip(&offset).map(|(b, u)| b * u).sum::<f64>() / beta_norm_sq;
    for (u, b) in offset.iter_mut().zip(&beta) {
        *u -= proj * b;
    }
    let norm = offset.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for u in &mut offset {
        *u /= norm;
    }

    let mut xs = Matrix::zeros(n, d + 1);
    let mut ys = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut pair = [true, false];
    let mut emitted = 0usize;
    'outer: loop {
        if rng.gen::<bool>() {
            pair.swap(0, 1);
        }
        for &g in &pair {
            if emitted == n {
                break 'outer;
            }
            let row = xs.row_mut(emitted);
            let mut score = 0.0;
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                let x = eps + if g { cfg.group_correlation * offset[j] } else { 0.0 };
                row[j] = x;
                score += beta[j] * x;
            }
            row[d] = if g { 1.0 } else { 0.0 };
            let p = (sigmoid(score) + if g { cfg.base_rate_gap } else { 0.0 }).clamp(0.0, 1.0);
            ys.push(usize::from(rng.gen::<f64>() < p));
            groups.push(g);
            emitted += 1;
        }
        if emitted == n {
            break;
        }
    }
    Ok((xs, ys, groups))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Clinical
// ---------------------------------------------------------------------------

/// Feature column order of the clinical table.
pub const CLINICAL_FEATURES: [&str; 8] = [
    "mean_arterial_pressure",
    "age",
    "urine_output",
    "weight",
    "creatinine",
    "lactate",
    "bicarbonate",
    "bun",
];

pub const COL_MAP: usize = 0;
pub const COL_AGE: usize = 1;
pub const COL_URINE: usize = 2;
pub const COL_WEIGHT: usize = 3;
pub const COL_CREATININE: usize = 4;
pub const COL_LACTATE: usize = 5;
pub const COL_BICARBONATE: usize = 6;
pub const COL_BUN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClinicalGenConfig {
    /// Probability of flipping a rule-region label.
    pub label_noise: f64,
    /// Scale of the off-region linear label signal.
    pub signal_scale: f64,
}

impl Default for ClinicalGenConfig {
    fn default() -> Self {
        Self {
            label_noise: 0.1,
            signal_scale: 1.0,
        }
    }
}

impl ClinicalGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidConfig(format!(
                "label noise must be a probability, got {}",
                self.label_noise
            )));
        }
        Ok(())
    }
}

/// Raw-unit rule thresholds: the lactate/bicarbonate cutoffs are the adult
/// normal-range bounds; the rule-B cutoffs sit at fixed generator quantiles
/// (0.8 / 0.8 / 0.2) since no clinical reference values are available for
/// the synthetic marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalThresholds {
    pub lactate: f64,
    pub bicarbonate: f64,
    pub creatinine: f64,
    pub bun: f64,
    pub urine: f64,
}

/// Generator marginals: (log-normal? (mu, sigma) of ln; else (mean, std)).
const LOGN_URINE: (f64, f64) = (4.094_344_562_222_1, 0.8); // ln 60
const LOGN_CREATININE: (f64, f64) = (0.095_310_179_804_324_9, 0.5); // ln 1.1
const LOGN_LACTATE: (f64, f64) = (0.587_786_664_902_119_0, 0.5); // ln 1.8
const LOGN_BUN: (f64, f64) = (2.995_732_273_553_991, 0.6); // ln 20

pub fn clinical_raw_thresholds() -> ClinicalThresholds {
    ClinicalThresholds {
        lactate: 2.2,
        bicarbonate: 22.0,
        creatinine: (LOGN_CREATININE.0 + LOGN_CREATININE.1 * Z_80).exp(),
        bun: (LOGN_BUN.0 + LOGN_BUN.1 * Z_80).exp(),
        urine: (LOGN_URINE.0 - LOGN_URINE.1 * Z_80).exp(),
    }
}

/// Raw-unit region membership.
pub fn raw_region_flag(row: &[f64], t: &ClinicalThresholds) -> bool {
    let a = row[COL_LACTATE] > t.lactate && row[COL_BICARBONATE] < t.bicarbonate;
    let b = row[COL_CREATININE] > t.creatinine
        && row[COL_BUN] > t.bun
        && row[COL_URINE] < t.urine;
    a || b
}

/// Generates `n` raw-unit rows. Returns (features, labels, raw region flags).
/// Labels: rule rows are 1 with flip probability `label_noise`; off-region
/// rows follow a logistic signal over the latent draws.
pub fn clinical_dataset<R: Rng + ?Sized>(
    cfg: &ClinicalGenConfig,
    n: usize,
    rng: &mut R,
) -> Result<(Matrix, Vec<usize>, Vec<bool>)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig(
            "clinical dataset needs a positive row count".to_string(),
        ));
    }
    let beta = unit_normal_vec(8, rng);
    let thresholds = clinical_raw_thresholds();
    let mut xs = Matrix::zeros(n, 8);
    let mut ys = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = [0.0f64; 8];
        for zj in &mut z {
            *zj = rng.sample(StandardNormal);
        }
        let row = xs.row_mut(i);
        row[COL_MAP] = 80.0 + 15.0 * z[COL_MAP];
        row[COL_AGE] = (65.0 + 15.0 * z[COL_AGE]).clamp(18.0, 90.0);
        row[COL_URINE] = (LOGN_URINE.0 + LOGN_URINE.1 * z[COL_URINE]).exp();
        row[COL_WEIGHT] = (84.0 + 25.0 * z[COL_WEIGHT]).max(30.0);
        row[COL_CREATININE] = (LOGN_CREATININE.0 + LOGN_CREATININE.1 * z[COL_CREATININE]).exp();
        row[COL_LACTATE] = (LOGN_LACTATE.0 + LOGN_LACTATE.1 * z[COL_LACTATE]).exp();
        row[COL_BICARBONATE] = 24.0 + 4.0 * z[COL_BICARBONATE];
        row[COL_BUN] = (LOGN_BUN.0 + LOGN_BUN.1 * z[COL_BUN]).exp();

        let in_region = raw_region_flag(xs.row(i), &thresholds);
        let y = if in_region {
            let flip = rng.gen::<f64>() < cfg.label_noise;
            usize::from(!flip)
        } else {
            let score: f64 = beta
                .iter()
                .zip(&z)
                .map(|(b, zj)| cfg.signal_scale * b * zj)
                .sum();
            usize::from(rng.gen::<f64>() < sigmoid(score))
        };
        ys.push(y);
        flags.push(in_region);
    }
    Ok((xs, ys, flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_gap_no_correlation_gives_near_equal_rates() {
        let cfg = FairnessGenConfig {
            base_rate_gap: 0.0,
            group_correlation: 0.0,
            ..Default::default()
        };
        let mut rng = crate::rng::derive_stream(10, "fair-gen");
        let (_, ys, groups) = fairness_dataset(&cfg, 10_000, &mut rng).unwrap();
        let gap = positive_rate_gap(&ys, &groups);
        assert!(gap.abs() <= 0.05, "gap {gap}");
    }

    #[test]
    fn configured_gap_shows_up_empirically() {
        let cfg = FairnessGenConfig::default(); // delta = 0.3
        let mut rng = crate::rng::derive_stream(11, "fair-gen");
        let (_, ys, groups) = fairness_dataset(&cfg, 10_000, &mut rng).unwrap();
        let gap = positive_rate_gap(&ys, &groups);
        assert!((gap - 0.3).abs() <= 0.05, "gap {gap}");
    }

    #[test]
    fn every_window_of_eight_rows_has_both_groups() {
        let cfg = FairnessGenConfig::default();
        let mut rng = crate::rng::derive_stream(12, "fair-gen");
        let (_, _, groups) = fairness_dataset(&cfg, 512, &mut rng).unwrap();
        for w in groups.windows(8) {
            assert!(w.iter().any(|&g| g) && w.iter().any(|&g| !g));
        }
    }

    fn positive_rate_gap(ys: &[usize], groups: &[bool]) -> f64 {
        let (mut pa, mut na, mut pb, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for (&y, &g) in ys.iter().zip(groups) {
            if g {
                pa += y as f64;
                na += 1.0;
            } else {
                pb += y as f64;
                nb += 1.0;
            }
        }
        pa / na - pb / nb
    }

    #[test]
    fn noiseless_rule_labels_region_rows_one() {
        let cfg = ClinicalGenConfig {
            label_noise: 0.0,
            ..Default::default()
        };
        let mut rng = crate::rng::derive_stream(13, "clin-gen");
        let (_, ys, flags) = clinical_dataset(&cfg, 5_000, &mut rng).unwrap();
        let mut region_rows = 0;
        for (y, f) in ys.iter().zip(&flags) {
            if *f {
                region_rows += 1;
                assert_eq!(*y, 1);
            }
        }
        assert!(region_rows > 100, "region too rare: {region_rows}");
    }

    #[test]
    fn default_label_base_rate_is_moderate() {
        let cfg = ClinicalGenConfig::default();
        let mut rng = crate::rng::derive_stream(14, "clin-gen");
        let (_, ys, _) = clinical_dataset(&cfg, 10_000, &mut rng).unwrap();
        let rate = ys.iter().sum::<usize>() as f64 / ys.len() as f64;
        assert!((0.3..=0.7).contains(&rate), "base rate {rate}");
    }

    #[test]
    fn rule_b_thresholds_sit_at_generator_quantiles() {
        // Empirical check of the analytic quantiles.
        let cfg = ClinicalGenConfig::default();
        let mut rng = crate::rng::derive_stream(15, "clin-gen");
        let (xs, _, _) = clinical_dataset(&cfg, 20_000, &mut rng).unwrap();
        let t = clinical_raw_thresholds();
        let frac_creat = (0..xs.n_rows())
            .filter(|&i| xs.get(i, COL_CREATININE) > t.creatinine)
            .count() as f64
            / xs.n_rows() as f64;
        let frac_urine = (0..xs.n_rows())
            .filter(|&i| xs.get(i, COL_URINE) < t.urine)
            .count() as f64
            / xs.n_rows() as f64;
        assert!((frac_creat - 0.2).abs() < 0.02, "creatinine tail {frac_creat}");
        assert!((frac_urine - 0.2).abs() < 0.02, "urine tail {frac_urine}");
    }
}
