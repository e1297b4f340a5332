//! SWAG moment collection: first and second moments of SGD snapshots plus
//! deviation columns, turned into a low-rank-plus-diagonal Gaussian
//! Sigma = diag/2 + D D^T / (2 (k - 1)).

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::variational::LowRankGaussian;

/// Floor on the SWAG diagonal variance estimate.
pub const SWAG_VAR_FLOOR: f64 = 1e-8;

/// Moments of a snapshot collection.
#[derive(Debug, Clone, PartialEq)]
pub struct SwagMoments {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Deviations (snapshot - mean) of the last (count - 1) snapshots.
    pub deviations: Vec<Vec<f64>>,
    pub count: usize,
}

impl SwagMoments {
    /// max(second_moment - mean^2, floor) per coordinate.
    pub fn diag_variance(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.second_moment)
            .map(|(m, s)| (s - m * m).max(SWAG_VAR_FLOOR))
            .collect()
    }
}

/// Collects moments from a snapshot list. Needs at least one snapshot; at
/// least two for any low-rank part.
pub fn swag_collect(snapshots: &[ParamVector]) -> Result<SwagMoments> {
    let first = snapshots.first().ok_or_else(|| {
        Error::InvalidConfig("SWAG needs at least one snapshot".to_string())
    })?;
    let n = first.len();
    let k = snapshots.len();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for snap in snapshots {
        if snap.arch() != first.arch() {
            return Err(Error::InvalidConfig(
                "SWAG snapshots come from different architectures".to_string(),
            ));
        }
        for (i, &v) in snap.values().iter().enumerate() {
            mean[i] += v;
            second[i] += v * v;
        }
    }
    for i in 0..n {
        mean[i] /= k as f64;
        second[i] /= k as f64;
    }
    // Last (k - 1) snapshots minus the mean.
    let deviations = snapshots[1..]
        .iter()
        .map(|snap| {
            snap.values()
                .iter()
                .zip(&mean)
                .map(|(v, m)| v - m)
                .collect()
        })
        .collect();
    Ok(SwagMoments {
        mean,
        second_moment: second,
        deviations,
        count: k,
    })
}

/// Builds the SWAG Gaussian: Sigma = diag/2 + D D^T / (2 (k - 1)), encoded
/// as a low-rank container with a per-coordinate diagonal and factor
/// columns D / sqrt(2 (k - 1)).
pub fn swag_to_gaussian(
    moments: &SwagMoments,
    arch: &crate::nn::ArchSpec,
) -> Result<LowRankGaussian> {
    if moments.count < 2 {
        return Err(Error::InvalidConfig(format!(
            "SWAG low-rank part needs >= 2 snapshots, got {}",
            moments.count
        )));
    }
    let n = moments.mean.len();
    let rank = moments.deviations.len();
    let diag: Vec<f64> = moments
        .diag_variance()
        .into_iter()
        .map(|v| (0.5 * v).max(SWAG_VAR_FLOOR))
        .collect();
    let scale = 1.0 / (2.0 * (moments.count as f64 - 1.0)).sqrt();
    let mut factors = vec![0.0; n * rank];
    for (j, dev) in moments.deviations.iter().enumerate() {
        for (i, &d) in dev.iter().enumerate() {
            factors[j * n + i] = scale * d;
        }
    }
    LowRankGaussian::with_diag_vector(arch, moments.mean.clone(), factors, rank, diag)
}
