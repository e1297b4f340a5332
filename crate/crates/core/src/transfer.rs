//! Transferring a learned prior to a new architecture by matching
//! function-space samples on a probe set: first/second moment matching,
//! kernel MMD, and a SWAG regression onto the source mean function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::nn::{forward, grad_params, ArchSpec, ParamVector};
use crate::opt::{Adam, Sgd};
use crate::posterior::{swag_collect, swag_to_gaussian};
use crate::rng::derive_stream;
use crate::variational::{GaussianMixturePrior, LowRankGaussian, PriorDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMethod {
    /// First-moment matching, optimizing the target parameters directly.
    M1,
    /// First and second moments, equally weighted.
    M1M2,
    /// Kernel maximum mean discrepancy with a Gaussian kernel.
    Mmd,
    /// Regress the source mean function with SGD and take SWAG moments.
    M1Swag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Bandwidth {
    /// Median heuristic on the source sample rows.
    Median(MedianTag),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianTag {
    Median,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median(MedianTag::Median)
    }
}

fn default_function_samples() -> usize {
    32
}

fn default_swag_warmup() -> usize {
    5
}

fn default_swag_interval() -> usize {
    5
}

fn default_swag_snapshots() -> usize {
    3
}

fn default_init_scale() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub method: TransferMethod,
    /// Function samples drawn per side and per step.
    #[serde(default = "default_function_samples")]
    pub n_function_samples: usize,
    /// Optional cap on the probe rows used (first m rows).
    #[serde(default)]
    pub probe_set_size: Option<usize>,
    #[serde(default)]
    pub kernel_bandwidth: Bandwidth,
    pub learning_rate: f64,
    /// Optimization steps (moment/MMD) or SGD epochs over probes (m1_swag).
    pub epochs: usize,
    pub seed: u64,
    /// Target variational family: covariance rank and jitter.
    pub target_rank: usize,
    pub target_jitter_sigma: f64,
    #[serde(default = "default_init_scale")]
    pub target_init_scale: f64,
    /// Initialize the target at the source parameters (same-architecture
    /// transfers only); mainly a self-transfer sanity check.
    #[serde(default)]
    pub init_from_source: bool,
    #[serde(default = "default_swag_warmup")]
    pub swag_warmup_epochs: usize,
    #[serde(default = "default_swag_interval")]
    pub swag_snapshot_interval: usize,
    #[serde(default = "default_swag_snapshots")]
    pub swag_snapshots: usize,
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_function_samples < 2 {
            return Err(Error::InvalidConfig(
                "transfer needs at least 2 function samples per side".to_string(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// Draws `n` weights and evaluates each on all probe points, flattening the
/// outputs row-wise in point-major, output-minor order: one row per weight
/// sample, `m * output_dim` columns.
pub fn function_samples<R: Rng + ?Sized>(
    prior: &PriorDist,
    probes: &Matrix,
    n: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if probes.n_rows() == 0 {
        return Err(Error::InvalidConfig("probe set is empty".to_string()));
    }
    let out_dim = prior.arch().output_dim();
    let m = probes.n_rows();
    let mut rows = Matrix::zeros(n, m * out_dim);
    for s in 0..n {
        let w = prior.sample(rng);
        let row = rows.row_mut(s);
        for p in 0..m {
            let z = forward(&w, probes.row(p))?;
            row[p * out_dim..(p + 1) * out_dim].copy_from_slice(&z);
        }
    }
    Ok(rows)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased (V-statistic) squared MMD with a Gaussian kernel
/// k(a, b) = exp(-|a - b|^2 / (2 gamma^2)).
pub fn mmd2(w: &Matrix, u: &Matrix, gamma: f64) -> f64 {
    let g2 = 2.0 * gamma * gamma;
    let kernel_mean = |a: &Matrix, b: &Matrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..a.n_rows() {
            for j in 0..b.n_rows() {
                acc += (-sq_dist(a.row(i), b.row(j)) / g2).exp();
            }
        }
        acc / (a.n_rows() * b.n_rows()) as f64
    };
    kernel_mean(w, w) + kernel_mean(u, u) - 2.0 * kernel_mean(w, u)
}

/// Median heuristic: gamma^2 = median of pairwise squared distances / 2,
/// floored at 1e-6.
pub fn median_bandwidth(rows: &Matrix) -> Result<f64> {
    let n = rows.n_rows();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "median bandwidth needs at least 2 rows".to_string(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(rows.row(i), rows.row(j)));
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    Ok((median / 2.0).sqrt().max(1e-6))
}

fn resolve_probes<'a>(probes: &'a Matrix, cfg: &TransferConfig) -> Result<Matrix> {
    let m = cfg.probe_set_size.unwrap_or(probes.n_rows());
    if m == 0 || probes.n_rows() == 0 {
        return Err(Error::InvalidConfig("probe set is empty".to_string()));
    }
    let idx: Vec<usize> = (0..m.min(probes.n_rows())).collect();
    Ok(probes.select_rows(&idx))
}

/// Target-side machinery shared by the moment and MMD objectives: draws
/// fresh reparameterized samples, evaluates them on the probes, and chains
/// an objective row-gradient back onto (mu, V).
struct TargetSide {
    q: LowRankGaussian,
    opt: Adam,
}

struct TargetDraw {
    rows: Matrix,
    eps_r: Vec<Vec<f64>>,
    weights: Vec<ParamVector>,
}

impl TargetSide {
    fn new<R: Rng + ?Sized>(
        arch: &ArchSpec,
        cfg: &TransferConfig,
        source: &PriorDist,
        rng: &mut R,
    ) -> Result<Self> {
        let q = if cfg.init_from_source {
            match source {
                PriorDist::LowRank(src) if src.arch() == arch => src.clone(),
                PriorDist::LowRank(_) => {
                    return Err(Error::InvalidConfig(
                        "init_from_source needs the target architecture to match the source"
                            .to_string(),
                    ))
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "init_from_source needs a low-rank source prior".to_string(),
                    ))
                }
            }
        } else {
            LowRankGaussian::init_random(
                arch,
                cfg.target_rank,
                cfg.target_jitter_sigma,
                cfg.target_init_scale,
                rng,
            )?
        };
        let psi_dim = q.dim() * (1 + q.rank());
        Ok(Self {
            q,
            opt: Adam::new(cfg.learning_rate, psi_dim),
        })
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        probes: &Matrix,
        n: usize,
        rng: &mut R,
    ) -> Result<TargetDraw> {
        use rand_distr::StandardNormal;
        let out_dim = self.q.arch().output_dim();
        let m = probes.n_rows();
        let mut rows = Matrix::zeros(n, m * out_dim);
        let mut eps_r_all = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for s in 0..n {
            let eps_r: Vec<f64> = (0..self.q.rank()).map(|_| rng.sample(StandardNormal)).collect();
            let eps_n: Vec<f64> = (0..self.q.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let w = self.q.sample_with_noise(&eps_r, &eps_n)?;
            let row = rows.row_mut(s);
            for p in 0..m {
                let z = forward(&w, probes.row(p))?;
                row[p * out_dim..(p + 1) * out_dim].copy_from_slice(&z);
            }
            eps_r_all.push(eps_r);
            weights.push(w);
        }
        Ok(TargetDraw {
            rows,
            eps_r: eps_r_all,
            weights,
        })
    }

    /// One Adam step on (mu, V) given dJ/d(rows).
    fn step(&mut self, probes: &Matrix, draw: &TargetDraw, row_grads: &Matrix) -> Result<()> {
        let n = self.q.dim();
        let r = self.q.rank();
        let out_dim = self.q.arch().output_dim();
        let mut grad_mu = vec![0.0; n];
        let mut grad_v = vec![0.0; n * r];
        for s in 0..draw.weights.len() {
            let mut g_w = vec![0.0; n];
            let rg = row_grads.row(s);
            for p in 0..probes.n_rows() {
                let upstream = &rg[p * out_dim..(p + 1) * out_dim];
                if upstream.iter().all(|&u| u == 0.0) {
                    continue;
                }
                let g = grad_params(&draw.weights[s], probes.row(p), upstream)?;
                for (a, b) in g_w.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            for i in 0..n {
                grad_mu[i] += g_w[i];
            }
            for j in 0..r {
                let e = draw.eps_r[s][j];
                if e == 0.0 {
                    continue;
                }
                let col = &mut grad_v[j * n..(j + 1) * n];
                for i in 0..n {
                    col[i] += e * g_w[i];
                }
            }
        }
        let mut psi = self.q.mean().to_vec();
        psi.extend_from_slice(self.q.factors());
        let mut flat = grad_mu;
        flat.extend(grad_v);
        if !flat.iter().all(|g| g.is_finite()) {
            return Err(Error::NumericalFailure(
                "transfer gradient is non-finite".to_string(),
            ));
        }
        self.opt.step(&mut psi, &flat);
        self.q.mean_mut().copy_from_slice(&psi[..n]);
        self.q.factors_mut().copy_from_slice(&psi[n..]);
        Ok(())
    }
}

/// Column means of a sample matrix.
fn col_means(rows: &Matrix) -> Vec<f64> {
    let mut means = vec![0.0; rows.n_cols()];
    for i in 0..rows.n_rows() {
        for (m, v) in means.iter_mut().zip(rows.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= rows.n_rows() as f64;
    }
    means
}

fn col_means_sq(rows: &Matrix) -> Vec<f64> {
    let mut means = vec![0.0; rows.n_cols()];
    for i in 0..rows.n_rows() {
        for (m, v) in means.iter_mut().zip(rows.row(i)) {
            *m += v * v;
        }
    }
    for m in &mut means {
        *m /= rows.n_rows() as f64;
    }
    means
}

/// Moment-matching transfer (M1 or M1+M2). The source prior is read-only;
/// its function samples are drawn once and cached.
pub fn transfer_moment<R: Rng + ?Sized>(
    source: &PriorDist,
    target_arch: &ArchSpec,
    cfg: &TransferConfig,
    probes: &Matrix,
    rng: &mut R,
) -> Result<LowRankGaussian> {
    if !matches!(cfg.method, TransferMethod::M1 | TransferMethod::M1M2) {
        return Err(Error::InvalidConfig(
            "transfer_moment expects method m1 or m1m2".to_string(),
        ));
    }
    cfg.validate()?;
    check_compatible(source.arch(), target_arch)?;
    let probes = resolve_probes(probes, cfg)?;
    let source_rows = function_samples(source, &probes, cfg.n_function_samples, rng)?;
    let w_mean = col_means(&source_rows);
    let w_mean_sq = col_means_sq(&source_rows);
    let match_second = cfg.method == TransferMethod::M1M2;

    let mut target = TargetSide::new(target_arch, cfg, source, rng)?;
    let n = cfg.n_function_samples;
    let d = w_mean.len() as f64;
    for _step in 0..cfg.epochs {
        let draw = target.draw(&probes, n, rng)?;
        let u_mean = col_means(&draw.rows);
        let u_mean_sq = col_means_sq(&draw.rows);
        // dJ1/dU[s,c] = 2 (u_mean_c - w_mean_c) / (d n).
        let mut row_grads = Matrix::zeros(n, w_mean.len());
        for s in 0..n {
            let rg = row_grads.row_mut(s);
            for c in 0..rg.len() {
                let mut g = 2.0 * (u_mean[c] - w_mean[c]) / (d * n as f64);
                if match_second {
                    g += 2.0 * (u_mean_sq[c] - w_mean_sq[c]) / (d * n as f64)
                        * 2.0
                        * draw.rows.get(s, c);
                }
                rg[c] = g;
            }
        }
        target.step(&probes, &draw, &row_grads)?;
    }
    Ok(target.q)
}

/// First-moment objective value for diagnostics and tests.
pub fn m1_objective(source_rows: &Matrix, target_rows: &Matrix) -> f64 {
    let w = col_means(source_rows);
    let u = col_means(target_rows);
    w.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / w.len() as f64
}

/// MMD transfer: descends the V-statistic MMD between cached source rows
/// and fresh reparameterized target rows; bandwidth fixed once from the
/// source sample (median heuristic unless overridden).
pub fn transfer_mmd<R: Rng + ?Sized>(
    source: &PriorDist,
    target_arch: &ArchSpec,
    cfg: &TransferConfig,
    probes: &Matrix,
    rng: &mut R,
) -> Result<LowRankGaussian> {
    if cfg.method != TransferMethod::Mmd {
        return Err(Error::InvalidConfig(
            "transfer_mmd expects method mmd".to_string(),
        ));
    }
    cfg.validate()?;
    check_compatible(source.arch(), target_arch)?;
    let probes = resolve_probes(probes, cfg)?;
    let source_rows = function_samples(source, &probes, cfg.n_function_samples, rng)?;
    let gamma = match cfg.kernel_bandwidth {
        Bandwidth::Median(_) => median_bandwidth(&source_rows)?,
        Bandwidth::Fixed(g) => {
            if !(g > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "kernel bandwidth must be positive, got {g}"
                )));
            }
            g
        }
    };
    let g2 = 2.0 * gamma * gamma;
    let mut target = TargetSide::new(target_arch, cfg, source, rng)?;
    let n = cfg.n_function_samples;
    let n_w = source_rows.n_rows();
    for _step in 0..cfg.epochs {
        let draw = target.draw(&probes, n, rng)?;
        let mut row_grads = Matrix::zeros(n, source_rows.n_cols());
        for s in 0..n {
            // d/du_s of mean_ij k(u_i, u_j): pairs (s, j) and (j, s).
            for j in 0..n {
                if j == s {
                    continue;
                }
                let k = (-sq_dist(draw.rows.row(s), draw.rows.row(j)) / g2).exp();
                let coeff = -2.0 * k / (gamma * gamma) / (n * n) as f64;
                let (us, uj) = (draw.rows.row(s), draw.rows.row(j));
                let rg = row_grads.row_mut(s);
                for c in 0..rg.len() {
                    rg[c] += coeff * (us[c] - uj[c]);
                }
            }
            // d/du_s of -2 mean_ij k(w_i, u_j).
            for i in 0..n_w {
                let k = (-sq_dist(source_rows.row(i), draw.rows.row(s)) / g2).exp();
                let coeff = 2.0 * k / (gamma * gamma) / (n_w * n) as f64;
                let (us, wi) = (draw.rows.row(s), source_rows.row(i));
                let rg = row_grads.row_mut(s);
                for c in 0..rg.len() {
                    rg[c] += coeff * (us[c] - wi[c]);
                }
            }
        }
        target.step(&probes, &draw, &row_grads)?;
    }
    Ok(target.q)
}

/// SWAG first-moment transfer: regress the source mean function on the
/// probes with plain SGD and summarize snapshots into a K = 1 mixture.
pub fn transfer_m1_swag<R: Rng + ?Sized>(
    source: &PriorDist,
    target_arch: &ArchSpec,
    cfg: &TransferConfig,
    probes: &Matrix,
    rng: &mut R,
) -> Result<GaussianMixturePrior> {
    if cfg.method != TransferMethod::M1Swag {
        return Err(Error::InvalidConfig(
            "transfer_m1_swag expects method m1_swag".to_string(),
        ));
    }
    cfg.validate()?;
    check_compatible(source.arch(), target_arch)?;
    let needed = cfg.swag_warmup_epochs + cfg.swag_snapshot_interval * cfg.swag_snapshots;
    if cfg.swag_snapshots < 2 || cfg.epochs < needed {
        return Err(Error::InvalidConfig(format!(
            "m1_swag needs >= 2 snapshots and an epoch budget >= {needed}, got {} epochs",
            cfg.epochs
        )));
    }
    let probes = resolve_probes(probes, cfg)?;
    let source_rows = function_samples(source, &probes, cfg.n_function_samples, rng)?;
    let targets = col_means(&source_rows);
    let out_dim = target_arch.output_dim();
    let m = probes.n_rows();

    let mut w = ParamVector::he_init(target_arch, rng);
    let opt = Sgd::new(cfg.learning_rate);
    let batch = 32usize.min(m);
    let mut snapshots = Vec::with_capacity(cfg.swag_snapshots);
    for epoch in 1..=cfg.epochs {
        let order = crate::data::shuffled_indices(m, rng);
        for idx in order.chunks(batch) {
            let mut grad = vec![0.0; w.len()];
            for &p in idx {
                let z = forward(&w, probes.row(p))?;
                let upstream: Vec<f64> = (0..out_dim)
                    .map(|c| 2.0 * (z[c] - targets[p * out_dim + c]) / idx.len() as f64)
                    .collect();
                let g = grad_params(&w, probes.row(p), &upstream)?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            opt.step(w.values_mut(), &grad);
        }
        if epoch > cfg.swag_warmup_epochs
            && (epoch - cfg.swag_warmup_epochs) % cfg.swag_snapshot_interval == 0
            && snapshots.len() < cfg.swag_snapshots
        {
            snapshots.push(w.clone());
        }
    }
    let moments = swag_collect(&snapshots)?;
    let gaussian = swag_to_gaussian(&moments, target_arch)?;
    GaussianMixturePrior::new(vec![gaussian])
}

/// Runs the configured transfer method and returns the target prior.
pub fn transfer_prior(
    source: &PriorDist,
    target_arch: &ArchSpec,
    cfg: &TransferConfig,
    probes: &Matrix,
) -> Result<PriorDist> {
    let mut rng = derive_stream(cfg.seed, "transfer");
    match cfg.method {
        TransferMethod::M1 | TransferMethod::M1M2 => Ok(PriorDist::LowRank(transfer_moment(
            source,
            target_arch,
            cfg,
            probes,
            &mut rng,
        )?)),
        TransferMethod::Mmd => Ok(PriorDist::LowRank(transfer_mmd(
            source,
            target_arch,
            cfg,
            probes,
            &mut rng,
        )?)),
        TransferMethod::M1Swag => Ok(PriorDist::Mixture(transfer_m1_swag(
            source,
            target_arch,
            cfg,
            probes,
            &mut rng,
        )?)),
    }
}

fn check_compatible(source: &ArchSpec, target: &ArchSpec) -> Result<()> {
    if source.input_dim() != target.input_dim() || source.output_dim() != target.output_dim() {
        return Err(Error::InvalidConfig(format!(
            "source ({}->{}) and target ({}->{}) must share input/output dims",
            source.input_dim(),
            source.output_dim(),
            target.input_dim(),
            target.output_dim()
        )));
    }
    Ok(())
}
