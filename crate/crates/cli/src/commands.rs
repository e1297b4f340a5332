//! Implementations behind the CLI subcommands.

use std::path::{Path, PathBuf};

use dkprior_core::data::{generate_splits, read_dataset, write_dataset, Dataset, TaskMeta};
use dkprior_core::error::{Error, Result};
use dkprior_core::losses::{BatchRef, DomainLossSpec};
use dkprior_core::metrics::{
    accuracy, argmax_class, auroc, l1_loss, mean_and_se, mean_phi_ensemble, mean_phi_model,
    pareto_points, ParetoPoint, PhiMode,
};
use dkprior_core::nn::ArchSpec;
use dkprior_core::posterior::{lagrangian_train, sgld_sample, Averaging, Ensemble};
use dkprior_core::prior::{train_prior, train_swag_prior, UnlabeledData};
use dkprior_core::rng::{derive_indexed_stream, derive_stream};
use dkprior_core::transfer::{transfer_prior, TransferMethod};
use dkprior_core::variational::{IsotropicPrior, PriorDist};

use crate::checkpoint::{file_sha256, load_prior, save_prior, save_prior_with, Provenance};
use crate::config::{phi_spec_for_dataset, resolve_out_path, RunConfig, Task};
use crate::ensemble_io::{load_ensemble, save_ensemble};

/// Input files must exist up front; a missing input is a usage error, not
/// an I/O failure.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn load_data(path: &Path, what: &str) -> Result<Dataset> {
    require_file(path, what)?;
    read_dataset(path)
}

/// Fairness group flags from the dataset's group column, when the task has
/// one.
fn group_flags(ds: &Dataset) -> Option<Vec<bool>> {
    match &ds.meta {
        TaskMeta::Fairness { group_col } => Some(
            (0..ds.n_rows())
                .map(|i| ds.xs.get(i, *group_col) > 0.5)
                .collect(),
        ),
        _ => None,
    }
}

fn resolve_phi_spec(config: Option<&RunConfig>, ds: &Dataset) -> Result<DomainLossSpec> {
    if let Some(cfg) = config {
        if let Some(spec) = &cfg.phi {
            return Ok(spec.clone());
        }
    }
    phi_spec_for_dataset(ds)
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn gen_data(task: Task, config_path: &Path, out_dir: &Path) -> Result<()> {
    require_file(config_path, "config file")?;
    let config = RunConfig::load(config_path)?;
    if config.task != task {
        return Err(Error::InvalidConfig(format!(
            "--task {} does not match config task {}",
            task.name(),
            config.task.name()
        )));
    }
    let gen = config.generate.clone().unwrap_or_default();
    let task_gen = gen.task_gen(task);
    let splits = generate_splits(&task_gen, gen.sizes, config.seed)?;
    let out_dir = resolve_out_path(out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();
    for ds in splits.iter() {
        let name = format!("{}.bnnd", ds.split);
        write_dataset(&out_dir.join(&name), ds)?;
        files.push(serde_json::json!({
            "file": name,
            "split": ds.split,
            "rows": ds.n_rows(),
            "features": ds.n_features(),
        }));
    }
    let manifest = serde_json::json!({
        "task": task.name(),
        "seed": config.seed,
        "sizes": { "train": gen.sizes.train, "val": gen.sizes.val, "test": gen.sizes.test },
        "generator": task_gen,
        "files": files,
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::InvalidConfig(format!("manifest serialization failed: {e}")))?,
    )?;
    println!("wrote {} splits to {}", 3, out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-prior
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
pub enum PriorMethod {
    Variational,
    Swag,
}

pub fn train_prior_cmd(
    config_path: &Path,
    data_path: Option<&Path>,
    out_path: &Path,
    method: Option<PriorMethod>,
) -> Result<()> {
    require_file(config_path, "config file")?;
    let config = RunConfig::load(config_path)?;
    let data_path = data_path
        .map(PathBuf::from)
        .or_else(|| config.data.train.clone())
        .ok_or_else(|| {
            Error::InvalidConfig("no training data: pass --data or set [data].train".to_string())
        })?;
    let ds = load_data(&data_path, "training data")?;
    let arch = config.arch_for_dataset(&ds)?;
    let spec = resolve_phi_spec(Some(&config), &ds)?;
    let groups = group_flags(&ds);
    let unlabeled = UnlabeledData {
        xs: &ds.xs,
        masks: ds.masks.as_deref(),
        groups: groups.as_deref(),
    };
    let method = method.unwrap_or(if config.swag_prior.is_some() && config.prior.is_none() {
        PriorMethod::Swag
    } else {
        PriorMethod::Variational
    });
    let out_path = resolve_out_path(out_path);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    match method {
        PriorMethod::Variational => {
            let prior_cfg = config.prior.clone().ok_or_else(|| {
                Error::InvalidConfig("variational training needs a [prior] section".to_string())
            })?;
            let mut rng = derive_stream(prior_cfg.seed, "train-prior");
            let (q, curve) = train_prior(&arch, &unlabeled, &spec, &prior_cfg, &mut rng)?;
            let prior = q.into_prior_dist();
            save_prior(&out_path, &prior, prior_cfg.seed, spec.kind_name())?;
            let curve_path = out_path.with_extension("curve.csv");
            let mut csv = String::from("epoch,objective,kl,mean_phi\n");
            for row in &curve {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.epoch, row.objective, row.kl, row.mean_phi
                ));
            }
            std::fs::write(&curve_path, csv)?;
            println!(
                "trained variational prior ({} epochs) -> {}",
                curve.len(),
                out_path.display()
            );
        }
        PriorMethod::Swag => {
            let swag_cfg = config.swag_prior.clone().ok_or_else(|| {
                Error::InvalidConfig("SWAG training needs a [swag_prior] section".to_string())
            })?;
            let (tau, base_var) = match &config.prior {
                Some(p) => (p.tau, p.base_prior_variance),
                None => (1.0, 1.0),
            };
            let mixture = train_swag_prior(&arch, &unlabeled, &spec, &swag_cfg, tau, base_var)?;
            let prior = PriorDist::Mixture(mixture);
            save_prior(&out_path, &prior, swag_cfg.seed, spec.kind_name())?;
            println!("trained SWAG mixture prior -> {}", out_path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sample-prior
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn sample_prior_cmd(
    prior_path: Option<&Path>,
    isotropic_variance: Option<f64>,
    config_path: Option<&Path>,
    n: usize,
    phi_eval_path: &Path,
    out_path: &Path,
    seed: u64,
) -> Result<()> {
    let eval = load_data(phi_eval_path, "phi evaluation data")?;
    let prior = match (prior_path, isotropic_variance) {
        (Some(p), None) => {
            require_file(p, "prior checkpoint")?;
            load_prior(p)?.0
        }
        (None, Some(var)) => {
            let config_path = config_path.ok_or_else(|| {
                Error::InvalidConfig(
                    "--isotropic needs --config to determine the architecture".to_string(),
                )
            })?;
            require_file(config_path, "config file")?;
            let config = RunConfig::load(config_path)?;
            let arch = config.arch_for_dataset(&eval)?;
            PriorDist::Isotropic {
                prior: IsotropicPrior::new(var)?,
                arch,
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --prior or --isotropic".to_string(),
            ))
        }
    };
    if prior.arch().input_dim() != eval.n_features() {
        return Err(Error::InvalidConfig(format!(
            "prior expects {} input features, evaluation data has {}",
            prior.arch().input_dim(),
            eval.n_features()
        )));
    }
    let spec = resolve_phi_spec(None, &eval)?;
    let groups = group_flags(&eval);
    let batch = BatchRef::full(&eval.xs)
        .with_masks(eval.masks.as_deref())
        .with_groups(groups.as_deref());

    let mut rng = derive_stream(seed, "sample-prior");
    let mut phis = Vec::with_capacity(n);
    for _ in 0..n {
        let w = prior.sample(&mut rng);
        phis.push(mean_phi_model(&w, &batch, &spec)?);
    }
    let mut csv = String::from("sample_id,mean_phi,std_err\n");
    for (i, phi) in phis.iter().enumerate() {
        csv.push_str(&format!("{i},{phi},\n"));
    }
    if !phis.is_empty() {
        let (mean, se) = mean_and_se(&phis);
        csv.push_str(&format!("summary,{mean},{se}\n"));
    }
    let out_path = resolve_out_path(out_path);
    std::fs::write(&out_path, csv)?;
    println!("wrote {} prior-sample phi rows -> {}", n, out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sample-posterior
// ---------------------------------------------------------------------------

pub fn sample_posterior_cmd(
    prior_path: Option<&Path>,
    isotropic_variance: Option<f64>,
    data_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    require_file(config_path, "config file")?;
    let config = RunConfig::load(config_path)?;
    let sgld_cfg = config
        .sgld
        .clone()
        .ok_or_else(|| Error::InvalidConfig("posterior sampling needs an [sgld] section".to_string()))?;
    let data = load_data(data_path, "labeled data")?;
    let prior = match (prior_path, isotropic_variance) {
        (Some(p), None) => {
            require_file(p, "prior checkpoint")?;
            load_prior(p)?.0
        }
        (None, Some(var)) => PriorDist::Isotropic {
            prior: IsotropicPrior::new(var)?,
            arch: config.arch_for_dataset(&data)?,
        },
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --prior or --isotropic".to_string(),
            ))
        }
    };
    if prior.arch().input_dim() != data.n_features() {
        return Err(Error::InvalidConfig(format!(
            "prior expects {} input features, data has {}",
            prior.arch().input_dim(),
            data.n_features()
        )));
    }
    // Mixture priors spawn one SGLD run per component; samples are pooled.
    // Components are independent chains with disjoint derived streams, so
    // they parallelize without changing any draw; results are collected in
    // component order to keep outputs deterministic.
    let component_priors: Vec<PriorDist> = match &prior {
        PriorDist::Mixture(m) => m
            .components()
            .iter()
            .map(|c| PriorDist::LowRank(c.clone()))
            .collect(),
        other => vec![other.clone()],
    };
    let jobs = jobs.max(1);
    let mut members = Vec::new();
    for chunk_start in (0..component_priors.len()).step_by(jobs) {
        let chunk = &component_priors[chunk_start..(chunk_start + jobs).min(component_priors.len())];
        let results: Vec<Result<Ensemble>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(offset, comp)| {
                    let k = chunk_start + offset;
                    let data = &data;
                    let sgld_cfg = &sgld_cfg;
                    scope.spawn(move || {
                        let mut rng =
                            derive_indexed_stream(sgld_cfg.seed, "sgld/component", k as u64);
                        sgld_sample(data, comp, sgld_cfg, Averaging::Logits, &mut rng)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("SGLD worker panicked"))
                .collect()
        });
        for ens in results {
            members.extend(ens?.members().iter().cloned());
        }
    }
    let ensemble = Ensemble::new(members, Averaging::Logits)?;
    let out_dir = resolve_out_path(out_dir);
    save_ensemble(&out_dir, &ensemble, sgld_cfg.seed)?;
    println!(
        "sampled {} posterior weights -> {}",
        ensemble.members().len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
pub enum PhiModeArg {
    Ensemble,
    PerSample,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_cmd(
    ensemble_dir: &Path,
    data_path: &Path,
    out_path: &Path,
    averaging: Option<Averaging>,
    pareto_path: Option<&Path>,
    phi_mode: PhiModeArg,
    method_label: &str,
) -> Result<()> {
    let data = load_data(data_path, "evaluation data")?;
    if data.n_rows() == 0 {
        return Err(Error::InvalidConfig("evaluation set is empty".to_string()));
    }
    let mut ensemble = load_ensemble(ensemble_dir)?;
    if let Some(avg) = averaging {
        ensemble = ensemble.with_averaging(avg);
    }
    let spec = resolve_phi_spec(None, &data)?;
    let groups = group_flags(&data);
    let batch = BatchRef::full(&data.xs)
        .with_masks(data.masks.as_deref())
        .with_groups(groups.as_deref());

    let manifest_seed = {
        let text = std::fs::read_to_string(ensemble_dir.join("manifest.json"))?;
        serde_json::from_str::<crate::ensemble_io::EnsembleManifest>(&text)
            .map(|m| m.seed)
            .unwrap_or(0)
    };
    let task = data.meta.task_name().to_string();
    let mut rows: Vec<(String, f64)> = Vec::new();

    let predictions: Result<Vec<Vec<f64>>> = (0..data.n_rows())
        .map(|i| dkprior_core::posterior::ensemble_predict(&ensemble, data.xs.row(i)))
        .collect();
    let predictions = predictions?;
    match data.label_kind {
        dkprior_core::data::LabelKind::Class { .. } => {
            let preds: Vec<usize> = predictions.iter().map(|p| argmax_class(p)).collect();
            rows.push((
                "accuracy".to_string(),
                accuracy(&preds, &data.class_labels())?,
            ));
        }
        dkprior_core::data::LabelKind::Binary => {
            let scores: Vec<f64> = predictions.iter().map(|p| p[0]).collect();
            let labels = data.class_labels();
            let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
            rows.push(("accuracy".to_string(), accuracy(&preds, &labels)?));
            match auroc(&scores, &labels) {
                Ok(a) => rows.push(("auroc".to_string(), a)),
                Err(Error::DegenerateLabels(msg)) => {
                    eprintln!("warning: AUROC undefined ({msg}); reporting NaN");
                    rows.push(("auroc".to_string(), f64::NAN));
                }
                Err(e) => return Err(e),
            }
        }
        dkprior_core::data::LabelKind::Regression => {
            let pred_matrix = dkprior_core::data::Matrix::from_rows(&predictions)?;
            rows.push(("l1_loss".to_string(), l1_loss(&pred_matrix, &data.ys)?));
        }
    }
    let mode = match phi_mode {
        PhiModeArg::Ensemble => PhiMode::EnsembleAverage,
        PhiModeArg::PerSample => PhiMode::PerSample,
    };
    rows.push((
        format!("mean_phi_{}", spec.kind_name()),
        mean_phi_ensemble(&ensemble, &batch, &spec, mode)?,
    ));

    let mut csv = String::from("task,method,seed,metric,value\n");
    for (metric, value) in &rows {
        csv.push_str(&format!("{task},{method_label},{manifest_seed},{metric},{value}\n"));
    }
    let out_path = resolve_out_path(out_path);
    std::fs::write(&out_path, csv)?;

    if let Some(pareto_path) = pareto_path {
        let points = member_pareto_points(&ensemble, &data, &batch, &spec)?;
        let flags = pareto_points(&points)?;
        let mut csv = String::from("source_prior,sample_id,accuracy,phi,on_frontier\n");
        for (i, (pt, on)) in points.iter().zip(&flags).enumerate() {
            csv.push_str(&format!(
                "{method_label},{i},{},{},{}\n",
                pt.accuracy, pt.phi, on
            ));
        }
        std::fs::write(resolve_out_path(pareto_path), csv)?;
    }
    println!("wrote metrics -> {}", out_path.display());
    Ok(())
}

/// Per-member (accuracy, phi) cloud for the Pareto output.
fn member_pareto_points(
    ensemble: &Ensemble,
    data: &Dataset,
    batch: &BatchRef<'_>,
    spec: &DomainLossSpec,
) -> Result<Vec<ParetoPoint>> {
    use dkprior_core::data::LabelKind;
    let labels = data.class_labels();
    let mut points = Vec::with_capacity(ensemble.members().len());
    for m in ensemble.members() {
        let acc = match data.label_kind {
            LabelKind::Class { .. } => {
                let preds: Result<Vec<usize>> = (0..data.n_rows())
                    .map(|i| {
                        Ok(argmax_class(&dkprior_core::nn::forward(
                            m,
                            data.xs.row(i),
                        )?))
                    })
                    .collect();
                accuracy(&preds?, &labels)?
            }
            LabelKind::Binary => {
                let preds: Result<Vec<usize>> = (0..data.n_rows())
                    .map(|i| {
                        let z = dkprior_core::nn::forward(m, data.xs.row(i))?[0];
                        Ok(usize::from(z >= 0.0))
                    })
                    .collect();
                accuracy(&preds?, &labels)?
            }
            LabelKind::Regression => {
                return Err(Error::InvalidConfig(
                    "Pareto output needs a classification task".to_string(),
                ))
            }
        };
        let phi = mean_phi_model(m, batch, spec)?;
        points.push(ParetoPoint { accuracy: acc, phi });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// transfer-prior
// ---------------------------------------------------------------------------

pub fn transfer_prior_cmd(
    source_path: &Path,
    target_arch_arg: &str,
    method: TransferMethod,
    probe_path: &Path,
    config_path: &Path,
    out_path: &Path,
    init_from_source: bool,
) -> Result<()> {
    require_file(source_path, "source checkpoint")?;
    require_file(config_path, "config file")?;
    let config = RunConfig::load(config_path)?;
    let mut transfer_cfg = config.transfer.clone().ok_or_else(|| {
        Error::InvalidConfig("transfer needs a [transfer] section".to_string())
    })?;
    transfer_cfg.method = method;
    if init_from_source {
        transfer_cfg.init_from_source = true;
    }
    let (source, source_meta) = load_prior(source_path)?;
    let probe = load_data(probe_path, "probe data")?;
    let layer_sizes: Vec<usize> = target_arch_arg
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad --target-arch entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let target_arch = ArchSpec::new(
        layer_sizes,
        source.arch().activation,
        source.arch().output_head,
    )?;
    let transferred = transfer_prior(&source, &target_arch, &transfer_cfg, &probe.xs)?;
    let provenance = Provenance {
        source_sha256: file_sha256(source_path)?,
        method: format!("{method:?}").to_lowercase(),
    };
    let out_path = resolve_out_path(out_path);
    save_prior_with(
        &out_path,
        &transferred,
        transfer_cfg.seed,
        &source_meta.phi_kind,
        Some(provenance),
    )?;
    println!("transferred prior -> {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// baseline-lagrangian
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn baseline_lagrangian_cmd(
    data_path: &Path,
    unlabeled_path: Option<&Path>,
    lambda: f64,
    config_path: &Path,
    out_dir: &Path,
    ensemble_size: usize,
    eval_path: Option<&Path>,
) -> Result<()> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    require_file(config_path, "config file")?;
    let config = RunConfig::load(config_path)?;
    let lag = config.lagrangian.clone().ok_or_else(|| {
        Error::InvalidConfig("baseline needs a [lagrangian] section".to_string())
    })?;
    let data = load_data(data_path, "labeled data")?;
    let unlabeled = match unlabeled_path {
        Some(p) => load_data(p, "unlabeled data")?,
        None => data.clone(),
    };
    let arch = config.arch_for_dataset(&data)?;
    let spec = resolve_phi_spec(Some(&config), &data)?;
    let groups = group_flags(&unlabeled);
    let batch = BatchRef::full(&unlabeled.xs)
        .with_masks(unlabeled.masks.as_deref())
        .with_groups(groups.as_deref());
    let mut members = Vec::with_capacity(ensemble_size.max(1));
    for k in 0..ensemble_size.max(1) {
        let mut rng = derive_indexed_stream(lag.config.seed, "lagrangian/seed", k as u64);
        members.push(lagrangian_train(
            &arch,
            &data,
            &batch,
            &spec,
            lambda,
            &lag.config,
            &mut rng,
        )?);
    }
    let ensemble = Ensemble::new(members, Averaging::Logits)?;
    let out_dir = resolve_out_path(out_dir);
    save_ensemble(&out_dir, &ensemble, lag.config.seed)?;
    println!(
        "trained {} regularized model(s) -> {}",
        ensemble.members().len(),
        out_dir.display()
    );
    if let Some(eval) = eval_path {
        let label = if lambda == 0.0 {
            "supervised"
        } else if ensemble_size > 1 {
            "lagrangian_ensemble"
        } else {
            "lagrangian"
        };
        evaluate_cmd(
            &out_dir,
            eval,
            &out_dir.join("metrics.csv"),
            None,
            None,
            PhiModeArg::Ensemble,
            label,
        )?;
    }
    Ok(())
}
