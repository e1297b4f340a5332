use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dkprior_cli::commands::{self, PhiModeArg, PriorMethod};
use dkprior_cli::config::Task;
use dkprior_cli::exit_code;
use dkprior_core::posterior::Averaging;
use dkprior_core::transfer::TransferMethod;

/// Learn, sample, transfer, and evaluate domain-knowledge priors for
/// Bayesian neural networks.
#[derive(Parser)]
#[command(name = "dkprior", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test dataset files for a task.
    GenData {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn an informative prior from unlabeled data and a phi loss.
    TrainPrior {
        #[arg(long)]
        config: PathBuf,
        /// Training data file; defaults to [data].train from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the route ([prior] -> variational, [swag_prior] -> swag).
        #[arg(long, value_enum)]
        method: Option<PriorMethod>,
    },
    /// Draw weights from a prior and report per-sample mean phi.
    SamplePrior {
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Use an isotropic Gaussian with this variance instead of a
        /// checkpoint (needs --config for the architecture).
        #[arg(long)]
        isotropic: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        phi_eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample the downstream posterior with SGLD (per mixture component).
    SamplePosterior {
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Use an isotropic Gaussian prior with this variance instead of a
        /// checkpoint.
        #[arg(long)]
        isotropic: Option<f64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker-thread bound for independent mixture components.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate an ensemble on a dataset; optionally emit a Pareto CSV.
    Evaluate {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        averaging: Option<AveragingArg>,
        #[arg(long)]
        pareto: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ensemble")]
        phi_mode: PhiModeArg,
        /// Method label written into the CSV rows.
        #[arg(long, default_value = "ensemble")]
        method_label: String,
    },
    /// Transfer a prior to a new architecture.
    TransferPrior {
        #[arg(long)]
        source: PathBuf,
        /// Full layer sizes of the target, e.g. "4,16,4".
        #[arg(long)]
        target_arch: String,
        #[arg(long, value_enum)]
        method: TransferMethodArg,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start the target at the source parameters (same architecture
        /// only).
        #[arg(long, default_value_t = false)]
        init_from_source: bool,
    },
    /// Frequentist regularized baseline (lambda = 0 is plain supervised).
    BaselineLagrangian {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train this many seeds and pool them.
        #[arg(long, default_value_t = 1)]
        ensemble: usize,
        /// Evaluate on this dataset after training.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
enum AveragingArg {
    Logits,
    Predictions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum TransferMethodArg {
    M1,
    M1m2,
    Mmd,
    #[clap(name = "m1-swag", alias = "m1_swag")]
    M1Swag,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { task, config, out } => commands::gen_data(task, &config, &out),
        Command::TrainPrior {
            config,
            data,
            out,
            method,
        } => commands::train_prior_cmd(&config, data.as_deref(), &out, method),
        Command::SamplePrior {
            prior,
            isotropic,
            config,
            n,
            phi_eval,
            out,
            seed,
        } => commands::sample_prior_cmd(
            prior.as_deref(),
            isotropic,
            config.as_deref(),
            n,
            &phi_eval,
            &out,
            seed,
        ),
        Command::SamplePosterior {
            prior,
            isotropic,
            data,
            config,
            out,
            jobs,
        } => commands::sample_posterior_cmd(prior.as_deref(), isotropic, &data, &config, &out, jobs),
        Command::Evaluate {
            ensemble,
            data,
            out,
            averaging,
            pareto,
            phi_mode,
            method_label,
        } => commands::evaluate_cmd(
            &ensemble,
            &data,
            &out,
            averaging.map(|a| match a {
                AveragingArg::Logits => Averaging::Logits,
                AveragingArg::Predictions => Averaging::Predictions,
            }),
            pareto.as_deref(),
            phi_mode,
            &method_label,
        ),
        Command::TransferPrior {
            source,
            target_arch,
            method,
            probe,
            config,
            out,
            init_from_source,
        } => commands::transfer_prior_cmd(
            &source,
            &target_arch,
            match method {
                TransferMethodArg::M1 => TransferMethod::M1,
                TransferMethodArg::M1m2 => TransferMethod::M1M2,
                TransferMethodArg::Mmd => TransferMethod::Mmd,
                TransferMethodArg::M1Swag => TransferMethod::M1Swag,
            },
            &probe,
            &config,
            &out,
            init_from_source,
        ),
        Command::BaselineLagrangian {
            data,
            unlabeled,
            lambda,
            config,
            out,
            ensemble,
            eval,
        } => commands::baseline_lagrangian_cmd(
            &data,
            unlabeled.as_deref(),
            lambda,
            &config,
            &out,
            ensemble,
            eval.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
