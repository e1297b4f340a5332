//! Run configuration: a TOML file with sections mirroring the library
//! modules. Parsing is closed-world; unknown keys are rejected so
//! hyperparameter typos fail loudly.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use dkprior_core::data::{
    ClinicalGenConfig, Dataset, DecoyConfig, FairnessGenConfig, PendulumConfig, SplitSizes,
    TaskGenConfig, TaskMeta,
};
use dkprior_core::error::{Error, Result};
use dkprior_core::losses::DomainLossSpec;
use dkprior_core::nn::{Activation, ArchSpec, OutputHead};
use dkprior_core::posterior::{LagrangianConfig, SgldConfig};
use dkprior_core::prior::{PriorTrainConfig, SwagPriorConfig};
use dkprior_core::transfer::TransferConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Task {
    Pendulum,
    Decoy,
    Fairness,
    Clinical,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pendulum => "pendulum",
            Task::Decoy => "decoy",
            Task::Fairness => "fairness",
            Task::Clinical => "clinical",
        }
    }
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// Hidden layer sizes plus the activation; input/output dims come from the
/// task data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_sizes() -> SplitSizes {
    SplitSizes {
        train: 18_000,
        val: 2_000,
        test: 2_000,
    }
}

fn default_traj_len() -> usize {
    30
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    #[serde(default = "default_sizes")]
    pub sizes: SplitSizes,
    /// Pendulum only: samples per rolled trajectory.
    #[serde(default = "default_traj_len")]
    pub traj_len: usize,
    #[serde(default)]
    pub pendulum: Option<PendulumConfig>,
    #[serde(default)]
    pub decoy: Option<DecoyConfig>,
    #[serde(default)]
    pub fairness: Option<FairnessGenConfig>,
    #[serde(default)]
    pub clinical: Option<ClinicalGenConfig>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            sizes: default_sizes(),
            traj_len: default_traj_len(),
            pendulum: None,
            decoy: None,
            fairness: None,
            clinical: None,
        }
    }
}

impl GenerateSection {
    pub fn task_gen(&self, task: Task) -> TaskGenConfig {
        match task {
            Task::Pendulum => TaskGenConfig::Pendulum {
                config: self.pendulum.unwrap_or_default(),
                traj_len: self.traj_len,
            },
            Task::Decoy => TaskGenConfig::Decoy {
                config: self.decoy.clone().unwrap_or_default(),
            },
            Task::Fairness => TaskGenConfig::Fairness {
                config: self.fairness.unwrap_or_default(),
            },
            Task::Clinical => TaskGenConfig::Clinical {
                config: self.clinical.unwrap_or_default(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSection {
    #[serde(flatten)]
    pub config: LagrangianConfig,
    #[serde(default)]
    pub lambda: f64,
}

/// Top-level run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub arch: Option<ArchSection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub generate: Option<GenerateSection>,
    pub prior: Option<PriorTrainConfig>,
    pub swag_prior: Option<SwagPriorConfig>,
    pub sgld: Option<SgldConfig>,
    pub phi: Option<DomainLossSpec>,
    pub transfer: Option<TransferConfig>,
    pub lagrangian: Option<LagrangianSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn arch_section(&self) -> Result<&ArchSection> {
        self.arch
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs an [arch] section".to_string()))
    }

    /// Builds the full architecture around a dataset's feature/label dims.
    pub fn arch_for_dataset(&self, ds: &Dataset) -> Result<ArchSpec> {
        let section = self.arch_section()?;
        let (out_dim, head) = output_spec(ds)?;
        let mut sizes = Vec::with_capacity(section.hidden.len() + 2);
        sizes.push(ds.n_features());
        sizes.extend_from_slice(&section.hidden);
        sizes.push(out_dim);
        ArchSpec::new(sizes, section.activation, head)
    }
}

/// Output dimension and head implied by a dataset's label kind.
pub fn output_spec(ds: &Dataset) -> Result<(usize, OutputHead)> {
    use dkprior_core::data::LabelKind;
    Ok(match ds.label_kind {
        LabelKind::Class { n_classes } => (n_classes, OutputHead::SoftmaxLogits),
        LabelKind::Binary => (1, OutputHead::Sigmoid),
        LabelKind::Regression => (ds.ys.n_cols(), OutputHead::Identity),
    })
}

/// Default domain-loss spec for a dataset, derived from its metadata.
pub fn phi_spec_for_dataset(ds: &Dataset) -> Result<DomainLossSpec> {
    Ok(match &ds.meta {
        TaskMeta::Pendulum { config } => DomainLossSpec::EnergyDamping { pendulum: *config },
        TaskMeta::Decoy {
            image_side,
            patch_side,
        } => {
            let cfg = DecoyConfig {
                image_side: *image_side,
                patch_side: *patch_side,
                source: dkprior_core::data::DecoySource::SyntheticGlyphs,
            };
            DomainLossSpec::Background {
                background_mask: dkprior_core::data::decoy_union_mask(&cfg),
                variant: Default::default(),
            }
        }
        TaskMeta::Fairness { group_col } => DomainLossSpec::GroupFairness {
            group_attr_index: *group_col,
        },
        TaskMeta::Clinical { region, .. } => DomainLossSpec::Clinical { region: *region },
    })
}

/// Resolves an output path against the optional root-override env var.
pub fn resolve_out_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("DKPRIOR_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg: RunConfig = toml::from_str(
            r#"
task = "pendulum"
seed = 7

[arch]
hidden = [8]
"#,
        )
        .unwrap();
        assert_eq!(cfg.task, Task::Pendulum);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.arch.unwrap().hidden, vec![8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>(
            r#"
task = "pendulum"
seed = 7
learning_rte = 0.1
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("learning_rte"), "{err}");
    }

    #[test]
    fn unknown_nested_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>(
            r#"
task = "decoy"
seed = 7

[prior]
tau = 1.0
beta = 0.01
rank = 20
jitter_sigma = 0.001
base_prior_variance = 1.0
learning_rate = 0.001
epochs = 20
batch_size = 128
seed = 0
family = "lowrank"
typo_field = 3
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
    }

    #[test]
    fn default_split_sizes_follow_the_pendulum_protocol() {
        let sizes = GenerateSection::default().sizes;
        assert_eq!(sizes.train, 18_000);
        assert_eq!(sizes.val, 2_000);
        assert_eq!(sizes.test, 2_000);
    }

    #[test]
    fn bad_enum_values_are_rejected() {
        assert!(toml::from_str::<RunConfig>("task = \"mnist\"\nseed = 1").is_err());
    }
}
