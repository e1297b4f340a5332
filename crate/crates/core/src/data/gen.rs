//! Task-level split generation: one seeded call produces standardized,
//! self-describing train/val/test datasets for any task.

use serde::{Deserialize, Serialize};

use crate::data::tabular::{
    clinical_raw_thresholds, raw_region_flag, COL_BICARBONATE, COL_BUN, COL_CREATININE,
    COL_LACTATE, COL_URINE,
};
use crate::data::{
    clinical_dataset, decoy_dataset, fairness_dataset, pendulum_dataset, ClinicalGenConfig,
    Dataset, DecoyConfig, FairnessGenConfig, LabelKind, Matrix, PendulumConfig, Standardizer,
    TaskMeta,
};
use crate::error::Result;
use crate::losses::{ClinicalRegion, ClinicalRuleA, ClinicalRuleB};
use crate::rng::derive_stream;

fn default_traj_len() -> usize {
    30
}

/// Generator selection and parameters for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskGenConfig {
    Pendulum {
        #[serde(default)]
        config: PendulumConfig,
        /// Samples emitted per rolled trajectory.
        #[serde(default = "default_traj_len")]
        traj_len: usize,
    },
    Decoy {
        #[serde(default)]
        config: DecoyConfig,
    },
    Fairness {
        #[serde(default)]
        config: FairnessGenConfig,
    },
    Clinical {
        #[serde(default)]
        config: ClinicalGenConfig,
    },
}

impl TaskGenConfig {
    pub fn task_name(&self) -> &'static str {
        match self {
            TaskGenConfig::Pendulum { .. } => "pendulum",
            TaskGenConfig::Decoy { .. } => "decoy",
            TaskGenConfig::Fairness { .. } => "fairness",
            TaskGenConfig::Clinical { .. } => "clinical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// The three generated splits, in train/val/test order.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &Dataset> {
        [&self.train, &self.val, &self.test].into_iter()
    }
}

/// Generates all three splits for a task, deterministically in
/// (task config, sizes, seed).
pub fn generate_splits(task: &TaskGenConfig, sizes: SplitSizes, seed: u64) -> Result<Splits> {
    match task {
        TaskGenConfig::Pendulum { config, traj_len } => {
            let make = |split: &str, n: usize| -> Result<Dataset> {
                let mut rng = derive_stream(seed, &format!("data/pendulum/{split}"));
                let traj_len = (*traj_len).max(1).min(n.max(1));
                let n_traj = n.div_ceil(traj_len);
                let (xs, ys) = pendulum_dataset(config, n_traj, traj_len, &mut rng)?;
                let keep: Vec<usize> = (0..n).collect();
                Ok(Dataset {
                    xs: xs.select_rows(&keep),
                    ys: ys.select_rows(&keep),
                    masks: None,
                    region_flags: None,
                    label_kind: LabelKind::Regression,
                    meta: TaskMeta::Pendulum { config: *config },
                    split: split.to_string(),
                    standardizer: None,
                })
            };
            Ok(Splits {
                train: make("train", sizes.train)?,
                val: make("val", sizes.val)?,
                test: make("test", sizes.test)?,
            })
        }
        TaskGenConfig::Decoy { config } => {
            // Train and val carry the label-correlated corruption; the test
            // split gets independent shades.
            let mut rng = derive_stream(seed, "data/decoy");
            let s = decoy_dataset(config, sizes.train + sizes.val, sizes.test, &mut rng)?;
            let meta = TaskMeta::Decoy {
                image_side: config.image_side,
                patch_side: config.patch_side,
            };
            let to_label_matrix = |ys: &[usize]| {
                Matrix::from_rows(&ys.iter().map(|&y| vec![y as f64]).collect::<Vec<_>>()).unwrap()
            };
            let train_idx: Vec<usize> = (0..sizes.train).collect();
            let val_idx: Vec<usize> = (sizes.train..sizes.train + sizes.val).collect();
            let slice = |idx: &[usize], split: &str| Dataset {
                xs: s.train_xs.select_rows(idx),
                ys: to_label_matrix(&idx.iter().map(|&i| s.train_ys[i]).collect::<Vec<_>>()),
                masks: Some(idx.iter().map(|&i| s.train_masks[i].clone()).collect()),
                region_flags: None,
                label_kind: LabelKind::Class { n_classes: 10 },
                meta: meta.clone(),
                split: split.to_string(),
                standardizer: None,
            };
            Ok(Splits {
                train: slice(&train_idx, "train"),
                val: slice(&val_idx, "val"),
                test: Dataset {
                    xs: s.test_xs,
                    ys: to_label_matrix(&s.test_ys),
                    masks: Some(s.test_masks),
                    region_flags: None,
                    label_kind: LabelKind::Class { n_classes: 10 },
                    meta,
                    split: "test".to_string(),
                    standardizer: None,
                },
            })
        }
        TaskGenConfig::Fairness { config } => {
            let make = |split: &str, n: usize| -> Result<Dataset> {
                let mut rng = derive_stream(seed, &format!("data/fairness/{split}"));
                let (xs, ys, _groups) = fairness_dataset(config, n, &mut rng)?;
                Ok(Dataset {
                    xs,
                    ys: Matrix::from_rows(
                        &ys.iter().map(|&y| vec![y as f64]).collect::<Vec<_>>(),
                    )?,
                    masks: None,
                    region_flags: None,
                    label_kind: LabelKind::Binary,
                    meta: TaskMeta::Fairness {
                        group_col: config.group_col(),
                    },
                    split: split.to_string(),
                    standardizer: None,
                })
            };
            Ok(Splits {
                train: make("train", sizes.train)?,
                val: make("val", sizes.val)?,
                test: make("test", sizes.test)?,
            })
        }
        TaskGenConfig::Clinical { config } => {
            let mut rng = derive_stream(seed, "data/clinical");
            let n_total = sizes.train + sizes.val + sizes.test;
            let (raw_xs, ys, _raw_flags) = clinical_dataset(config, n_total, &mut rng)?;
            let train_idx: Vec<usize> = (0..sizes.train).collect();
            let standardizer = Standardizer::fit(&raw_xs.select_rows(&train_idx), &[])?;
            let thresholds = clinical_raw_thresholds();
            let region = ClinicalRegion {
                rule_a: ClinicalRuleA {
                    lactate_index: COL_LACTATE,
                    lactate_threshold_std: standardizer
                        .transform_value(COL_LACTATE, thresholds.lactate),
                    bicarbonate_index: COL_BICARBONATE,
                    bicarbonate_threshold_std: standardizer
                        .transform_value(COL_BICARBONATE, thresholds.bicarbonate),
                },
                rule_b: ClinicalRuleB {
                    creatinine_index: COL_CREATININE,
                    creatinine_threshold_std: standardizer
                        .transform_value(COL_CREATININE, thresholds.creatinine),
                    bun_index: COL_BUN,
                    bun_threshold_std: standardizer.transform_value(COL_BUN, thresholds.bun),
                    urine_index: COL_URINE,
                    urine_threshold_std: standardizer
                        .transform_value(COL_URINE, thresholds.urine),
                },
            };
            let std_xs = standardizer.transform(&raw_xs)?;
            let meta = TaskMeta::Clinical {
                region,
                thresholds_raw: thresholds,
            };
            let slice = |lo: usize, hi: usize, split: &str| {
                let idx: Vec<usize> = (lo..hi).collect();
                Dataset {
                    xs: std_xs.select_rows(&idx),
                    ys: Matrix::from_rows(
                        &idx.iter().map(|&i| vec![ys[i] as f64]).collect::<Vec<_>>(),
                    )
                    .unwrap(),
                    masks: None,
                    region_flags: Some(
                        idx.iter().map(|&i| region.contains(std_xs.row(i))).collect(),
                    ),
                    label_kind: LabelKind::Binary,
                    meta: meta.clone(),
                    split: split.to_string(),
                    standardizer: Some(standardizer.clone()),
                }
            };
            Ok(Splits {
                train: slice(0, sizes.train, "train"),
                val: slice(sizes.train, sizes.train + sizes.val, "val"),
                test: slice(sizes.train + sizes.val, n_total, "test"),
            })
        }
    }
}

/// Cross-check helper: raw-threshold region flag for a raw-unit row.
pub fn clinical_raw_flag(raw_row: &[f64]) -> bool {
    raw_region_flag(raw_row, &clinical_raw_thresholds())
}
