//! Task data: generators, standardization, and the on-disk container.

mod container;
mod decoy;
mod gen;
mod glyphs;
mod idx;
mod pendulum;
mod standardize;
mod tabular;

pub use container::{read_dataset, write_dataset, BNNDATA_MAGIC, BNNDATA_VERSION};
pub use decoy::{decoy_dataset, decoy_union_mask, DecoyConfig, DecoySource, DecoySplits};
pub use gen::{clinical_raw_flag, generate_splits, SplitSizes, Splits, TaskGenConfig};
pub use idx::{load_idx, IdxTensor};
pub use pendulum::{
    pendulum_advance, pendulum_dataset, pendulum_energy, pendulum_energy_grad, pendulum_step,
    PendulumConfig, PendulumState,
};
pub use standardize::Standardizer;
pub use tabular::{
    clinical_dataset, clinical_raw_thresholds, fairness_dataset, ClinicalGenConfig,
    ClinicalThresholds, FairnessGenConfig, CLINICAL_FEATURES,
};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClinicalRegion;

/// Dense row-major matrix of f64. Rows are examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "matrix data has {} entries for shape {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".to_string()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// New matrix containing the selected rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }
}

/// Task-specific metadata carried by every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskMeta {
    Pendulum {
        config: PendulumConfig,
    },
    Decoy {
        image_side: usize,
        patch_side: usize,
    },
    Fairness {
        group_col: usize,
    },
    Clinical {
        region: ClinicalRegion,
        /// Standardized-unit thresholds echoed for reporting.
        thresholds_raw: ClinicalThresholds,
    },
}

impl TaskMeta {
    pub fn task_name(&self) -> &'static str {
        match self {
            TaskMeta::Pendulum { .. } => "pendulum",
            TaskMeta::Decoy { .. } => "decoy",
            TaskMeta::Fairness { .. } => "fairness",
            TaskMeta::Clinical { .. } => "clinical",
        }
    }
}

/// Kind of label column(s) a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Integer class index stored as f64 in a single column.
    Class { n_classes: usize },
    /// Binary 0/1 label in a single column.
    Binary,
    /// Real-valued regression targets, one column per output.
    Regression,
}

/// In-memory dataset: features, labels, and optional per-row side data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Matrix,
    pub ys: Matrix,
    /// Per-row background masks (feature indices), when the task has them.
    pub masks: Option<Vec<Vec<usize>>>,
    /// Per-row rule-region membership flags (clinical task).
    pub region_flags: Option<Vec<bool>>,
    pub label_kind: LabelKind,
    pub meta: TaskMeta,
    pub split: String,
    /// Standardizer fitted on the training split, when features are
    /// standardized.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.xs.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.xs.n_cols()
    }

    /// Class labels as usize (valid for Class/Binary label kinds).
    pub fn class_labels(&self) -> Vec<usize> {
        (0..self.ys.n_rows())
            .map(|i| self.ys.get(i, 0) as usize)
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            xs: self.xs.select_rows(idx),
            ys: self.ys.select_rows(idx),
            masks: self
                .masks
                .as_ref()
                .map(|m| idx.iter().map(|&i| m[i].clone()).collect()),
            region_flags: self
                .region_flags
                .as_ref()
                .map(|f| idx.iter().map(|&i| f[i]).collect()),
            label_kind: self.label_kind,
            meta: self.meta.clone(),
            split: self.split.clone(),
            standardizer: self.standardizer.clone(),
        }
    }
}

/// Shuffled row indices for one epoch.
pub fn shuffled_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Stratified shuffle: shuffles within each of two groups, then interleaves
/// proportionally so that contiguous batches keep both groups represented.
pub fn stratified_indices<R: Rng + ?Sized>(groups: &[bool], rng: &mut R) -> Vec<usize> {
    let mut a: Vec<usize> = (0..groups.len()).filter(|&i| groups[i]).collect();
    let mut b: Vec<usize> = (0..groups.len()).filter(|&i| !groups[i]).collect();
    a.shuffle(rng);
    b.shuffle(rng);
    let n = groups.len();
    let mut out = Vec::with_capacity(n);
    let (mut ia, mut ib) = (0usize, 0usize);
    for k in 0..n {
        // Interleave keeping the emitted ratio close to the global ratio.
        let want_a = (k + 1) * a.len() / n.max(1);
        if ia < want_a.min(a.len()) || ib == b.len() {
            out.push(a[ia]);
            ia += 1;
        } else {
            out.push(b[ib]);
            ib += 1;
        }
    }
    out
}
