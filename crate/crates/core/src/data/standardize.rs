use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Floor for per-feature standard deviations.
const STD_FLOOR: f64 = 1e-8;

/// Per-feature affine standardizer fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Columns left untouched (e.g. a 0/1 group indicator).
    skip: Vec<usize>,
}

impl Standardizer {
    /// Exact two-pass mean/std over the rows of `xs`.
    pub fn fit(xs: &Matrix, skip_cols: &[usize]) -> Result<Self> {
        let n = xs.n_rows();
        if n == 0 {
            return Err(Error::InvalidConfig(
                "cannot fit a standardizer on an empty matrix".to_string(),
            ));
        }
        let d = xs.n_cols();
        let mut mean = vec![0.0; d];
        for row in xs.rows_iter() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in xs.rows_iter() {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self {
            mean,
            std,
            skip: skip_cols.to_vec(),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn transform(&self, xs: &Matrix) -> Result<Matrix> {
        self.check_cols(xs)?;
        let mut out = xs.clone();
        for i in 0..out.n_rows() {
            let row = out.row_mut(i);
            for j in 0..row.len() {
                if self.skip.contains(&j) {
                    continue;
                }
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, xs: &Matrix) -> Result<Matrix> {
        self.check_cols(xs)?;
        let mut out = xs.clone();
        for i in 0..out.n_rows() {
            let row = out.row_mut(i);
            for j in 0..row.len() {
                if self.skip.contains(&j) {
                    continue;
                }
                row[j] = row[j] * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    /// Standardizes a single raw threshold value for column `col`.
    pub fn transform_value(&self, col: usize, value: f64) -> f64 {
        (value - self.mean[col]) / self.std[col]
    }

    fn check_cols(&self, xs: &Matrix) -> Result<()> {
        if xs.n_cols() != self.mean.len() {
            return Err(Error::InvalidShape(format!(
                "matrix has {} columns, standardizer was fitted on {}",
                xs.n_cols(),
                self.mean.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transformed_train_split_has_zero_mean_unit_std() {
        let mut rng = crate::rng::derive_stream(3, "std");
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.gen::<f64>() * 10.0 - 3.0, rng.gen::<f64>() + 100.0])
            .collect();
        let xs = Matrix::from_rows(&rows).unwrap();
        let s = Standardizer::fit(&xs, &[]).unwrap();
        let t = s.transform(&xs).unwrap();
        for j in 0..2 {
            let m: f64 = (0..t.n_rows()).map(|i| t.get(i, j)).sum::<f64>() / t.n_rows() as f64;
            let v: f64 =
                (0..t.n_rows()).map(|i| t.get(i, j).powi(2)).sum::<f64>() / t.n_rows() as f64;
            assert!(m.abs() <= 1e-10, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-10, "var {v}");
        }
    }

    #[test]
    fn transform_inverse_round_trip_is_tight() {
        let xs = Matrix::from_rows(&[vec![1.0, -5.0], vec![2.5, 7.0], vec![-0.5, 3.0]]).unwrap();
        let s = Standardizer::fit(&xs, &[]).unwrap();
        let rt = s.inverse(&s.transform(&xs).unwrap()).unwrap();
        for i in 0..xs.n_rows() {
            for j in 0..xs.n_cols() {
                assert!((rt.get(i, j) - xs.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn skipped_columns_pass_through() {
        let xs = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 1.0]]).unwrap();
        let s = Standardizer::fit(&xs, &[1]).unwrap();
        let t = s.transform(&xs).unwrap();
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.get(1, 1), 1.0);
    }

    #[test]
    fn constant_columns_hit_the_floor_without_dividing_by_zero() {
        let xs = Matrix::from_rows(&[vec![2.0], vec![2.0]]).unwrap();
        let s = Standardizer::fit(&xs, &[]).unwrap();
        let t = s.transform(&xs).unwrap();
        assert!(t.get(0, 0).abs() < 1e-6);
    }
}
