//! Decoy-patch image task: a corner patch whose shade encodes the label at
//! train time but is independent of it at test time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::glyphs::render_glyph;
use crate::data::{load_idx, Matrix};
use crate::error::{Error, Result};

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoySource {
    /// Procedurally rendered digit-like glyphs, 10 classes.
    #[default]
    SyntheticGlyphs,
    /// MNIST-style IDX files; the same corruption is applied on top.
    IdxFiles { images: String, labels: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoyConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub source: DecoySource,
}

impl Default for DecoyConfig {
    fn default() -> Self {
        Self {
            image_side: 28,
            patch_side: 4,
            source: DecoySource::SyntheticGlyphs,
        }
    }
}

impl DecoyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.image_side < 2 * self.patch_side + 3 {
            return Err(Error::InvalidConfig(format!(
                "patch side {} does not fit image side {} with a glyph margin",
                self.patch_side, self.image_side
            )));
        }
        Ok(())
    }

    /// Interior box [lo, hi) that glyphs are confined to: a margin of
    /// patch_side + 1 keeps glyph bounding boxes off every corner patch.
    pub fn glyph_box(&self) -> (usize, usize) {
        (self.patch_side + 1, self.image_side - self.patch_side - 1)
    }
}

/// Train/test image splits with labels and per-image background masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoySplits {
    pub train_xs: Matrix,
    pub train_ys: Vec<usize>,
    pub train_masks: Vec<Vec<usize>>,
    pub test_xs: Matrix,
    pub test_ys: Vec<usize>,
    pub test_masks: Vec<Vec<usize>>,
}

/// Train-split patch shade for class y: (255 - 25 y) / 255.
pub fn train_shade(label: usize) -> f64 {
    (255.0 - 25.0 * label as f64) / 255.0
}

fn corner_offsets(cfg: &DecoyConfig, corner: usize) -> (usize, usize) {
    let hi = cfg.image_side - cfg.patch_side;
    match corner {
        0 => (0, 0),
        1 => (0, hi),
        2 => (hi, 0),
        _ => (hi, hi),
    }
}

fn patch_mask(cfg: &DecoyConfig, corner: usize) -> Vec<usize> {
    let (r0, c0) = corner_offsets(cfg, corner);
    let mut mask = Vec::with_capacity(cfg.patch_side * cfg.patch_side);
    for r in r0..r0 + cfg.patch_side {
        for c in c0..c0 + cfg.patch_side {
            mask.push(r * cfg.image_side + c);
        }
    }
    mask
}

/// Union of all four corner patches; the static "background" index set for
/// loss specs that do not carry per-image masks.
pub fn decoy_union_mask(cfg: &DecoyConfig) -> Vec<usize> {
    let mut all: Vec<usize> = (0..4).flat_map(|k| patch_mask(cfg, k)).collect();
    all.sort_unstable();
    all.dedup();
    all
}

fn stamp_patch(img: &mut [f64], cfg: &DecoyConfig, corner: usize, shade: f64) {
    for &px in &patch_mask(cfg, corner) {
        img[px] = shade;
    }
}

/// Balanced class labels: blocks of one-of-each-class, shuffled.
fn balanced_labels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut ys = Vec::with_capacity(n);
    while ys.len() < n {
        let mut block: Vec<usize> = (0..10).collect();
        block.shuffle(rng);
        ys.extend(block);
    }
    ys.truncate(n);
    ys
}

fn base_images<R: Rng + ?Sized>(
    cfg: &DecoyConfig,
    n: usize,
    rng: &mut R,
) -> Result<(Matrix, Vec<usize>)> {
    match &cfg.source {
        DecoySource::SyntheticGlyphs => {
            let side = cfg.image_side;
            let (lo, hi) = cfg.glyph_box();
            let ys = balanced_labels(n, rng);
            let mut xs = Matrix::zeros(n, side * side);
            for (i, &y) in ys.iter().enumerate() {
                render_glyph(xs.row_mut(i), side, y, lo, hi, rng);
            }
            Ok((xs, ys))
        }
        DecoySource::IdxFiles { images, labels } => {
            let imgs = load_idx(std::path::Path::new(images))?;
            let lbls = load_idx(std::path::Path::new(labels))?;
            if imgs.dims.len() != 3 {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("expected 3-D image tensor, got dims {:?}", imgs.dims),
                });
            }
            let (count, rows, cols) = (imgs.dims[0], imgs.dims[1], imgs.dims[2]);
            if rows != cfg.image_side || cols != cfg.image_side {
                return Err(Error::InvalidConfig(format!(
                    "idx images are {rows}x{cols}, config expects {0}x{0}",
                    cfg.image_side
                )));
            }
            if lbls.dims != vec![count] {
                return Err(Error::InvalidConfig(format!(
                    "label count {:?} does not match {count} images",
                    lbls.dims
                )));
            }
            if n > count {
                return Err(Error::InvalidConfig(format!(
                    "requested {n} images, idx file has {count}"
                )));
            }
            let px = rows * cols;
            let xs = Matrix::from_flat(n, px, imgs.data[..n * px].to_vec())?;
            let ys = lbls.data[..n].iter().map(|&v| v as usize).collect();
            Ok((xs, ys))
        }
    }
}

/// Generates corrupted train/test splits: the patch shade is a deterministic
/// function of the label on the train split and an independent uniform draw
/// on the test split. Masks mark exactly the patch pixels of each image.
pub fn decoy_dataset<R: Rng + ?Sized>(
    cfg: &DecoyConfig,
    n_train: usize,
    n_test: usize,
    rng: &mut R,
) -> Result<DecoySplits> {
    cfg.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidConfig(
            "decoy dataset needs positive split sizes".to_string(),
        ));
    }
    let (mut train_xs, train_ys) = base_images(cfg, n_train, rng)?;
    let mut train_masks = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let corner = rng.gen_range(0..4);
        stamp_patch(train_xs.row_mut(i), cfg, corner, train_shade(train_ys[i]));
        train_masks.push(patch_mask(cfg, corner));
    }

    let (mut test_xs, test_ys) = base_images(cfg, n_test, rng)?;
    let mut test_masks = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let corner = rng.gen_range(0..4);
        let shade: f64 = rng.gen_range(0.0..1.0);
        stamp_patch(test_xs.row_mut(i), cfg, corner, shade);
        test_masks.push(patch_mask(cfg, corner));
    }

    Ok(DecoySplits {
        train_xs,
        train_ys,
        train_masks,
        test_xs,
        test_ys,
        test_masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DecoyConfig {
        DecoyConfig {
            image_side: 14,
            patch_side: 3,
            source: DecoySource::SyntheticGlyphs,
        }
    }

    #[test]
    fn masks_have_exactly_patch_side_squared_pixels() {
        let cfg = small_cfg();
        let mut rng = crate::rng::derive_stream(2, "decoy");
        let s = decoy_dataset(&cfg, 40, 10, &mut rng).unwrap();
        for m in s.train_masks.iter().chain(&s.test_masks) {
            assert_eq!(m.len(), 9);
        }
    }

    #[test]
    fn train_shade_encodes_the_label_exactly() {
        let cfg = small_cfg();
        let mut rng = crate::rng::derive_stream(3, "decoy");
        let s = decoy_dataset(&cfg, 60, 10, &mut rng).unwrap();
        for i in 0..60 {
            let expected = train_shade(s.train_ys[i]);
            for &px in &s.train_masks[i] {
                assert_eq!(s.train_xs.get(i, px), expected);
            }
        }
    }

    #[test]
    fn test_shade_is_uncorrelated_with_the_label() {
        let cfg = small_cfg();
        let mut rng = crate::rng::derive_stream(4, "decoy");
        let s = decoy_dataset(&cfg, 10, 1000, &mut rng).unwrap();
        let shades: Vec<f64> = (0..1000)
            .map(|i| s.test_xs.get(i, s.test_masks[i][0]))
            .collect();
        let ys: Vec<f64> = s.test_ys.iter().map(|&y| y as f64).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ms, my) = (mean(&shades), mean(&ys));
        let cov: f64 = shades
            .iter()
            .zip(&ys)
            .map(|(s, y)| (s - ms) * (y - my))
            .sum::<f64>();
        let vs: f64 = shades.iter().map(|s| (s - ms).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let corr = cov / (vs.sqrt() * vy.sqrt());
        assert!(corr.abs() <= 0.1, "corr {corr}");
    }

    #[test]
    fn masks_never_touch_glyph_pixels() {
        let cfg = small_cfg();
        let (lo, hi) = cfg.glyph_box();
        let mut rng = crate::rng::derive_stream(5, "decoy");
        let s = decoy_dataset(&cfg, 100, 100, &mut rng).unwrap();
        for m in s.train_masks.iter().chain(&s.test_masks) {
            for &px in m {
                let (r, c) = (px / cfg.image_side, px % cfg.image_side);
                let inside = r >= lo && r < hi && c >= lo && c < hi;
                assert!(!inside, "patch pixel ({r},{c}) inside the glyph box");
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = small_cfg();
        let mut r1 = crate::rng::derive_stream(6, "decoy");
        let mut r2 = crate::rng::derive_stream(6, "decoy");
        let a = decoy_dataset(&cfg, 20, 20, &mut r1).unwrap();
        let b = decoy_dataset(&cfg, 20, 20, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}
