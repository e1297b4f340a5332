//! Self-describing binary dataset container.
//!
//! Layout: 8-byte magic `BNNDATA\0`, u16 LE version, u32 LE metadata length,
//! JSON metadata, then the payload sections in metadata order. Matrices are
//! little-endian f32 in row-major order; masks and flags are packed bits,
//! LSB-first within each byte.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelKind, Matrix, Standardizer, TaskMeta};
use crate::error::{Error, Result};

pub const BNNDATA_MAGIC: &[u8; 8] = b"BNNDATA\0";
pub const BNNDATA_VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    kind: String, // "f32" | "bits"
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileMeta {
    split: String,
    label_kind: LabelKind,
    task: TaskMeta,
    standardizer: Option<Standardizer>,
    sections: Vec<SectionMeta>,
}

fn push_f32_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for &v in m.flat() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn push_bits(out: &mut Vec<u8>, bits: impl Iterator<Item = bool>, n_bits: usize) {
    let mut bytes = vec![0u8; n_bits.div_ceil(8)];
    for (i, b) in bits.enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bytes);
}

/// Serializes a dataset to the container format.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut sections = vec![
        SectionMeta {
            name: "xs".to_string(),
            kind: "f32".to_string(),
            rows: ds.xs.n_rows(),
            cols: ds.xs.n_cols(),
        },
        SectionMeta {
            name: "ys".to_string(),
            kind: "f32".to_string(),
            rows: ds.ys.n_rows(),
            cols: ds.ys.n_cols(),
        },
    ];
    if ds.masks.is_some() {
        sections.push(SectionMeta {
            name: "masks".to_string(),
            kind: "bits".to_string(),
            rows: ds.xs.n_rows(),
            cols: ds.xs.n_cols(),
        });
    }
    if ds.region_flags.is_some() {
        sections.push(SectionMeta {
            name: "region_flags".to_string(),
            kind: "bits".to_string(),
            rows: ds.xs.n_rows(),
            cols: 1,
        });
    }
    let meta = FileMeta {
        split: ds.split.clone(),
        label_kind: ds.label_kind,
        task: ds.meta.clone(),
        standardizer: ds.standardizer.clone(),
        sections,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::InvalidConfig(format!("metadata serialization failed: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(BNNDATA_MAGIC);
    out.extend_from_slice(&BNNDATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    push_f32_matrix(&mut out, &ds.xs);
    push_f32_matrix(&mut out, &ds.ys);
    if let Some(masks) = &ds.masks {
        let cols = ds.xs.n_cols();
        let bits = masks.iter().flat_map(|mask| {
            let mut row = vec![false; cols];
            for &j in mask {
                row[j] = true;
            }
            row
        });
        push_bits(&mut out, bits, ds.xs.n_rows() * cols);
    }
    if let Some(flags) = &ds.region_flags {
        push_bits(&mut out, flags.iter().copied(), flags.len());
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!(
                    "file truncated: needed {n} bytes for {what} at byte {}",
                    self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Reads a dataset container back into memory.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_dataset(&bytes)
}

pub(crate) fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != BNNDATA_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {BNNDATA_MAGIC:?}"),
        });
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != BNNDATA_VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported version {version}, expected {BNNDATA_VERSION}"),
        });
    }
    let meta_len = u32::from_le_bytes(cur.take(4, "metadata length")?.try_into().unwrap()) as usize;
    let meta_start = cur.pos as u64;
    let meta: FileMeta = serde_json::from_slice(cur.take(meta_len, "metadata")?).map_err(|e| {
        Error::Format {
            offset: meta_start,
            msg: format!("metadata JSON parse failed: {e}"),
        }
    })?;

    let mut xs = None;
    let mut ys = None;
    let mut masks = None;
    let mut region_flags = None;
    for s in &meta.sections {
        match s.kind.as_str() {
            "f32" => {
                let raw = cur.take(s.rows * s.cols * 4, &format!("section {}", s.name))?;
                let data: Vec<f64> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                let m = Matrix::from_flat(s.rows, s.cols, data)?;
                match s.name.as_str() {
                    "xs" => xs = Some(m),
                    "ys" => ys = Some(m),
                    other => {
                        return Err(Error::Format {
                            offset: cur.pos as u64,
                            msg: format!("unknown f32 section '{other}'"),
                        })
                    }
                }
            }
            "bits" => {
                let n_bits = s.rows * s.cols;
                let raw = cur.take(n_bits.div_ceil(8), &format!("section {}", s.name))?;
                let bit = |i: usize| raw[i / 8] & (1 << (i % 8)) != 0;
                match s.name.as_str() {
                    "masks" => {
                        let mut all = Vec::with_capacity(s.rows);
                        for r in 0..s.rows {
                            let mask: Vec<usize> =
                                (0..s.cols).filter(|&c| bit(r * s.cols + c)).collect();
                            all.push(mask);
                        }
                        masks = Some(all);
                    }
                    "region_flags" => {
                        region_flags = Some((0..s.rows).map(bit).collect::<Vec<bool>>());
                    }
                    other => {
                        return Err(Error::Format {
                            offset: cur.pos as u64,
                            msg: format!("unknown bits section '{other}'"),
                        })
                    }
                }
            }
            other => {
                return Err(Error::Format {
                    offset: cur.pos as u64,
                    msg: format!("unknown section kind '{other}'"),
                })
            }
        }
    }
    let xs = xs.ok_or_else(|| Error::Format {
        offset: cur.pos as u64,
        msg: "missing xs section".to_string(),
    })?;
    let ys = ys.ok_or_else(|| Error::Format {
        offset: cur.pos as u64,
        msg: "missing ys section".to_string(),
    })?;
    Ok(Dataset {
        xs,
        ys,
        masks,
        region_flags,
        label_kind: meta.label_kind,
        meta: meta.task,
        split: meta.split,
        standardizer: meta.standardizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DecoyConfig, DecoySource, TaskGenConfig};

    fn sample_dataset() -> Dataset {
        let task = TaskGenConfig::Decoy {
            config: DecoyConfig {
                image_side: 14,
                patch_side: 3,
                source: DecoySource::SyntheticGlyphs,
            },
        };
        let sizes = crate::data::SplitSizes {
            train: 12,
            val: 4,
            test: 4,
        };
        crate::data::generate_splits(&task, sizes, 9).unwrap().train
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let ds = sample_dataset();
        let dir = std::env::temp_dir().join("dkprior-container-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.bnnd");
        let p2 = dir.join("b.bnnd");
        write_dataset(&p1, &ds).unwrap();
        let rt = read_dataset(&p1).unwrap();
        write_dataset(&p2, &rt).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(rt.masks, ds.masks);
        assert_eq!(rt.split, ds.split);
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let mut bytes = b"NOTDATA\0".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        match parse_dataset(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_reported() {
        let ds = sample_dataset();
        let dir = std::env::temp_dir().join("dkprior-container-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.bnnd");
        write_dataset(&p, &ds).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(parse_dataset(cut), Err(Error::Format { .. })));
    }
}
