//! IDX (MNIST-style) file parsing: big-endian header, unsigned-byte payload.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed IDX tensor. Image payloads are rescaled to [0, 1]; label payloads
/// keep their raw integer values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("file truncated reading u32 at byte {offset}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX file. Accepts the label magic (1-D) and image magic (3-D).
pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_idx(&bytes)
}

pub(crate) fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = read_u32_be(bytes, 0)?;
    let (ndims, rescale) = match magic {
        MAGIC_LABELS => (1usize, false),
        MAGIC_IMAGES => (3usize, true),
        other => {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic 0x{other:08x}, expected 0x00000801 or 0x00000803"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32_be(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    let end = header + count;
    if bytes.len() < end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!(
                "payload truncated: header declares {count} bytes, {} available",
                bytes.len() - header.min(bytes.len())
            ),
        });
    }
    let data = bytes[header..end]
        .iter()
        .map(|&b| {
            if rescale {
                b as f64 / 255.0
            } else {
                b as f64
            }
        })
        .collect();
    Ok(IdxTensor { dims, data })
}
