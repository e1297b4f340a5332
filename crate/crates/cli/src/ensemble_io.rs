//! Ensemble directory layout: a JSON manifest plus one binary weight file
//! per member (magic `BNNWGTS\0`, u16 LE version, u32 LE JSON arch block,
//! f64 LE payload).

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dkprior_core::error::{Error, Result};
use dkprior_core::nn::{Activation, ArchSpec, OutputHead, ParamVector};
use dkprior_core::posterior::{Averaging, Ensemble};

const MEMBER_MAGIC: &[u8; 8] = b"BNNWGTS\0";
const MEMBER_VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemberMeta {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_head: OutputHead,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
    pub averaging: Averaging,
    pub members: Vec<String>,
    pub seed: u64,
}

fn write_member(path: &Path, member: &ParamVector) -> Result<()> {
    let arch = member.arch();
    let meta = MemberMeta {
        layer_sizes: arch.layer_sizes.clone(),
        activation: arch.activation,
        output_head: arch.output_head,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::InvalidConfig(format!("member metadata failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MEMBER_MAGIC);
    out.extend_from_slice(&MEMBER_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    for v in member.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_member(path: &Path) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 14 || &bytes[..8] != MEMBER_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("{} is not a weight file", path.display()),
        });
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != MEMBER_VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported member version {version}"),
        });
    }
    let meta_len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let meta: MemberMeta =
        serde_json::from_slice(&bytes[14..14 + meta_len]).map_err(|e| Error::Format {
            offset: 14,
            msg: format!("member metadata parse failed: {e}"),
        })?;
    let arch = ArchSpec::new(meta.layer_sizes, meta.activation, meta.output_head)?;
    let payload = &bytes[14 + meta_len..];
    if payload.len() != arch.param_count() * 8 {
        return Err(Error::Format {
            offset: (14 + meta_len) as u64,
            msg: format!(
                "member payload is {} bytes, arch implies {}",
                payload.len(),
                arch.param_count() * 8
            ),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::from_values(&arch, values)
}

/// Writes an ensemble directory: manifest.json plus member files.
pub fn save_ensemble(dir: &Path, ensemble: &Ensemble, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(ensemble.members().len());
    for (i, member) in ensemble.members().iter().enumerate() {
        let name = format!("member_{i:03}.bnnw");
        write_member(&dir.join(&name), member)?;
        names.push(name);
    }
    let arch = ensemble.arch();
    let manifest = EnsembleManifest {
        layer_sizes: arch.layer_sizes.clone(),
        activation: arch.activation,
        output_head: arch.output_head,
        averaging: ensemble.averaging(),
        members: names,
        seed,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Loads an ensemble directory back.
pub fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        msg: format!("{}: {e}", manifest_path.display()),
    })?;
    let arch = ArchSpec::new(
        manifest.layer_sizes.clone(),
        manifest.activation,
        manifest.output_head,
    )?;
    let mut members = Vec::with_capacity(manifest.members.len());
    for name in &manifest.members {
        let m = read_member(&dir.join(name))?;
        if m.arch() != &arch {
            return Err(Error::InvalidConfig(format!(
                "member {name} does not match the manifest architecture"
            )));
        }
        members.push(m);
    }
    Ensemble::new(members, manifest.averaging)
}
