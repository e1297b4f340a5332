//! Prior checkpoint format.
//!
//! Layout: 8-byte magic `BNNPRIOR`, u16 LE version, u32 LE metadata length,
//! JSON metadata, then the payload: little-endian f64 arrays, per component
//! mu then V column-major, then the per-coordinate diagonal when present.
//! The diagonal family stores mu then log-std. Round trips are bit-exact.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dkprior_core::error::{Error, Result};
use dkprior_core::nn::{Activation, ArchSpec, OutputHead};
use dkprior_core::variational::{
    CovDiagonal, DiagGaussian, GaussianMixturePrior, LowRankGaussian, PriorDist,
};

pub const PRIOR_MAGIC: &[u8; 8] = b"BNNPRIOR";
pub const PRIOR_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source checkpoint this prior was transferred from.
    pub source_sha256: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
    /// "lowrank" | "diag" | "mixture".
    pub family: String,
    pub rank: usize,
    /// Jitter sigma for scalar-diagonal covariances; None when the
    /// component carries a per-coordinate diagonal.
    pub jitter_sigma: Option<f64>,
    pub per_coord_diag: bool,
    pub components: usize,
    pub seed: u64,
    pub phi_kind: String,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl CheckpointMeta {
    pub fn arch(&self) -> Result<ArchSpec> {
        ArchSpec::new(self.layer_sizes.clone(), self.activation, self.output_head)
    }

    fn component_len(&self) -> usize {
        let n: usize = self.param_count();
        match self.family.as_str() {
            "diag" => 2 * n,
            _ => n + n * self.rank + if self.per_coord_diag { n } else { 0 },
        }
    }

    fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn describe(prior: &PriorDist, seed: u64, phi_kind: &str) -> Result<CheckpointMeta> {
    let arch = prior.arch();
    let base = CheckpointMeta {
        layer_sizes: arch.layer_sizes.clone(),
        activation: arch.activation,
        output_head: arch.output_head,
        family: String::new(),
        rank: 0,
        jitter_sigma: None,
        per_coord_diag: false,
        components: 1,
        seed,
        phi_kind: phi_kind.to_string(),
        provenance: None,
    };
    match prior {
        PriorDist::LowRank(q) => {
            let (jitter, per_coord) = match q.diagonal() {
                CovDiagonal::Jitter(s) => (Some(*s), false),
                CovDiagonal::PerCoord(_) => (None, true),
            };
            Ok(CheckpointMeta {
                family: "lowrank".to_string(),
                rank: q.rank(),
                jitter_sigma: jitter,
                per_coord_diag: per_coord,
                ..base
            })
        }
        PriorDist::Diag(_) => Ok(CheckpointMeta {
            family: "diag".to_string(),
            ..base
        }),
        PriorDist::Mixture(m) => {
            let first = &m.components()[0];
            let (jitter, per_coord) = match first.diagonal() {
                CovDiagonal::Jitter(s) => (Some(*s), false),
                CovDiagonal::PerCoord(_) => (None, true),
            };
            for c in m.components() {
                if c.rank() != first.rank()
                    || matches!(c.diagonal(), CovDiagonal::Jitter(_)) == per_coord
                {
                    return Err(Error::InvalidConfig(
                        "mixture components must share rank and diagonal kind".to_string(),
                    ));
                }
            }
            Ok(CheckpointMeta {
                family: "mixture".to_string(),
                rank: first.rank(),
                jitter_sigma: jitter,
                per_coord_diag: per_coord,
                components: m.n_components(),
                ..base
            })
        }
        PriorDist::Isotropic { .. } => Err(Error::InvalidConfig(
            "isotropic priors are parameterized by a variance, not checkpointed".to_string(),
        )),
    }
}

fn push_lowrank(out: &mut Vec<u8>, q: &LowRankGaussian) {
    push_f64s(out, q.mean());
    push_f64s(out, q.factors());
    if let CovDiagonal::PerCoord(d) = q.diagonal() {
        push_f64s(out, d);
    }
}

/// Serializes a prior with provenance metadata.
pub fn save_prior_with(
    path: &Path,
    prior: &PriorDist,
    seed: u64,
    phi_kind: &str,
    provenance: Option<Provenance>,
) -> Result<()> {
    let mut meta = describe(prior, seed, phi_kind)?;
    meta.provenance = provenance;
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::InvalidConfig(format!("metadata serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(PRIOR_MAGIC);
    out.extend_from_slice(&PRIOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    match prior {
        PriorDist::LowRank(q) => push_lowrank(&mut out, q),
        PriorDist::Diag(q) => {
            push_f64s(&mut out, q.mean());
            push_f64s(&mut out, q.log_std());
        }
        PriorDist::Mixture(m) => {
            for c in m.components() {
                push_lowrank(&mut out, c);
            }
        }
        PriorDist::Isotropic { .. } => unreachable!("rejected by describe"),
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn save_prior(path: &Path, prior: &PriorDist, seed: u64, phi_kind: &str) -> Result<()> {
    save_prior_with(path, prior, seed, phi_kind, None)
}

/// Loads a checkpoint; verifies magic, version, and exact payload size.
pub fn load_prior(path: &Path) -> Result<(PriorDist, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_prior(&bytes)
}

pub fn parse_prior(bytes: &[u8]) -> Result<(PriorDist, CheckpointMeta)> {
    if bytes.len() < 14 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: "file shorter than the fixed header".to_string(),
        });
    }
    if &bytes[..8] != PRIOR_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {:?}, expected {PRIOR_MAGIC:?}", &bytes[..8]),
        });
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != PRIOR_VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported version {version}, expected {PRIOR_VERSION}"),
        });
    }
    let meta_len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if bytes.len() < 14 + meta_len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: "metadata block truncated".to_string(),
        });
    }
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[14..14 + meta_len]).map_err(|e| Error::Format {
            offset: 14,
            msg: format!("metadata JSON parse failed: {e}"),
        })?;
    let arch = meta.arch()?;
    let payload = &bytes[14 + meta_len..];
    let expect = meta.component_len() * meta.components * 8;
    if payload.len() != expect {
        return Err(Error::Format {
            offset: (14 + meta_len) as u64,
            msg: format!(
                "payload is {} bytes, metadata implies {expect}",
                payload.len()
            ),
        });
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = arch.param_count();
    let read_lowrank = |offset: usize| -> Result<LowRankGaussian> {
        let mu = floats[offset..offset + n].to_vec();
        let f_end = offset + n + n * meta.rank;
        let factors = floats[offset + n..f_end].to_vec();
        if meta.per_coord_diag {
            let diag = floats[f_end..f_end + n].to_vec();
            LowRankGaussian::with_diag_vector(&arch, mu, factors, meta.rank, diag)
        } else {
            let sigma = meta.jitter_sigma.ok_or_else(|| Error::Format {
                offset: 14,
                msg: "scalar-diagonal checkpoint without jitter_sigma".to_string(),
            })?;
            LowRankGaussian::new(&arch, mu, factors, meta.rank, sigma)
        }
    };
    let prior = match meta.family.as_str() {
        "lowrank" => PriorDist::LowRank(read_lowrank(0)?),
        "diag" => PriorDist::Diag(DiagGaussian::new(
            &arch,
            floats[..n].to_vec(),
            floats[n..2 * n].to_vec(),
        )?),
        "mixture" => {
            let step = meta.component_len();
            let components = (0..meta.components)
                .map(|k| read_lowrank(k * step))
                .collect::<Result<Vec<_>>>()?;
            PriorDist::Mixture(GaussianMixturePrior::new(components)?)
        }
        other => {
            return Err(Error::Format {
                offset: 14,
                msg: format!("unknown family '{other}'"),
            })
        }
    };
    Ok((prior, meta))
}

/// SHA-256 of a file, hex-encoded, for transfer provenance chains.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
