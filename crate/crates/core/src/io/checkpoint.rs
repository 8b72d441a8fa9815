//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SSDPOSE\0"
//! version  u8
//! header   u32 length + JSON (config, step, architecture)
//! count    u32
//! tensors  count x (u16 name length, name, u8 rank, u32 dims..., f32 data)
//! sha256   32 bytes over everything above
//! ```
//! All integers and floats are little-endian. Optimizer state is stored as
//! tensors named `velocity/<param>`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchors::LayerSpec;
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::net::{HeadConfig, Network, NetworkSpec, Param};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"SSDPOSE\0";
pub const VERSION: u8 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    step: u64,
    network: NetworkSpec,
    head: HeadConfig,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Number of optimization steps completed.
    pub step: u64,
    pub net: Network<f32>,
    /// Momentum buffers aligned with `net.params()`.
    pub velocity: Option<Vec<Tensor<f32>>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            network: self.net.spec.clone(),
            head: self.net.head.clone(),
            layers: self.net.layers.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .net
            .params()
            .iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        if let Some(vel) = &self.velocity {
            if vel.len() != tensors.len() {
                return Err(Error::Checkpoint("velocity does not match parameters".into()));
            }
            let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
            for (name, v) in names.into_iter().zip(vel) {
                tensors.push((format!("{VELOCITY_PREFIX}{name}"), v));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = bytes[MAGIC.len()];
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads version {VERSION})"
            )));
        }
        if bytes.len() < MAGIC.len() + 1 + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader {
            buf: body,
            pos: MAGIC.len() + 1,
        };
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut velocity = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let value = Tensor::new(shape, data)?;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocity.push((p.to_string(), value)),
                None => params.push(Param { name, value }),
            }
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }

        let velocity = if velocity.is_empty() {
            None
        } else {
            if velocity.len() != params.len()
                || velocity
                    .iter()
                    .zip(&params)
                    .any(|((n, v), p)| n != &p.name || v.shape() != p.value.shape())
            {
                return Err(corrupt("velocity tensors do not match parameters"));
            }
            Some(velocity.into_iter().map(|(_, v)| v).collect())
        };
        let net = Network::from_params(header.network, header.head, header.layers, params)?;
        Ok(Self {
            config: header.config,
            step: header.step,
            net,
            velocity,
        })
    }

    /// Write atomically: a temporary sibling file is renamed into place, so
    /// an interrupted save never clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("corrupt checkpoint: truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
