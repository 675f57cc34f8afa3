//! Model weights and the checkpoint file.
//!
//! Layout (little-endian): magic `SPACW`, version `u32`, config JSON
//! (`u32` length + bytes), entry count `u32`, then per entry the name
//! (`u16` length + bytes), rows `u32`, cols `u32`, offset `u64` into the
//! payload; payload value count `u64` and the values as `f32`; finally the
//! 64-bit FNV-1a hash of every preceding byte.

use std::fs;
use std::path::Path;

use super::model::{Network, NetworkConfig};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SPACW";
pub const CHECKPOINT_VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    network: Network,
    params: ParamStore,
}

impl ModelWeights {
    /// Fresh random weights, rounded to `f32` like a stored checkpoint.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let network = Network::register(config, &mut params, seed)?;
        params.round_to_f32();
        Ok(Self { network, params })
    }

    /// Wraps trained parameters; names and shapes must match `config`.
    pub fn from_params(config: &NetworkConfig, mut params: ParamStore) -> Result<Self> {
        let mut template = ParamStore::new();
        let network = Network::register(config, &mut template, 0)?;
        if template.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} parameters, architecture has {}",
                params.len(),
                template.len()
            )));
        }
        for id in template.ids() {
            if template.name(id) != params.name(id) || template.get(id).shape() != params.get(id).shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    params.name(id),
                    params.get(id).shape(),
                    template.name(id),
                    template.get(id).shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        params.round_to_f32();
        Ok(Self { network, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.network.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Content hash: the checkpoint's trailing FNV-1a value.
    pub fn hash(&self) -> u64 {
        let bytes = self.to_bytes();
        u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(self.config()).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for id in self.params.ids() {
            let name = self.params.name(id).as_bytes();
            let [r, c] = self.params.get(id).shape();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (r * c) as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for t in self.params.tensors() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let h = fnv1a64(&out);
        out.extend_from_slice(&h.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing SPACW magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let found = fnv1a64(body);
        if stored != found {
            return Err(Error::HashMismatch {
                expected: stored,
                found,
            });
        }
        let mut r = Reader { buf: body, pos: 5 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let config: NetworkConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let offset = r.u64()? as usize;
            manifest.push((name, rows, cols, offset));
        }
        let total = r.u64()? as usize;
        let payload = r.take(total.checked_mul(4).ok_or_else(|| Error::Checkpoint("payload size".into()))?)?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes before hash".into()));
        }
        let mut params = ParamStore::new();
        for (name, rows, cols, offset) in manifest {
            let n = rows * cols;
            if offset + n > total {
                return Err(Error::Checkpoint(format!("{name} exceeds payload")));
            }
            let data = payload[offset * 4..(offset + n) * 4]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            params.add(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Self::from_params(&config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
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
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
