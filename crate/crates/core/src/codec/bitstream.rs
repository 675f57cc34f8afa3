//! Stream container: a fixed header followed by length-prefixed chunks.
//!
//! Chunk order is masks (layers L..2), the hyper latent, then latent chunks
//! for layers L..1. Which chunks exist follows from the header counts, so
//! chunks carry no tags. Every integer is little-endian.

use crate::error::{Error, Result};
use crate::fs::{GroupOrdering, GroupSpec};

pub const MAGIC: &[u8; 4] = b"SPAC";
pub const VERSION: u8 = 1;
const TAU_DIGITS: i32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u8,
    pub bitdepth: u8,
    pub omega: u32,
    /// `q * 100`, rounded.
    pub q_centi: u32,
    /// `tau = tau_mantissa * 10^tau_exponent`
    pub tau_mantissa: u32,
    pub tau_exponent: i8,
    pub layers: u8,
    pub model_hash: u64,
    pub lambda_index: u8,
    pub points: u32,
    /// Size of each layer's coded set, layer 1 first.
    pub layer_counts: Vec<u32>,
    pub ordering: GroupOrdering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkKind {
    Mask(usize),
    Hyper,
    Latent(usize),
}

impl Header {
    pub fn new(
        bitdepth: u8,
        spec: &GroupSpec,
        model_hash: u64,
        lambda_index: u8,
        layer_counts: Vec<u32>,
    ) -> Result<Self> {
        let (tau_mantissa, tau_exponent) = encode_tau(spec.tau)?;
        let points = layer_counts.iter().map(|&c| u64::from(c)).sum::<u64>();
        Ok(Self {
            version: VERSION,
            bitdepth,
            omega: u32::try_from(spec.omega).map_err(|_| Error::InvalidArgument("group size".into()))?,
            q_centi: (spec.q_percent * 100.0).round() as u32,
            tau_mantissa,
            tau_exponent,
            layers: layer_counts.len() as u8,
            model_hash,
            lambda_index,
            points: u32::try_from(points).map_err(|_| Error::InvalidArgument("too many points".into()))?,
            layer_counts,
            ordering: spec.ordering,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers as usize
    }

    pub fn tau(&self) -> f64 {
        let m = f64::from(self.tau_mantissa);
        let e = i32::from(self.tau_exponent);
        if e < 0 {
            m / 10f64.powi(-e)
        } else {
            m * 10f64.powi(e)
        }
    }

    pub fn q_percent(&self) -> f64 {
        f64::from(self.q_centi) / 100.0
    }

    pub fn count(&self, layer: usize) -> usize {
        self.layer_counts[layer - 1] as usize
    }

    /// Bit `l - 1` set when layer `l` codes no points.
    pub fn empty_flags(&self) -> u8 {
        self.layer_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .fold(0, |f, (i, _)| f | (1 << i))
    }

    /// Points not yet assigned when the mask of `layer` is read: the coded
    /// sets of layers `1..=layer`.
    pub fn remaining_before(&self, layer: usize) -> usize {
        self.layer_counts[..layer].iter().map(|&c| c as usize).sum()
    }

    pub fn mask_needed(&self, layer: usize) -> bool {
        layer >= 2 && self.count(layer) > 0 && self.count(layer) < self.remaining_before(layer)
    }

    /// Chunks a complete stream carries, in order.
    pub fn chunk_plan(&self) -> Vec<ChunkKind> {
        let l = self.num_layers();
        let mut plan: Vec<ChunkKind> = (2..=l).rev().filter(|&k| self.mask_needed(k)).map(ChunkKind::Mask).collect();
        if self.count(l) > 0 {
            plan.push(ChunkKind::Hyper);
        }
        plan.extend((1..=l).rev().filter(|&k| self.count(k) > 0).map(ChunkKind::Latent));
        plan
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(self.bitdepth);
        out.extend_from_slice(&self.omega.to_le_bytes());
        out.extend_from_slice(&self.q_centi.to_le_bytes());
        out.extend_from_slice(&self.tau_mantissa.to_le_bytes());
        out.push(self.tau_exponent as u8);
        out.push(self.layers);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.push(self.lambda_index);
        out.extend_from_slice(&self.points.to_le_bytes());
        for c in &self.layer_counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.push(self.empty_flags());
        out.push(match self.ordering {
            GroupOrdering::Input => 0,
            GroupOrdering::Morton => 1,
        });
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + 1 + 4 + 4 + 4 + 1 + 1 + 8 + 1 + 4 + 4 * self.layer_counts.len() + 1 + 1
    }

    pub fn read(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptChunk("missing SPAC magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::CorruptChunk(format!("unsupported stream version {version}")));
        }
        let bitdepth = r.u8()?;
        let omega = r.u32()?;
        let q_centi = r.u32()?;
        let tau_mantissa = r.u32()?;
        let tau_exponent = r.u8()? as i8;
        let layers = r.u8()?;
        if layers == 0 || layers as usize > crate::layers::MAX_LAYERS {
            return Err(Error::CorruptChunk(format!("{layers} layers")));
        }
        let model_hash = r.u64()?;
        let lambda_index = r.u8()?;
        let points = r.u32()?;
        let layer_counts = (0..layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let flags = r.u8()?;
        let ordering = match r.u8()? {
            0 => GroupOrdering::Input,
            1 => GroupOrdering::Morton,
            o => return Err(Error::CorruptChunk(format!("ordering flag {o}"))),
        };
        let h = Self {
            version,
            bitdepth,
            omega,
            q_centi,
            tau_mantissa,
            tau_exponent,
            layers,
            model_hash,
            lambda_index,
            points,
            layer_counts,
            ordering,
        };
        if h.layer_counts.iter().map(|&c| u64::from(c)).sum::<u64>() != u64::from(points) {
            return Err(Error::CorruptChunk("layer counts do not sum to the point count".into()));
        }
        if flags != h.empty_flags() {
            return Err(Error::CorruptChunk("empty flags disagree with layer counts".into()));
        }
        Ok((h, r.pos))
    }
}

/// Mantissa with six significant digits and a decimal exponent.
fn encode_tau(tau: f64) -> Result<(u32, i8)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau {tau}")));
    }
    let e = tau.log10().floor() as i32 - (TAU_DIGITS - 1);
    let m = if e < 0 {
        tau * 10f64.powi(-e)
    } else {
        tau / 10f64.powi(e)
    };
    let e = i8::try_from(e).map_err(|_| Error::InvalidArgument(format!("tau {tau} out of range")))?;
    Ok((m.round() as u32, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::TruncatedStream("header cut short".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// A parsed stream; chunks beyond a truncation point are absent.
#[derive(Debug, Clone)]
pub struct Stream<'a> {
    pub header: Header,
    pub header_len: usize,
    pub chunks: Vec<(ChunkKind, &'a [u8])>,
    /// Byte offset just past each present chunk.
    pub chunk_ends: Vec<usize>,
    pub complete: bool,
}

impl<'a> Stream<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        let (header, header_len) = Header::read(bytes)?;
        let mut pos = header_len;
        let mut chunks = Vec::new();
        let mut chunk_ends = Vec::new();
        let plan = header.chunk_plan();
        for kind in plan.iter().copied() {
            let Some(len) = bytes.get(pos..pos + 4) else { break };
            let len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
            let Some(body) = bytes.get(pos + 4..pos + 4 + len) else { break };
            pos += 4 + len;
            chunks.push((kind, body));
            chunk_ends.push(pos);
        }
        let complete = chunks.len() == plan.len();
        if complete && pos != bytes.len() {
            return Err(Error::CorruptChunk(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            header,
            header_len,
            chunks,
            chunk_ends,
            complete,
        })
    }

    pub fn chunk(&self, kind: ChunkKind) -> Option<&'a [u8]> {
        self.chunks.iter().find(|(k, _)| *k == kind).map(|(_, b)| *b)
    }

    fn has(&self, kind: ChunkKind) -> bool {
        self.chunks.iter().any(|(k, _)| *k == kind)
    }

    /// Whether everything needed to reconstruct `P_layer` is present.
    pub fn can_decode(&self, layer: usize) -> bool {
        let h = &self.header;
        h.chunk_plan().into_iter().all(|k| match k {
            ChunkKind::Latent(l) if l < layer => true,
            k => self.has(k),
        })
    }

    /// Lowest layer that can be reconstructed, if any.
    pub fn decodable_upto(&self) -> Option<usize> {
        (1..=self.header.num_layers()).find(|&l| self.can_decode(l))
    }
}

/// Appends a length-prefixed chunk.
pub fn push_chunk(out: &mut Vec<u8>, body: &[u8]) -> Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| Error::InvalidArgument("chunk too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(body);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(counts: Vec<u32>) -> Header {
        Header::new(10, &GroupSpec::default(), 0xdead_beef, 2, counts).unwrap()
    }

    #[test]
    fn header_round_trip() {
        let h = header(vec![5, 0, 7, 100]);
        let mut out = Vec::new();
        h.write(&mut out);
        assert_eq!(out.len(), h.encoded_len());
        let (back, n) = Header::read(&out).unwrap();
        assert_eq!(back, h);
        assert_eq!(n, out.len());
        assert_eq!(back.empty_flags(), 0b0010);
        assert_eq!(back.tau(), 0.1);
        assert_eq!(back.q_percent(), 60.0);
        assert!(Header::read(&out[..10]).is_err());
    }

    #[test]
    fn tau_keeps_six_digits() {
        for tau in [1e-3, 0.25, 0.123456, 3.5e-7] {
            let (m, e) = encode_tau(tau).unwrap();
            let h = Header {
                tau_mantissa: m,
                tau_exponent: e,
                ..header(vec![1])
            };
            assert!((h.tau() - tau).abs() <= tau * 1e-6, "{tau}");
        }
    }

    #[test]
    fn chunk_plan_follows_counts() {
        use ChunkKind::*;
        assert_eq!(header(vec![5, 0, 7, 100]).chunk_plan(), vec![Mask(4), Mask(3), Hyper, Latent(4), Latent(3), Latent(1)]);
        // constant color: everything in layer 1, no masks, no hyper latent
        assert_eq!(header(vec![50, 0, 0, 0]).chunk_plan(), vec![Latent(1)]);
        assert_eq!(header(vec![0, 0, 0, 9]).chunk_plan(), vec![Hyper, Latent(4)]);
    }

    #[test]
    fn truncation_limits_decodable_layer() {
        let h = header(vec![5, 3, 7, 100]);
        let mut out = Vec::new();
        h.write(&mut out);
        let mut ends = Vec::new();
        for (i, _) in h.chunk_plan().iter().enumerate() {
            push_chunk(&mut out, &vec![i as u8; i + 1]).unwrap();
            ends.push(out.len());
        }
        let s = Stream::parse(&out).unwrap();
        assert!(s.complete);
        assert_eq!(s.decodable_upto(), Some(1));
        assert_eq!(s.chunk_ends, ends);
        // plan: masks 4,3,2, hyper, latents 4,3,2,1
        let cut = Stream::parse(&out[..ends[5]]).unwrap();
        assert_eq!(cut.decodable_upto(), Some(3));
        let partial = Stream::parse(&out[..ends[5] + 2]).unwrap();
        assert_eq!(partial.decodable_upto(), Some(3));
        assert_eq!(Stream::parse(&out[..ends[2]]).unwrap().decodable_upto(), None);
        let mut extra = out.clone();
        extra.push(0);
        assert!(Stream::parse(&extra).is_err());
    }
}
