//! Adaptive binary model, used for the layer masks.

use super::freq::TOTAL_FREQ;
use super::rc::{RangeDecoder, RangeEncoder};
use crate::error::Result;

/// Counts are halved once their sum passes this.
const RESCALE_LIMIT: u32 = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveBit {
    zeros: u32,
    ones: u32,
}

impl Default for AdaptiveBit {
    fn default() -> Self {
        Self { zeros: 1, ones: 1 }
    }
}

impl AdaptiveBit {
    pub fn freq0(&self) -> u32 {
        let f = u64::from(self.zeros) * u64::from(TOTAL_FREQ) / u64::from(self.zeros + self.ones);
        (f as u32).clamp(1, TOTAL_FREQ - 1)
    }

    pub fn update(&mut self, bit: bool) {
        if bit {
            self.ones += 1;
        } else {
            self.zeros += 1;
        }
        if self.zeros + self.ones > RESCALE_LIMIT {
            self.zeros = self.zeros.div_ceil(2);
            self.ones = self.ones.div_ceil(2);
        }
    }
}

pub fn encode_mask(enc: &mut RangeEncoder, mask: &[bool]) -> Result<()> {
    let mut model = AdaptiveBit::default();
    for &b in mask {
        enc.encode_binary(u32::from(b), model.freq0())?;
        model.update(b);
    }
    Ok(())
}

pub fn decode_mask(dec: &mut RangeDecoder<'_>, len: usize) -> Result<Vec<bool>> {
    let mut model = AdaptiveBit::default();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let b = dec.decode_binary(model.freq0())? == 1;
        model.update(b);
        out.push(b);
    }
    Ok(out)
}
