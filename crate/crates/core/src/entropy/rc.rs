//! Carry-propagating range coder with 32-bit range and 64-bit low, byte
//! oriented (the LZMA construction). Frequencies are integers out of
//! `2^TOTAL_BITS`; no floating point is involved.

use super::freq::{FreqTable, TOTAL_BITS, TOTAL_FREQ};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^total_bits`.
    pub fn encode_raw(&mut self, cum: u32, freq: u32, total_bits: u32) -> Result<()> {
        if freq == 0 {
            return Err(Error::ZeroFrequency);
        }
        if total_bits > TOTAL_BITS || u64::from(cum) + u64::from(freq) > 1u64 << total_bits {
            return Err(Error::InvalidArgument(format!(
                "interval [{cum}, {cum}+{freq}) outside 2^{total_bits}"
            )));
        }
        let r = self.range >> total_bits;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: usize) -> Result<()> {
        let (cum, freq) = table.interval(symbol)?;
        self.encode_raw(cum, freq, TOTAL_BITS)
    }

    /// Equiprobable bits, most significant first.
    pub fn encode_bits(&mut self, value: u32, bits: u32) -> Result<()> {
        for i in (0..bits).rev() {
            self.encode_raw((value >> i) & 1, 1, 1)?;
        }
        Ok(())
    }

    /// Elias-gamma code of `value >= 1` in equiprobable bits.
    pub fn encode_gamma(&mut self, value: u64) -> Result<()> {
        if value == 0 {
            return Err(Error::InvalidArgument("gamma code of zero".into()));
        }
        let n = 63 - value.leading_zeros();
        for _ in 0..n {
            self.encode_raw(0, 1, 1)?;
        }
        for i in (0..=n).rev() {
            self.encode_raw(((value >> i) & 1) as u32, 1, 1)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        // the first byte is the encoder's initial cache and always zero
        if d.next_byte()? != 0 {
            return Err(Error::CorruptChunk("range coder stream must start with 0".into()));
        }
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::TruncatedStream("range coder ran out of bytes".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }

    /// Returns the target value in `[0, 2^total_bits)`; call `consume` next.
    fn target(&mut self, total_bits: u32) -> Result<(u32, u32)> {
        let r = self.range >> total_bits;
        let v = self.code / r;
        if v >= 1 << total_bits {
            return Err(Error::CorruptChunk("range coder value out of range".into()));
        }
        Ok((v, r))
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let (v, r) = self.target(TOTAL_BITS)?;
        let s = table.symbol_for(v);
        let (cum, freq) = table.interval(s)?;
        self.consume(r, cum, freq)?;
        Ok(s)
    }

    pub fn decode_bit(&mut self) -> Result<u32> {
        let (v, r) = self.target(1)?;
        self.consume(r, v, 1)?;
        Ok(v)
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..bits {
            v = (v << 1) | self.decode_bit()?;
        }
        Ok(v)
    }

    pub fn decode_gamma(&mut self) -> Result<u64> {
        let mut n = 0;
        while self.decode_bit()? == 0 {
            n += 1;
            if n > 63 {
                return Err(Error::CorruptChunk("gamma prefix too long".into()));
            }
        }
        let mut v = 1u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.decode_bit()?);
        }
        Ok(v)
    }

    /// Binary decision with `freq0` out of the full scale for a zero.
    pub fn decode_binary(&mut self, freq0: u32) -> Result<u32> {
        let (v, r) = self.target(TOTAL_BITS)?;
        if v < freq0 {
            self.consume(r, 0, freq0)?;
            Ok(0)
        } else {
            self.consume(r, freq0, TOTAL_FREQ - freq0)?;
            Ok(1)
        }
    }
}

impl RangeEncoder {
    pub fn encode_binary(&mut self, bit: u32, freq0: u32) -> Result<()> {
        if bit == 0 {
            self.encode_raw(0, freq0, TOTAL_BITS)
        } else {
            self.encode_raw(freq0, TOTAL_FREQ - freq0, TOTAL_BITS)
        }
    }
}
