//! Integer frequency tables for the range coder.

use crate::error::{Error, Result};

pub const TOTAL_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << TOTAL_BITS;

/// Cumulative frequencies summing to `TOTAL_FREQ`, every symbol at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn from_freqs(freqs: Vec<u32>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        if freqs.contains(&0) {
            return Err(Error::ZeroFrequency);
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for f in freqs {
            acc += u64::from(f);
            if acc > u64::from(TOTAL_FREQ) {
                break;
            }
            cum.push(acc as u32);
        }
        if acc != u64::from(TOTAL_FREQ) {
            return Err(Error::InvalidArgument(format!(
                "frequencies sum to {acc}, expected {TOTAL_FREQ}"
            )));
        }
        Ok(Self { cum })
    }

    /// Each symbol gets `1 + floor(p * (T - n))`; the leftover goes to the
    /// largest fractional remainders, lower index first on ties.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n > TOTAL_FREQ as usize {
            return Err(Error::InvalidArgument(format!("alphabet of {n} symbols")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        let spare = f64::from(TOTAL_FREQ - n as u32);
        let mut freqs = Vec::with_capacity(n);
        let mut rems = Vec::with_capacity(n);
        let mut used = 0u32;
        for &p in probs {
            let share = if sum > 0.0 { p / sum * spare } else { spare / n as f64 };
            let fl = share.floor().min(spare);
            freqs.push(1 + fl as u32);
            rems.push(share - fl);
            used += 1 + fl as u32;
        }
        let mut left = TOTAL_FREQ.checked_sub(used).ok_or_else(|| {
            Error::InvalidArgument("probability quantization overflowed".into())
        })?;
        if left > 0 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rems[b].total_cmp(&rems[a]).then(a.cmp(&b)));
            for &i in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                freqs[i] += 1;
                left -= 1;
            }
        }
        Self::from_freqs(freqs)
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn interval(&self, symbol: usize) -> Result<(u32, u32)> {
        if symbol >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: symbol,
                len: self.len(),
            });
        }
        Ok((self.cum[symbol], self.freq(symbol)))
    }

    /// Symbol whose interval contains `value < TOTAL_FREQ`.
    pub fn symbol_for(&self, value: u32) -> usize {
        self.cum.partition_point(|&c| c <= value) - 1
    }

    /// Ideal code length of `symbol` under the quantized table.
    pub fn bits(&self, symbol: usize) -> f64 {
        f64::from(TOTAL_BITS) - f64::from(self.freq(symbol)).log2()
    }
}
