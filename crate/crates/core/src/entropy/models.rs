//! Discretized Laplace and Gaussian symbol models over a finite alphabet
//! around the predicted center. The two edge symbols carry the tail mass;
//! coding an edge symbol is followed by the Elias-gamma coded distance past
//! the edge, so any integer is representable.

use super::dist::{gaussian_bin_prob, laplace_bin_prob, std_normal_cdf};
use super::freq::FreqTable;
use super::rc::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

/// Alphabet half-width cap, in bins.
pub const MAX_RADIUS: i64 = 1024;
/// Alphabet half-width in units of the model scale.
const RADIUS_SCALES: f64 = 10.0;
const MAX_CENTER: f64 = (1u64 << 40) as f64;

pub trait BinModel {
    fn center(&self) -> i64;
    fn radius(&self) -> i64;
    /// Probability of the integer bin `k`.
    fn bin_prob(&self, k: i64) -> f64;
    /// `P(K <= k)`
    fn below(&self, k: i64) -> f64;
    /// `P(K >= k)`
    fn above(&self, k: i64) -> f64;

    fn table(&self) -> Result<FreqTable> {
        let (c, r) = (self.center(), self.radius());
        let mut probs = Vec::with_capacity(2 * r as usize + 1);
        probs.push(self.below(c - r));
        for k in c - r + 1..c + r {
            probs.push(self.bin_prob(k));
        }
        probs.push(self.above(c + r));
        FreqTable::from_probs(&probs)
    }
}

fn radius_for(scale_in_bins: f64) -> i64 {
    ((RADIUS_SCALES * scale_in_bins).ceil() as i64 + 1).clamp(1, MAX_RADIUS)
}

fn checked_center(x: f64) -> Result<i64> {
    if !x.is_finite() || x.abs() > MAX_CENTER {
        return Err(Error::InvalidArgument(format!("model center {x} out of range")));
    }
    Ok(x.round() as i64)
}

/// Laplace(`mu`, `scale`) quantized with step `delta`; symbol `k` stands for
/// the value `k * delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceModel {
    mu: f64,
    scale: f64,
    delta: f64,
    center: i64,
    radius: i64,
}

impl LaplaceModel {
    pub fn new(mu: f64, scale: f64, delta: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Laplace model needs positive finite scale and step, got {scale}, {delta}"
            )));
        }
        Ok(Self {
            mu,
            scale,
            delta,
            center: checked_center(mu / delta)?,
            radius: radius_for(scale / delta),
        })
    }

    /// Laplace CDF at `x`, split by sign so neither tail cancels.
    fn cdf_lower(&self, x: f64) -> f64 {
        let t = x - self.mu;
        if t < 0.0 {
            0.5 * (t / self.scale).exp()
        } else {
            1.0 - 0.5 * (-t / self.scale).exp()
        }
    }

    fn cdf_upper(&self, x: f64) -> f64 {
        let t = x - self.mu;
        if t > 0.0 {
            0.5 * (-t / self.scale).exp()
        } else {
            1.0 - 0.5 * (t / self.scale).exp()
        }
    }
}

impl BinModel for LaplaceModel {
    fn center(&self) -> i64 {
        self.center
    }

    fn radius(&self) -> i64 {
        self.radius
    }

    fn bin_prob(&self, k: i64) -> f64 {
        laplace_bin_prob(self.mu, self.scale, self.delta, k).unwrap_or(0.0)
    }

    fn below(&self, k: i64) -> f64 {
        self.cdf_lower((k as f64 + 0.5) * self.delta)
    }

    fn above(&self, k: i64) -> f64 {
        self.cdf_upper((k as f64 - 0.5) * self.delta)
    }
}

/// Gaussian(`mean`, `scale`) over unit bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    mean: f64,
    scale: f64,
    center: i64,
    radius: i64,
}

impl GaussianModel {
    pub fn new(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian model needs positive finite scale, got {scale}"
            )));
        }
        Ok(Self {
            mean,
            scale,
            center: checked_center(mean)?,
            radius: radius_for(scale),
        })
    }
}

impl BinModel for GaussianModel {
    fn center(&self) -> i64 {
        self.center
    }

    fn radius(&self) -> i64 {
        self.radius
    }

    fn bin_prob(&self, k: i64) -> f64 {
        gaussian_bin_prob(self.mean, self.scale, k).unwrap_or(0.0)
    }

    fn below(&self, k: i64) -> f64 {
        std_normal_cdf((k as f64 + 0.5 - self.mean) / self.scale)
    }

    fn above(&self, k: i64) -> f64 {
        std_normal_cdf(-(k as f64 - 0.5 - self.mean) / self.scale)
    }
}

/// Alphabet index of `k` and, for edge symbols, the gamma-coded escape.
fn split(model: &impl BinModel, k: i64) -> (usize, Option<u64>) {
    let (c, r) = (model.center(), model.radius());
    let lo = c - r;
    let hi = c + r;
    if k <= lo {
        (0, Some((lo - k) as u64 + 1))
    } else if k >= hi {
        (2 * r as usize, Some((k - hi) as u64 + 1))
    } else {
        ((k - lo) as usize, None)
    }
}

pub fn encode_symbol(enc: &mut RangeEncoder, model: &impl BinModel, k: i64) -> Result<()> {
    let table = model.table()?;
    let (sym, escape) = split(model, k);
    enc.encode(&table, sym)?;
    if let Some(e) = escape {
        enc.encode_gamma(e)?;
    }
    Ok(())
}

pub fn decode_symbol(dec: &mut RangeDecoder<'_>, model: &impl BinModel) -> Result<i64> {
    let table = model.table()?;
    let (c, r) = (model.center(), model.radius());
    let sym = dec.decode(&table)? as i64;
    let k = if sym == 0 {
        let e = dec.decode_gamma()? - 1;
        i64::try_from(e)
            .ok()
            .and_then(|e| (c - r).checked_sub(e))
            .ok_or_else(|| Error::CorruptChunk("escape out of range".into()))?
    } else if sym == 2 * r {
        let e = dec.decode_gamma()? - 1;
        i64::try_from(e)
            .ok()
            .and_then(|e| (c + r).checked_add(e))
            .ok_or_else(|| Error::CorruptChunk("escape out of range".into()))?
    } else {
        c - r + sym
    };
    Ok(k)
}

/// Code length of `k` under the quantized table, escape bits included.
pub fn symbol_cost_bits(model: &impl BinModel, k: i64) -> Result<f64> {
    let table = model.table()?;
    let (sym, escape) = split(model, k);
    let gamma = escape.map_or(0.0, |e| f64::from(2 * (63 - e.leading_zeros()) + 1));
    Ok(table.bits(sym) + gamma)
}
