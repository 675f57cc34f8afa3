//! Range coder and probability models.

pub mod binary;
pub mod dist;
pub mod freq;
pub mod models;
pub mod rc;

pub use binary::{decode_mask, encode_mask, AdaptiveBit};
pub use freq::{FreqTable, TOTAL_BITS, TOTAL_FREQ};
pub use models::{decode_symbol, encode_symbol, symbol_cost_bits, BinModel, GaussianModel, LaplaceModel};
pub use rc::{RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};

/// Ideal code length `sum(-log2 p)` of symbols with the given probabilities.
pub fn estimate_bits(probs: &[f64]) -> Result<f64> {
    probs.iter().try_fold(0.0, |acc, &p| {
        if p > 0.0 && p <= 1.0 {
            Ok(acc - p.log2())
        } else {
            Err(Error::ZeroProbability)
        }
    })
}
