//! Adaptive quantization: per-element step sizes, noise proxy for training
//! and hard rounding for coding.

use rand::Rng;

use super::graph::sigmoid;
use crate::error::{Error, Result};

pub const DELTA_MIN: f64 = 0.05;
pub const DELTA_MAX: f64 = 4.0;

/// `delta_min + (delta_max - delta_min) * sigmoid(x)`.
pub fn hsq_delta(x: f64, delta_min: f64, delta_max: f64) -> f64 {
    delta_min + (delta_max - delta_min) * sigmoid(x)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("step {delta} must be positive")));
    }
    Ok(())
}

/// `y + u`, `u ~ U(-delta/2, delta/2)`.
pub fn quantize_train(y: f64, delta: f64, rng: &mut impl Rng) -> Result<f64> {
    check_delta(delta)?;
    Ok(y + delta * (rng.gen::<f64>() - 0.5))
}

/// `delta * round(y / delta)`, ties to even.
pub fn quantize_test(y: f64, delta: f64) -> Result<f64> {
    Ok(delta * quantize_index(y, delta)? as f64)
}

/// The integer bin index coded for `y`.
pub fn quantize_index(y: f64, delta: f64) -> Result<i64> {
    check_delta(delta)?;
    Ok((y / delta).round_ties_even() as i64)
}
