//! Bin probabilities of the continuous models, in log space with analytic
//! derivatives so the same code serves rate estimation and training.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Error, Result};

const LN_HALF: f64 = -LN_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Log-probability floor for the Gaussian path (bins deep in the tail).
const GAUSS_P_MIN: f64 = 1e-300;

/// `ln P` and its partials for a Laplace bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinLogProb {
    pub log_p: f64,
    /// d/d(center - mean)
    pub d_offset: f64,
    /// d/d(bin width) for Laplace, zero for the unit-width Gaussian path
    pub d_width: f64,
    /// d/d(scale)
    pub d_scale: f64,
}

/// `ln(F(u + w/2) - F(u - w/2))` for a zero-mean Laplace with scale `b`.
/// Tails use the one-sided closed forms so deep bins keep full precision.
pub fn laplace_bin_log_prob(u: f64, width: f64, b: f64) -> BinLogProb {
    let lo = u - 0.5 * width;
    let hi = u + 0.5 * width;
    let r = width / b;
    if lo >= 0.0 || hi <= 0.0 {
        let (edge, sign) = if lo >= 0.0 { (lo, -1.0) } else { (hi, 1.0) };
        let inv_em1 = 1.0 / r.exp_m1();
        BinLogProb {
            log_p: LN_HALF + sign * edge / b + (-(-r).exp_m1()).ln(),
            d_offset: sign / b,
            d_width: 0.5 / b + inv_em1 / b,
            d_scale: -sign * edge / (b * b) - width * inv_em1 / (b * b),
        }
    } else {
        let ea = (lo / b).exp();
        let eb = (-hi / b).exp();
        let p = -0.5 * (lo / b).exp_m1() - 0.5 * (-hi / b).exp_m1();
        let dp_lo = -0.5 * ea / b;
        let dp_hi = 0.5 * eb / b;
        let dp_b = 0.5 * ea * lo / (b * b) - 0.5 * eb * hi / (b * b);
        BinLogProb {
            log_p: p.ln(),
            d_offset: (dp_lo + dp_hi) / p,
            d_width: (0.5 * dp_hi - 0.5 * dp_lo) / p,
            d_scale: dp_b / p,
        }
    }
}

/// Probability that a Laplace(`mu`, `scale`) variable lands in the bin of
/// width `delta` centered at `k * delta`.
pub fn laplace_bin_prob(mu: f64, scale: f64, delta: f64, k: i64) -> Result<f64> {
    if !(scale > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Laplace bin needs positive scale and width, got {scale}, {delta}"
        )));
    }
    Ok(laplace_bin_log_prob(k as f64 * delta - mu, delta, scale)
        .log_p
        .exp())
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln P` of the unit bin around `u` (offset from the mean) under a
/// Gaussian with standard deviation `s`.
pub fn gaussian_bin_log_prob(u: f64, s: f64) -> BinLogProb {
    let lo = (u - 0.5) / s;
    let hi = (u + 0.5) / s;
    let p = if lo > 0.0 {
        0.5 * (libm::erfc(lo / SQRT_2) - libm::erfc(hi / SQRT_2))
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    };
    if !(p > GAUSS_P_MIN) {
        return BinLogProb {
            log_p: GAUSS_P_MIN.ln(),
            d_offset: 0.0,
            d_width: 0.0,
            d_scale: 0.0,
        };
    }
    let (fh, fl) = (std_normal_pdf(hi), std_normal_pdf(lo));
    BinLogProb {
        log_p: p.ln(),
        d_offset: (fh - fl) / (s * p),
        d_width: 0.0,
        d_scale: (fl * lo - fh * hi) / (s * p),
    }
}

pub fn gaussian_bin_prob(mean: f64, scale: f64, k: i64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Gaussian bin needs positive scale, got {scale}"
        )));
    }
    Ok(gaussian_bin_log_prob(k as f64 - mean, scale).log_p.exp())
}
