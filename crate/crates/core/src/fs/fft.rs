//! Iterative radix-2 Cooley-Tukey FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

fn check_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "FFT length {n} is not a power of two"
        )));
    }
    Ok(())
}

fn bit_reverse(buf: &mut [Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
}

/// In-place transform; `sign` is -1 for forward, +1 for inverse (unscaled).
fn transform(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    bit_reverse(buf);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // twiddles from the angle directly to avoid drift
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

pub fn fft_in_place(buf: &mut [Complex64]) -> Result<()> {
    check_len(buf.len())?;
    transform(buf, -1.0);
    Ok(())
}

/// Inverse transform including the `1/N` scale.
pub fn ifft_in_place(buf: &mut [Complex64]) -> Result<()> {
    check_len(buf.len())?;
    transform(buf, 1.0);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

/// Forward DFT of a real signal: `X_k = sum_m x_m e^{-2 pi j k m / N}`.
pub fn dft_forward(signal: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf)?;
    Ok(buf)
}

pub fn dft_inverse(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut buf = spectrum.to_vec();
    ifft_in_place(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        (0..n)
            .map(|k| {
                signal
                    .iter()
                    .enumerate()
                    .map(|(m, &x)| {
                        let angle = -2.0 * PI * ((k * m) % n) as f64 / n as f64;
                        Complex64::from_polar(x, angle)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn constant_and_impulse() {
        let s = dft_forward(&[3.0; 8]).unwrap();
        assert!((s[0].re - 24.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|c| c.norm() < 1e-12));
        let mut impulse = [0.0; 16];
        impulse[0] = 1.0;
        let s = dft_forward(&impulse).unwrap();
        assert!(s.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for bits in 1..=10 {
            let n = 1usize << bits;
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-255.0..255.0)).collect();
            let fast = dft_forward(&x).unwrap();
            let slow = naive(&x);
            let scale = slow.iter().map(|c| c.norm()).fold(1.0, f64::max);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() / scale <= 1e-9);
            }
            let back = dft_inverse(&fast).unwrap();
            let xs = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, b) in back.iter().zip(&x) {
                assert!((a.re - b).abs() / xs <= 1e-9 && a.im.abs() / xs <= 1e-9);
            }
        }
    }

    #[test]
    fn rejects_odd_lengths() {
        assert!(dft_forward(&[1.0; 12]).is_err());
        assert!(dft_forward(&[]).is_err());
    }
}
