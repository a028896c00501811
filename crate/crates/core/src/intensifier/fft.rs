//! Discrete Fourier transform of arbitrary length in `f64`.
//!
//! Composite lengths recurse on their smallest prime factor
//! (Cooley-Tukey, decimation in time). Prime lengths above a small cutoff go
//! through Bluestein's chirp-z convolution on a power-of-two transform.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

const NAIVE_PRIME_CUTOFF: usize = 31;

/// `exp(-2 pi i * num / den)`, with the angle reduced exactly first.
fn twiddle(num: usize, den: usize) -> Complex64 {
    let r = (num % den) as f64 / den as f64;
    let (s, c) = (-2.0 * PI * r).sin_cos();
    Complex64::new(c, s)
}

fn smallest_factor(n: usize) -> usize {
    if n.is_multiple_of(2) {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n.is_multiple_of(p) {
            return p;
        }
        p += 2;
    }
    n
}

fn naive(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| x.iter().enumerate().map(|(t, &v)| v * twiddle(k * t, n)).sum())
        .collect()
}

fn transform(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n <= 1 {
        return x.to_vec();
    }
    let p = smallest_factor(n);
    if p == n {
        return if n <= NAIVE_PRIME_CUTOFF { naive(x) } else { bluestein(x) };
    }
    let m = n / p;
    let subs: Vec<Vec<Complex64>> = (0..p)
        .map(|r| {
            let part: Vec<Complex64> = (0..m).map(|j| x[j * p + r]).collect();
            transform(&part)
        })
        .collect();
    (0..n)
        .map(|k| {
            subs.iter()
                .enumerate()
                .map(|(r, s)| s[k % m] * twiddle(r * k, n))
                .sum()
        })
        .collect()
}

fn inverse_unscaled(x: &[Complex64]) -> Vec<Complex64> {
    let conj: Vec<Complex64> = x.iter().map(|v| v.conj()).collect();
    transform(&conj).into_iter().map(|v| v.conj()).collect()
}

fn bluestein(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp_k = exp(-i pi k^2 / n); k^2 is reduced mod 2n so the angle stays exact.
    let chirp: Vec<Complex64> = (0..n).map(|k| twiddle(k * k % (2 * n), 2 * n)).collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    let fa = transform(&a);
    let fb = transform(&b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(u, v)| u * v).collect();
    let conv = inverse_unscaled(&prod);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| conv[k] * scale * chirp[k]).collect()
}

/// Forward DFT, `X_j = sum_t x_t exp(-2 pi i j t / n)`.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("fft of an empty vector".into()));
    }
    Ok(transform(x))
}

/// Inverse DFT including the `1/n` factor.
pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("ifft of an empty vector".into()));
    }
    let scale = 1.0 / x.len() as f64;
    Ok(inverse_unscaled(x).into_iter().map(|v| v * scale).collect())
}

pub fn fft_real(v: &[f64]) -> Result<Vec<Complex64>> {
    let x: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft(&x)
}

/// One-sided magnitudes `|X_0| ..= |X_{n/2}|`.
pub fn spectrum(v: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::non_finite(format!("spectrum input element {i}")));
    }
    let x = fft_real(v)?;
    Ok(x[..v.len() / 2 + 1].iter().map(|c| c.norm()).collect())
}
