//! One-dimensional complex DFT kernels.
//!
//! Lengths up to [`DIRECT_MAX`] use a direct O(n^2) transform with an exact
//! integer twiddle index; longer power-of-two lengths use iterative radix-2
//! Cooley-Tukey, and any other length goes through Bluestein's chirp-z
//! reformulation on a padded power-of-two convolution. None of the kernels
//! normalize.

use std::f64::consts::PI;

use num_complex::Complex64;

pub const DIRECT_MAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// Unnormalized in-place transform of `buf`.
pub fn transform(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n <= DIRECT_MAX {
        direct(buf, dir);
    } else if n.is_power_of_two() {
        radix2(buf, dir);
    } else {
        bluestein(buf, dir);
    }
}

fn twiddles(n: usize, dir: Direction) -> Vec<Complex64> {
    let s = dir.sign();
    (0..n)
        .map(|m| Complex64::from_polar(1.0, s * 2.0 * PI * m as f64 / n as f64))
        .collect()
}

fn direct(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let tw = twiddles(n, dir);
    let input = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, x) in input.iter().enumerate() {
            acc += x * tw[(j * k) % n];
        }
        *out = acc;
    }
}

fn radix2(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let tw = twiddles(n, dir);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = tw[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let s = dir.sign();
    // k^2 reduced mod 2n keeps the chirp angle small
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k * k) % (2 * n);
            Complex64::from_polar(1.0, s * PI * k2 as f64 / n as f64)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, Direction::Forward);
    radix2(&mut b, Direction::Forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, Direction::Inverse);
    let inv_m = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * inv_m * chirp[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex64], dir: Direction) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let ang = dir.sign() * 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin() + 0.1 * i as f64, (i as f64 * 1.3).cos()))
            .collect()
    }

    #[test]
    fn all_paths_match_naive_dft() {
        for &n in &[1, 2, 3, 7, 16, 64, 65, 97, 128, 130, 256, 300] {
            for dir in [Direction::Forward, Direction::Inverse] {
                let x = signal(n);
                let want = naive(&x, dir);
                let mut got = x.clone();
                transform(&mut got, dir);
                let scale = want.iter().map(|v| v.norm()).fold(1.0, f64::max);
                let err = got
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(err / scale < 1e-12, "n={n} {dir:?} err={err}");
            }
        }
    }
}
