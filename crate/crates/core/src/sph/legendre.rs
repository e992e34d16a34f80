//! Associated Legendre functions and complex orthonormal spherical harmonics.
//!
//! Harmonics are indexed in the wire order used throughout the crate:
//! `(n, m) = (0,0), (1,-1), (1,0), (1,1), ..., (N,N)`, i.e. flat index
//! `n*n + n + m`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Flat index of `(n, m)` in the coefficient ordering.
#[inline]
pub fn sh_index(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

/// Number of coefficients up to and including order `order`.
#[inline]
pub fn sh_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Inverse of [`sh_index`].
pub fn sh_degree_order(index: usize) -> (usize, i64) {
    let n = (index as f64).sqrt().floor() as usize;
    // guard against rounding at perfect squares
    let n = if (n + 1) * (n + 1) <= index { n + 1 } else { n };
    let m = index as i64 - (n * n + n) as i64;
    (n, m)
}

/// `P_n^m(x)` for `0 <= m <= n`, Condon–Shortley phase included.
pub fn assoc_legendre(n: usize, m: usize, x: f64) -> Result<f64> {
    if m > n {
        return Err(Error::Domain(format!("order m={m} exceeds degree n={n}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("|x| = {} > 1", x.abs())));
    }
    Ok(legendre_unchecked(n, m, x))
}

fn legendre_unchecked(n: usize, m: usize, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if n == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if n == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=n {
        pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Legendre polynomial `P_n(x)`.
pub fn legendre_poly(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

fn norm_factor(n: usize, m: usize) -> f64 {
    // (n-m)!/(n+m)! as a running product
    let mut ratio = 1.0;
    for k in (n - m + 1)..=(n + m) {
        ratio /= k as f64;
    }
    ((2 * n + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Orthonormal complex spherical harmonic `Y_n^m(theta, phi)`.
pub fn sph_harmonic(n: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    if m.unsigned_abs() as usize > n {
        return Err(Error::Domain(format!("|m|={} exceeds n={n}", m.abs())));
    }
    if !theta.is_finite() || !phi.is_finite() {
        return Err(Error::Domain("non-finite angle".into()));
    }
    let ma = m.unsigned_abs() as usize;
    let x = theta.cos().clamp(-1.0, 1.0);
    let y = Complex64::from_polar(
        norm_factor(n, ma) * legendre_unchecked(n, ma, x),
        ma as f64 * phi,
    );
    if m >= 0 {
        Ok(y)
    } else if ma % 2 == 0 {
        Ok(y.conj())
    } else {
        Ok(-y.conj())
    }
}

/// All harmonics up to `order` at one direction, in wire order.
pub fn sh_vector(order: usize, theta: f64, phi: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); sh_count(order)];
    sh_vector_into(order, theta, phi, &mut out);
    out
}

/// Same as [`sh_vector`] but writes into a caller buffer of length `(order+1)^2`.
pub fn sh_vector_into(order: usize, theta: f64, phi: f64, out: &mut [Complex64]) {
    debug_assert_eq!(out.len(), sh_count(order));
    let x = theta.cos().clamp(-1.0, 1.0);
    for m in 0..=order {
        let e = Complex64::from_polar(1.0, m as f64 * phi);
        for n in m..=order {
            let y = e * (norm_factor(n, m) * legendre_unchecked(n, m, x));
            out[n * n + n + m] = y;
            if m > 0 {
                let c = y.conj();
                out[n * n + n - m] = if m % 2 == 0 { c } else { -c };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    /// Explicit-polynomial oracle: P_n^m(x) = (-1)^m (1-x^2)^{m/2} d^m/dx^m P_n(x),
    /// with P_n expanded via its closed-form coefficient sum.
    fn legendre_oracle(n: usize, m: usize, x: f64) -> f64 {
        fn fact(k: usize) -> f64 {
            (1..=k).map(|v| v as f64).product()
        }
        // P_n(x) = 2^-n sum_k (-1)^k C(n,k) C(2n-2k, n) x^{n-2k}
        let mut coeffs = vec![0.0; n + 1];
        for k in 0..=n / 2 {
            let c = (-1f64).powi(k as i32) * fact(n) / (fact(k) * fact(n - k)) * fact(2 * n - 2 * k)
                / (fact(n) * fact(n - 2 * k))
                / 2f64.powi(n as i32);
            coeffs[n - 2 * k] += c;
        }
        // differentiate m times
        for _ in 0..m {
            let mut d = vec![0.0; coeffs.len()];
            for (p, c) in coeffs.iter().enumerate().skip(1) {
                d[p - 1] = c * p as f64;
            }
            coeffs = d;
        }
        let poly: f64 = coeffs.iter().enumerate().map(|(p, c)| c * x.powi(p as i32)).sum();
        (-1f64).powi(m as i32) * (1.0 - x * x).powf(m as f64 / 2.0) * poly
    }

    #[test]
    fn legendre_trivial_values() {
        assert_eq!(assoc_legendre(0, 0, 0.3).unwrap(), 1.0);
        assert_close!(assoc_legendre(1, 0, 0.5).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn legendre_matches_explicit_polynomial_oracle() {
        // (2,1,0.5) frozen from the oracle: -3 x sqrt(1-x^2) = -1.299038105676658
        let oracle = legendre_oracle(2, 1, 0.5);
        assert_close!(oracle, -1.299_038_105_676_658, 1e-14);
        assert_close!(assoc_legendre(2, 1, 0.5).unwrap(), oracle, 1e-14);
        for n in 0..=8 {
            for m in 0..=n {
                for &x in &[-0.97, -0.4, 0.0, 0.13, 0.77, 1.0] {
                    let o = legendre_oracle(n, m, x);
                    let v = assoc_legendre(n, m, x).unwrap();
                    assert!((o - v).abs() <= 1e-9 * o.abs().max(1.0), "n={n} m={m} x={x}");
                }
            }
        }
    }

    #[test]
    fn legendre_domain_errors() {
        assert!(assoc_legendre(2, 3, 0.1).is_err());
        assert!(assoc_legendre(2, 1, 1.5).is_err());
        assert!(sph_harmonic(2, -3, 0.1, 0.0).is_err());
    }

    #[test]
    fn zeroth_harmonic_is_constant() {
        let c = 1.0 / (4.0 * PI).sqrt();
        for &(t, p) in &[(0.0, 0.0), (1.2, 4.0), (PI, 6.0)] {
            let y = sph_harmonic(0, 0, t, p).unwrap();
            assert_close!(y.re, c, 1e-15);
            assert_close!(y.im, 0.0, 1e-15);
        }
        assert_close!(c, 0.282_094_791_773_878_1, 1e-15);
    }

    #[test]
    fn negative_order_is_signed_conjugate() {
        for n in 0..=6usize {
            for m in 1..=n as i64 {
                let a = sph_harmonic(n, -m, 0.7, 2.1).unwrap();
                let b = sph_harmonic(n, m, 0.7, 2.1).unwrap().conj() * (-1f64).powi(m as i32);
                assert!((a - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn vector_form_matches_scalar_form() {
        let v = sh_vector(6, 1.1, -0.4);
        for (i, y) in v.iter().enumerate() {
            let (n, m) = sh_degree_order(i);
            assert_eq!(sh_index(n, m), i);
            assert!((sph_harmonic(n, m, 1.1, -0.4).unwrap() - y).norm() < 1e-14);
        }
    }

    #[test]
    fn index_ordering() {
        assert_eq!(sh_index(0, 0), 0);
        assert_eq!(sh_index(1, -1), 1);
        assert_eq!(sh_index(1, 1), 3);
        assert_eq!(sh_index(4, 4), 24);
        assert_eq!(sh_degree_order(24), (4, 4));
        assert_eq!(sh_degree_order(9), (3, -3));
    }
}
