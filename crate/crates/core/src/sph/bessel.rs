//! Spherical Bessel and Hankel functions and the rigid-sphere mode strength.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Spherical Bessel functions of the first kind `j_0..=j_nmax` at `x > 0`.
///
/// Miller's downward recurrence, normalised with `sum (2n+1) j_n^2 = 1`.
pub fn spherical_jn(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x > nmax as f64 + 1.0 {
        // upward recurrence is stable above the turning point
        out[0] = x.sin() / x;
        if nmax >= 1 {
            out[1] = x.sin() / (x * x) - x.cos() / x;
        }
        for n in 1..nmax {
            out[n + 1] = (2 * n + 1) as f64 / x * out[n] - out[n - 1];
        }
        return out;
    }
    let start = nmax + 20 + x.ceil() as usize;
    let (mut jp1, mut j) = (0.0f64, 1.0f64);
    let mut sum = 0.0;
    for n in (0..=start).rev() {
        if n <= nmax {
            out[n] = j;
        }
        sum += (2 * n + 1) as f64 * j * j;
        let jm1 = (2 * n + 1) as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e100 {
            // rescale to keep the recurrence in range
            j *= 1e-100;
            jp1 *= 1e-100;
            sum *= 1e-200;
            for v in out.iter_mut() {
                *v *= 1e-100;
            }
        }
    }
    let scale = sum.sqrt().recip();
    // sign fixed by j_0 = sin(x)/x, or j_1 when j_0 is near a zero
    let j0 = x.sin() / x;
    let sign = if j0.abs() > 1e-3 {
        (j0 * out[0]).signum()
    } else {
        let j1 = x.sin() / (x * x) - x.cos() / x;
        (j1 * out.get(1).copied().unwrap_or(j1)).signum()
    };
    for v in out.iter_mut() {
        *v *= scale * sign;
    }
    out
}

/// Spherical Bessel functions of the second kind `y_0..=y_nmax` at `x > 0`.
pub fn spherical_yn(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    out[0] = -x.cos() / x;
    if nmax >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for n in 1..nmax {
        out[n + 1] = (2 * n + 1) as f64 / x * out[n] - out[n - 1];
    }
    out
}

/// Spherical Hankel functions of the second kind, `h_n^(2) = j_n - i y_n`.
pub fn spherical_h2(nmax: usize, x: f64) -> Vec<Complex64> {
    let j = spherical_jn(nmax, x);
    let y = spherical_yn(nmax, x);
    j.iter().zip(&y).map(|(&a, &b)| Complex64::new(a, -b)).collect()
}

/// Derivatives of a sequence `f_0..=f_{nmax+1}` with respect to the argument,
/// from `f_n' = f_{n-1} - (n+1)/x f_n` and `f_0' = -f_1`.
fn derivs<T>(f: &[T], x: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    let nmax = f.len() - 2;
    let mut d = Vec::with_capacity(nmax + 1);
    d.push(-f[1]);
    for n in 1..=nmax {
        d.push(f[n - 1] - f[n] * ((n + 1) as f64 / x));
    }
    d
}

/// Mode strengths `b_0..=b_nmax` of a rigid sphere of radius `r_a`,
/// evaluated at radius `r >= r_a`, for wavenumber `k`.
pub fn mode_strengths(nmax: usize, k: f64, r: f64, r_a: f64) -> Result<Vec<Complex64>> {
    let xa = k * r_a;
    if !(xa > 0.0) || !xa.is_finite() {
        return Err(Error::Domain(format!("k*r_a must be positive, got {xa}")));
    }
    if r < r_a {
        return Err(Error::Domain(format!("r={r} is inside the sphere r_a={r_a}")));
    }
    let x = k * r;
    let ja = spherical_jn(nmax + 1, xa);
    let ha = spherical_h2(nmax + 1, xa);
    let dja = derivs(&ja, xa);
    let dha = derivs(&ha, xa);
    let (j, h) = if r == r_a {
        (ja, ha)
    } else {
        (spherical_jn(nmax, x), spherical_h2(nmax, x))
    };
    (0..=nmax)
        .map(|n| {
            if !(dha[n].norm() > f64::MIN_POSITIVE) || !dha[n].norm().is_finite() {
                return Err(Error::Numerical(format!(
                    "h_{n}^(2)'(k r_a) underflows or overflows at k r_a = {xa}"
                )));
            }
            Ok(j[n] - h[n] * (dja[n] / dha[n]))
        })
        .collect()
}

/// Single mode strength `b_n(kr)`.
pub fn mode_strength(n: usize, k: f64, r: f64, r_a: f64) -> Result<Complex64> {
    Ok(mode_strengths(n, k, r, r_a)?[n])
}
