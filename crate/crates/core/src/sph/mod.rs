//! Spherical harmonic decomposition, rigid-sphere mode strength and
//! plane-wave decomposition (SRP) beamforming.

pub mod bessel;
pub mod legendre;

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::Direction;

pub use bessel::{mode_strength, mode_strengths, spherical_h2, spherical_jn, spherical_yn};
pub use legendre::{
    assoc_legendre, legendre_poly, sh_count, sh_degree_order, sh_index, sph_harmonic, sh_vector,
    sh_vector_into,
};

/// Default speed of sound, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Highest decomposition order supported.
pub const MAX_ORDER: usize = 6;

/// Relative floor below which a mode strength is treated as ill-conditioned.
pub const MODE_STRENGTH_FLOOR: f64 = 1e-8;

/// Wavenumber `k = 2 pi f / c`.
pub fn wavenumber(freq_hz: f64, speed_of_sound: f64) -> f64 {
    2.0 * PI * freq_hz / speed_of_sound
}

/// One microphone on the sphere surface with its quadrature weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mic {
    pub theta: f64,
    pub phi: f64,
    pub weight: f64,
}

/// Rigid spherical array: radius, microphone positions, decomposition order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrayGeometry {
    pub radius_m: f64,
    pub max_order: usize,
    pub mics: Vec<Mic>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    radius_m: f64,
    max_order: usize,
    mics: Vec<MicFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MicFile {
    theta: f64,
    phi: f64,
    #[serde(default)]
    weight: Option<f64>,
}

impl ArrayGeometry {
    /// Validate and build. Missing weights are not allowed here; see [`ArrayGeometry::from_json`].
    pub fn new(radius_m: f64, max_order: usize, mics: Vec<Mic>) -> Result<Self> {
        let g = Self { radius_m, max_order, mics };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) || !self.radius_m.is_finite() {
            return Err(Error::Config(format!("radius_m must be positive, got {}", self.radius_m)));
        }
        if self.max_order > MAX_ORDER {
            return Err(Error::Config(format!(
                "max_order {} exceeds supported {MAX_ORDER}",
                self.max_order
            )));
        }
        let need = sh_count(self.max_order);
        if self.mics.len() < need {
            return Err(Error::Config(format!(
                "{} microphones cannot support order {} (need at least {need})",
                self.mics.len(),
                self.max_order
            )));
        }
        for (q, m) in self.mics.iter().enumerate() {
            if !(0.0..=PI).contains(&m.theta) {
                return Err(Error::Config(format!("mic {q}: theta {} outside [0, pi]", m.theta)));
            }
            if !(0.0..2.0 * PI).contains(&m.phi) {
                return Err(Error::Config(format!("mic {q}: phi {} outside [0, 2pi)", m.phi)));
            }
            if !(m.weight > 0.0) || !m.weight.is_finite() {
                return Err(Error::Config(format!("mic {q}: weight must be positive")));
            }
        }
        Ok(())
    }

    pub fn mic_count(&self) -> usize {
        self.mics.len()
    }

    /// Parse the geometry JSON format. Mics without a weight get `4 pi / Q`.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: GeometryFile = serde_json::from_str(text)?;
        let q = f.mics.len().max(1) as f64;
        let mics = f
            .mics
            .into_iter()
            .map(|m| Mic { theta: m.theta, phi: m.phi, weight: m.weight.unwrap_or(4.0 * PI / q) })
            .collect();
        Self::new(f.radius_m, f.max_order, mics)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serialises")
    }

    /// 32 microphones at the face centres of a truncated icosahedron
    /// (12 pentagon + 20 hexagon centres), with the two orbit weights chosen so
    /// the rule integrates all harmonics up to degree 9 exactly.
    pub fn truncated_icosahedron(radius_m: f64, max_order: usize) -> Result<Self> {
        let gr = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pent: Vec<[f64; 3]> = Vec::new();
        for &a in &[-1.0, 1.0] {
            for &b in &[-gr, gr] {
                pent.push([0.0, a, b]);
                pent.push([a, b, 0.0]);
                pent.push([b, 0.0, a]);
            }
        }
        let mut hex: Vec<[f64; 3]> = Vec::new();
        for &a in &[-1.0, 1.0] {
            for &b in &[-1.0, 1.0] {
                for &c in &[-1.0, 1.0] {
                    hex.push([a, b, c]);
                }
                let ig = 1.0 / gr;
                hex.push([a * ig, 0.0, b * gr]);
                hex.push([0.0, b * gr, a * ig]);
                hex.push([b * gr, a * ig, 0.0]);
            }
        }
        let dirs = |v: &[[f64; 3]]| -> Vec<Direction> { v.iter().map(|&p| Direction::from_vector(p)).collect() };
        let (pent, hex) = (dirs(&pent), dirs(&hex));

        // Icosahedral invariants first appear at degree 6; zeroing the degree-6
        // moment together with the total area fixes both orbit weights.
        let probe = Direction::new(0.3, 0.7).to_unit();
        let moment = |orbit: &[Direction]| -> f64 {
            orbit
                .iter()
                .map(|d| legendre_poly(6, crate::sphere::dot(d.to_unit(), probe)))
                .sum()
        };
        let (s12, s20) = (moment(&pent), moment(&hex));
        // 12 w12 + 20 w20 = 4 pi ; w12 s12 + w20 s20 = 0
        let w20 = 4.0 * PI / (20.0 - 12.0 * s20 / s12);
        let w12 = -w20 * s20 / s12;

        let mics = pent
            .iter()
            .map(|d| (d, w12))
            .chain(hex.iter().map(|d| (d, w20)))
            .map(|(d, w)| Mic { theta: d.theta, phi: d.phi, weight: w })
            .collect();
        Self::new(radius_m, max_order, mics)
    }

    /// The bundled 32-microphone, 4.2 cm, order-4 layout.
    pub fn em32_like() -> Self {
        Self::truncated_icosahedron(0.042, 4).expect("built-in layout is valid")
    }
}

/// Spherical harmonic coefficients of one time-frequency bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdFrame {
    pub coeffs: Vec<Complex64>,
    pub k: f64,
    pub order: usize,
}

impl ShdFrame {
    pub fn new(coeffs: Vec<Complex64>, k: f64, order: usize) -> Result<Self> {
        if coeffs.len() != sh_count(order) {
            return Err(Error::SizeMismatch {
                what: "SHD coefficients",
                expected: sh_count(order),
                actual: coeffs.len(),
            });
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Domain(format!("wavenumber must be positive, got {k}")));
        }
        Ok(Self { coeffs, k, order })
    }

    pub fn zeros(k: f64, order: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); sh_count(order)], k, order)
    }

    pub fn is_silent(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm_sqr() == 0.0)
    }

    /// Multiply every coefficient by a complex factor.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * factor).collect(), ..self.clone() }
    }
}

/// A monochromatic plane wave arriving from `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveSource {
    pub amplitude: Complex64,
    pub direction: Direction,
}

impl PlaneWaveSource {
    pub fn unit(direction: Direction) -> Self {
        Self { amplitude: Complex64::new(1.0, 0.0), direction }
    }
}

/// Discrete spherical harmonic transform of one bin of microphone pressures.
pub fn shd_from_mics(pressures: &[Complex64], geom: &ArrayGeometry, k: f64) -> Result<ShdFrame> {
    if pressures.len() != geom.mic_count() {
        return Err(Error::SizeMismatch {
            what: "microphone pressures",
            expected: geom.mic_count(),
            actual: pressures.len(),
        });
    }
    let order = geom.max_order;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); sh_count(order)];
    let mut y = vec![Complex64::new(0.0, 0.0); sh_count(order)];
    for (p, mic) in pressures.iter().zip(&geom.mics) {
        sh_vector_into(order, mic.theta, mic.phi, &mut y);
        let wp = p * mic.weight;
        for (c, yv) in coeffs.iter_mut().zip(&y) {
            *c += wp * yv.conj();
        }
    }
    ShdFrame::new(coeffs, k, order)
}

/// Precomputed conjugate harmonics at the microphones, for transforming many bins.
#[derive(Debug, Clone)]
pub struct ShdTransform {
    order: usize,
    /// `w_q conj(Y_a(q))`, row-major `[q][a]`
    kernel: Vec<Complex64>,
    mics: usize,
}

impl ShdTransform {
    pub fn new(geom: &ArrayGeometry) -> Self {
        let order = geom.max_order;
        let dim = sh_count(order);
        let mut kernel = Vec::with_capacity(dim * geom.mic_count());
        for mic in &geom.mics {
            kernel.extend(sh_vector(order, mic.theta, mic.phi).into_iter().map(|y| y.conj() * mic.weight));
        }
        Self { order, kernel, mics: geom.mic_count() }
    }

    pub fn apply(&self, pressures: &[Complex64], k: f64) -> Result<ShdFrame> {
        if pressures.len() != self.mics {
            return Err(Error::SizeMismatch {
                what: "microphone pressures",
                expected: self.mics,
                actual: pressures.len(),
            });
        }
        let dim = sh_count(self.order);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); dim];
        for (q, p) in pressures.iter().enumerate() {
            let row = &self.kernel[q * dim..(q + 1) * dim];
            for (c, w) in coeffs.iter_mut().zip(row) {
                *c += p * w;
            }
        }
        ShdFrame::new(coeffs, k, self.order)
    }
}

/// `i^n` for integer `n`.
pub fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// SHD coefficients of a superposition of plane waves on a rigid sphere.
pub fn plane_wave_shd(sources: &[PlaneWaveSource], k: f64, order: usize, r_a: f64) -> Result<ShdFrame> {
    let b = mode_strengths(order, k, r_a, r_a)?;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); sh_count(order)];
    for s in sources {
        let y = sh_vector(order, s.direction.theta, s.direction.phi);
        for (a, c) in coeffs.iter_mut().enumerate() {
            *c += s.amplitude * y[a].conj();
        }
    }
    for n in 0..=order {
        let f = i_pow(n) * b[n] * (4.0 * PI);
        for c in &mut coeffs[n * n..(n + 1) * (n + 1)] {
            *c *= f;
        }
    }
    ShdFrame::new(coeffs, k, order)
}

/// Check the mode-strength floor and return `1 / (4 pi i^n b_n)` per order.
pub fn pwd_equalizer(order: usize, k: f64, r_a: f64) -> Result<Vec<Complex64>> {
    let b = mode_strengths(order, k, r_a, r_a)?;
    let peak = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (n, v) in b.iter().enumerate() {
        if v.norm() < MODE_STRENGTH_FLOOR * peak || v.norm() == 0.0 {
            return Err(Error::IllConditioned(format!(
                "|b_{n}(k r_a)| = {:.3e} is below the floor at k r_a = {:.4}",
                v.norm(),
                k * r_a
            )));
        }
    }
    Ok((0..=order).map(|n| (i_pow(n) * b[n] * (4.0 * PI)).inv()).collect())
}

/// Plane-wave decomposition weights `p_nm / (4 pi i^n b_n)` of a frame.
pub fn pwd_weights(frame: &ShdFrame, r_a: f64) -> Result<Vec<Complex64>> {
    let eq = pwd_equalizer(frame.order, frame.k, r_a)?;
    Ok(frame
        .coeffs
        .iter()
        .enumerate()
        .map(|(a, c)| c * eq[sh_degree_order(a).0])
        .collect())
}

/// Beamformer output `y_N(theta, phi)` for precomputed PWD weights.
pub fn pwd_output(weights: &[Complex64], order: usize, theta: f64, phi: f64) -> Complex64 {
    let y = sh_vector(order, theta, phi);
    weights.iter().zip(&y).map(|(w, y)| w * y).sum()
}

/// Steered response power `|y_N(theta, phi)|^2`.
pub fn srp_pwd(frame: &ShdFrame, theta: f64, phi: f64, r_a: f64) -> Result<f64> {
    let w = pwd_weights(frame, r_a)?;
    Ok(pwd_output(&w, frame.order, theta, phi).norm_sqr())
}

/// SRP at many directions (the brute-force baseline scan).
pub fn srp_scan(frame: &ShdFrame, r_a: f64, directions: &[Direction]) -> Result<Vec<f64>> {
    let w = pwd_weights(frame, r_a)?;
    let mut y = vec![Complex64::new(0.0, 0.0); sh_count(frame.order)];
    Ok(directions
        .iter()
        .map(|d| {
            sh_vector_into(frame.order, d.theta, d.phi, &mut y);
            w.iter().zip(&y).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k_of(f: f64) -> f64 {
        wavenumber(f, SPEED_OF_SOUND)
    }

    #[test]
    fn geometry_validation() {
        let g = ArrayGeometry::em32_like();
        assert_eq!(g.mic_count(), 32);
        let mut bad = g.clone();
        bad.max_order = 6;
        assert!(bad.validate().is_err(), "32 mics cannot support order 6");
        let mut bad = g.clone();
        bad.mics[0].weight = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = g.clone();
        bad.mics[3].phi = 7.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn icosahedral_rule_is_orthonormal_to_order_four() {
        let g = ArrayGeometry::em32_like();
        let total: f64 = g.mics.iter().map(|m| m.weight).sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
        let dim = sh_count(4);
        let ys: Vec<Vec<Complex64>> = g.mics.iter().map(|m| sh_vector(4, m.theta, m.phi)).collect();
        for a in 0..dim {
            for b in 0..dim {
                let s: Complex64 = g.mics.iter().zip(&ys).map(|(m, y)| y[a] * y[b].conj() * m.weight).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).norm() < 1e-12, "a={a} b={b} s={s}");
            }
        }
    }

    #[test]
    fn geometry_json_defaults_weights() {
        let text = r#"{"radius_m":0.05,"max_order":1,"mics":[
            {"theta":0.5,"phi":0.0},{"theta":1.0,"phi":1.0},{"theta":2.0,"phi":2.0},{"theta":2.5,"phi":4.0}]}"#;
        let g = ArrayGeometry::from_json(text).unwrap();
        assert!((g.mics[2].weight - PI).abs() < 1e-15);
        assert!(ArrayGeometry::from_json(r#"{"radius_m":0.05,"max_order":1,"mics":[],"x":1}"#).is_err());
    }

    #[test]
    fn bundled_geometry_file_matches_generator() {
        let text = include_str!("../../data/em32_like.json");
        let g = ArrayGeometry::from_json(text).unwrap();
        let gen = ArrayGeometry::em32_like();
        assert_eq!(g.mic_count(), gen.mic_count());
        for (a, b) in g.mics.iter().zip(&gen.mics) {
            assert!((a.theta - b.theta).abs() < 1e-15 && (a.phi - b.phi).abs() < 1e-15);
            assert!((a.weight - b.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn shd_of_zero_and_constant_fields() {
        let g = ArrayGeometry::em32_like();
        let zero = shd_from_mics(&vec![Complex64::new(0.0, 0.0); 32], &g, 10.0).unwrap();
        assert!(zero.is_silent());
        let c = Complex64::new(0.3, -1.2);
        let f = shd_from_mics(&vec![c; 32], &g, 10.0).unwrap();
        assert!((f.coeffs[0] - c * (4.0 * PI).sqrt()).norm() < 1e-12);
        for v in &f.coeffs[1..] {
            assert!(v.norm() < 1e-12);
        }
        assert!(shd_from_mics(&[c; 5], &g, 10.0).is_err());
    }

    #[test]
    fn transform_matches_direct_sum() {
        let g = ArrayGeometry::em32_like();
        let p: Vec<Complex64> = (0..32).map(|q| Complex64::new((q as f64).sin(), (q as f64 * 0.3).cos())).collect();
        let a = shd_from_mics(&p, &g, 40.0).unwrap();
        let b = ShdTransform::new(&g).apply(&p, 40.0).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn plane_wave_at_pole_has_only_zonal_terms() {
        let (k, ra) = (k_of(3000.0), 0.042);
        let f = plane_wave_shd(&[PlaneWaveSource::unit(Direction::new(0.0, 0.0))], k, 4, ra).unwrap();
        let b = mode_strengths(4, k, ra, ra).unwrap();
        for a in 0..25 {
            let (n, m) = sh_degree_order(a);
            if m == 0 {
                let e = i_pow(n) * b[n] * (4.0 * PI) * ((2 * n + 1) as f64 / (4.0 * PI)).sqrt();
                assert!((f.coeffs[a] - e).norm() < 1e-12);
            } else {
                assert!(f.coeffs[a].norm() < 1e-14);
            }
        }
        assert!(plane_wave_shd(&[], k, 4, ra).unwrap().is_silent());
    }

    #[test]
    fn srp_peak_value_and_zero_frame() {
        let (k, ra) = (k_of(3000.0), 0.042);
        let d = Direction::new(1.1, 2.0);
        let f = plane_wave_shd(&[PlaneWaveSource::unit(d)], k, 4, ra).unwrap();
        let peak = srp_pwd(&f, d.theta, d.phi, ra).unwrap();
        let expect = (25.0 / (4.0 * PI)).powi(2);
        assert!((peak - expect).abs() < 1e-12 * expect);
        let z = ShdFrame::zeros(k, 4).unwrap();
        assert_eq!(srp_pwd(&z, 0.4, 0.4, ra).unwrap(), 0.0);
    }

    #[test]
    fn srp_matches_regular_beampattern() {
        // y_N = (N+1)/(4pi) (P_{N+1}(x) - P_N(x)) / (x - 1), x = cos(angle)
        let (k, ra, n) = (k_of(4000.0), 0.042, 4usize);
        let src = Direction::new(0.8, 5.5);
        let f = plane_wave_shd(&[PlaneWaveSource::unit(src)], k, n, ra).unwrap();
        for &(t, p) in &[(0.1, 0.2), (1.4, 5.0), (2.5, 3.0), (0.85, 5.45)] {
            let x = src.angle_to(Direction::new(t, p)).cos();
            let y = (n + 1) as f64 / (4.0 * PI) * (legendre_poly(n + 1, x) - legendre_poly(n, x)) / (x - 1.0);
            let got = srp_pwd(&f, t, p, ra).unwrap();
            assert!((got - y * y).abs() < 1e-10 * (y * y).max(1e-6), "{got} vs {}", y * y);
        }
    }

    #[test]
    fn ill_conditioned_band_is_reported() {
        // at very low k r_a the order-4 mode strength collapses below the floor
        let f = plane_wave_shd(&[PlaneWaveSource::unit(Direction::new(1.0, 1.0))], 1e-3, 4, 0.042).unwrap();
        assert!(matches!(srp_pwd(&f, 1.0, 1.0, 0.042), Err(Error::IllConditioned(_))));
    }
}
