use std::f64::consts::PI;

use higrid::eval::{doa_error, hungarian, mollweide};
use higrid::healpix::{pix_containing, uniform_level, HealpixNode};
use higrid::higrid::spatial_entropy;
use higrid::sph::{plane_wave_shd, PlaneWaveSource};
use higrid::sphere::Direction;
use higrid::srpd::{srpd_eval, CdCache, SteeringVector};
use num_complex::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn cache() -> &'static CdCache {
    static C: OnceLock<CdCache> = OnceLock::new();
    C.get_or_init(|| CdCache::build(2, 4, 3, 0.99).unwrap())
}

fn direction() -> impl Strategy<Value = Direction> {
    (-1.0f64..=1.0, 0.0f64..2.0 * PI).prop_map(|(z, phi)| Direction::new(z.acos(), phi))
}

/// Rotation about a unit axis by `angle` (Rodrigues).
fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let d = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
    let x = [axis[1] * v[2] - axis[2] * v[1], axis[2] * v[0] - axis[0] * v[2], axis[0] * v[1] - axis[1] * v[0]];
    std::array::from_fn(|k| v[k] * c + x[k] * s + axis[k] * d * (1.0 - c))
}

fn cost_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0.0f64..10.0, c), r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn doa_error_is_symmetric_and_rotation_invariant(a in direction(), b in direction(), axis in direction(), angle in 0.0f64..2.0 * PI) {
        let (u, v) = (a.to_unit(), b.to_unit());
        let e = doa_error(&[(u, v)]).pairs[0].error_deg;
        prop_assert!((e - doa_error(&[(v, u)]).pairs[0].error_deg).abs() < 1e-9);
        let ax = axis.to_unit();
        let r = doa_error(&[(rotate(u, ax, angle), rotate(v, ax, angle))]).pairs[0].error_deg;
        prop_assert!((e - r).abs() < 1e-6, "{} vs {}", e, r);
        prop_assert!((0.0..=180.0).contains(&e));
    }

    #[test]
    fn hungarian_beats_the_identity_and_reversed_assignments(cost in cost_matrix()) {
        let pairs = hungarian(&cost).unwrap();
        let (r, c) = (cost.len(), cost[0].len());
        prop_assert_eq!(pairs.len(), r.min(c));
        let total: f64 = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        let diag: f64 = (0..r.min(c)).map(|i| cost[i][i]).sum();
        let anti: f64 = (0..r.min(c)).map(|i| cost[i][c - 1 - i]).sum();
        prop_assert!(total <= diag + 1e-9 && total <= anti + 1e-9);
    }

    #[test]
    fn hungarian_total_ignores_row_order(cost in cost_matrix(), shift in 0usize..7) {
        let total = |m: &[Vec<f64>]| -> f64 { hungarian(m).unwrap().iter().map(|&(i, j)| m[i][j]).sum() };
        let mut rolled = cost.clone();
        let n = rolled.len();
        rolled.rotate_left(shift % n);
        prop_assert!((total(&cost) - total(&rolled)).abs() < 1e-9);
    }

    #[test]
    fn plane_wave_shd_is_linear(a in direction(), b in direction(), ka in 0.3f64..4.0, g in -3.0f64..3.0) {
        let wa = PlaneWaveSource { amplitude: Complex64::new(g, 0.5), direction: a };
        let wb = PlaneWaveSource::unit(b);
        let sum = plane_wave_shd(&[wa, wb], ka / 0.042, 4, 0.042).unwrap();
        let fa = plane_wave_shd(&[wa], ka / 0.042, 4, 0.042).unwrap();
        let fb = plane_wave_shd(&[wb], ka / 0.042, 4, 0.042).unwrap();
        for i in 0..sum.coeffs.len() {
            prop_assert!((sum.coeffs[i] - fa.coeffs[i] - fb.coeffs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn srpd_is_non_negative_and_quadratic(re in prop::collection::vec(-2.0f64..2.0, 25), im in prop::collection::vec(-2.0f64..2.0, 25), scale in 0.1f64..10.0, idx in 0u64..192) {
        let coeffs: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let sv = SteeringVector { coeffs: coeffs.clone(), order: 4 };
        let scaled = SteeringVector { coeffs: coeffs.iter().map(|c| c * scale).collect(), order: 4 };
        let cd = cache().entry(HealpixNode::new(2, idx).unwrap()).unwrap();
        let p = srpd_eval(&sv, cd).unwrap();
        prop_assert!(p >= -1e-12);
        let q = srpd_eval(&scaled, cd).unwrap();
        prop_assert!((q - scale * scale * p).abs() <= 1e-9 * q.max(1.0));
    }

    #[test]
    fn entropy_ignores_the_overall_scale(values in prop::collection::vec(0.0f64..5.0, 48), scale in 1e-3f64..1e3) {
        prop_assume!(values.iter().any(|v| *v > 0.0));
        let nodes: Vec<HealpixNode> = uniform_level(1).collect();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let h = spatial_entropy(nodes.iter().zip(&values)).unwrap();
        let hs = spatial_entropy(nodes.iter().zip(&scaled)).unwrap();
        prop_assert!((h - hs).abs() < 1e-9);
        // bounded by the uniform case, log of the total area
        prop_assert!(h <= (4.0 * PI).ln() + 1e-9);
    }

    #[test]
    fn point_lookup_agrees_across_levels(d in direction(), level in 1u8..8) {
        let fine = pix_containing(level, d.theta, d.phi);
        let coarse = pix_containing(level - 1, d.theta, d.phi);
        prop_assert_eq!(fine.parent().unwrap(), coarse);
    }

    #[test]
    fn mollweide_stays_inside_the_ellipse(d in direction()) {
        let (x, y) = mollweide(d.theta, d.phi);
        prop_assert!(x * x / 8.0 + y * y / 2.0 <= 1.0 + 1e-9);
        // latitude maps monotonically to y
        let (_, y2) = mollweide((d.theta + 0.01).min(PI), d.phi);
        prop_assert!(y2 <= y + 1e-12);
    }
}
