//! Closed forms against independent quadrature and geodesic oracles.

use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thickthin::geometry::*;

const CLOSED_FORM_REL: f64 = 1e-8;
const QUADRATURE_REL: f64 = 1e-5;
const INPUTS: usize = 100;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

fn h(k: Curvature, rho: f64) -> f64 {
    match k {
        Curvature::Positive => rho.sin(),
        Curvature::Zero => rho,
        Curvature::Negative => rho.sinh(),
    }
}

/// `int_{r'}^{r} d rho / h` in log radius.
fn modulus_oracle(k: Curvature, r: f64, r_inner: f64) -> f64 {
    integrate(|u| u.exp() / h(k, u.exp()), r_inner.ln(), r.ln(), 400)
}

/// `r exp(int_0^r (1/h - 1/rho))`.
fn conformal_radius_oracle(k: Curvature, r: f64) -> f64 {
    let g = |rho: f64| 1.0 / h(k, rho) - 1.0 / rho;
    r * integrate(g, 0.0, r, 200).exp()
}

fn hyperbolic_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    (1.0 + d2 / (2.0 * a.1 * b.1)).acosh()
}

/// Half the length of the loop through a point at Fermi distance `rho` from the
/// axis of `z -> e^ell z` in the upper half plane.
fn injectivity_oracle(ell: f64, rho: f64) -> f64 {
    let alpha = (1.0 / rho.cosh()).asin();
    let z = (alpha.cos(), alpha.sin());
    let w = (ell.exp() * z.0, ell.exp() * z.1);
    0.5 * hyperbolic_distance(z, w)
}

/// Root of `sinh(w) sinh(ell/2) = 1` by bisection.
fn collar_width_oracle(ell: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi.sinh() * (0.5 * ell).sinh() < 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid.sinh() * (0.5 * ell).sinh() < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(20)
}

fn random_radii(rng: &mut ChaCha8Rng, k: Curvature) -> (f64, f64) {
    let top = match k {
        Curvature::Positive => 3.0,
        _ => 6.0,
    };
    let r = rng.gen_range(0.05..top);
    (r, r * rng.gen_range(1e-4..0.95))
}

#[test]
fn trivial_modulus_matches_quadrature_oracle() {
    let mut rng = rng();
    let flat = MetricModel::flat_torus(0.0, 1.0).unwrap();
    let sphere = MetricModel::sphere();
    for k in [Curvature::Positive, Curvature::Zero, Curvature::Negative] {
        for _ in 0..INPUTS {
            let (r, ri) = random_radii(&mut rng, k);
            let oracle = modulus_oracle(k, r, ri);
            let spec = AnnulusSpec::trivial(k, Point::new(0.0, 0.0), r, ri).unwrap();
            assert!(rel(spec.modulus, oracle) < CLOSED_FORM_REL, "{k:?} r={r} r'={ri}: {} vs {oracle}", spec.modulus);
            let q = radial_modulus_quadrature(k, r, ri).unwrap();
            assert!(rel(q, oracle) < QUADRATURE_REL, "{k:?} quadrature r={r} r'={ri}");
            let model = match k {
                Curvature::Positive => Some(&sphere),
                Curvature::Zero => Some(&flat),
                Curvature::Negative => None,
            };
            if let Some(m) = model {
                assert!(rel(annulus_modulus(&spec, m).unwrap(), oracle) < CLOSED_FORM_REL);
            }
        }
    }
}

#[test]
fn cylinder_modulus_matches_quadrature_oracle() {
    let mut rng = rng();
    for _ in 0..INPUTS {
        let ell = rng.gen_range(0.01..3.0);
        let w = collar_width(ell);
        let a = rng.gen_range(-w..w);
        let b = rng.gen_range(a..w);
        for profile in [CylinderProfile::Hyperbolic { ell }, CylinderProfile::Flat { ell }, CylinderProfile::Spherical] {
            let (a, b) = match profile {
                CylinderProfile::Spherical => (a.clamp(-1.5, 1.5), b.clamp(-1.5, 1.5)),
                _ => (a, b),
            };
            if b - a < 1e-6 {
                continue;
            }
            let oracle = integrate(|r| 1.0 / profile.h_theta(r), a, b, 200);
            let spec = AnnulusSpec::cylinder(0, profile, a, b).unwrap();
            assert!(rel(spec.modulus, oracle) < CLOSED_FORM_REL, "{profile:?} [{a}, {b}]");
            assert!(rel(spec.modulus_quadrature().unwrap(), oracle) < QUADRATURE_REL);
        }
    }
}

#[test]
fn collar_width_matches_bisection_oracle() {
    let mut rng = rng();
    for _ in 0..INPUTS {
        let ell = 10f64.powf(rng.gen_range(-4.0..1.0));
        assert!(rel(collar_width(ell), collar_width_oracle(ell)) < CLOSED_FORM_REL, "ell={ell}");
    }
}

#[test]
fn collar_modulus_matches_quadrature_oracle() {
    let mut rng = rng();
    for _ in 0..INPUTS {
        let ell = 10f64.powf(rng.gen_range(-3.0..1.0));
        let w = collar_width_oracle(ell);
        let oracle = TAU / ell * integrate(|r| 1.0 / r.cosh(), -w, w, 200);
        assert!(rel(collar_modulus(ell).unwrap(), oracle) < CLOSED_FORM_REL, "ell={ell}");
        assert!(rel(collar_modulus_quadrature(ell).unwrap(), oracle) < QUADRATURE_REL, "ell={ell}");
    }
}

#[test]
fn injectivity_matches_geodesic_oracle() {
    let mut rng = rng();
    for _ in 0..INPUTS {
        let ell = 10f64.powf(rng.gen_range(-3.0..0.5));
        let w = collar_width(ell);
        let d = rng.gen_range(0.0..w);
        let oracle = injectivity_oracle(ell, w - d);
        assert!(rel(injectivity_in_collar(ell, d).unwrap(), oracle) < CLOSED_FORM_REL, "ell={ell} d={d}");
    }
}

#[test]
fn conformal_radius_matches_quadrature_oracle() {
    let mut rng = rng();
    for k in [Curvature::Positive, Curvature::Zero, Curvature::Negative] {
        for _ in 0..INPUTS {
            let r = match k {
                Curvature::Positive => rng.gen_range(0.01..3.0),
                _ => rng.gen_range(0.01..8.0),
            };
            let oracle = conformal_radius_oracle(k, r);
            assert!(rel(conformal_radius(r, k).unwrap(), oracle) < CLOSED_FORM_REL, "{k:?} r={r}");
            assert!(rel(conformal_radius_quadrature(r, k).unwrap(), oracle) < QUADRATURE_REL, "{k:?} r={r}");
        }
    }
}

#[test]
fn frozen_values() {
    // evaluated once with the oracles above
    assert!((modulus_oracle(Curvature::Negative, 2.0, 1.0) - 0.499_595_4).abs() < 1e-6);
    assert!((collar_width_oracle(2.0) - 0.771_936_8).abs() < 1e-6);
    assert!((injectivity_oracle(2.0, collar_width_oracle(2.0)) - 1.218_424_9).abs() < 1e-6);
    assert!((conformal_radius_oracle(Curvature::Negative, 1.0) - 0.924_234_3).abs() < 1e-6);
}

#[test]
fn radial_log_roundtrip() {
    for k in [Curvature::Positive, Curvature::Zero, Curvature::Negative] {
        for r in [0.01, 0.3, 1.0, 2.5] {
            assert!(rel(radial_log_inverse(k, radial_log(k, r)), r) < 1e-12);
        }
    }
}

fn curvature() -> impl Strategy<Value = Curvature> {
    prop_oneof![Just(Curvature::Positive), Just(Curvature::Zero), Just(Curvature::Negative)]
}

proptest! {
    #[test]
    fn modulus_is_additive(k in curvature(), r in 0.1f64..3.0, f1 in 0.05f64..0.95, f2 in 0.05f64..0.95) {
        let (r1, r2) = (r * f1, r * f1 * f2);
        let whole = radial_modulus(k, r, r2).unwrap();
        let parts = radial_modulus(k, r, r1).unwrap() + radial_modulus(k, r1, r2).unwrap();
        prop_assert!((whole - parts).abs() < 1e-10 * whole.max(1.0));
    }

    #[test]
    fn modulus_grows_as_inner_radius_shrinks(k in curvature(), r in 0.1f64..3.0, f in 0.05f64..0.9) {
        let a = radial_modulus(k, r, r * f).unwrap();
        let b = radial_modulus(k, r, r * f * 0.5).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn conformal_radius_ordering(r in 0.01f64..3.0) {
        let s = conformal_radius(r, Curvature::Positive).unwrap();
        let e = conformal_radius(r, Curvature::Zero).unwrap();
        let hy = conformal_radius(r, Curvature::Negative).unwrap();
        prop_assert!(s >= e && e >= hy);
    }

    #[test]
    fn sub_cylinder_keeps_window_modulus(k in curvature(), r in 0.2f64..3.0, f in 0.001f64..0.5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let spec = AnnulusSpec::trivial(k, Point::new(0.0, 0.0), r, r * f).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-3);
        let sub = spec.sub_cylinder(lo * spec.modulus, hi * spec.modulus).unwrap();
        let recomputed = sub.modulus_quadrature().unwrap();
        prop_assert!((sub.modulus - (hi - lo) * spec.modulus).abs() < 1e-9 * spec.modulus);
        prop_assert!((recomputed - sub.modulus).abs() < 1e-5 * sub.modulus.max(1e-3));
    }

    #[test]
    fn trim_rejects_overlong_trims(r in 0.2f64..3.0, f in 0.01f64..0.9, t in 0.5f64..1.0) {
        let spec = AnnulusSpec::trivial(Curvature::Zero, Point::new(0.0, 0.0), r, r * f).unwrap();
        prop_assert!(spec.trim(t * spec.modulus, t * spec.modulus).is_err());
    }

    #[test]
    fn injectivity_decreases_toward_core(ell in 0.01f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let w = collar_width(ell);
        let (lo, hi) = if a < b { (a * w, b * w) } else { (b * w, a * w) };
        prop_assume!(hi - lo > 1e-9);
        let near_edge = injectivity_in_collar(ell, lo).unwrap();
        let deeper = injectivity_in_collar(ell, hi).unwrap();
        prop_assert!(deeper <= near_edge + 1e-12);
        prop_assert!(deeper >= 0.5 * ell - 1e-12);
    }

    #[test]
    fn collar_width_decreasing(a in 0.01f64..5.0, b in 0.01f64..5.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(collar_width(lo) > collar_width(hi));
    }

    #[test]
    fn sphere_distance_symmetric_and_bounded(s1 in -5.0f64..5.0, t1 in 0.0f64..TAU, s2 in -5.0f64..5.0, t2 in 0.0f64..TAU) {
        let m = MetricModel::sphere();
        let (p, q) = (Point::new(s1, t1), Point::new(s2, t2));
        let d = m.geodesic_distance(&p, &q);
        prop_assert!((d - m.geodesic_distance(&q, &p)).abs() < 1e-12);
        prop_assert!((0.0..=PI + 1e-12).contains(&d));
    }
}
