//! Structural invariants over randomly perturbed metrics and fields.

use proptest::prelude::*;
use sasaki_flow::flow::ricci_potential_of;
use sasaki_flow::functionals::{energy_f, entropy_w, poincare_residual};
use sasaki_flow::models::{Family, ModelSpec};
use sasaki_flow::transverse::{metric_from_potential, BasicField, TransverseMetric};
use sasaki_flow::tubes::TubeGeometry;

const N: usize = 32;

fn model(weighted: bool) -> ModelSpec {
    if weighted {
        ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), N).unwrap()
    } else {
        ModelSpec::round(N).unwrap()
    }
}

/// A Kähler metric from a small smooth potential; small enough to stay in the cone.
fn metric(m: &ModelSpec, c: &[f64]) -> TransverseMetric {
    let phi = BasicField::from_fn(m.grid(), |s| {
        c.iter().enumerate().map(|(k, ck)| ck * ((k as f64 + 1.0) * std::f64::consts::PI * s).cos()).sum()
    });
    metric_from_potential(m, &phi).unwrap()
}

fn field(m: &ModelSpec, c: &[f64]) -> BasicField {
    BasicField::from_fn(m.grid(), |s| c[0] + c[1] * s + c[2] * (4.0 * s).sin() + c[3] * s * s * s)
}

fn coeffs(len: usize, amp: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-amp..amp, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distance_is_a_metric(w in any::<bool>(), c in coeffs(3, 0.01), s in prop::array::uniform3(0.0..1.0f64)) {
        let m = model(w);
        let geo = TubeGeometry::new(&m, &metric(&m, &c)).unwrap();
        let [x, y, z] = s;
        let tol = 1e-10;
        prop_assert!((geo.distance(x, y) - geo.distance(y, x)).abs() < tol);
        prop_assert!(geo.distance(x, x).abs() < tol);
        prop_assert!(geo.distance(x, z) <= geo.distance(x, y) + geo.distance(y, z) + tol);
        prop_assert!(geo.distance(x, y) <= geo.diameter() + tol);
    }

    #[test]
    fn tube_volume_is_monotone_and_bounded(w in any::<bool>(), c in coeffs(3, 0.01), center in 0.0..1.0f64, r in 0.01..3.0f64, dr in 0.0..0.5f64) {
        let m = model(w);
        let geo = TubeGeometry::new(&m, &metric(&m, &c)).unwrap();
        let small = geo.tube_volume(center, r);
        let large = geo.tube_volume(center, r + dr);
        prop_assert!(small >= 0.0);
        prop_assert!(large >= small - 1e-12);
        prop_assert!(large <= geo.total_volume() * (1.0 + 1e-12));
    }

    #[test]
    fn entropy_is_scale_invariant(w in any::<bool>(), c in coeffs(3, 0.01), fc in coeffs(4, 0.5), tau in 0.1..4.0f64, scale in 0.2..5.0f64) {
        let m = model(w);
        let g = metric(&m, &c);
        let f = field(&m, &fc);
        let a = entropy_w(&m, &g, &f, tau).unwrap();
        let b = entropy_w(&m, &g.scaled(scale).unwrap(), &f, scale * tau).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn energy_scales_under_shifts(w in any::<bool>(), c in coeffs(3, 0.01), fc in coeffs(4, 0.5), shift in -2.0..2.0f64) {
        let m = model(w);
        let g = metric(&m, &c);
        let f = field(&m, &fc);
        let a = energy_f(&m, &g, &f).unwrap();
        let b = energy_f(&m, &g, &f.add_scalar(shift)).unwrap();
        prop_assert!((b - (-shift).exp() * a).abs() <= 1e-10 * (1.0 + a.abs() * (-shift).exp()));
    }

    #[test]
    fn weighted_poincare_holds(w in any::<bool>(), c in coeffs(3, 0.01), fc in coeffs(4, 1.0)) {
        let m = model(w);
        let g = metric(&m, &c);
        let u = ricci_potential_of(&m, &g).unwrap();
        prop_assert!(poincare_residual(&m, &g, &u, &field(&m, &fc)) >= -1e-10);
    }

    #[test]
    fn interpolation_is_exact_on_polynomials(c in coeffs(8, 1.0), s in 0.0..1.0f64) {
        let m = model(false);
        let p = |x: f64| c.iter().rev().fold(0.0, |acc, ck| acc * x + ck);
        let f = BasicField::from_fn(m.grid(), p);
        prop_assert!((f.eval(s) - p(s)).abs() < 1e-11);
    }
}
