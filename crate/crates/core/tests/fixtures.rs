//! Model geometry against closed forms evaluated independently in sympy.

mod common;

use common::{close, constants, table};
use sasaki_flow::models::{Family, ModelSpec};
use sasaki_flow::transverse::{
    basic_laplacian, curvature, grad_norm_sq, metric_from_potential, volume, BasicField, TransverseMetric,
};
use sasaki_flow::tubes::{cutoff_entropy, noncollapse_ratio, transverse_diameter, transverse_distance, TubeGeometry};

fn weighted(n: usize) -> ModelSpec {
    ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), n).unwrap()
}

fn check_background(m: &ModelSpec, name: &str) {
    let grid = m.grid();
    for row in table(name) {
        let (s, scalar, theta, density) = (row[0], row[1], row[2], row[3]);
        assert!(close(grid.interpolate(m.background_scalar(), s), scalar, 1e-9), "{name} scalar at {s}");
        assert!(close(grid.interpolate(m.theta0(), s), theta, 1e-9), "{name} theta at {s}");
        assert!(close(grid.interpolate(m.fiber_density().values(), s), density, 1e-9), "{name} density at {s}");
    }
}

#[test]
fn background_curvature_and_density() {
    check_background(&ModelSpec::round(64).unwrap(), "round_background.txt");
    check_background(&weighted(64), "weighted_background.txt");
}

fn check_perturbed(m: &ModelSpec, name: &str) {
    let grid = m.grid();
    let phi = BasicField::from_fn(grid, |s| 0.1 * (s * s - s * s * s) + 0.05 * s);
    let g = metric_from_potential(m, &phi).unwrap();
    let r = curvature(&g).unwrap().scalar;
    let f = BasicField::from_fn(grid, |s| (3.0 * s).cos() + s * s);
    let lap = basic_laplacian(&g, &f);
    let grad = grad_norm_sq(&g, &f);
    for row in table(name) {
        let s = row[0];
        assert!(close(grid.interpolate(g.rel_det(), s), row[1], 1e-9), "{name} rel_det at {s}");
        assert!(close(r.eval(s), row[2], 1e-8), "{name} scalar at {s}");
        assert!(close(lap.eval(s), row[3], 1e-8), "{name} laplacian at {s}");
        assert!(close(grad.eval(s), row[4], 1e-9), "{name} gradient at {s}");
    }
}

#[test]
fn perturbed_metric_operators() {
    check_perturbed(&ModelSpec::round(64).unwrap(), "round_perturbed.txt");
    check_perturbed(&weighted(64), "weighted_perturbed.txt");
}

#[test]
fn global_constants() {
    let c = constants();
    let round = ModelSpec::round(128).unwrap();
    let g = TransverseMetric::background(&round);
    let w = weighted(128);
    let gw = TransverseMetric::background(&w);
    assert!(close(volume(&round, &g), c["round_volume"], 1e-10));
    assert!(close(volume(&w, &gw), c["weighted_volume"], 1e-10));
    assert!(close(transverse_diameter(&round, &g).unwrap(), c["round_diameter"], 1e-10));
    assert!(close(transverse_diameter(&w, &gw).unwrap(), c["weighted_diameter"], 1e-10));
    assert!(close(transverse_distance(&round, &g, 0.1, 0.7).unwrap(), c["round_distance_0.1_0.7"], 1e-10));
    assert!(close(noncollapse_ratio(&round, &g, 0.0, 0.5).unwrap().ratio, c["round_noncollapse_pole_0.5"], 1e-10));
    assert!(close(noncollapse_ratio(&round, &g, 0.5, 0.5).unwrap().ratio, c["round_noncollapse_equator_0.5"], 1e-10));
    let geo = TubeGeometry::new(&w, &gw).unwrap();
    for s in [0.3, 0.5] {
        assert!(close(geo.orbit_volume(s), c[&format!("weighted_orbit_area_{s}")], 1e-9), "orbit area {s}");
    }
    for r in [0.3, 0.7] {
        let got = cutoff_entropy(&round, &g, 0.0, r).unwrap();
        assert!(close(got, c[&format!("round_cutoff_entropy_pole_{r}")], 1e-9), "cutoff entropy {r}: {got}");
    }
}
