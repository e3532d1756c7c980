//! Trajectory-level checks: time reparametrisation and serialisation.

use std::f64::consts::LN_2;

use sasaki_flow::conjugate::{normalize_for_w, solve_backward_w, solve_backward_w_normalized};
use sasaki_flow::flow::{run_flow, to_unnormalized};
use sasaki_flow::functionals::entropy_w;
use sasaki_flow::io;
use sasaki_flow::models::ModelSpec;
use sasaki_flow::transverse::BasicField;

fn perturbed(m: &ModelSpec) -> BasicField {
    BasicField::from_fn(m.grid(), |s| 0.2 * (s * s - s * s * s + s / 3.0))
}

/// The normalized and unnormalized descriptions of one flow give the same
/// entropy at the initial time once terminal data are matched.
#[test]
fn normalized_and_unnormalized_entropy_agree() {
    let m = ModelSpec::round(32).unwrap();
    let traj = run_flow(&m, &perturbed(&m), LN_2, LN_2 / 100.0).unwrap();
    let unnorm = to_unnormalized(&traj, 0.5, 0.005).unwrap();
    let tau_t = 0.8;
    let g_end = &traj.states().last().unwrap().gt;
    let f_t = normalize_for_w(g_end, &BasicField::from_fn(m.grid(), |s| (3.0 * s).cos()), tau_t);

    let norm_path = solve_backward_w_normalized(&traj, &f_t, tau_t).unwrap();
    let unnorm_path = solve_backward_w(&unnorm, &f_t, tau_t / 2.0).unwrap();
    let g0 = &traj.states()[0].gt;
    let w_norm = entropy_w(&m, g0, &norm_path.fields()[0], 0.5 * (tau_t + 1.0)).unwrap();
    let w_unnorm = entropy_w(&m, &unnorm.states()[0].gt, &unnorm_path.fields()[0], tau_t / 2.0 + 0.5).unwrap();
    assert!((w_norm - w_unnorm).abs() < 1e-8, "{w_norm} vs {w_unnorm}");
}

#[test]
fn normalized_trajectory_round_trips() {
    let m = ModelSpec::round(24).unwrap();
    let traj = run_flow(&m, &perturbed(&m), 0.2, 0.05).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.txt");
    io::save_trajectory(&path, &traj).unwrap();
    let back = io::load_trajectory(&path).unwrap();
    assert_eq!(back.len(), traj.len());
    for (a, b) in traj.states().iter().zip(back.states()) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.phi.values(), b.phi.values());
        assert_eq!(a.gt.rel_det(), b.gt.rel_det());
    }
}

#[test]
fn dilaton_round_trips() {
    let m = ModelSpec::round(24).unwrap();
    let traj = run_flow(&m, &perturbed(&m), 0.2, 0.05).unwrap();
    let f_t = normalize_for_w(&traj.states().last().unwrap().gt, &BasicField::from_fn(m.grid(), |s| s * s), 1.0);
    let path = solve_backward_w_normalized(&traj, &f_t, 1.0).unwrap();
    let mut buf = Vec::new();
    io::write_dilaton(&mut buf, &path).unwrap();
    let back = io::read_dilaton(buf.as_slice(), &m).unwrap();
    assert_eq!(back.times(), path.times());
    assert_eq!(back.tau(), path.tau());
    for (a, b) in path.fields().iter().zip(back.fields()) {
        assert_eq!(a.values(), b.values());
    }
}
