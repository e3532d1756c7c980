use sasaki_lab::config::RunConfig;
use sasaki_lab::criteria::{run, Status, SuiteOptions};
use sasaki_lab::scenario::{run_scenario, sampled_rows};

fn small() -> RunConfig {
    RunConfig { n: 32, t_end: 1.0, mu_restarts: 2, ..RunConfig::default() }
}

#[test]
fn einstein_scenario_is_stationary() {
    let out = run_scenario(&RunConfig { perturbation: 0.0, ..small() }).unwrap();
    assert!(out.all_pass(), "{:?}", out.probes);
    let first = &out.rows[0];
    for row in &out.rows {
        assert!((row.w_t - first.w_t).abs() < 1e-10);
        assert!((row.bounds.a - first.bounds.a).abs() < 1e-12);
        assert!((row.bounds.diam_t - std::f64::consts::PI).abs() < 1e-10);
        if let Some(mu) = row.mu {
            assert!((mu + 1.0).abs() < 1e-8, "{mu}");
        }
    }
    // F still increases: dF/dt = ∫|Ric|² e^{−f} on the Einstein state.
    assert!(out.rows.last().unwrap().f_t > first.f_t);
}

#[test]
fn perturbed_scenario_passes_every_probe() {
    for cfg in [small(), RunConfig { family: sasaki_flow::models::Family::Weighted, b: 2f64.sqrt(), ..small() }] {
        let out = run_scenario(&cfg).unwrap();
        assert!(out.all_pass(), "{:?}", out.probes.iter().filter(|p| !p.passed).collect::<Vec<_>>());
        let mu: Vec<f64> = out.rows.iter().filter_map(|r| r.mu).collect();
        assert_eq!(mu.len(), sampled_rows(out.rows.len()).len());
        assert!(mu.last().unwrap() > &mu[0]);
    }
}

#[test]
fn injected_curvature_sign_error_is_detected() {
    let clean = SuiteOptions::at(32);
    let faulty = SuiteOptions { inject_sign_error: true, ..clean.clone() };
    for id in [4, 5] {
        assert_eq!(run(id, &clean).checks[0].status, Status::Pass, "criterion {id}");
        let report = run(id, &faulty);
        assert_eq!(report.checks[0].status, Status::Fail, "criterion {id} missed the fault: {}", report.line());
    }
}

#[test]
fn reduced_grid_skips_refinement_checks() {
    let opts = SuiteOptions::at(64);
    for id in [4, 13, 16] {
        let report = run(id, &opts);
        assert_ne!(report.status(), Status::Fail, "{}", report.line());
        assert!(report.checks.iter().any(|c| c.status == Status::Skipped), "{}", report.line());
    }
}
