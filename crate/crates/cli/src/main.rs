use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sasaki_flow::conjugate::{
    conjugate_mass, normalize_for_w, solve_backward_f, solve_backward_w, solve_backward_w_normalized, Variant,
};
use sasaki_flow::flow::to_unnormalized;
use sasaki_flow::functionals::{energy_f, entropy_w, mu};
use sasaki_flow::gauge::{
    check_diff_invariance, check_gradient_flow_form, inverse_composition_error, transport, InvarianceReport,
};
use sasaki_flow::models::{orbit_closure_rank, Family};
use sasaki_flow::transverse::{BasicField, TransverseMetric};
use sasaki_flow::tubes::{
    geodesic_tube_mc, gray_fit, lipschitz_check, radius_selection, GeodesicTubeReport, LipschitzReport,
    NoncollapseReport, RadiusSelection, TubeGeometry, TubeReport,
};
use sasaki_lab::config::{RunConfig, KEYS};
use sasaki_lab::criteria::{run_all, Status, SuiteOptions};
use sasaki_lab::report::{config_map, to_json, write, write_bundle};
use sasaki_lab::scenario::{
    self, bounds, mu_options, run_normalized, sampled_rows, stream_seed, terminal_dilaton, Bounds,
};
use sasaki_lab::LabError;

#[derive(Parser)]
#[command(name = "sasaki-lab", version, about = "Sasaki-Ricci flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flagship scenario and write the time series, summary and trajectory.
    Simulate(Overrides),
    /// Solve the configured conjugate equation along a run and report its entropy.
    Entropy(Overrides),
    /// Evaluate mu(g(t), 1) at sampled times along a run.
    Mu(Overrides),
    /// Tube volumes, non-collapsing and distance checks on the background metric.
    Tubes(Overrides),
    /// Transport a coupled solution into gradient-flow gauge and check it.
    GaugeCheck(Overrides),
    /// Curvature, potential and diameter bounds along a run.
    PerelmanBounds(Overrides),
    /// Run the invariant suite; grid.n defaults to 128 and tubes.mc_samples to 10^6 here.
    Selftest(Overrides),
}

/// Flags mirror the config keys; they override values from `--config`.
#[derive(Args, Default)]
struct Overrides {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "model.family", help = KEYS[0].1)]
    model_family: Option<String>,
    #[arg(long = "model.a", help = KEYS[1].1)]
    model_a: Option<String>,
    #[arg(long = "model.b", help = KEYS[2].1)]
    model_b: Option<String>,
    #[arg(long = "grid.n", help = KEYS[3].1)]
    grid_n: Option<String>,
    #[arg(long = "flow.t_end", help = KEYS[4].1)]
    flow_t_end: Option<String>,
    #[arg(long = "flow.dt_safety", help = KEYS[5].1)]
    flow_dt_safety: Option<String>,
    #[arg(long = "flow.dt_out", help = KEYS[6].1)]
    flow_dt_out: Option<String>,
    #[arg(long = "flow.perturbation", help = KEYS[7].1)]
    flow_perturbation: Option<String>,
    #[arg(long = "conjugate.variant", help = KEYS[8].1)]
    conjugate_variant: Option<String>,
    #[arg(long = "conjugate.tau_T", help = KEYS[9].1)]
    conjugate_tau_t: Option<String>,
    #[arg(long = "mu.restarts", help = KEYS[10].1)]
    mu_restarts: Option<String>,
    #[arg(long = "mu.tol", help = KEYS[11].1)]
    mu_tol: Option<String>,
    #[arg(long = "tubes.radii", help = KEYS[12].1)]
    tubes_radii: Option<String>,
    #[arg(long = "tubes.mc_samples", help = KEYS[13].1)]
    tubes_mc_samples: Option<String>,
    #[arg(long, help = KEYS[14].1)]
    seed: Option<String>,
    #[arg(long = "output.dir", help = KEYS[15].1)]
    output_dir: Option<String>,
    #[arg(long = "output.svg", help = KEYS[16].1)]
    output_svg: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 17] {
        [
            ("model.family", &self.model_family),
            ("model.a", &self.model_a),
            ("model.b", &self.model_b),
            ("grid.n", &self.grid_n),
            ("flow.t_end", &self.flow_t_end),
            ("flow.dt_safety", &self.flow_dt_safety),
            ("flow.dt_out", &self.flow_dt_out),
            ("flow.perturbation", &self.flow_perturbation),
            ("conjugate.variant", &self.conjugate_variant),
            ("conjugate.tau_T", &self.conjugate_tau_t),
            ("mu.restarts", &self.mu_restarts),
            ("mu.tol", &self.mu_tol),
            ("tubes.radii", &self.tubes_radii),
            ("tubes.mc_samples", &self.tubes_mc_samples),
            ("seed", &self.seed),
            ("output.dir", &self.output_dir),
            ("output.svg", &self.output_svg),
        ]
    }

    fn resolve(&self, base: RunConfig) -> Result<RunConfig, LabError> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), LabError> {
    match command {
        Command::Simulate(o) => simulate(&o.resolve(RunConfig::default())?),
        Command::Entropy(o) => entropy(&o.resolve(RunConfig::default())?),
        Command::Mu(o) => mu_series(&o.resolve(RunConfig::default())?),
        Command::Tubes(o) => tubes(&o.resolve(RunConfig::default())?),
        Command::GaugeCheck(o) => gauge_check(&o.resolve(RunConfig::default())?),
        Command::PerelmanBounds(o) => perelman_bounds(&o.resolve(RunConfig::default())?),
        Command::Selftest(o) => {
            selftest(&o.resolve(RunConfig { n: 128, mc_samples: 1_000_000, ..RunConfig::default() })?)
        }
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn output_dir(cfg: &RunConfig) -> Result<&std::path::Path, LabError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn simulate(cfg: &RunConfig) -> Result<(), LabError> {
    let outcome = scenario::run_scenario(cfg)?;
    announce(&write_bundle(cfg, &outcome)?);
    for p in &outcome.probes {
        println!(
            "{:<24} {} (value {:e}, tolerance {:e})",
            p.name,
            if p.passed { "pass" } else { "FAIL" },
            p.value,
            p.tolerance
        );
    }
    println!("all probes pass: {}", outcome.all_pass());
    Ok(())
}

fn entropy(cfg: &RunConfig) -> Result<(), LabError> {
    let model = scenario::model_of(cfg)?;
    let traj = run_normalized(cfg, &model)?;
    let last = traj.states().last().expect("non-empty");
    let (f_terminal, _) = terminal_dilaton(cfg, &model, last)?;
    let path = match cfg.variant {
        Variant::F => solve_backward_f(&traj, &f_terminal)?,
        Variant::W => {
            solve_backward_w_normalized(&traj, &normalize_for_w(&last.gt, &f_terminal, cfg.tau_t), cfg.tau_t)?
        }
    };
    let mass = conjugate_mass(&traj, &path);
    let mut csv = String::from("# t: normalized flow time\n# tau: scale of W (empty for F)\n# value: F or W of the coupled dilaton\n# mass: conjugate mass\nt,tau,value,mass\n");
    for (k, st) in traj.states().iter().enumerate() {
        let f = &path.fields()[k];
        let (tau, value) = match path.tau() {
            Some(tau) => (format!("{:?}", tau[k]), entropy_w(&model, &st.gt, f, tau[k])?),
            None => (String::new(), energy_f(&model, &st.gt, f)?),
        };
        let _ = writeln!(csv, "{:?},{tau},{value:?},{:?}", st.t, mass[k]);
    }
    let dir = output_dir(cfg)?;
    let dilaton = dir.join("dilaton.txt");
    sasaki_flow::io::save_dilaton(&dilaton, &path)?;
    announce(&[write(dir, "entropy.csv", &csv)?, dilaton]);
    Ok(())
}

fn mu_series(cfg: &RunConfig) -> Result<(), LabError> {
    let model = scenario::model_of(cfg)?;
    let traj = run_normalized(cfg, &model)?;
    let mut csv = String::from("# t: normalized flow time\n# mu: mu(g(t), 1)\n# el_residual: Euler-Lagrange residual of the minimiser\n# w_min: minimum of the minimiser\n# converged: solver convergence flag\nt,mu,el_residual,w_min,converged\n");
    for k in sampled_rows(traj.len()) {
        let st = &traj.states()[k];
        let res = mu(&model, &st.gt, 1.0, &mu_options(cfg, 2 + k as u64)).map_err(|e| e.at(st.t))?;
        let _ = writeln!(
            csv,
            "{:?},{:?},{:?},{:?},{}",
            st.t,
            res.value,
            res.el_residual,
            res.minimizer.min(),
            res.converged
        );
    }
    announce(&[write(output_dir(cfg)?, "mu.csv", &csv)?]);
    Ok(())
}

#[derive(Serialize)]
struct TubesReport {
    config: std::collections::BTreeMap<String, String>,
    gray: Vec<TubeReport>,
    noncollapse: Vec<(f64, NoncollapseReport)>,
    radius_selection: RadiusSelection,
    diameter: f64,
    geodesic_tube: Option<GeodesicTubeReport>,
    lipschitz: Option<LipschitzReport>,
}

fn tubes(cfg: &RunConfig) -> Result<(), LabError> {
    let model = scenario::model_of(cfg)?;
    let g = TransverseMetric::background(&model);
    let geo = TubeGeometry::new(&model, &g)?;
    let mut gray = vec![gray_fit(&model, &g, 0.0, &cfg.radii)?];
    for s in [0.3, 0.5] {
        if orbit_closure_rank(&model, s) == 2 {
            gray.push(gray_fit(&model, &g, s, &cfg.radii)?);
        }
    }
    let noncollapse =
        cfg.radii.iter().map(|&r| geo.noncollapse(0.0, r).map(|rep| (r, rep))).collect::<Result<_, _>>()?;
    let r_max = *cfg.radii.last().expect("validated non-empty");
    let round = model.family() == Family::Round;
    let report = TubesReport {
        config: config_map(cfg),
        gray,
        noncollapse,
        radius_selection: radius_selection(&model, &g, 0.0, r_max)?,
        diameter: geo.diameter(),
        geodesic_tube: round
            .then(|| geodesic_tube_mc(&model, &g, 0.0, r_max, cfg.mc_samples, stream_seed(cfg.seed, 500)))
            .transpose()?,
        lipschitz: round.then(|| lipschitz_check(&model, &g, 0.3, 1000, stream_seed(cfg.seed, 600))).transpose()?,
    };
    announce(&[write(output_dir(cfg)?, "tubes.json", &to_json(&report))?]);
    Ok(())
}

#[derive(Serialize)]
struct GaugeReport {
    config: std::collections::BTreeMap<String, String>,
    unnormalized_t_end: f64,
    residual: f64,
    energy_invariance: f64,
    scalar_transport: f64,
    mass_invariance: f64,
    inverse_composition: f64,
}

const GAUGE_DT: f64 = 0.005;

fn gauge_check(cfg: &RunConfig) -> Result<(), LabError> {
    let model = scenario::model_of(cfg)?;
    // The transport checks difference stored states in time, so both flows
    // are sampled on a fixed fine spacing rather than at `flow.dt_out`.
    let t_u = (1.0 - (-cfg.t_end).exp()).min(0.5);
    let t_n = -(1.0 - t_u).ln();
    let fine = RunConfig { t_end: t_n, dt_out: t_n / (t_n / GAUGE_DT).ceil(), ..cfg.clone() };
    let traj = run_normalized(&fine, &model)?;
    let un = to_unnormalized(&traj, t_u, t_u / (t_u / GAUGE_DT).ceil())?;
    // Rough terminal data stretch the transport maps beyond what the grid
    // resolves, so the check uses a fixed smooth dilaton.
    let f_t = BasicField::from_fn(model.grid(), |s| (3.0 * s).cos() + s * s);
    let last = &un.states().last().expect("non-empty").gt;
    let path = match cfg.variant {
        Variant::F => solve_backward_f(&un, &f_t)?,
        Variant::W => solve_backward_w(&un, &normalize_for_w(last, &f_t, cfg.tau_t), cfg.tau_t)?,
    };
    let gp = transport(&un, &path)?;
    let InvarianceReport { energy, scalar, mass } = check_diff_invariance(&un, &path, &gp)?;
    let report = GaugeReport {
        config: config_map(cfg),
        unnormalized_t_end: un.t_end(),
        residual: check_gradient_flow_form(&un, &path, &gp)?,
        energy_invariance: energy,
        scalar_transport: scalar,
        mass_invariance: mass,
        inverse_composition: inverse_composition_error(model.grid(), &gp),
    };
    announce(&[write(output_dir(cfg)?, "gauge.json", &to_json(&report))?]);
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    config: std::collections::BTreeMap<String, String>,
    rows: Vec<(f64, Bounds)>,
}

fn perelman_bounds(cfg: &RunConfig) -> Result<(), LabError> {
    let model = scenario::model_of(cfg)?;
    let traj = run_normalized(cfg, &model)?;
    let r = *cfg.radii.last().expect("validated non-empty");
    let rows = traj.states().iter().map(|st| Ok((st.t, bounds(&model, st, r)?))).collect::<Result<_, LabError>>()?;
    let report = BoundsReport { config: config_map(cfg), rows };
    announce(&[write(output_dir(cfg)?, "bounds.json", &to_json(&report))?]);
    Ok(())
}

fn selftest(cfg: &RunConfig) -> Result<(), LabError> {
    let opts = SuiteOptions { n: cfg.n, mc_samples: cfg.mc_samples, seed: cfg.seed, inject_sign_error: false };
    let reports = run_all(&opts);
    for r in &reports {
        println!("{}", r.line());
    }
    announce(&[write(output_dir(cfg)?, "selftest.json", &to_json(&reports))?]);
    let failed: Vec<String> =
        reports.iter().filter(|r| r.status() == Status::Fail).map(|r| format!("{} ({})", r.id, r.module)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(LabError::Failed(format!("failed criteria: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_follow_the_key_table() {
        let flags: Vec<&str> = Overrides::default().pairs().iter().map(|(k, _)| *k).collect();
        let keys: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(flags, keys);
    }
}
