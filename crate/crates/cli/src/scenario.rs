//! The flagship scenario: a normalized run with coupled dilatons, sampled
//! into a time series and reduced to invariant probes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sasaki_flow::conjugate::{
    conjugate_mass, normalize_for_w, solve_backward_f, solve_backward_w_normalized, DilatonPath,
};
use sasaki_flow::flow::{a_ceiling, a_quantity, run_flow_with, FlowState, StepOptions, Trajectory};
use sasaki_flow::functionals::{energy_f, entropy_w, mu, weighted_lambda1, MuOptions, MuResult};
use sasaki_flow::grid::Grid;
use sasaki_flow::models::ModelSpec;
use sasaki_flow::transverse::{grad_norm_sq, volume, BasicField};
use sasaki_flow::tubes::TubeGeometry;

use crate::config::RunConfig;
use crate::LabError;

/// Independent seed for stream `stream` of the master seed.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Smooth basic field `Σ_{k=1}^{4} c_k cos(kπs)` with `c_k` uniform in
/// `[−amplitude, amplitude]`.
pub fn seeded_field(grid: &std::sync::Arc<Grid>, seed: u64, amplitude: f64) -> BasicField {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..4).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
    BasicField::from_fn(grid, |s| {
        c.iter().enumerate().map(|(k, ck)| ck * ((k + 1) as f64 * std::f64::consts::PI * s).cos()).sum()
    })
}

/// Initial potential `p·(s² − s³ + s/3)`.
pub fn initial_potential(model: &ModelSpec, amplitude: f64) -> BasicField {
    BasicField::from_fn(model.grid(), |s| amplitude * (s * s - s * s * s + s / 3.0))
}

pub fn model_of(cfg: &RunConfig) -> Result<ModelSpec, LabError> {
    Ok(ModelSpec::new(cfg.family, cfg.a, cfg.b, cfg.n)?)
}

pub fn run_normalized(cfg: &RunConfig, model: &ModelSpec) -> Result<Trajectory, LabError> {
    let phi0 = initial_potential(model, cfg.perturbation);
    let opts = StepOptions { safety: cfg.dt_safety, ..StepOptions::default() };
    Ok(run_flow_with(model, &phi0, cfg.t_end, cfg.dt_out, &opts)?)
}

pub fn mu_options(cfg: &RunConfig, stream: u64) -> MuOptions {
    MuOptions {
        restarts: cfg.mu_restarts,
        tol: cfg.mu_tol,
        seed: stream_seed(cfg.seed, stream),
        ..MuOptions::default()
    }
}

/// Rows at which the expensive columns are evaluated: about twenty, always
/// including the first and last.
pub fn sampled_rows(len: usize) -> Vec<usize> {
    let stride = (len.saturating_sub(1)).div_ceil(20).max(1);
    let mut rows: Vec<usize> = (0..len).step_by(stride).collect();
    if rows.last() != Some(&(len - 1)) {
        rows.push(len - 1);
    }
    rows
}

/// Geometric columns of one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bounds {
    pub vol: f64,
    pub a: f64,
    pub rt_min: f64,
    pub rt_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub grad_u_sup: f64,
    pub diam_t: f64,
    pub noncollapse_ratio: f64,
    pub ratio_prop61: f64,
    /// Smallest `C` with `h(x) ≤ C(d(x, y)² + 1)` for `h = u, |R|, |∇u|` and
    /// `y` the minimum point of `u`.
    pub growth_u: f64,
    pub growth_r: f64,
    pub growth_grad: f64,
}

pub fn bounds(model: &ModelSpec, st: &FlowState, radius: f64) -> Result<Bounds, LabError> {
    let geo = TubeGeometry::new(model, &st.gt)?;
    let u = st.u.values();
    let r = st.curv.scalar.values();
    let grad2 = grad_norm_sq(&st.gt, &st.u);
    let grad2 = grad2.values();
    let u_min = st.u.min();
    let base = model.grid().s()[st.u.argmin()];
    let (mut ratio, mut gu, mut gr, mut gg): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for (k, &s) in model.grid().s().iter().enumerate() {
        ratio = ratio.max((grad2[k] + r[k].abs()) / (u[k] - u_min + 1.0));
        let d = geo.distance(s, base);
        let w = d * d + 1.0;
        gu = gu.max(u[k] / w);
        gr = gr.max(r[k].abs() / w);
        gg = gg.max(grad2[k].sqrt() / w);
    }
    Ok(Bounds {
        vol: volume(model, &st.gt),
        a: a_quantity(model, st),
        rt_min: st.curv.scalar.min(),
        rt_max: st.curv.scalar.max(),
        u_min,
        u_max: st.u.max(),
        grad_u_sup: grad2.iter().copied().fold(0.0, f64::max).sqrt(),
        diam_t: geo.diameter(),
        noncollapse_ratio: geo.noncollapse(0.0, radius)?.ratio,
        ratio_prop61: ratio,
        growth_u: gu,
        growth_r: gr,
        growth_grad: gg,
    })
}

/// One time-series row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    pub f_t: f64,
    pub w_t: f64,
    /// `None` on rows where `mu` is not sampled.
    pub mu: Option<f64>,
    pub bounds: Bounds,
}

/// Columns of `timeseries.csv` with their descriptions.
pub const COLUMNS: &[(&str, &str)] = &[
    ("t", "normalized flow time"),
    ("vol", "transverse volume"),
    ("F_T", "F of the F-coupled dilaton"),
    ("W_T", "W of the W-coupled dilaton at its scale tau(t)"),
    ("mu", "mu(g(t), 1); empty on rows where it is not sampled"),
    ("a", "(4pi)^-1 int u e^-u dmu"),
    ("RT_min", "minimum transverse scalar curvature"),
    ("RT_max", "maximum transverse scalar curvature"),
    ("u_min", "minimum Ricci potential"),
    ("u_max", "maximum Ricci potential"),
    ("grad_u_sup", "sup |grad u|"),
    ("diam_T", "transverse diameter"),
    ("noncollapse_ratio", "Vol(T(pole, r))/r^2 at the largest configured radius"),
    ("ratio_prop61", "sup (|grad u|^2 + |R|)/(u - u_min + 1)"),
];

impl Row {
    pub fn values(&self) -> [Option<f64>; 14] {
        let b = &self.bounds;
        [
            Some(self.t),
            Some(b.vol),
            Some(self.f_t),
            Some(self.w_t),
            self.mu,
            Some(b.a),
            Some(b.rt_min),
            Some(b.rt_max),
            Some(b.u_min),
            Some(b.u_max),
            Some(b.grad_u_sup),
            Some(b.diam_t),
            Some(b.noncollapse_ratio),
            Some(b.ratio_prop61),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub growth_u: f64,
    pub growth_r: f64,
    pub growth_grad: f64,
    pub ratio_prop61_max: f64,
    pub noncollapse_min: f64,
    pub a_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub probes: Vec<Probe>,
    pub constants: Constants,
    pub trajectory: Trajectory,
    pub f_path: DilatonPath,
    pub w_path: DilatonPath,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.probes.iter().all(|p| p.passed)
    }
}

/// Terminal dilaton: the minimiser of `W(g(T), ·, τ_T)`.
pub fn terminal_dilaton(
    cfg: &RunConfig,
    model: &ModelSpec,
    last: &FlowState,
) -> Result<(BasicField, MuResult), LabError> {
    let res = mu(model, &last.gt, cfg.tau_t, &mu_options(cfg, 1))?;
    Ok((res.dilaton(cfg.tau_t), res))
}

/// Worst violation of "nondecreasing within `tol(x)`" as `max(prev − next − tol)`.
pub fn monotone_violation(series: &[f64], tol: impl Fn(f64) -> f64) -> f64 {
    series.windows(2).map(|w| w[0] - w[1] - tol(w[0])).fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_scenario(cfg: &RunConfig) -> Result<Outcome, LabError> {
    let model = model_of(cfg)?;
    let traj = run_normalized(cfg, &model)?;
    let states = traj.states();
    let last = states.last().expect("trajectory is never empty");
    let (f_terminal, _) = terminal_dilaton(cfg, &model, last)?;

    let f_path = solve_backward_f(&traj, &f_terminal)?;
    let w_terminal = normalize_for_w(&last.gt, &f_terminal, cfg.tau_t);
    let w_path = solve_backward_w_normalized(&traj, &w_terminal, cfg.tau_t)?;
    let taus = w_path.tau().expect("W paths carry tau");

    let radius = *cfg.radii.last().expect("validated non-empty");
    let sampled = sampled_rows(states.len());
    let mut rows = Vec::with_capacity(states.len());
    let (mut mu_series, mut el_worst, mut w1_min, mut lambda_min) = (Vec::new(), 0.0f64, f64::INFINITY, f64::INFINITY);
    for (k, st) in states.iter().enumerate() {
        let at = |e: sasaki_flow::error::Error| LabError::from(e.at(st.t));
        let mu_value = if sampled.contains(&k) {
            let res = mu(&model, &st.gt, 1.0, &mu_options(cfg, 2 + k as u64)).map_err(at)?;
            el_worst = el_worst.max(res.el_residual);
            w1_min = w1_min.min(res.minimizer.min());
            lambda_min = lambda_min.min(weighted_lambda1(&model, &st.gt, &st.u).map_err(at)?);
            mu_series.push(res.value);
            Some(res.value)
        } else {
            None
        };
        rows.push(Row {
            t: st.t,
            f_t: energy_f(&model, &st.gt, &f_path.fields()[k]).map_err(at)?,
            w_t: entropy_w(&model, &st.gt, &w_path.fields()[k], taus[k]).map_err(at)?,
            mu: mu_value,
            bounds: bounds(&model, st, radius)?,
        });
    }

    let col = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let vol = col(&|r| r.bounds.vol);
    let a = col(&|r| r.bounds.a);
    let ceiling = a_ceiling(&model, last);
    let mass_drift = conjugate_mass(&traj, &w_path).iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let finite = rows.iter().all(|r| r.values().iter().flatten().all(|v| v.is_finite()));
    let max_of = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).fold(0.0, f64::max);

    let probe = |name, value: f64, tolerance: f64| Probe { name, passed: value <= tolerance, value, tolerance };
    let probes = vec![
        probe("volume_drift", vol.iter().map(|v| (v - vol[0]).abs() / vol[0]).fold(0.0, f64::max), 1e-6),
        probe("F_monotone", monotone_violation(&col(&|r| r.f_t), |x| 1e-6 * (1.0 + x.abs())).max(0.0), 0.0),
        probe("W_monotone", monotone_violation(&col(&|r| r.w_t), |x| 1e-6 * (1.0 + x.abs())).max(0.0), 0.0),
        probe("W_mass_drift", mass_drift, 1e-6),
        probe("mu_monotone", monotone_violation(&mu_series, |_| 1e-5).max(0.0), 0.0),
        probe("mu_euler_lagrange", el_worst, 1e-6),
        probe("mu_minimizer_positive", if w1_min > 0.0 { 0.0 } else { 1.0 }, 0.0),
        probe("a_monotone", monotone_violation(&a, |_| 1e-8).max(0.0), 0.0),
        probe("a_below_ceiling", (a.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ceiling).max(0.0), 0.0),
        probe("lambda1_lower_bound", (1.0 - 1e-6 - lambda_min).max(0.0), 0.0),
        probe("bounds_finite", if finite { 0.0 } else { 1.0 }, 0.0),
    ];
    let constants = Constants {
        growth_u: max_of(&|r| r.bounds.growth_u),
        growth_r: max_of(&|r| r.bounds.growth_r),
        growth_grad: max_of(&|r| r.bounds.growth_grad),
        ratio_prop61_max: max_of(&|r| r.bounds.ratio_prop61),
        noncollapse_min: rows.iter().map(|r| r.bounds.noncollapse_ratio).fold(f64::INFINITY, f64::min),
        a_ceiling: ceiling,
    };
    Ok(Outcome { rows, probes, constants, trajectory: traj, f_path, w_path })
}
