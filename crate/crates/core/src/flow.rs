//! Sasaki–Ricci flow at the potential level.
//!
//! The normalised flow `∂g/∂t = −Ric + g` in the class of the background is
//! the scalar parabolic Monge–Ampère equation
//!
//! ```text
//! ∂φ/∂t = log J + φ − F₀ + c(t),     J = 1 + Δ₀φ,
//! ```
//!
//! where `Δ₀F₀ = R₀ − 1`. The constant `c(t)` only moves `φ` by constants; it
//! is chosen so that `∂φ/∂t` is itself the normalised Ricci potential `u`,
//! which keeps `φ` bounded and convergent.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::transverse::{curvature, BasicField, CurvatureData, TransverseMetric};

/// Fraction of the explicit RK4 stability interval `[−2.78, 0]` used by default.
pub const DEFAULT_SAFETY: f64 = 0.8;
/// Default tolerance on the embedded local error estimate.
pub const DEFAULT_STEP_TOL: f64 = 1e-6;

/// Which time parametrisation a trajectory carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// `∂g/∂t = −Ric + g`.
    Normalized,
    /// `∂g/∂t = −Ric`, obtained as `(1 − t)·g(−log(1 − t))`.
    Unnormalized,
    /// A metric held fixed in time (test backgrounds for the conjugate solvers).
    Frozen,
}

impl FlowKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlowKind::Normalized => "normalized",
            FlowKind::Unnormalized => "unnormalized",
            FlowKind::Frozen => "frozen",
        }
    }
}

impl std::str::FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(FlowKind::Normalized),
            "unnormalized" => Ok(FlowKind::Unnormalized),
            "frozen" => Ok(FlowKind::Frozen),
            other => Err(Error::Parse(format!("unknown flow kind `{other}`"))),
        }
    }
}

/// Snapshot of the flow with cached geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// Potential of the metric in the background class (before scaling).
    pub phi: BasicField,
    /// `∂φ/∂t` of the normalised flow at this metric.
    pub phi_dot: BasicField,
    pub gt: TransverseMetric,
    pub curv: CurvatureData,
    /// Normalised Ricci potential of `g/λ`.
    pub u: BasicField,
    /// `∂J/∂t` in this trajectory's time.
    pub rel_det_dot: Vec<f64>,
    /// `dλ/dt`.
    pub scale_dot: f64,
}

impl FlowState {
    /// State of the normalised flow with potential `phi` at time `t`.
    pub fn normalized(model: &ModelSpec, t: f64, phi: BasicField) -> Result<FlowState> {
        Self::scaled(model, t, phi, 1.0, 0.0, 1.0)
    }

    /// `λ·ω_φ` with `dλ/dt = scale_dot`; `time_factor` converts normalised
    /// time derivatives of `J` into this trajectory's time.
    fn scaled(
        model: &ModelSpec,
        t: f64,
        phi: BasicField,
        scale: f64,
        scale_dot: f64,
        time_factor: f64,
    ) -> Result<FlowState> {
        let j: Vec<f64> = model.laplacian0().matvec(phi.values()).iter().map(|l| 1.0 + l).collect();
        let gt = TransverseMetric::from_parts(model, scale, j)?;
        let curv = curvature(&gt)?;
        let phi_dot = BasicField::new(model.grid().clone(), normalized_rhs(model, phi.values())?)?;
        let u = phi_dot.clone();
        let rel_det_dot = model.laplacian0().matvec(phi_dot.values()).into_iter().map(|v| v * time_factor).collect();
        Ok(FlowState { t, phi, phi_dot, gt, curv, u, rel_det_dot, scale_dot })
    }

    /// Recomputes a stored state of a trajectory of the given kind from its
    /// potential. `scale` is read only for frozen trajectories.
    pub fn rebuild(model: &ModelSpec, kind: FlowKind, t: f64, phi: BasicField, scale: f64) -> Result<FlowState> {
        match kind {
            FlowKind::Normalized => Self::normalized(model, t, phi),
            FlowKind::Unnormalized => {
                let lam = 1.0 - t;
                Self::scaled(model, t, phi, lam, -1.0, 1.0 / lam)
            }
            FlowKind::Frozen => Self::frozen(model, t, phi, scale),
        }
    }

    /// A state whose metric does not move.
    pub fn frozen(model: &ModelSpec, t: f64, phi: BasicField, scale: f64) -> Result<FlowState> {
        let mut st = Self::scaled(model, t, phi, scale, 0.0, 0.0)?;
        st.rel_det_dot.iter_mut().for_each(|v| *v = 0.0);
        Ok(st)
    }
}

/// Right-hand side `log J + φ − F₀ + c` with `∫e^{−rhs} J dμ₀ = 4π`.
pub fn normalized_rhs(model: &ModelSpec, phi: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; phi.len()];
    let mut lap = vec![0.0; phi.len()];
    rhs_into(model, phi, &mut lap, &mut out)?;
    Ok(out)
}

/// Writes the right-hand side into `out` (using `lap` as scratch) and returns
/// the smallest relative determinant.
fn rhs_into(model: &ModelSpec, phi: &[f64], lap: &mut [f64], out: &mut [f64]) -> Result<f64> {
    model.laplacian0().matvec_into(phi, lap);
    let mut jmin = f64::INFINITY;
    for k in 0..phi.len() {
        let j = 1.0 + lap[k];
        if !(j > 0.0) {
            return Err(Error::PositivityLost { node: k, value: j });
        }
        jmin = jmin.min(j);
        out[k] = j.ln() + phi[k] - model.deviation0()[k];
    }
    let c = normalization_constant(model, lap, out);
    out.iter_mut().for_each(|v| *v += c);
    Ok(jmin)
}

/// `C` such that `∫e^{−(v + C)} J dμ₀ = 4π`.
fn normalization_constant(model: &ModelSpec, lap: &[f64], v: &[f64]) -> f64 {
    // Shift by the minimum so the exponentials never overflow.
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut acc = 0.0;
    for k in 0..v.len() {
        acc += model.mass_weights()[k] * (1.0 + lap[k]) * (-(v[k] - vmin)).exp();
    }
    (acc / (4.0 * PI)).ln() - vmin
}

/// Ordered, immutable sequence of states at uniform spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    model: ModelSpec,
    kind: FlowKind,
    dt: f64,
    states: Vec<FlowState>,
}

impl Trajectory {
    pub fn new(model: ModelSpec, kind: FlowKind, dt: f64, states: Vec<FlowState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Alignment("empty trajectory".into()));
        }
        for w in states.windows(2) {
            let gap = w[1].t - w[0].t;
            if !(gap > 0.0) || (gap - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::Alignment(format!("non-uniform spacing {gap} (expected {dt}) at t = {}", w[0].t)));
            }
        }
        Ok(Trajectory { model, kind, dt, states })
    }

    /// Metric `λ·ω_φ` held fixed on `[0, t_end]`.
    pub fn frozen(model: &ModelSpec, phi: BasicField, scale: f64, t_end: f64, dt: f64) -> Result<Self> {
        let steps = step_count(t_end, dt)?;
        let base = FlowState::frozen(model, 0.0, phi, scale)?;
        let states = (0..=steps)
            .map(|k| {
                let mut st = base.clone();
                st.t = k as f64 * dt;
                st
            })
            .collect();
        Self::new(model.clone(), FlowKind::Frozen, dt, states)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[FlowState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.states[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    /// Index of the interval `[t_k, t_{k+1}]` containing `t` and the local
    /// coordinate `θ ∈ [0, 1]`.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (t0, t1) = (self.t_start(), self.t_end());
        let eps = 1e-12 * t1.abs().max(1.0);
        if t < t0 - eps || t > t1 + eps {
            return Err(Error::RangeExceeded { requested: t, available: t1 });
        }
        if self.states.len() == 1 {
            return Ok((0, 0.0));
        }
        let x = ((t - t0) / self.dt).clamp(0.0, (self.states.len() - 1) as f64);
        let k = (x.floor() as usize).min(self.states.len() - 2);
        Ok((k, (x - k as f64).clamp(0.0, 1.0)))
    }

    /// Scale and relative determinant at an arbitrary time, by cubic Hermite
    /// interpolation on the cached values and time derivatives.
    pub fn metric_at(&self, t: f64) -> Result<(f64, Vec<f64>)> {
        let (k, th) = self.locate(t)?;
        if self.states.len() == 1 {
            let s = &self.states[0];
            return Ok((s.gt.scale(), s.gt.rel_det().to_vec()));
        }
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        let h = self.dt;
        let (h00, h10, h01, h11) = hermite(th);
        let scale = h00 * a.gt.scale() + h10 * h * a.scale_dot + h01 * b.gt.scale() + h11 * h * b.scale_dot;
        let j = (0..a.phi.len())
            .map(|i| {
                h00 * a.gt.rel_det()[i]
                    + h10 * h * a.rel_det_dot[i]
                    + h01 * b.gt.rel_det()[i]
                    + h11 * h * b.rel_det_dot[i]
            })
            .collect();
        Ok((scale, j))
    }

    /// Metric, volume factor and scalar curvature at an arbitrary time.
    pub fn geometry_at(&self, t: f64) -> Result<TransverseMetric> {
        let (scale, j) = self.metric_at(t)?;
        TransverseMetric::from_parts(&self.model, scale, j)
    }

    /// Largest stable explicit step for a diffusion `∂w = Δ_g w + …` on this
    /// trajectory near time `t`.
    pub fn diffusion_step_bound(&self, safety: f64) -> f64 {
        let mut worst: f64 = f64::INFINITY;
        for st in &self.states {
            let jmin = st.gt.rel_det().iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.min(st.gt.scale() * jmin);
        }
        safety * 2.78 * worst / self.model.lambda_max()
    }
}

/// Hermite basis functions on `[0, 1]`.
pub(crate) fn hermite(th: f64) -> (f64, f64, f64, f64) {
    let t2 = th * th;
    let t3 = t2 * th;
    (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + th, -2.0 * t3 + 3.0 * t2, t3 - t2)
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_end >= 0.0) || !dt.is_finite() || !t_end.is_finite() {
        return Err(Error::StepRejected { dt, reason: "non-positive time step or horizon".into() });
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::StepRejected { dt, reason: format!("horizon {t_end} is not a multiple of the step") });
    }
    Ok(n as usize)
}

/// Solves `i∂∂̄F = Ric(g) − κ g` with `∫F dμ_g = 0`.
pub fn ricci_deviation_potential(model: &ModelSpec, gt: &TransverseMetric) -> Result<BasicField> {
    let kappa = model.kappa();
    let rhs: Vec<f64> = {
        let r = curvature(gt)?.scalar;
        // Δ₀F = λJ(R − κ).
        (0..r.len()).map(|k| gt.scale() * gt.rel_det()[k] * (r.values()[k] - kappa)).collect()
    };
    let (mut f, obstruction) = model.solve_poisson0(&rhs);
    if obstruction.abs() > 1e-8 {
        return Err(Error::SolverFailure(format!(
            "deviation equation is not solvable in this class (defect {obstruction:e})"
        )));
    }
    let mean = crate::transverse::integrate_values(model, gt, &f) / crate::transverse::volume(model, gt);
    f.iter_mut().for_each(|v| *v -= mean);
    BasicField::new(model.grid().clone(), f)
}

/// Largest normalised flow step for the current metric.
pub fn stability_bound(model: &ModelSpec, gt: &TransverseMetric, safety: f64) -> f64 {
    let jmin = gt.rel_det().iter().copied().fold(f64::INFINITY, f64::min);
    safety * 2.78 * jmin / model.lambda_max()
}

/// Options for the explicit stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub safety: f64,
    pub tol: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { safety: DEFAULT_SAFETY, tol: DEFAULT_STEP_TOL }
    }
}

/// One classical RK4 step of the normalised flow.
pub fn step_normalized(model: &ModelSpec, state: &FlowState, dt: f64) -> Result<FlowState> {
    step_normalized_with(model, state, dt, &StepOptions::default())
}

pub fn step_normalized_with(model: &ModelSpec, state: &FlowState, dt: f64, opts: &StepOptions) -> Result<FlowState> {
    let phi = rk4_raw(model, state, dt, opts)?;
    FlowState::normalized(model, state.t + dt, BasicField::new(model.grid().clone(), phi)?)
}

fn rk4_raw(model: &ModelSpec, state: &FlowState, dt: f64, opts: &StepOptions) -> Result<Vec<f64>> {
    let bound = stability_bound(model, &state.gt, 1.0);
    if !(dt > 0.0) || dt > bound {
        return Err(Error::StepRejected {
            dt,
            reason: format!("outside the explicit stability interval (0, {bound:e}]"),
        });
    }
    let mut work = Rk4Work::new(state.phi.len());
    work.k1.copy_from_slice(state.phi_dot.values());
    let mut y = state.phi.values().to_vec();
    work.step(model, &mut y, dt, opts.tol)?;
    Ok(y)
}

/// Scratch space for allocation-free RK4 steps.
struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
    lap: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Rk4Work {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
            lap: vec![0.0; n],
        }
    }

    /// Advances `y` by `dt` given `k1 = rhs(y)`; on success `k1` holds the
    /// right-hand side at the new point and the smallest `J` there is returned.
    fn step(&mut self, model: &ModelSpec, y: &mut [f64], dt: f64, tol: f64) -> Result<f64> {
        let n = y.len();
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        rhs_into(model, &self.stage, &mut self.lap, &mut self.k2)?;
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        rhs_into(model, &self.stage, &mut self.lap, &mut self.k3)?;
        for i in 0..n {
            self.stage[i] = y[i] + dt * self.k3[i];
        }
        rhs_into(model, &self.stage, &mut self.lap, &mut self.k4)?;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let avg = (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]) / 6.0;
            self.stage[i] = y[i] + dt * avg;
            // Embedded second-order (midpoint) solution.
            err = err.max((dt * (avg - self.k2[i])).abs());
        }
        if err > tol {
            return Err(Error::StepRejected { dt, reason: format!("local error estimate {err:e}") });
        }
        y.copy_from_slice(&self.stage);
        rhs_into(model, y, &mut self.lap, &mut self.k1)
    }
}

/// Integrates the normalised flow on `[0, t_end]`, storing states every `dt`.
pub fn run_flow(model: &ModelSpec, phi0: &BasicField, t_end: f64, dt: f64) -> Result<Trajectory> {
    run_flow_with(model, phi0, t_end, dt, &StepOptions::default())
}

pub fn run_flow_with(
    model: &ModelSpec,
    phi0: &BasicField,
    t_end: f64,
    dt: f64,
    opts: &StepOptions,
) -> Result<Trajectory> {
    let steps = step_count(t_end, dt)?;
    let state = FlowState::normalized(model, 0.0, phi0.clone()).map_err(|e| e.at(0.0))?;
    let mut jmin = state.gt.rel_det().iter().copied().fold(f64::INFINITY, f64::min);
    let mut work = Rk4Work::new(phi0.len());
    work.k1.copy_from_slice(state.phi_dot.values());
    let mut y = state.phi.values().to_vec();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(state);
    let mut t = 0.0;
    for k in 1..=steps {
        let t_target = k as f64 * dt;
        while t < t_target - 1e-14 * t_target.max(1.0) {
            let bound = opts.safety * 2.78 * jmin / model.lambda_max();
            let remaining = t_target - t;
            let sub = (remaining / bound).ceil().max(1.0);
            let h = remaining / sub;
            jmin = work.step(model, &mut y, h, opts.tol).map_err(|e| e.at(t))?;
            t = if sub == 1.0 { t_target } else { t + h };
        }
        let st = FlowState::normalized(model, t_target, BasicField::new(model.grid().clone(), y.clone())?)
            .map_err(|e| e.at(t_target))?;
        states.push(st);
    }
    Trajectory::new(model.clone(), FlowKind::Normalized, dt, states)
}

/// Converts a normalised trajectory into the unnormalised flow
/// `g̃(t) = (1 − t)·g(−log(1 − t))` on `[0, t_max]` with spacing `dt`.
pub fn to_unnormalized(traj: &Trajectory, t_max: f64, dt: f64) -> Result<Trajectory> {
    if traj.kind() != FlowKind::Normalized {
        return Err(Error::Alignment("conversion needs a normalized trajectory".into()));
    }
    if !(t_max < 1.0) {
        return Err(Error::RangeExceeded { requested: t_max, available: 1.0 });
    }
    let steps = step_count(t_max, dt)?;
    let needed = -(1.0 - t_max).ln();
    if needed > traj.t_end() + 1e-12 {
        return Err(Error::RangeExceeded { requested: needed, available: traj.t_end() });
    }
    let model = traj.model().clone();
    let mut states = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let sigma = -(1.0 - t).ln();
        let phi = potential_at(traj, sigma)?;
        let lam = 1.0 - t;
        let st = FlowState::scaled(&model, t, phi, lam, -1.0, 1.0 / lam).map_err(|e| e.at(t))?;
        states.push(st);
    }
    Trajectory::new(model, FlowKind::Unnormalized, dt, states)
}

/// Hermite interpolation of the potential of a normalised trajectory.
pub fn potential_at(traj: &Trajectory, t: f64) -> Result<BasicField> {
    let (k, th) = traj.locate(t)?;
    let grid = traj.model().grid().clone();
    if traj.len() == 1 {
        return Ok(traj.states()[0].phi.clone());
    }
    let (a, b) = (&traj.states()[k], &traj.states()[k + 1]);
    let h = traj.dt();
    let (h00, h10, h01, h11) = hermite(th);
    let v = (0..a.phi.len())
        .map(|i| {
            h00 * a.phi.values()[i]
                + h10 * h * a.phi_dot.values()[i]
                + h01 * b.phi.values()[i]
                + h11 * h * b.phi_dot.values()[i]
        })
        .collect();
    BasicField::new(grid, v)
}

/// Normalised Ricci potential: `g/λ − Ric = i∂∂̄u`, `∫e^{−u} dμ_{g/λ} = 4π`.
pub fn ricci_potential(model: &ModelSpec, state: &FlowState) -> Result<BasicField> {
    ricci_potential_of(model, &state.gt)
}

pub fn ricci_potential_of(model: &ModelSpec, gt: &TransverseMetric) -> Result<BasicField> {
    let j = gt.rel_det();
    let curv = curvature(gt)?;
    // For ĝ = g/λ = J g₀: Δ₀u = J(1 − R̂), R̂ = λR.
    let rhs: Vec<f64> = (0..j.len()).map(|k| j[k] * (1.0 - gt.scale() * curv.scalar.values()[k])).collect();
    let (v, obstruction) = model.solve_poisson0(&rhs);
    if obstruction.abs() > 1e-8 {
        return Err(Error::SolverFailure(format!("Ricci potential defect {obstruction:e}")));
    }
    let lap: Vec<f64> = j.iter().map(|x| x - 1.0).collect();
    let c = normalization_constant(model, &lap, &v);
    BasicField::new(model.grid().clone(), v.into_iter().map(|x| x + c).collect())
}

/// Largest nodal residual of `Δ₀u − J(1 − R̂)`, relative to the size of the
/// right-hand side.
pub fn ricci_potential_residual(model: &ModelSpec, gt: &TransverseMetric, u: &BasicField) -> Result<f64> {
    let j = gt.rel_det();
    let curv = curvature(gt)?;
    let lap = model.laplacian0().matvec(u.values());
    let mut worst: f64 = 0.0;
    for k in 0..j.len() {
        let rhs = j[k] * (1.0 - gt.scale() * curv.scalar.values()[k]);
        worst = worst.max((lap[k] - rhs).abs());
    }
    Ok(worst)
}

/// `(4π)^{−1}∫u e^{−u} dμ` on the normalised metric.
pub fn a_quantity(model: &ModelSpec, state: &FlowState) -> f64 {
    let j = state.gt.rel_det();
    let u = state.u.values();
    let mut acc = 0.0;
    for k in 0..u.len() {
        acc += model.mass_weights()[k] * j[k] * u[k] * (-u[k]).exp();
    }
    acc / (4.0 * PI)
}

/// Upper bound for [`a_quantity`] from `x e^{−x} ≤ e^{−1}`:
/// `a ≤ Vol/(4π e)`.
pub fn a_ceiling(model: &ModelSpec, state: &FlowState) -> f64 {
    crate::transverse::volume(model, &state.gt) / (4.0 * PI * std::f64::consts::E)
}

/// Solution of `y' = y² − y`, the comparison ODE for `min R` under the
/// normalised flow.
pub fn scalar_barrier(y0: f64, t: f64) -> f64 {
    if y0 == 0.0 {
        return 0.0;
    }
    let denom = 1.0 + (1.0 / y0 - 1.0) * t.exp();
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / denom
    }
}

/// Interior indices at which [`time_derivative`] is defined.
pub(crate) fn stencil_range(len: usize) -> std::ops::Range<usize> {
    if len >= 5 {
        2..len - 2
    } else {
        1..len.saturating_sub(1)
    }
}

/// Time derivative at index `k` of a uniformly sampled series: five-point
/// central difference when the series is long enough, three-point otherwise.
pub(crate) fn time_derivative(at: impl Fn(usize) -> f64, k: usize, len: usize, dt: f64) -> f64 {
    if len >= 5 {
        (at(k - 2) - 8.0 * at(k - 1) + 8.0 * at(k + 1) - at(k + 2)) / (12.0 * dt)
    } else {
        (at(k + 1) - at(k - 1)) / (2.0 * dt)
    }
}

/// Largest residual of `∂R/∂t = ΔR + R² − R` measured by finite differences
/// across stored states of a normalised trajectory.
pub fn scalar_evolution_residual(traj: &Trajectory) -> f64 {
    let st = traj.states();
    let mut worst: f64 = 0.0;
    for k in stencil_range(st.len()) {
        let r = &st[k].curv.scalar;
        let lap = crate::transverse::basic_laplacian(&st[k].gt, r);
        for i in 0..r.len() {
            let rdot = time_derivative(|j| st[j].curv.scalar.values()[i], k, st.len(), traj.dt());
            let ri = r.values()[i];
            worst = worst.max((rdot - lap.values()[i] - ri * ri + ri).abs());
        }
    }
    worst
}

/// Largest residual of `∂g̃/∂t = −Ric(g̃)` on an unnormalised trajectory,
/// relative to the metric component.
pub fn unnormalized_residual(traj: &Trajectory) -> f64 {
    let st = traj.states();
    let mut worst: f64 = 0.0;
    for k in stencil_range(st.len()) {
        for i in 0..st[k].phi.len() {
            let gdot = time_derivative(|j| st[j].gt.component()[i], k, st.len(), traj.dt());
            let ric = st[k].curv.ricci[i];
            let scale = st[k].gt.component()[i].max(1e-300);
            worst = worst.max((gdot + ric).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use crate::transverse::volume;

    fn perturbation(model: &ModelSpec, eps: f64) -> BasicField {
        BasicField::from_fn(model.grid(), |s| eps * (s * s * (1.0 - s) + 0.2 * (3.0 * s).sin()))
    }

    #[test]
    fn einstein_is_stationary() {
        let m = ModelSpec::round(48).unwrap();
        let traj = run_flow(&m, &BasicField::zeros(m.grid()), 1.0, 0.1).unwrap();
        for st in traj.states() {
            assert!(st.phi_dot.sup_abs() < 1e-12);
            assert!(st.phi.sup_abs() < 1e-12);
        }
    }

    #[test]
    fn deviation_potential_vanishes_on_round() {
        let m = ModelSpec::round(48).unwrap();
        let f = ricci_deviation_potential(&m, &TransverseMetric::background(&m)).unwrap();
        assert!(f.sup_abs() < 1e-12);
    }

    #[test]
    fn ricci_potential_matches_flow_speed() {
        let m = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 48).unwrap();
        let st = FlowState::normalized(&m, 0.0, perturbation(&m, 0.1)).unwrap();
        let u = ricci_potential(&m, &st).unwrap();
        for k in 0..48 {
            assert!((u.values()[k] - st.u.values()[k]).abs() < 1e-9);
        }
        assert!(ricci_potential_residual(&m, &st.gt, &u).unwrap() < 1e-9);
        let mass: f64 = (0..48).map(|k| m.mass_weights()[k] * st.gt.rel_det()[k] * (-u.values()[k]).exp()).sum();
        assert!((mass / (4.0 * PI) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let m = ModelSpec::round(32).unwrap();
        let st = FlowState::normalized(&m, 0.0, perturbation(&m, 0.1)).unwrap();
        let bound = stability_bound(&m, &st.gt, 1.0);
        assert!(matches!(step_normalized(&m, &st, 2.0 * bound), Err(Error::StepRejected { .. })));
        assert!(step_normalized(&m, &st, 0.5 * bound).is_ok());
    }

    #[test]
    fn volume_is_preserved() {
        let m = ModelSpec::round(32).unwrap();
        let traj = run_flow(&m, &perturbation(&m, 0.2), 1.0, 0.05).unwrap();
        let v0 = volume(&m, &traj.states()[0].gt);
        for st in traj.states() {
            assert!((volume(&m, &st.gt) / v0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unnormalized_einstein_is_linear_in_time() {
        let m = ModelSpec::round(32).unwrap();
        let traj = run_flow(&m, &BasicField::zeros(m.grid()), 2.4, 0.05).unwrap();
        let un = to_unnormalized(&traj, 0.9, 0.05).unwrap();
        for st in un.states() {
            assert!((st.gt.scale() - (1.0 - st.t)).abs() < 1e-14);
            assert!(st.gt.rel_det().iter().all(|j| (j - 1.0).abs() < 1e-12));
        }
        assert!(matches!(to_unnormalized(&traj, 0.95, 0.05), Err(Error::RangeExceeded { .. })));
    }

    #[test]
    fn barrier_solves_its_ode() {
        let (y0, t, h) = (0.6, 0.7, 1e-5);
        let d = (scalar_barrier(y0, t + h) - scalar_barrier(y0, t - h)) / (2.0 * h);
        let y = scalar_barrier(y0, t);
        assert!((d - (y * y - y)).abs() < 1e-8);
        assert_eq!(scalar_barrier(1.0, 3.0), 1.0);
    }
}
