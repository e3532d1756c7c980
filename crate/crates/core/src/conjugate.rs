//! Backward conjugate heat equations for the dilaton.
//!
//! With `w = e^{−f}` and reversed time `σ = T − t` both versions are linear:
//!
//! ```text
//! ∂w/∂σ = Δw − R w                (F version)
//! ∂w/∂σ = Δw − R w + (n/τ) w      (W version, τ = τ_T + T − t)
//! ```
//!
//! The metric at intermediate times comes from the trajectory's Hermite
//! interpolation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::flow::{FlowKind, Trajectory};
use crate::transverse::{basic_laplacian, grad_norm_sq, integrate, BasicField, TransverseMetric};

/// Which backward equation a path solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    F,
    W,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::F => "F",
            Variant::W => "W",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Variant::F),
            "W" | "w" => Ok(Variant::W),
            other => Err(Error::Parse(format!("unknown conjugate variant `{other}`"))),
        }
    }
}

/// Dilaton `f(t)` on the time grid of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatonPath {
    times: Vec<f64>,
    fields: Vec<BasicField>,
    tau: Option<Vec<f64>>,
}

impl DilatonPath {
    pub fn new(times: Vec<f64>, fields: Vec<BasicField>, tau: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != fields.len() || tau.as_ref().is_some_and(|t| t.len() != times.len()) {
            return Err(Error::Alignment("dilaton path columns differ in length".into()));
        }
        if let Some(tau) = &tau {
            if let Some(&bad) = tau.iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::NonPositiveTau(bad));
            }
        }
        Ok(DilatonPath { times, fields, tau })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[BasicField] {
        &self.fields
    }

    pub fn tau(&self) -> Option<&[f64]> {
        self.tau.as_deref()
    }

    pub fn variant(&self) -> Variant {
        if self.tau.is_some() {
            Variant::W
        } else {
            Variant::F
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Checks that the path lives on the time grid of `traj`.
    pub fn check_alignment(&self, traj: &Trajectory) -> Result<()> {
        if self.times.len() != traj.len() {
            return Err(Error::Alignment(format!("path has {} times, trajectory {}", self.times.len(), traj.len())));
        }
        for (a, st) in self.times.iter().zip(traj.states()) {
            if (a - st.t).abs() > 1e-12 * st.t.abs().max(1.0) {
                return Err(Error::Alignment(format!("time {a} does not match {}", st.t)));
            }
        }
        if let Some(f) = self.fields.first() {
            if f.len() != traj.model().grid().len() {
                return Err(Error::Alignment("field length differs from the grid".into()));
            }
        }
        Ok(())
    }

    /// Replaces one field; used by detector tests.
    pub fn with_field(mut self, k: usize, f: BasicField) -> Self {
        self.fields[k] = f;
        self
    }
}

/// Safety factor on the explicit stability limit of the backward sweep.
const SAFETY: f64 = 0.8;

pub fn solve_backward_f(traj: &Trajectory, f_t: &BasicField) -> Result<DilatonPath> {
    solve(traj, f_t, None::<fn(f64) -> f64>)
}

pub fn solve_backward_w(traj: &Trajectory, f_t: &BasicField, tau_t: f64) -> Result<DilatonPath> {
    if !(tau_t > 0.0) {
        return Err(Error::NonPositiveTau(tau_t));
    }
    // τ(t) = τ_T + T − t is smallest at the terminal time, but guard the
    // whole grid in case the caller hands a trajectory with negative times.
    let t_end = traj.t_end();
    for st in traj.states() {
        let tau = tau_t + t_end - st.t;
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTau(tau));
        }
    }
    solve(traj, f_t, Some(|t: f64| tau_t + t_end - t))
}

/// W-coupled dilaton on a normalized trajectory.
///
/// Rescaling the unnormalized solution to normalized time turns `τ` into
/// `τ(t) = 1 + (τ_T − 1)e^{t−T}` and leaves the equation otherwise unchanged,
/// so `W(g(t), f(t), τ(t))` is the unnormalized entropy at the matching time.
pub fn solve_backward_w_normalized(traj: &Trajectory, f_t: &BasicField, tau_t: f64) -> Result<DilatonPath> {
    if !(tau_t > 0.0) {
        return Err(Error::NonPositiveTau(tau_t));
    }
    if traj.kind() != FlowKind::Normalized {
        return Err(Error::Alignment("expected a normalized trajectory".into()));
    }
    let t_end = traj.t_end();
    solve(traj, f_t, Some(|t: f64| 1.0 + (tau_t - 1.0) * (t - t_end).exp()))
}

/// Metric data needed by one right-hand side evaluation.
struct Frame {
    scale: f64,
    rel_det: Vec<f64>,
    scalar: Vec<f64>,
}

fn frame(traj: &Trajectory, t: f64, log_scratch: &mut Vec<f64>, lap_scratch: &mut [f64]) -> Result<Frame> {
    let model = traj.model();
    let (scale, rel_det) = traj.metric_at(t)?;
    log_scratch.clear();
    for (node, &j) in rel_det.iter().enumerate() {
        if !(j > 0.0) {
            return Err(Error::PositivityLost { node, value: j });
        }
        log_scratch.push(j.ln());
    }
    model.laplacian0().matvec_into(log_scratch, lap_scratch);
    let scalar =
        (0..rel_det.len()).map(|k| (model.background_scalar()[k] - lap_scratch[k]) / (scale * rel_det[k])).collect();
    Ok(Frame { scale, rel_det, scalar })
}

fn rhs(traj: &Trajectory, fr: &Frame, forcing: f64, w: &[f64], out: &mut [f64]) {
    traj.model().laplacian0().matvec_into(w, out);
    for k in 0..w.len() {
        out[k] = out[k] / (fr.scale * fr.rel_det[k]) - fr.scalar[k] * w[k] + forcing * w[k];
    }
}

fn solve(traj: &Trajectory, f_t: &BasicField, tau_of: Option<impl Fn(f64) -> f64>) -> Result<DilatonPath> {
    let model = traj.model();
    let n = model.grid().len();
    if f_t.len() != n {
        return Err(Error::Alignment("terminal dilaton has the wrong length".into()));
    }
    let t_end = traj.t_end();
    let forcing = |t: f64| tau_of.as_ref().map_or(0.0, |tau| model.n() as f64 / tau(t));
    let bound = traj.diffusion_step_bound(SAFETY);

    let states = traj.states();
    let mut fields = vec![f_t.clone(); states.len()];
    let mut w: Vec<f64> = f_t.values().iter().map(|f| (-f).exp()).collect();
    let (mut k1, mut k2, mut k3, mut k4, mut stage) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut logs, mut lap) = (Vec::with_capacity(n), vec![0.0; n]);

    let mut t = t_end;
    let mut fr_start = frame(traj, t, &mut logs, &mut lap).map_err(|e| e.at(t))?;
    for k in (0..states.len() - 1).rev() {
        let t_target = states[k].t;
        let span = t - t_target;
        let sub = (span / bound).ceil().max(1.0) as usize;
        let h = span / sub as f64;
        for i in 0..sub {
            let t0 = t;
            let t_half = t0 - 0.5 * h;
            let t1 = if i + 1 == sub { t_target } else { t0 - h };
            let fr_half = frame(traj, t_half, &mut logs, &mut lap).map_err(|e| e.at(t_half))?;
            let fr_end = frame(traj, t1, &mut logs, &mut lap).map_err(|e| e.at(t1))?;
            rhs(traj, &fr_start, forcing(t0), &w, &mut k1);
            for j in 0..n {
                stage[j] = w[j] + 0.5 * h * k1[j];
            }
            rhs(traj, &fr_half, forcing(t_half), &stage, &mut k2);
            for j in 0..n {
                stage[j] = w[j] + 0.5 * h * k2[j];
            }
            rhs(traj, &fr_half, forcing(t_half), &stage, &mut k3);
            for j in 0..n {
                stage[j] = w[j] + h * k3[j];
            }
            rhs(traj, &fr_end, forcing(t1), &stage, &mut k4);
            for j in 0..n {
                w[j] += h * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0;
                if !(w[j] > 0.0) {
                    return Err(Error::PositivityLost { node: j, value: w[j] }.at(t1));
                }
            }
            t = t1;
            fr_start = fr_end;
        }
        fields[k] = BasicField::new(model.grid().clone(), w.iter().map(|x| -x.ln()).collect())?;
    }
    let times = traj.times();
    let tau = tau_of.map(|tau| times.iter().map(|&t| tau(t)).collect());
    DilatonPath::new(times, fields, tau)
}

/// Largest residual of the backward equation
/// `∂f/∂t = −Δf + |∇f|² − R (+ n/τ)` over interior times and all nodes, with
/// the time derivative taken by central differences on the stored path.
pub fn pde_residual(traj: &Trajectory, path: &DilatonPath, variant: Variant) -> f64 {
    if path.check_alignment(traj).is_err() {
        return f64::INFINITY;
    }
    let states = traj.states();
    let fields = path.fields();
    let n_dim = traj.model().n() as f64;
    let mut worst: f64 = 0.0;
    for k in crate::flow::stencil_range(states.len()) {
        let gt = &states[k].gt;
        let f = &fields[k];
        let lap = basic_laplacian(gt, f);
        let grad = grad_norm_sq(gt, f);
        let forcing = match (variant, path.tau()) {
            (Variant::W, Some(tau)) => n_dim / tau[k],
            (Variant::W, None) => return f64::INFINITY,
            (Variant::F, _) => 0.0,
        };
        for i in 0..f.len() {
            let ft = crate::flow::time_derivative(|j| fields[j].values()[i], k, states.len(), traj.dt());
            let rhs = -lap.values()[i] + grad.values()[i] - states[k].curv.scalar.values()[i] + forcing;
            worst = worst.max((ft - rhs).abs());
        }
    }
    worst
}

/// `∫e^{−f} dμ_{g(t)}` for the F version and `(4πτ)^{−n}∫e^{−f} dμ` for the
/// W version, at every stored time.
pub fn conjugate_mass(traj: &Trajectory, path: &DilatonPath) -> Vec<f64> {
    let model = traj.model();
    traj.states()
        .iter()
        .zip(path.fields())
        .enumerate()
        .map(|(k, (st, f))| {
            let m = integrate(model, &st.gt, &f.map(|x| (-x).exp()));
            match path.tau() {
                Some(tau) => m / (4.0 * PI * tau[k]).powi(model.n() as i32),
                None => m,
            }
        })
        .collect()
}

/// Shifts `f` so that `(4πτ)^{−n}∫e^{−f} dμ_g = 1`.
pub fn normalize_for_w(gt: &TransverseMetric, f: &BasicField, tau: f64) -> BasicField {
    let model = gt.model();
    let m = integrate(model, gt, &f.map(|x| (-x).exp())) / (4.0 * PI * tau).powi(model.n() as i32);
    f.add_scalar(m.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    #[test]
    fn frozen_einstein_closed_forms() {
        let m = ModelSpec::round(32).unwrap();
        let traj = Trajectory::frozen(&m, BasicField::zeros(m.grid()), 1.0, 0.5, 0.05).unwrap();
        let c = 0.3;
        let f_t = BasicField::constant(m.grid(), c);
        let path = solve_backward_f(&traj, &f_t).unwrap();
        for (t, f) in path.times().iter().zip(path.fields()) {
            let exact = c + (0.5 - t);
            assert!(f.values().iter().all(|v| (v - exact).abs() < 1e-10), "{t}");
        }
        let tau_t = 0.4;
        let path = solve_backward_w(&traj, &f_t, tau_t).unwrap();
        for (k, (t, f)) in path.times().iter().zip(path.fields()).enumerate() {
            let tau = tau_t + 0.5 - t;
            assert!((path.tau().unwrap()[k] - tau).abs() < 1e-15);
            let exact = c + (0.5 - t) + (tau_t / tau).ln();
            assert!(f.values().iter().all(|v| (v - exact).abs() < 1e-10), "{t}");
        }
        assert_eq!(path.fields().last().unwrap(), &f_t);
    }

    #[test]
    fn tau_must_stay_positive() {
        let m = ModelSpec::round(16).unwrap();
        let traj = Trajectory::frozen(&m, BasicField::zeros(m.grid()), 1.0, 0.5, 0.1).unwrap();
        let f = BasicField::zeros(m.grid());
        assert!(matches!(solve_backward_w(&traj, &f, 0.0), Err(Error::NonPositiveTau(_))));
        assert!(matches!(solve_backward_w(&traj, &f, -0.2), Err(Error::NonPositiveTau(_))));
    }
}
