//! Gauge transport by the flow of `−½∇f`.
//!
//! The transported maps fix the torus action, so they act on the leaf
//! coordinate alone. Pulled-back metrics are no longer Kähler for the fixed
//! complex structure, so they are stored as warped metrics
//!
//! ```text
//! h = (ā / P) ds² + (b̄ P) dy²,   P = s(1 − s)
//! ```
//!
//! with `ā`, `b̄` smooth and positive up to the poles. Real curvature and
//! Hessians of this form are converted back to Kähler traces
//! (`R = K`, `Δ = ½Δ_h`, `|∇f|² = ½|df|²_h`).

use std::f64::consts::PI;

use crate::conjugate::{DilatonPath, Variant};
use crate::error::{Error, Result};
use crate::flow::{hermite, stencil_range, time_derivative, FlowKind, Trajectory};
use crate::grid::Grid;
use crate::models::ModelSpec;
use crate::transverse::{basic_laplacian, grad_norm_sq, BasicField, TransverseMetric};

/// Rotationally symmetric metric `(ā/P) ds² + b̄ P dy²` on the leaf space.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedMetric {
    pub radial: Vec<f64>,
    pub angular: Vec<f64>,
}

impl WarpedMetric {
    /// The Kähler metric `λ J g₀` in warped form.
    pub fn from_transverse(gt: &TransverseMetric) -> Self {
        let model = gt.model();
        let (a, b) = model.weights();
        let c = a + b;
        let n = model.n_of_s();
        let radial = (0..n.len()).map(|k| gt.scale() * gt.rel_det()[k] * c / (2.0 * n[k])).collect();
        let angular = (0..n.len()).map(|k| 2.0 * c * gt.scale() * gt.rel_det()[k] / n[k].powi(3)).collect();
        WarpedMetric { radial, angular }
    }
}

/// Curvature and operators of a warped metric, in Kähler normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedGeometry {
    pub scalar: Vec<f64>,
    /// `∂_s log ā`.
    pub radial_log_ds: Vec<f64>,
    /// `∂_s log b̄`.
    pub angular_log_ds: Vec<f64>,
}

fn p_and_dp(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let (s, t) = (grid.s(), grid.one_minus_s());
    ((0..s.len()).map(|k| s[k] * t[k]).collect(), (0..s.len()).map(|k| t[k] - s[k]).collect())
}

pub fn warped_geometry(grid: &Grid, h: &WarpedMetric) -> WarpedGeometry {
    let n = grid.len();
    let (p, dp) = p_and_dp(grid);
    let (a, b) = (&h.radial, &h.angular);
    let db = grid.derivative(b);
    let root: Vec<f64> = (0..n).map(|k| (a[k] * b[k]).sqrt()).collect();
    // K = −(ab)^{−1/2} d/ds[(b'P + bP') / (2(ab)^{1/2})].
    let inner: Vec<f64> = (0..n).map(|k| (db[k] * p[k] + b[k] * dp[k]) / (2.0 * root[k])).collect();
    let d_inner = grid.derivative(&inner);
    let scalar = (0..n).map(|k| -d_inner[k] / root[k]).collect();
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    WarpedGeometry { scalar, radial_log_ds: grid.derivative(&la), angular_log_ds: grid.derivative(&lb) }
}

/// `Δ f` (Kähler normalisation) for a warped metric.
pub fn warped_laplacian(grid: &Grid, h: &WarpedMetric, f: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let (p, _) = p_and_dp(grid);
    let fs = grid.derivative(f);
    let flux: Vec<f64> = (0..n).map(|k| p[k] * (h.angular[k] / h.radial[k]).sqrt() * fs[k]).collect();
    let dflux = grid.derivative(&flux);
    (0..n).map(|k| 0.5 * dflux[k] / (h.radial[k] * h.angular[k]).sqrt()).collect()
}

/// `|∇f|²` (Kähler normalisation) for a warped metric.
pub fn warped_grad_norm_sq(grid: &Grid, h: &WarpedMetric, f: &[f64]) -> Vec<f64> {
    let (p, _) = p_and_dp(grid);
    let fs = grid.derivative(f);
    (0..fs.len()).map(|k| 0.5 * p[k] * fs[k] * fs[k] / h.radial[k]).collect()
}

/// `∫ field dμ_h`, with the fibre factor of the model.
pub fn warped_integrate(model: &ModelSpec, h: &WarpedMetric, field: &[f64]) -> f64 {
    let (a, b) = model.weights();
    let fibre = 4.0 * PI * a * b / (a + b);
    let grid = model.grid();
    let v: Vec<f64> = (0..field.len()).map(|k| field[k] * (h.radial[k] * h.angular[k]).sqrt()).collect();
    fibre * grid.quadrature(&v)
}

/// `F` evaluated on a warped metric.
pub fn warped_energy(model: &ModelSpec, h: &WarpedMetric, f: &[f64]) -> f64 {
    let grid = model.grid();
    let geo = warped_geometry(grid, h);
    let grad = warped_grad_norm_sq(grid, h, f);
    let v: Vec<f64> = (0..f.len()).map(|k| (geo.scalar[k] + grad[k]) * (-f[k]).exp()).collect();
    warped_integrate(model, h, &v)
}

/// Transported data on the time grid of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugePath {
    pub times: Vec<f64>,
    /// Image `σ_t(s_i)` of every node.
    pub maps: Vec<Vec<f64>>,
    /// `σ_t(s_i) − s_i`.
    pub displacement: Vec<Vec<f64>>,
    /// `logit σ_t(s_i) − logit s_i`, the transported variable. It keeps
    /// `σ(1 − σ)` accurate at the poles.
    pub logit_shift: Vec<Vec<f64>>,
    /// Reeb component of the generating field; zero for basic dilatons.
    pub fiber_shift: Vec<Vec<f64>>,
    pub pulled_metric: Vec<WarpedMetric>,
    pub pulled_f: Vec<BasicField>,
}

/// `f_t` from the backward equation, used for Hermite interpolation in time.
fn dilaton_rate(gt: &TransverseMetric, scalar: &BasicField, f: &BasicField, forcing: f64) -> Vec<f64> {
    let lap = basic_laplacian(gt, f);
    let grad = grad_norm_sq(gt, f);
    (0..f.len()).map(|k| -lap.values()[k] + grad.values()[k] - scalar.values()[k] + forcing).collect()
}

struct Sampler<'a> {
    traj: &'a Trajectory,
    path: &'a DilatonPath,
    rates: Vec<Vec<f64>>,
}

impl Sampler<'_> {
    /// Rate of the logit shift `w = logit σ − logit s` at time `t`. The pole
    /// factor `σ(1 − σ)` of `dσ/dt = −½ (∇f)^s` cancels, so the rate is
    /// smooth and bounded.
    fn logit_rate(&self, t: f64, w: &[f64], out: &mut [f64]) -> Result<()> {
        let model = self.traj.model();
        let grid = model.grid();
        let states = self.traj.states();
        let dt = self.traj.dt();
        let pos = ((t - states[0].t) / dt).clamp(0.0, (states.len() - 1) as f64);
        let k = (pos.floor() as usize).min(states.len() - 2);
        let th = pos - k as f64;
        let (h00, h10, h01, h11) = hermite(th);
        let (fa, fb) = (self.path.fields()[k].values(), self.path.fields()[k + 1].values());
        let (ra, rb) = (&self.rates[k], &self.rates[k + 1]);
        if is_flat(fa) && is_flat(fb) && is_flat(ra) && is_flat(rb) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        let f: Vec<f64> =
            (0..fa.len()).map(|i| h00 * fa[i] + h10 * dt * ra[i] + h01 * fb[i] + h11 * dt * rb[i]).collect();
        let fs = grid.derivative(&f);
        let (scale, j) = self.traj.metric_at(t)?;
        let (a, b) = model.weights();
        let c = a + b;
        for (i, o) in out.iter_mut().enumerate() {
            let (sig, rest) = logistic_shift(grid.s()[i], grid.one_minus_s()[i], w[i]);
            *o = -(a * sig + b * rest) / c * grid.interpolate(&fs, sig) / (scale * grid.interpolate(&j, sig));
        }
        Ok(())
    }
}

/// `(σ, 1 − σ)` for `logit σ = logit s + w`, both to full relative precision.
fn logistic_shift(s: f64, r: f64, w: f64) -> (f64, f64) {
    let e = w.exp();
    let den = r + s * e;
    (s * e / den, r / den)
}

fn is_flat(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// RK4 substeps per stored interval.
const SUBSTEPS: usize = 2;

pub fn transport(traj: &Trajectory, path: &DilatonPath) -> Result<GaugePath> {
    path.check_alignment(traj)?;
    let model = traj.model();
    let grid = model.grid();
    let states = traj.states();
    let n_dim = model.n() as f64;
    let rates: Vec<Vec<f64>> = states
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let forcing = match (path.variant(), path.tau()) {
                (Variant::W, Some(tau)) => n_dim / tau[k],
                _ => 0.0,
            };
            dilaton_rate(&st.gt, &st.curv.scalar, &path.fields()[k], forcing)
        })
        .collect();
    let sampler = Sampler { traj, path, rates };

    let n = grid.len();
    let mut x = vec![0.0; n];
    let mut shifts = vec![x.clone()];
    let (mut k1, mut k2, mut k3, mut k4, mut stage) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..states.len() - 1 {
        let h = traj.dt() / SUBSTEPS as f64;
        for sub in 0..SUBSTEPS {
            let t = states[k].t + sub as f64 * h;
            sampler.logit_rate(t, &x, &mut k1)?;
            for i in 0..n {
                stage[i] = x[i] + 0.5 * h * k1[i];
            }
            sampler.logit_rate(t + 0.5 * h, &stage, &mut k2)?;
            for i in 0..n {
                stage[i] = x[i] + 0.5 * h * k2[i];
            }
            sampler.logit_rate(t + 0.5 * h, &stage, &mut k3)?;
            for i in 0..n {
                stage[i] = x[i] + h * k3[i];
            }
            sampler.logit_rate(t + h, &stage, &mut k4)?;
            for i in 0..n {
                x[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
            }
        }
        check_monotone(grid, &x).map_err(|e| e.at(states[k + 1].t))?;
        shifts.push(x.clone());
    }

    let mut pulled_metric = Vec::with_capacity(states.len());
    let mut pulled_f = Vec::with_capacity(states.len());
    for (k, w) in shifts.iter().enumerate() {
        let (h, f) = pull_back(model, &states[k].gt, &path.fields()[k], w)?;
        pulled_metric.push(h);
        pulled_f.push(f);
    }
    let (s, r) = (grid.s(), grid.one_minus_s());
    let maps = shifts.iter().map(|w| (0..n).map(|i| logistic_shift(s[i], r[i], w[i]).0).collect()).collect();
    let displacement = shifts
        .iter()
        .map(|w| (0..n).map(|i| s[i] * r[i] * w[i].exp_m1() / (r[i] + s[i] * w[i].exp())).collect())
        .collect();
    Ok(GaugePath {
        times: traj.times(),
        fiber_shift: vec![vec![0.0; n]; shifts.len()],
        maps,
        displacement,
        logit_shift: shifts,
        pulled_metric,
        pulled_f,
    })
}

/// The map stays a diffeomorphism as long as its images stay ordered.
fn check_monotone(grid: &Grid, w: &[f64]) -> Result<()> {
    if let Some(node) = (0..w.len()).find(|&i| !w[i].is_finite()) {
        return Err(Error::MonotonicityLost { t: 0.0, node });
    }
    let (s, r) = (grid.s(), grid.one_minus_s());
    let img: Vec<f64> = (0..w.len()).map(|i| logistic_shift(s[i], r[i], w[i]).0).collect();
    if let Some(node) = (1..w.len()).find(|&i| !(img[i] > img[i - 1])) {
        return Err(Error::MonotonicityLost { t: 0.0, node });
    }
    Ok(())
}

/// Order of the spectral filter applied before composing with a map.
const FILTER_ORDER: i32 = 8;

/// Pull-back of `(g, f)` along the leaf map with `logit σ(s) = logit s + w(s)`.
pub fn pull_back(
    model: &ModelSpec,
    gt: &TransverseMetric,
    f: &BasicField,
    w: &[f64],
) -> Result<(WarpedMetric, BasicField)> {
    let grid = model.grid();
    let base = WarpedMetric::from_transverse(gt);
    if w.iter().all(|x| *x == 0.0) {
        return Ok((base, f.clone()));
    }
    // Composition aliases rounding noise in the top modes into the curvature,
    // so the source profiles are filtered first.
    let base = WarpedMetric {
        radial: grid.filtered(&base.radial, FILTER_ORDER),
        angular: grid.filtered(&base.angular, FILTER_ORDER),
    };
    let f_src = grid.filtered(f.values(), FILTER_ORDER);
    // Nodes are transported independently, so their step errors arrive as
    // node-to-node noise.
    let w = grid.filtered(w, FILTER_ORDER);
    let dw = grid.derivative(&w);
    let (s, r) = (grid.s(), grid.one_minus_s());
    let n = grid.len();
    let mut radial = Vec::with_capacity(n);
    let mut angular = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for k in 0..n {
        let (y, _) = logistic_shift(s[k], r[k], w[k]);
        // q = σ(1 − σ) / (s(1 − s)) and σ' = q (1 + s(1 − s) w').
        let den = r[k] + s[k] * w[k].exp();
        let q = w[k].exp() / (den * den);
        let ds = q * (1.0 + s[k] * r[k] * dw[k]);
        radial.push(grid.interpolate(&base.radial, y) * ds * ds / q);
        angular.push(grid.interpolate(&base.angular, y) * q);
        images.push(y);
    }
    if let Some(node) = (0..n).find(|&k| !(radial[k] > 0.0 && angular[k] > 0.0)) {
        return Err(Error::PositivityLost { node, value: radial[node].min(angular[node]) });
    }
    let fv = images.iter().map(|&y| grid.interpolate(&f_src, y)).collect();
    Ok((WarpedMetric { radial, angular }, BasicField::new(grid.clone(), fv)?))
}

/// Largest residual of the gradient-flow system
/// `∂h̄ = −(Ric + D²f̄)`, `∂f̄ = −Δf̄ − R (+ n/τ)` on the pulled-back data.
pub fn check_gradient_flow_form(traj: &Trajectory, path: &DilatonPath, gauge: &GaugePath) -> Result<f64> {
    if traj.kind() != FlowKind::Unnormalized {
        return Err(Error::Unsupported("gradient-flow form needs an unnormalized trajectory".into()));
    }
    let model = traj.model();
    let grid = model.grid();
    let (p, dp) = p_and_dp(grid);
    let len = gauge.times.len();
    let n_dim = model.n() as f64;
    let log_a: Vec<Vec<f64>> = gauge.pulled_metric.iter().map(|h| h.radial.iter().map(|x| x.ln()).collect()).collect();
    let log_b: Vec<Vec<f64>> = gauge.pulled_metric.iter().map(|h| h.angular.iter().map(|x| x.ln()).collect()).collect();
    let mut worst: f64 = 0.0;
    for k in stencil_range(len) {
        let h = &gauge.pulled_metric[k];
        let f = gauge.pulled_f[k].values();
        let geo = warped_geometry(grid, h);
        let lap = warped_laplacian(grid, h, f);
        let fs = grid.derivative(f);
        let fss = grid.second_derivative(f);
        let forcing = match (path.variant(), path.tau()) {
            (Variant::W, Some(tau)) => n_dim / tau[k],
            _ => 0.0,
        };
        for i in 0..f.len() {
            let a = h.radial[i];
            let at = time_derivative(|j| log_a[j][i], k, len, traj.dt());
            let bt = time_derivative(|j| log_b[j][i], k, len, traj.dt());
            let ft = time_derivative(|j| gauge.pulled_f[j].values()[i], k, len, traj.dt());
            let kk = geo.scalar[i];
            let hess_rr = p[i] / a * (fss[i] - 0.5 * geo.radial_log_ds[i] * fs[i]) + dp[i] * fs[i] / (2.0 * a);
            let hess_yy = (p[i] * geo.angular_log_ds[i] + dp[i]) * fs[i] / (2.0 * a);
            let r1 = at + kk + hess_rr;
            let r2 = bt + kk + hess_yy;
            let r3 = ft + lap[i] + kk - forcing;
            worst = worst.max(r1.abs()).max(r2.abs()).max(r3.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// `max_t |F(g, f) − F(ρ*g, ρ*f)|`.
    pub energy: f64,
    /// `max_t max_s |R(ρ*g) − ρ*R(g)|`.
    pub scalar: f64,
    /// `max_t |∫e^{−ρ*f} dμ_{ρ*g} − ∫e^{−f} dμ_g|`.
    pub mass: f64,
}

pub fn check_diff_invariance(traj: &Trajectory, path: &DilatonPath, gauge: &GaugePath) -> Result<InvarianceReport> {
    let model = traj.model();
    let grid = model.grid();
    let mut report = InvarianceReport { energy: 0.0, scalar: 0.0, mass: 0.0 };
    for (k, st) in traj.states().iter().enumerate() {
        let h = &gauge.pulled_metric[k];
        let fbar = gauge.pulled_f[k].values();
        let f = &path.fields()[k];
        let base = crate::functionals::energy_f(model, &st.gt, f)?;
        report.energy = report.energy.max((warped_energy(model, h, fbar) - base).abs());
        let geo = warped_geometry(grid, h);
        for (i, &y) in gauge.maps[k].iter().enumerate() {
            let moved = grid.interpolate(st.curv.scalar.values(), y);
            report.scalar = report.scalar.max((geo.scalar[i] - moved).abs());
        }
        let m0 = crate::transverse::integrate(model, &st.gt, &f.map(|x| (-x).exp()));
        let e: Vec<f64> = fbar.iter().map(|x| (-x).exp()).collect();
        report.mass = report.mass.max((warped_integrate(model, h, &e) - m0).abs());
    }
    Ok(report)
}

/// Worst of `|σ(σ⁻¹(s_i)) − s_i|` and `|σ⁻¹(σ(s_i)) − s_i|` over all maps.
pub fn inverse_composition_error(grid: &Grid, gauge: &GaugePath) -> f64 {
    let mut worst: f64 = 0.0;
    for sigma in &gauge.maps {
        let inv = |y: f64| invert(grid, sigma, y);
        for (i, &s) in grid.s().iter().enumerate() {
            worst = worst.max((grid.interpolate(sigma, inv(s)) - s).abs());
            worst = worst.max((inv(sigma[i]) - s).abs());
        }
    }
    worst
}

/// Solves `σ(x) = y` by safeguarded Newton on the interpolant.
fn invert(grid: &Grid, sigma: &[f64], y: f64) -> f64 {
    let ds = grid.derivative(sigma);
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x = y;
    for _ in 0..100 {
        let v = grid.interpolate(sigma, x) - y;
        if v.abs() < 1e-15 {
            break;
        }
        if v > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = grid.interpolate(&ds, x);
        let next = x - v / d;
        x = if next > lo && next < hi && d > 0.0 { next } else { 0.5 * (lo + hi) };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use crate::transverse::{curvature, metric_from_potential};

    #[test]
    fn warped_form_matches_kahler() {
        let m = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 64).unwrap();
        let phi = BasicField::from_fn(m.grid(), |s| 0.1 * (s * s - s * s * s) + 0.05 * s);
        let g = metric_from_potential(&m, &phi).unwrap().scaled(0.7).unwrap();
        let h = WarpedMetric::from_transverse(&g);
        let geo = warped_geometry(m.grid(), &h);
        let r = curvature(&g).unwrap().scalar;
        let f = BasicField::from_fn(m.grid(), |s| (3.0 * s).cos() + s * s);
        let lap = basic_laplacian(&g, &f);
        let wl = warped_laplacian(m.grid(), &h, f.values());
        let grad = grad_norm_sq(&g, &f);
        let wg = warped_grad_norm_sq(m.grid(), &h, f.values());
        for k in 0..64 {
            assert!((geo.scalar[k] - r.values()[k]).abs() < 1e-8, "{k}");
            assert!((wl[k] - lap.values()[k]).abs() < 1e-8, "{k}");
            assert!((wg[k] - grad.values()[k]).abs() < 1e-10, "{k}");
        }
        let vol = crate::transverse::volume(&m, &g);
        assert!((warped_integrate(&m, &h, &[1.0; 64]) - vol).abs() < 1e-10);
    }

    #[test]
    fn identity_map_changes_nothing() {
        let m = ModelSpec::round(32).unwrap();
        let g = TransverseMetric::background(&m);
        let f = BasicField::from_fn(m.grid(), |s| s * s);
        let (h, fb) = pull_back(&m, &g, &f, &[0.0; 32]).unwrap();
        assert_eq!(h, WarpedMetric::from_transverse(&g));
        assert_eq!(fb, f);
    }
}
