//! Transverse distance, tubes and the non-collapsing diagnostics.
//!
//! Torus orbits are the level sets of `s`, and the quotient line element of
//! `λ J g₀` across them is `λJc/(2N) · ds²/(s(1 − s))`. In the polar angle of
//! the grid `ds/√(s(1 − s)) = dψ`, so the distance between level sets is
//! `|H(ψ₂) − H(ψ₁)|` with `H(ψ) = ∫_0^ψ √(λJc/(2N)) dψ'`. The integrand is
//! smooth on `[0, π]`, and `H`, tube volumes and curvature integrals are
//! evaluated exactly from Chebyshev series.
//!
//! Ambient oracles use the round sphere of radius 2, whose Hopf quotient is
//! the unit sphere carrying `ω₀`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::grid::{psi_of_s, ChebSeries};
use crate::models::{fiber_density, orbit_closure_rank, Family, ModelSpec};
use crate::transverse::{curvature, TransverseMetric};

/// Radius of the ambient round sphere whose quotient is the unit sphere.
pub const AMBIENT_RADIUS: f64 = 2.0;

/// Doubling bound `3^{2n}` of the radius-selection argument.
pub fn doubling_bound(n: usize) -> f64 {
    9f64.powi(n as i32)
}

/// Distance, volume and curvature profiles of one transverse metric.
#[derive(Debug, Clone)]
pub struct TubeGeometry {
    n: usize,
    speed: ChebSeries,
    density: ChebSeries,
    scalar: ChebSeries,
    curvature_density: ChebSeries,
    scalar_nodes: Vec<f64>,
    psi_nodes: Vec<f64>,
    diameter: f64,
    total_volume: f64,
}

impl TubeGeometry {
    pub fn new(model: &ModelSpec, gt: &TransverseMetric) -> Result<Self> {
        let grid = model.grid();
        let (a, b) = model.weights();
        let c = a + b;
        let speed: Vec<f64> =
            (0..grid.len()).map(|k| (gt.scale() * gt.rel_det()[k] * c / (2.0 * model.n_of_s()[k])).sqrt()).collect();
        let density = fiber_density(model, gt)?.values().to_vec();
        let scalar = curvature(gt)?.scalar.into_values();
        let rho_r: Vec<f64> = density.iter().zip(&scalar).map(|(d, r)| d * r).collect();
        let speed = grid.series(&speed);
        let density = grid.series(&density);
        let diameter = speed.antiderivative_psi(PI);
        let total_volume = density.cumulative_s(PI);
        Ok(TubeGeometry {
            n: model.n(),
            speed,
            density,
            scalar: grid.series(&scalar),
            curvature_density: grid.series(&rho_r),
            scalar_nodes: scalar,
            psi_nodes: grid.psi().to_vec(),
            diameter,
            total_volume,
        })
    }

    /// The same distances with the volume density multiplied by `factor`.
    /// Not a metric of the model; used to probe collapsing volumes.
    pub fn with_density_scaled(&self, factor: f64) -> Self {
        let scale =
            |s: &ChebSeries| ChebSeries::from_coefficients(s.coefficients().iter().map(|c| c * factor).collect());
        TubeGeometry {
            density: scale(&self.density),
            curvature_density: scale(&self.curvature_density),
            total_volume: self.total_volume * factor,
            ..self.clone()
        }
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// `H(ψ(s))`, the distance from the pole `s = 0`.
    pub fn height(&self, s: f64) -> f64 {
        self.speed.antiderivative_psi(psi_of_s(s))
    }

    pub fn distance(&self, s1: f64, s2: f64) -> f64 {
        (self.height(s2) - self.height(s1)).abs()
    }

    /// Polar angle at which `H` reaches `h`.
    fn psi_at_height(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        if h >= self.diameter {
            return PI;
        }
        let (mut lo, mut hi) = (0.0, PI);
        let mut psi = PI * h / self.diameter;
        for _ in 0..100 {
            let val = self.speed.antiderivative_psi(psi) - h;
            if val.abs() <= 1e-15 * self.diameter {
                break;
            }
            if val > 0.0 {
                hi = psi;
            } else {
                lo = psi;
            }
            let next = psi - val / self.speed.eval_psi(psi);
            psi = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-16 {
                break;
            }
        }
        psi
    }

    /// Polar-angle interval of the tube of radius `r` about the level set
    /// through `center_s`.
    pub fn tube_interval(&self, center_s: f64, r: f64) -> (f64, f64) {
        let hc = self.height(center_s);
        (self.psi_at_height(hc - r), self.psi_at_height(hc + r))
    }

    pub fn tube_volume(&self, center_s: f64, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let (lo, hi) = self.tube_interval(center_s, r);
        (self.density.cumulative_s(hi) - self.density.cumulative_s(lo)).max(0.0)
    }

    /// Volume of `{r₁ ≤ d^T ≤ r₂}`.
    pub fn annulus_volume(&self, center_s: f64, r1: f64, r2: f64) -> f64 {
        (self.tube_volume(center_s, r2) - self.tube_volume(center_s, r1)).max(0.0)
    }

    /// `∫ R dμ` over `{r₁ ≤ d^T ≤ r₂}`.
    pub fn curvature_integral(&self, center_s: f64, r1: f64, r2: f64) -> f64 {
        let cum = |r: f64| {
            if r <= 0.0 {
                return 0.0;
            }
            let (lo, hi) = self.tube_interval(center_s, r);
            self.curvature_density.cumulative_s(hi) - self.curvature_density.cumulative_s(lo)
        };
        cum(r2) - cum(r1)
    }

    /// Coarea density `dV/dr`: the measure of the level set `{d^T = r}`.
    pub fn level_measure(&self, center_s: f64, r: f64) -> f64 {
        let hc = self.height(center_s);
        [hc - r, hc + r]
            .iter()
            .filter(|h| **h > 0.0 && **h < self.diameter)
            .map(|&h| self.level_measure_at(self.psi_at_height(h)))
            .sum()
    }

    /// Measure of the torus orbit at polar angle `psi` per unit distance.
    fn level_measure_at(&self, psi: f64) -> f64 {
        self.density.eval_psi(psi) * 0.5 * psi.sin() / self.speed.eval_psi(psi)
    }

    /// Largest `|R|` on the tube, over the nodes inside it and its ends.
    pub fn max_abs_curvature(&self, center_s: f64, r: f64) -> f64 {
        let (lo, hi) = self.tube_interval(center_s, r);
        let ends = [self.scalar.eval_psi(lo).abs(), self.scalar.eval_psi(hi).abs()];
        self.psi_nodes
            .iter()
            .zip(&self.scalar_nodes)
            .filter(|(p, _)| **p >= lo && **p <= hi)
            .map(|(_, r)| r.abs())
            .chain(ends)
            .fold(0.0, f64::max)
    }

    /// `Vol(P)` of the level set through `center_s`: its area for an interior
    /// torus, its length for a polar circle.
    pub fn orbit_volume(&self, center_s: f64) -> f64 {
        let psi = psi_of_s(center_s);
        if center_s <= 0.0 || center_s >= 1.0 {
            // V(r) ≈ ρ ψ²/4 and H ≈ g ψ near a pole.
            let g = self.speed.eval_psi(psi);
            self.density.eval_psi(psi) / (4.0 * PI * g * g)
        } else {
            self.level_measure_at(psi)
        }
    }

    /// Distance below which tubes about the level set stay away from the
    /// poles (interior centres) or from the opposite pole.
    pub fn injectivity_cutoff(&self, center_s: f64) -> f64 {
        let hc = self.height(center_s);
        if center_s <= 0.0 || center_s >= 1.0 {
            self.diameter
        } else {
            hc.min(self.diameter - hc)
        }
    }
}

/// Leading tube-volume law about one level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub center_s: f64,
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    /// Dimension of the orbit closure the tubes surround.
    pub q: u32,
    pub fitted_coefficient: f64,
    pub expected_coefficient: f64,
    pub orbit_volume: f64,
}

impl TubeReport {
    pub fn relative_error(&self) -> f64 {
        (self.fitted_coefficient / self.expected_coefficient - 1.0).abs()
    }
}

pub fn transverse_distance(model: &ModelSpec, gt: &TransverseMetric, s1: f64, s2: f64) -> Result<f64> {
    Ok(TubeGeometry::new(model, gt)?.distance(s1, s2))
}

pub fn transverse_diameter(model: &ModelSpec, gt: &TransverseMetric) -> Result<f64> {
    Ok(TubeGeometry::new(model, gt)?.diameter())
}

pub fn tube_volume(model: &ModelSpec, gt: &TransverseMetric, center_s: f64, r: f64) -> Result<f64> {
    Ok(TubeGeometry::new(model, gt)?.tube_volume(center_s, r))
}

/// Fits `V(r)/r^{3−q} = A + B r²` and compares `A` with `π Vol(P)` (`q = 1`)
/// or `2 Vol(P)` (`q = 2`).
///
/// Tubes are built about level sets of `s`. They surround the orbit closure
/// only where the two coincide: at the poles, and on interior tori when the
/// Reeb field is irregular. Other centres are rejected.
pub fn gray_fit(model: &ModelSpec, gt: &TransverseMetric, center_s: f64, radii: &[f64]) -> Result<TubeReport> {
    if !(0.0..=1.0).contains(&center_s) {
        return Err(Error::Unsupported(format!("centre s = {center_s} is outside [0, 1]")));
    }
    let level_dim = if center_s <= 0.0 || center_s >= 1.0 { 1 } else { 2 };
    let q = orbit_closure_rank(model, center_s);
    if q != level_dim {
        return Err(Error::Unsupported(format!(
            "the level set through s = {center_s} has dimension {level_dim} but the orbit closure has dimension {q}"
        )));
    }
    let geo = TubeGeometry::new(model, gt)?;
    let cutoff = geo.injectivity_cutoff(center_s);
    let used: Vec<f64> = radii.iter().copied().filter(|r| *r > 0.0 && *r < cutoff).collect();
    if used.len() < 2 {
        return Err(Error::FitUnstable(format!("{} radii below the cutoff {cutoff}", used.len())));
    }
    let volumes: Vec<f64> = used.iter().map(|&r| geo.tube_volume(center_s, r)).collect();
    if volumes.windows(2).any(|w| w[1] < w[0]) && used.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::FitUnstable("tube volumes decrease with the radius".into()));
    }
    let power = 3 - q as i32;
    // Least squares for y = A + B x with x = r², y = V / r^{3−q}.
    let m = used.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&r, &v) in used.iter().zip(&volumes) {
        let x = r * r;
        let y = v / r.powi(power);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = m * sxx - sx * sx;
    let (intercept, slope) =
        if det.abs() <= 1e-300 { (sy / m, 0.0) } else { ((sxx * sy - sx * sxy) / det, (m * sxy - sx * sy) / det) };
    let r_max = used.iter().copied().fold(0.0, f64::max);
    if !(intercept > 0.0) || (slope * r_max * r_max).abs() > 0.25 * intercept {
        return Err(Error::FitUnstable(format!("intercept {intercept}, slope {slope}")));
    }
    let orbit_volume = geo.orbit_volume(center_s);
    let leading = if q == 1 { PI } else { 2.0 };
    Ok(TubeReport {
        center_s,
        radii: used,
        volumes,
        q,
        fitted_coefficient: intercept,
        expected_coefficient: leading * orbit_volume,
        orbit_volume,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncollapseReport {
    /// `Vol(T(p, r)) / r^{2n}`.
    pub ratio: f64,
    pub max_abs_curvature: f64,
    /// Whether `|R| ≤ 1/r²` on the tube; the ratio says nothing otherwise.
    pub hypothesis_holds: bool,
}

pub fn noncollapse_ratio(model: &ModelSpec, gt: &TransverseMetric, center_s: f64, r: f64) -> Result<NoncollapseReport> {
    TubeGeometry::new(model, gt)?.noncollapse(center_s, r)
}

impl TubeGeometry {
    pub fn noncollapse(&self, center_s: f64, r: f64) -> Result<NoncollapseReport> {
        if !(r > 0.0) {
            return Err(Error::Unsupported(format!("radius must be positive, got {r}")));
        }
        let curv = self.max_abs_curvature(center_s, r);
        Ok(NoncollapseReport {
            ratio: self.tube_volume(center_s, r) / r.powi(2 * self.n as i32),
            max_abs_curvature: curv,
            hypothesis_holds: curv * r * r <= 1.0,
        })
    }

    /// `V(r/2^k) / V(r/2^{k+1})` for `k < depth`.
    pub fn doubling_ratios(&self, center_s: f64, r: f64, depth: usize) -> Vec<f64> {
        (0..depth)
            .map(|k| {
                let rk = r / 2f64.powi(k as i32);
                self.tube_volume(center_s, rk) / self.tube_volume(center_s, 0.5 * rk)
            })
            .collect()
    }
}

/// The three inequalities certified for a selected radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusCertificates {
    /// `max |R| · r'²` on `T(p, r')`; (i) asks for at most 1.
    pub curvature: f64,
    /// `r'^{−2n} V(r')`.
    pub normalized_volume: f64,
    /// `3^{2n} r^{−2n} V(r)`, the bound in (ii).
    pub normalized_bound: f64,
    /// `V(r') / V(r'/2)`; (iii) asks for at most `3^{2n}`.
    pub doubling: f64,
    pub bound: f64,
}

impl RadiusCertificates {
    pub fn curvature_holds(&self) -> bool {
        self.curvature <= 1.0
    }

    pub fn volume_holds(&self) -> bool {
        self.normalized_volume <= self.normalized_bound
    }

    pub fn doubling_holds(&self) -> bool {
        self.doubling <= self.bound
    }

    pub fn all_hold(&self) -> bool {
        self.curvature_holds() && self.volume_holds() && self.doubling_holds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSelection {
    pub r_prime: f64,
    pub halvings: u32,
    pub certificates: RadiusCertificates,
}

/// Deepest dyadic refinement tried before giving up.
const MAX_HALVINGS: u32 = 48;

/// First dyadic radius `r/2^k` whose doubling ratio is at most `3^{2n}`.
pub fn radius_selection(model: &ModelSpec, gt: &TransverseMetric, center_s: f64, r: f64) -> Result<RadiusSelection> {
    let geo = TubeGeometry::new(model, gt)?;
    if !(r > 0.0) {
        return Err(Error::Unsupported(format!("radius must be positive, got {r}")));
    }
    let n2 = 2 * model.n() as i32;
    let bound = doubling_bound(model.n());
    let v_top = geo.tube_volume(center_s, r);
    for k in 0..=MAX_HALVINGS {
        let rp = r / 2f64.powi(k as i32);
        let v = geo.tube_volume(center_s, rp);
        let half = geo.tube_volume(center_s, 0.5 * rp);
        if !(half > 0.0) {
            break;
        }
        let doubling = v / half;
        if doubling <= bound {
            return Ok(RadiusSelection {
                r_prime: rp,
                halvings: k,
                certificates: RadiusCertificates {
                    curvature: geo.max_abs_curvature(center_s, rp) * rp * rp,
                    normalized_volume: v / rp.powi(n2),
                    normalized_bound: bound * v_top / r.powi(n2),
                    doubling,
                    bound,
                },
            });
        }
    }
    Err(Error::NotFound(format!("no dyadic radius below {r} has doubling ratio ≤ {bound}")))
}

/// Annulus and coarea quantities about the minimum point of the Ricci
/// potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub base_s: f64,
    pub k1: i32,
    pub k2: i32,
    /// `Vol(T(k₁, k₂))`, the volume of `{2^{k₁} ≤ d^T ≤ 2^{k₂}}`.
    pub volume: f64,
    /// Slice radii and the level measures there.
    pub r1: f64,
    pub r2: f64,
    pub s_r1: f64,
    pub s_r2: f64,
    /// Whether `S(rᵢ) ≤ 2V/2^{kᵢ}` was achieved.
    pub slice1_ok: bool,
    pub slice2_ok: bool,
    pub curvature_integral: f64,
    pub annulus_volume: f64,
    /// `Vol(T(k₁, k₂)) / Vol(T(k₁ + 2, k₂ − 2))`, when the inner annulus is
    /// non-empty.
    pub inner_ratio: Option<f64>,
    /// Level measures `(r, S(r))` sampled across `[2^{k₁}, 2^{k₂}]`.
    pub level_measures: Vec<(f64, f64)>,
}

/// Points at which slice radii are searched.
const SLICE_SAMPLES: usize = 257;

pub fn annulus_diagnostics(model: &ModelSpec, state: &FlowState, k1: i32, k2: i32) -> Result<AnnulusReport> {
    if k1 >= k2 {
        return Err(Error::DegenerateAnnulus(format!("k1 = {k1} must be below k2 = {k2}")));
    }
    let geo = TubeGeometry::new(model, &state.gt)?;
    let (lo, hi) = (2f64.powi(k1), 2f64.powi(k2));
    if hi > geo.diameter() {
        return Err(Error::DegenerateAnnulus(format!("2^{k2} = {hi} exceeds the diameter {}", geo.diameter())));
    }
    let base_s = model.grid().s()[state.u.argmin()];
    let volume = geo.annulus_volume(base_s, lo, hi);
    if !(volume > 0.0) {
        return Err(Error::DegenerateAnnulus(format!("annulus [{lo}, {hi}] has no volume")));
    }
    let slice = |from: f64, to: f64, k: i32| {
        let target = 2.0 * volume / 2f64.powi(k);
        let mut best = (from, f64::INFINITY);
        for i in 0..SLICE_SAMPLES {
            let r = from + (to - from) * i as f64 / (SLICE_SAMPLES - 1) as f64;
            let m = geo.level_measure(base_s, r);
            if m <= target {
                return (r, m, true);
            }
            if m < best.1 {
                best = (r, m);
            }
        }
        (best.0, best.1, false)
    };
    let (r1, s_r1, slice1_ok) = slice(lo, 2.0 * lo, k1);
    let (r2, s_r2, slice2_ok) = slice(0.5 * hi, hi, k2);
    let inner_ratio =
        (k1 + 2 < k2 - 2).then(|| volume / geo.annulus_volume(base_s, 2f64.powi(k1 + 2), 2f64.powi(k2 - 2)));
    let level_measures = (0..SLICE_SAMPLES)
        .map(|i| {
            let r = lo + (hi - lo) * i as f64 / (SLICE_SAMPLES - 1) as f64;
            (r, geo.level_measure(base_s, r))
        })
        .collect();
    Ok(AnnulusReport {
        base_s,
        k1,
        k2,
        volume,
        r1,
        r2,
        s_r1,
        s_r2,
        slice1_ok,
        slice2_ok,
        curvature_integral: geo.curvature_integral(base_s, r1, r2),
        annulus_volume: geo.annulus_volume(base_s, r1, r2),
        inner_ratio,
        level_measures,
    })
}

/// Smooth cutoff: 1 on `[0, ½]`, 0 on `[1, ∞)`, decreasing between.
pub fn cutoff(x: f64) -> f64 {
    cutoff_with_slope(x).0
}

fn cutoff_with_slope(x: f64) -> (f64, f64) {
    let h = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let dh = |t: f64| if t > 0.0 { (-1.0 / t).exp() / (t * t) } else { 0.0 };
    let (a, b) = (h(1.0 - x), h(x - 0.5));
    if b == 0.0 {
        return (1.0, 0.0);
    }
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let (da, db) = (-dh(1.0 - x), dh(x - 0.5));
    let sum = a + b;
    (a / sum, (da * b - a * db) / (sum * sum))
}

/// Simpson panels per side of the centre in the cutoff integrals.
const CUTOFF_PANELS: usize = 2000;

impl TubeGeometry {
    /// `∫ ψ(d^T/r)² dμ` and `∫ F(ψ, ψ', R) dμ` over the tube, by composite
    /// Simpson in the polar angle on each side of the centre.
    fn cutoff_integral(&self, center_s: f64, r: f64, integrand: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let hc = self.height(center_s);
        let pc = psi_of_s(center_s);
        let (lo, hi) = self.tube_interval(center_s, r);
        let eval = |psi: f64| {
            let d = (self.speed.antiderivative_psi(psi) - hc).abs();
            let (v, dv) = cutoff_with_slope(d / r);
            if v == 0.0 {
                return 0.0;
            }
            let dmu = self.density.eval_psi(psi) * 0.5 * psi.sin();
            integrand(v, dv / r, self.scalar.eval_psi(psi)) * dmu
        };
        let simpson = |a: f64, b: f64| {
            if b <= a {
                return 0.0;
            }
            let m = CUTOFF_PANELS;
            let h = (b - a) / (2 * m) as f64;
            let mut acc = eval(a) + eval(b);
            for i in 1..2 * m {
                acc += eval(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        simpson(lo, pc) + simpson(pc, hi)
    }

    /// Log of the normalising factor `e^C` with `r^{−2n} ∫ u² dμ = (4π)^n`.
    pub fn cutoff_normalization(&self, center_s: f64, r: f64) -> f64 {
        let n = self.n as f64;
        let mass = self.cutoff_integral(center_s, r, |v, _, _| v * v);
        0.5 * (n * (4.0 * PI).ln() + 2.0 * n * r.ln() - mass.ln())
    }

    /// `W(g, f, r²)` for `e^{−f/2} = e^C ψ(d^T/r)`.
    pub fn cutoff_entropy(&self, center_s: f64, r: f64) -> f64 {
        let n = self.n as f64;
        let tau = r * r;
        let c = self.cutoff_normalization(center_s, r);
        // w = u (4πτ)^{−n/2} has unit mass; |∇d|² = ½ in Kähler traces.
        let amp = (c - 0.5 * n * (4.0 * PI * tau).ln()).exp();
        let shift = n * (4.0 * PI * tau).ln() + 2.0 * n;
        self.cutoff_integral(center_s, r, |v, dv, scalar| {
            let w = amp * v;
            let grad = 0.5 * (amp * dv).powi(2);
            let w2 = w * w;
            let log_term = if w2 > 0.0 { w2 * w2.ln() } else { 0.0 };
            tau * (scalar * w2 + 4.0 * grad) - log_term - shift * w2
        })
    }
}

pub fn cutoff_entropy(model: &ModelSpec, gt: &TransverseMetric, center_s: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Unsupported(format!("radius must be positive, got {r}")));
    }
    Ok(TubeGeometry::new(model, gt)?.cutoff_entropy(center_s, r))
}

fn require_round_background(model: &ModelSpec, gt: &TransverseMetric) -> Result<()> {
    if model.family() != Family::Round {
        return Err(Error::Unsupported("ambient distances are closed-form only on the round sphere".into()));
    }
    if gt.scale() != 1.0 || gt.rel_det().iter().any(|j| (j - 1.0).abs() > 1e-12) {
        return Err(Error::Unsupported("ambient oracle needs the background metric".into()));
    }
    Ok(())
}

fn ambient_distance(x: &[f64; 4], y: &[f64; 4]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    AMBIENT_RADIUS * dot.clamp(-1.0, 1.0).acos()
}

fn uniform_sphere(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.map(|x| x / norm);
        }
    }
}

/// Samples per batch; each batch draws from its own stream.
const BATCH: usize = 1 << 14;

/// Runs `work(rng, count)` over batches in parallel and collects the results
/// in batch order.
fn batched<T: Send>(samples: usize, seed: u64, work: impl Fn(&mut ChaCha8Rng, usize) -> T + Sync) -> Vec<T> {
    let batches = samples.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            work(&mut rng, BATCH.min(samples - b * BATCH))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Largest `|h(x) − h(y)| − dist(x, y)` over the sampled pairs.
    pub max_violation: f64,
    /// Largest difference quotient of `h` between adjacent nodes along a
    /// meridian.
    pub max_gradient: f64,
    pub pairs: usize,
}

/// Checks that `h = d^T(z, ·)` is 1-Lipschitz for ambient distance, with
/// pairs drawn globally, locally, and along Reeb orbits.
pub fn lipschitz_check(
    model: &ModelSpec,
    gt: &TransverseMetric,
    center_s: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    require_round_background(model, gt)?;
    let geo = TubeGeometry::new(model, gt)?;
    let hc = geo.height(center_s);
    let h = |p: &[f64; 4]| (geo.height(p[0] * p[0] + p[1] * p[1]) - hc).abs();
    let worst = batched(samples, seed, |rng, count| {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..count {
            let x = uniform_sphere(rng);
            let y = match i % 3 {
                0 => {
                    let t: f64 = rng.random_range(0.0..2.0 * PI);
                    let (sn, cs) = t.sin_cos();
                    [cs * x[0] - sn * x[1], sn * x[0] + cs * x[1], cs * x[2] - sn * x[3], sn * x[2] + cs * x[3]]
                }
                1 => uniform_sphere(rng),
                _ => {
                    let step: [f64; 4] = std::array::from_fn(|k| x[k] + 0.05 * rng.sample::<f64, _>(StandardNormal));
                    let norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                    step.map(|v| v / norm)
                }
            };
            worst = worst.max((h(&x) - h(&y)).abs() - ambient_distance(&x, &y));
        }
        worst
    });
    let s = model.grid().s();
    let mut grad: f64 = 0.0;
    for i in 0..s.len() - 1 {
        if (s[i] - center_s) * (s[i + 1] - center_s) < 0.0 {
            continue;
        }
        let x = ModelSpec::ambient_point(s[i], 0.0, 0.0);
        let y = ModelSpec::ambient_point(s[i + 1], 0.0, 0.0);
        grad = grad.max((h(&x) - h(&y)).abs() / ambient_distance(&x, &y));
    }
    Ok(LipschitzReport {
        max_violation: worst.into_iter().fold(f64::NEG_INFINITY, f64::max),
        max_gradient: grad,
        pairs: samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicTubeReport {
    pub radius: f64,
    /// Exact volume of the transverse tube.
    pub transverse_volume: f64,
    /// Monte Carlo volume of the geodesic tube about the orbit.
    pub geodesic_volume: f64,
    /// Monte Carlo volume of the symmetric difference of the two tubes.
    pub symmetric_difference: f64,
    pub samples: usize,
}

impl GeodesicTubeReport {
    pub fn relative_difference(&self) -> f64 {
        self.symmetric_difference / self.geodesic_volume
    }
}

/// Compares the transverse tube about a polar Hopf circle with the ambient
/// geodesic tube about the same circle, by uniform sampling of the sphere.
pub fn geodesic_tube_mc(
    model: &ModelSpec,
    gt: &TransverseMetric,
    center_s: f64,
    r: f64,
    samples: usize,
    seed: u64,
) -> Result<GeodesicTubeReport> {
    require_round_background(model, gt)?;
    if center_s != 0.0 && center_s != 1.0 {
        return Err(Error::Unsupported("geodesic tubes are sampled about the polar circles only".into()));
    }
    if samples == 0 {
        return Err(Error::Unsupported("need at least one sample".into()));
    }
    let geo = TubeGeometry::new(model, gt)?;
    let (lo, hi) = geo.tube_interval(center_s, r);
    let (s_lo, s_hi) = (crate::grid::s_of_psi(lo), crate::grid::s_of_psi(hi));
    let counts = batched(samples, seed, |rng, count| {
        let (mut geo_in, mut diff) = (0usize, 0usize);
        for _ in 0..count {
            let p = uniform_sphere(rng);
            let s = p[0] * p[0] + p[1] * p[1];
            let in_transverse = s >= s_lo && s <= s_hi;
            // The polar circle is {z₁ = 0} or {z₂ = 0}; the nearest point on it
            // is the normalised projection, at angle acos |z₂| or acos |z₁|.
            let proj = if center_s == 0.0 { (p[2] * p[2] + p[3] * p[3]).sqrt() } else { s.sqrt() };
            let in_geodesic = AMBIENT_RADIUS * proj.clamp(-1.0, 1.0).acos() <= r;
            geo_in += in_geodesic as usize;
            diff += (in_transverse != in_geodesic) as usize;
        }
        (geo_in, diff)
    });
    let (geo_in, diff) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let total = geo.total_volume();
    Ok(GeodesicTubeReport {
        radius: r,
        transverse_volume: geo.tube_volume(center_s, r),
        geodesic_volume: total * geo_in as f64 / samples as f64,
        symmetric_difference: total * diff as f64 / samples as f64,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transverse::BasicField;

    fn round_geo(n: usize) -> (ModelSpec, TubeGeometry) {
        let m = ModelSpec::round(n).unwrap();
        let g = TubeGeometry::new(&m, &TransverseMetric::background(&m)).unwrap();
        (m, g)
    }

    #[test]
    fn round_distance_is_polar_angle() {
        let (_, g) = round_geo(64);
        for &(a, b) in &[(0.1, 0.7), (0.0, 1.0), (0.3, 0.3)] {
            assert!((g.distance(a, b) - (psi_of_s(b) - psi_of_s(a)).abs()).abs() < 1e-13);
        }
        assert!((g.diameter() - PI).abs() < 1e-13);
        assert!((g.total_volume() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn round_tube_about_pole() {
        let (_, g) = round_geo(64);
        for &r in &[0.05f64, 0.5, 2.0] {
            let exact = 4.0 * PI * (0.5 * r).sin().powi(2);
            assert!((g.tube_volume(0.0, r) - exact).abs() < 1e-12);
        }
        assert_eq!(g.tube_volume(0.3, 0.0), 0.0);
        assert!((g.tube_volume(0.3, 10.0) - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.2), 1.0);
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(1.0), 0.0);
        assert!(cutoff(0.75) > 0.0 && cutoff(0.75) < 1.0);
        let h = 1e-6;
        let (_, slope) = cutoff_with_slope(0.7);
        assert!(((cutoff(0.7 + h) - cutoff(0.7 - h)) / (2.0 * h) - slope).abs() < 1e-6);
    }

    #[test]
    fn scaled_metric_scales_distances() {
        let m = ModelSpec::round(48).unwrap();
        let phi = BasicField::from_fn(m.grid(), |s| 0.1 * s * s);
        let gt = crate::transverse::metric_from_potential(&m, &phi).unwrap();
        let g1 = TubeGeometry::new(&m, &gt).unwrap();
        let g4 = TubeGeometry::new(&m, &gt.scaled(4.0).unwrap()).unwrap();
        assert!((g4.diameter() - 2.0 * g1.diameter()).abs() < 1e-12);
    }
}
