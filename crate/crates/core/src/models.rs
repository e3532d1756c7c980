//! Model Sasaki 3-spheres.
//!
//! `S³ ⊂ ℂ²` with leaf coordinate `s = |z₁|²`, Reeb field `ξ = a·H₁ + b·H₂`
//! (`H_i` the coordinate rotations) and contact form
//! `η = η_round / N(s)` where `N(s) = a s + b(1 − s)`. Reeb-invariant data
//! restricted to the torus-invariant class are profiles in `s`.
//!
//! With `c = a + b` the background transverse Kähler form is
//! `ω₀ = c·dη`, which satisfies `Ric^T = ω₀` on the round sphere (`κ = 1`).
//! In the holomorphic leaf chart `w = log(z₁^b z₂^{−a})` the metric
//! component is `Θ₀/2` with `Θ₀ = 2c·s(1−s)/N³`, and the Kähler potential is
//! `Ψ₀ = −(c/b)·log(1 − s)`.
//!
//! Traces are Kähler traces throughout: `Δf = g^{w w̄} ∂_w ∂_w̄ f`,
//! `|∇f|² = g^{w w̄}|∂_w f|²`, `R = g^{w w̄} R_{w w̄}`. The fibre factor of the
//! volume form is fixed so that every background has volume `4π`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::grid::{Dense, Grid};
use crate::transverse::BasicField;

/// Total background volume, identical for every model.
pub const BACKGROUND_VOLUME: f64 = 4.0 * PI;

/// Largest denominator accepted when deciding that `a/b` is rational.
const MAX_DENOMINATOR: i64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Round,
    Weighted,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Round => f.write_str("round"),
            Family::Weighted => f.write_str("weighted"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" | "Round" => Ok(Family::Round),
            "weighted" | "Weighted" => Ok(Family::Weighted),
            other => Err(Error::Parse(format!("unknown model family `{other}`"))),
        }
    }
}

/// Density `ϱ(s)` with `∫_S h dμ = ∫_0^1 h(s) ϱ(s) ds` for basic `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    values: Vec<f64>,
}

impl DensityProfile {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A model Sasaki 3-sphere. Cheap to clone; all data are shared.
#[derive(Clone)]
pub struct ModelSpec {
    inner: Arc<Inner>,
}

struct Inner {
    family: Family,
    a: f64,
    b: f64,
    grid: Arc<Grid>,
    background_potential: BasicField,
    fiber_density: DensityProfile,
    /// `N(s)` at the nodes.
    n_of_s: Vec<f64>,
    /// `Θ₀(s)`.
    theta0: Vec<f64>,
    /// Background scalar curvature.
    r0: Vec<f64>,
    /// `N s(1−s)/c`; `|∇f|²₀ = grad_coef · f_s²`.
    grad_coef: Vec<f64>,
    /// Background Laplacian.
    lap0: Dense,
    /// LU factors of the Laplacian bordered by the mean-zero constraint.
    poisson: LU<f64, Dyn, Dyn>,
    /// `ϱ₀ · w` with `w` the quadrature weights.
    mass_weights: Vec<f64>,
    lambda_max: f64,
    /// Solution of `Δ₀F = R₀ − 1` with `∫F dμ₀ = 0`.
    deviation0: Vec<f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("family", &self.inner.family)
            .field("a", &self.inner.a)
            .field("b", &self.inner.b)
            .field("nodes", &self.inner.grid.len())
            .finish()
    }
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.family == other.inner.family
                && self.inner.a == other.inner.a
                && self.inner.b == other.inner.b
                && self.inner.grid.len() == other.inner.grid.len())
    }
}

/// Builds a model on the given grid.
pub fn build_model(family: Family, a: f64, b: f64, grid: Arc<Grid>) -> Result<ModelSpec> {
    if !(a.is_finite() && b.is_finite()) || a <= 0.0 || b <= 0.0 {
        return Err(Error::InvalidModel(format!("non-positive weight (a = {a}, b = {b})")));
    }
    if family == Family::Round && a != b {
        return Err(Error::InvalidModel(format!("round model needs a = b, got {a} and {b}")));
    }
    // Round means the standard Hopf action; the overall scale of ξ is fixed.
    let (a, b) = if family == Family::Round { (1.0, 1.0) } else { (a, b) };
    let c = a + b;
    let s = grid.s();
    let t = grid.one_minus_s();
    let n = grid.len();

    let n_of_s: Vec<f64> = (0..n).map(|j| a * s[j] + b * t[j]).collect();
    let theta0: Vec<f64> = (0..n).map(|j| 2.0 * c * s[j] * t[j] / n_of_s[j].powi(3)).collect();
    let r0: Vec<f64> = (0..n).map(|j| 2.0 * (2.0 * a * b - b * b + (b * b - a * a) * s[j]) / (c * n_of_s[j])).collect();
    let grad_coef: Vec<f64> = (0..n).map(|j| n_of_s[j] * s[j] * t[j] / c).collect();
    let rho0: Vec<f64> = n_of_s.iter().map(|nn| 4.0 * PI * a * b / (nn * nn)).collect();
    let mass_weights: Vec<f64> = rho0.iter().zip(grid.weights()).map(|(r, w)| r * w).collect();

    // Δ₀f = (N/c)[s(1−s) f'' + (1 − 2s) f' − s(1−s)(N'/N) f'].
    let alpha: Vec<f64> = grad_coef.clone();
    let beta: Vec<f64> = (0..n).map(|j| n_of_s[j] * (t[j] - s[j]) / c - s[j] * t[j] * (a - b) / c).collect();
    let mut lap0 = grid.d2().scale_rows(&alpha).add(&grid.d1().scale_rows(&beta));
    lap0.fix_row_sums();

    let mut bordered = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            bordered[(i, j)] = lap0.get(i, j);
        }
        bordered[(i, n)] = 1.0;
        bordered[(n, i)] = mass_weights[i];
    }
    let poisson = bordered.lu();
    if !poisson.is_invertible() {
        return Err(Error::SolverFailure("background Laplacian is singular".into()));
    }

    let lambda_max = spectral_radius(&lap0);
    let rhs: Vec<f64> = r0.iter().map(|r| r - 1.0).collect();
    let sol = poisson.solve(&DVector::from_iterator(n + 1, rhs.iter().copied().chain([0.0])));
    let deviation0 = sol
        .map(|x| x.as_slice()[..n].to_vec())
        .ok_or_else(|| Error::SolverFailure("background deviation potential".into()))?;
    let background_potential = BasicField::new(grid.clone(), t.iter().map(|&u| -(c / b) * u.ln()).collect())?;

    Ok(ModelSpec {
        inner: Arc::new(Inner {
            family,
            a,
            b,
            grid,
            background_potential,
            fiber_density: DensityProfile { values: rho0 },
            n_of_s,
            theta0,
            r0,
            grad_coef,
            lap0,
            poisson,
            mass_weights,
            lambda_max,
            deviation0,
        }),
    })
}

/// Power iteration on a matrix with real non-positive spectrum.
fn spectral_radius(m: &Dense) -> f64 {
    let n = m.size();
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + ((j * 7919) % 13) as f64 / 13.0).collect();
    let mut est = 0.0;
    for _ in 0..400 {
        let w = m.matvec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        est = norm / vnorm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    est
}

impl ModelSpec {
    /// Convenience constructor that also builds the grid.
    pub fn new(family: Family, a: f64, b: f64, nodes: usize) -> Result<ModelSpec> {
        build_model(family, a, b, Grid::new(nodes)?)
    }

    pub fn round(nodes: usize) -> Result<ModelSpec> {
        Self::new(Family::Round, 1.0, 1.0, nodes)
    }

    pub fn family(&self) -> Family {
        self.inner.family
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.inner.a, self.inner.b)
    }

    /// Transverse complex dimension.
    pub fn n(&self) -> usize {
        1
    }

    /// Einstein constant of the normalised flow.
    pub fn kappa(&self) -> f64 {
        1.0
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.inner.grid
    }

    pub fn background_potential(&self) -> &BasicField {
        &self.inner.background_potential
    }

    pub fn fiber_density(&self) -> &DensityProfile {
        &self.inner.fiber_density
    }

    pub fn n_of_s(&self) -> &[f64] {
        &self.inner.n_of_s
    }

    /// `Θ₀`: twice the background metric component in the leaf chart.
    pub fn theta0(&self) -> &[f64] {
        &self.inner.theta0
    }

    pub fn background_scalar(&self) -> &[f64] {
        &self.inner.r0
    }

    pub fn grad_coef(&self) -> &[f64] {
        &self.inner.grad_coef
    }

    pub fn laplacian0(&self) -> &Dense {
        &self.inner.lap0
    }

    /// Quadrature weights times background density.
    pub fn mass_weights(&self) -> &[f64] {
        &self.inner.mass_weights
    }

    /// Spectral radius of the background Laplacian.
    pub fn lambda_max(&self) -> f64 {
        self.inner.lambda_max
    }

    /// `F₀` with `Ric(g₀) − g₀ = i∂∂̄F₀` and `∫F₀ dμ₀ = 0`.
    pub fn deviation0(&self) -> &[f64] {
        &self.inner.deviation0
    }

    /// Solves `Δ₀u = rhs` with `∫u dμ₀ = 0`. The constant part of `rhs`
    /// that obstructs solvability is absorbed and returned second.
    pub fn solve_poisson0(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let n = rhs.len();
        let mut b = DVector::<f64>::zeros(n + 1);
        for (i, r) in rhs.iter().enumerate() {
            b[i] = *r;
        }
        let x = self.inner.poisson.solve(&b).expect("bordered Laplacian factored at build time");
        (x.as_slice()[..n].to_vec(), x[n])
    }

    /// Ambient point `(z₁, z₂) ∈ S³` as `(x₁, y₁, x₂, y₂)` for leaf coordinate
    /// `s` and fibre angles.
    pub fn ambient_point(s: f64, theta1: f64, theta2: f64) -> [f64; 4] {
        let r1 = s.sqrt();
        let r2 = (1.0 - s).max(0.0).sqrt();
        [r1 * theta1.cos(), r1 * theta1.sin(), r2 * theta2.cos(), r2 * theta2.sin()]
    }

    /// Reeb vector at an ambient point.
    pub fn reeb(&self, p: &[f64; 4]) -> [f64; 4] {
        let (a, b) = self.weights();
        [-a * p[1], a * p[0], -b * p[3], b * p[2]]
    }

    /// Contact form `η = η_round / N` evaluated on a vector at `p`.
    pub fn eta(&self, p: &[f64; 4], v: &[f64; 4]) -> f64 {
        let (a, b) = self.weights();
        let nn = a * (p[0] * p[0] + p[1] * p[1]) + b * (p[2] * p[2] + p[3] * p[3]);
        (p[0] * v[1] - p[1] * v[0] + p[2] * v[3] - p[3] * v[2]) / nn
    }

    /// Components of the covector `ι_ξ dη` at `p` in the ambient basis.
    ///
    /// With `α = η_round`, `η = α/N`: `ι_ξ dη = (ι_ξ dα + α(ξ) dN/N − ξ(N) α/N)/N`.
    pub fn iota_reeb_deta(&self, p: &[f64; 4]) -> [f64; 4] {
        let (a, b) = self.weights();
        let xi = self.reeb(p);
        let nn = a * (p[0] * p[0] + p[1] * p[1]) + b * (p[2] * p[2] + p[3] * p[3]);
        // dα = 2(dx₁∧dy₁ + dx₂∧dy₂).
        let i_dalpha = [-2.0 * xi[1], 2.0 * xi[0], -2.0 * xi[3], 2.0 * xi[2]];
        let alpha = [-p[1], p[0], -p[3], p[2]];
        let alpha_xi = alpha.iter().zip(&xi).map(|(u, v)| u * v).sum::<f64>();
        let dn = [2.0 * a * p[0], 2.0 * a * p[1], 2.0 * b * p[2], 2.0 * b * p[3]];
        let xi_n = dn.iter().zip(&xi).map(|(u, v)| u * v).sum::<f64>();
        let mut out = [0.0; 4];
        for k in 0..4 {
            out[k] = (i_dalpha[k] + alpha_xi * dn[k] / nn - xi_n * alpha[k] / nn) / nn;
        }
        out
    }

    /// Largest residuals of `η(ξ) = 1` and `ι_ξ dη = 0` over points at every
    /// node and the given fibre angles.
    pub fn contact_residuals(&self, angles: &[(f64, f64)]) -> (f64, f64) {
        let mut eta_res: f64 = 0.0;
        let mut iota_res: f64 = 0.0;
        for &s in self.grid().s() {
            for &(t1, t2) in angles {
                let p = Self::ambient_point(s, t1, t2);
                let xi = self.reeb(&p);
                eta_res = eta_res.max((self.eta(&p, &xi) - 1.0).abs());
                let form = self.iota_reeb_deta(&p);
                // Only the restriction to T S³ matters; the form is evaluated on
                // tangent vectors, so project out the radial direction.
                let radial = form.iter().zip(&p).map(|(u, v)| u * v).sum::<f64>();
                for k in 0..4 {
                    iota_res = iota_res.max((form[k] - radial * p[k]).abs());
                }
            }
        }
        (eta_res, iota_res)
    }
}

/// Dimension of the closure of the Reeb orbit through a point with leaf
/// coordinate `s`.
pub fn orbit_closure_rank(model: &ModelSpec, s: f64) -> u32 {
    let (a, b) = model.weights();
    if s <= 0.0 || s >= 1.0 || is_rational(a / b) {
        1
    } else {
        2
    }
}

/// Decides rationality of `x` by continued fractions with a bounded
/// denominator.
pub fn is_rational(x: f64) -> bool {
    rational_approximation(x).is_some()
}

/// Returns `(p, q)` with `p/q = x` to rounding and `q ≤ 10⁴`, if any.
pub fn rational_approximation(x: f64) -> Option<(i64, i64)> {
    if !x.is_finite() || x <= 0.0 {
        return None;
    }
    let tol = 1e-12 * x.max(1.0);
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let ai = r.floor();
        if ai > 1e12 {
            break;
        }
        let ai = ai as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > MAX_DENOMINATOR {
            return None;
        }
        if (h2 as f64 / k2 as f64 - x).abs() <= tol {
            return Some((h2, k2));
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        let frac = r - r.floor();
        if frac == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// Volume density of the metric `gT` in leaf coordinates.
pub fn fiber_density(model: &ModelSpec, gt: &crate::transverse::TransverseMetric) -> Result<DensityProfile> {
    if let Some((node, &value)) = gt.rel_det().iter().enumerate().find(|(_, &j)| !(j > 0.0) || !j.is_finite()) {
        return Err(Error::PositivityLost { node, value });
    }
    let scale = gt.scale();
    let values = model.fiber_density().values().iter().zip(gt.rel_det()).map(|(r, j)| scale * r * j).collect();
    Ok(DensityProfile { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_weights() {
        assert!(ModelSpec::new(Family::Weighted, 1.0, -1.0, 32).is_err());
        assert!(ModelSpec::new(Family::Weighted, 0.0, 1.0, 32).is_err());
        assert!(ModelSpec::new(Family::Round, 1.0, 2.0, 32).is_err());
    }

    #[test]
    fn round_curvature_is_one() {
        let m = ModelSpec::round(64).unwrap();
        for r in m.background_scalar() {
            assert!((r - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn background_volume() {
        for (a, b) in [(1.0, 1.0), (1.0, 2f64.sqrt()), (3.0, 0.5)] {
            let fam = if a == b { Family::Round } else { Family::Weighted };
            let m = ModelSpec::new(fam, a, b, 96).unwrap();
            let vol: f64 = m.mass_weights().iter().sum();
            assert!((vol - BACKGROUND_VOLUME).abs() < 1e-10, "{a} {b} {vol}");
            // Gauss–Bonnet with Kähler trace: ∫R dμ = 4π.
            let total_r: f64 = m.mass_weights().iter().zip(m.background_scalar()).map(|(w, r)| w * r).sum();
            assert!((total_r - BACKGROUND_VOLUME).abs() < 1e-10);
        }
    }

    #[test]
    fn contact_identities_hold() {
        let m = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 64).unwrap();
        let (e, i) = m.contact_residuals(&[(0.0, 0.0), (0.7, 2.1), (3.0, -1.3)]);
        assert!(e < 1e-13 && i < 1e-13, "{e} {i}");
    }

    #[test]
    fn orbit_closures() {
        let round = ModelSpec::round(32).unwrap();
        let irr = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 32).unwrap();
        let rat = ModelSpec::new(Family::Weighted, 2.0, 3.0, 32).unwrap();
        assert_eq!(orbit_closure_rank(&round, 0.3), 1);
        assert_eq!(orbit_closure_rank(&irr, 0.5), 2);
        assert_eq!(orbit_closure_rank(&irr, 0.0), 1);
        assert_eq!(orbit_closure_rank(&irr, 1.0), 1);
        assert_eq!(orbit_closure_rank(&rat, 0.5), 1);
    }

    #[test]
    fn laplacian_spectrum_of_round_sphere() {
        let m = ModelSpec::round(48).unwrap();
        let eig = m.laplacian0().to_dmatrix().complex_eigenvalues();
        let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
        re.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!(re[0].abs() < 1e-9);
        assert!((re[1] + 1.0).abs() < 1e-9);
        assert!((re[2] + 3.0).abs() < 1e-9);
        assert!(eig.iter().all(|z| z.im.abs() < 1e-6));
        assert!((m.lambda_max() / -re[re.len() - 1] - 1.0).abs() < 0.05);
    }
}
