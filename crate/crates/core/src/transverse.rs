//! Discrete transverse Kähler calculus on leaf-space profiles.
//!
//! A metric in the class of the background is `g = λ(ω₀ + i∂∂̄φ)`; on
//! profiles this is encoded by the scale `λ` and the relative determinant
//! `J = 1 + Δ₀φ`. Then `Δ_g = Δ₀/(λJ)`, `|∇f|²_g = |∇f|²₀/(λJ)`,
//! `dμ_g = λJ dμ₀` and `R_g = (R₀ − Δ₀ log J)/(λJ)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{dot, Grid};
use crate::models::{fiber_density, ModelSpec};

/// Reeb-invariant function stored at the grid nodes.
#[derive(Debug, Clone)]
pub struct BasicField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for BasicField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.len() == other.grid.len() && self.values == other.values
    }
}

impl BasicField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Alignment(format!("field has {} values on a {}-node grid", values.len(), grid.len())));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::SolverFailure(format!("non-finite field value at node {j}")));
        }
        Ok(BasicField { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.s().iter().map(|&s| f(s)).collect();
        BasicField { grid: grid.clone(), values }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        BasicField { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        BasicField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        BasicField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &BasicField, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect();
        BasicField { grid: self.grid.clone(), values }
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (j, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = j;
            }
        }
        best
    }

    /// `d/ds` of the interpolant.
    pub fn ds(&self) -> Vec<f64> {
        self.grid.derivative(&self.values)
    }

    /// Value of the interpolant at an arbitrary leaf coordinate.
    pub fn eval(&self, s: f64) -> f64 {
        self.grid.interpolate(&self.values, s)
    }
}

/// Transverse Kähler metric `λ(ω₀ + i∂∂̄φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseMetric {
    model: ModelSpec,
    scale: f64,
    rel_det: Vec<f64>,
    component: Vec<f64>,
}

impl TransverseMetric {
    /// The reference metric of the model.
    pub fn background(model: &ModelSpec) -> Self {
        let n = model.grid().len();
        Self::from_parts(model, 1.0, vec![1.0; n]).expect("background is positive")
    }

    /// Builds `λ·J·g₀`, certifying positivity.
    pub fn from_parts(model: &ModelSpec, scale: f64, rel_det: Vec<f64>) -> Result<Self> {
        if rel_det.len() != model.grid().len() {
            return Err(Error::Alignment("relative determinant has wrong length".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::PositivityLost { node: 0, value: scale });
        }
        if let Some((node, &value)) = rel_det.iter().enumerate().find(|(_, &j)| !(j > 0.0) || !j.is_finite()) {
            return Err(Error::PositivityLost { node, value: value * scale });
        }
        let component = rel_det.iter().zip(model.theta0()).map(|(j, th)| 0.5 * scale * j * th).collect();
        Ok(TransverseMetric { model: model.clone(), scale, rel_det, component })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Overall factor `λ`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `J = ω_φ / ω₀` at the nodes.
    pub fn rel_det(&self) -> &[f64] {
        &self.rel_det
    }

    /// `g_{w w̄}` in the leaf chart.
    pub fn component(&self) -> &[f64] {
        &self.component
    }

    /// Determinant of the (1×1) Hermitian metric.
    pub fn det(&self) -> &[f64] {
        &self.component
    }

    pub fn inverse(&self) -> Vec<f64> {
        self.component.iter().map(|g| 1.0 / g).collect()
    }

    /// `c · g`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_parts(&self.model, self.scale * c, self.rel_det.clone())
    }

    /// `λ J` at the nodes: the factor relating `dμ_g` to `dμ₀`.
    pub fn volume_factor(&self) -> Vec<f64> {
        self.rel_det.iter().map(|j| self.scale * j).collect()
    }
}

/// Curvature of a transverse metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureData {
    /// `R_{w w̄}`.
    pub ricci: Vec<f64>,
    /// `R = g^{w w̄} R_{w w̄}`.
    pub scalar: BasicField,
}

/// `ω₀ + i∂∂̄φ`, failing outside the Kähler cone.
pub fn metric_from_potential(model: &ModelSpec, phi: &BasicField) -> Result<TransverseMetric> {
    let lap = model.laplacian0().matvec(phi.values());
    let rel_det: Vec<f64> = lap.iter().map(|l| 1.0 + l).collect();
    TransverseMetric::from_parts(model, 1.0, rel_det)
}

/// Transverse Ricci form and scalar curvature.
pub fn curvature(gt: &TransverseMetric) -> Result<CurvatureData> {
    let model = gt.model();
    let log_j: Vec<f64> = gt.rel_det().iter().map(|j| j.ln()).collect();
    let lap = model.laplacian0().matvec(&log_j);
    let scalar: Vec<f64> =
        (0..lap.len()).map(|k| (model.background_scalar()[k] - lap[k]) / (gt.scale() * gt.rel_det()[k])).collect();
    let ricci = scalar.iter().zip(gt.component()).map(|(r, g)| r * g).collect();
    Ok(CurvatureData { ricci, scalar: BasicField::new(model.grid().clone(), scalar)? })
}

/// `Δ_B f = g^{w w̄} ∂_w ∂_w̄ f`.
pub fn basic_laplacian(gt: &TransverseMetric, f: &BasicField) -> BasicField {
    let mut out = gt.model().laplacian0().matvec(f.values());
    for (o, j) in out.iter_mut().zip(gt.rel_det()) {
        *o /= gt.scale() * j;
    }
    BasicField::from_raw(f.grid(), out)
}

/// `|∇f|² = g^{w w̄} |∂_w f|²`.
pub fn grad_norm_sq(gt: &TransverseMetric, f: &BasicField) -> BasicField {
    let df = f.ds();
    let model = gt.model();
    let values = (0..df.len()).map(|k| model.grad_coef()[k] * df[k] * df[k] / (gt.scale() * gt.rel_det()[k])).collect();
    BasicField::from_raw(f.grid(), values)
}

/// `∫_S field dμ_g`.
pub fn integrate(model: &ModelSpec, gt: &TransverseMetric, field: &BasicField) -> f64 {
    integrate_values(model, gt, field.values())
}

pub(crate) fn integrate_values(model: &ModelSpec, gt: &TransverseMetric, values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..values.len() {
        acc += model.mass_weights()[k] * gt.rel_det()[k] * values[k];
    }
    gt.scale() * acc
}

pub fn volume(model: &ModelSpec, gt: &TransverseMetric) -> f64 {
    gt.scale() * dot(model.mass_weights(), gt.rel_det())
}

/// Volume through the density profile, used as a cross-check of
/// [`integrate`].
pub fn volume_from_density(model: &ModelSpec, gt: &TransverseMetric) -> Result<f64> {
    let rho = fiber_density(model, gt)?;
    Ok(model.grid().quadrature(rho.values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Family, BACKGROUND_VOLUME};

    fn bump(grid: &Arc<Grid>, eps: f64) -> BasicField {
        BasicField::from_fn(grid, |s| eps * (s * s * (1.0 - s) + 0.3 * s))
    }

    #[test]
    fn zero_potential_gives_background() {
        let m = ModelSpec::round(32).unwrap();
        let g = metric_from_potential(&m, &BasicField::zeros(m.grid())).unwrap();
        assert_eq!(g.rel_det(), &vec![1.0; 32][..]);
        let c = curvature(&g).unwrap();
        assert!(c.scalar.values().iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn large_negative_potential_leaves_the_cone() {
        let m = ModelSpec::round(32).unwrap();
        let phi = BasicField::from_fn(m.grid(), |s| -10.0 * s * s);
        assert!(matches!(metric_from_potential(&m, &phi), Err(Error::PositivityLost { .. })));
    }

    #[test]
    fn trace_identity() {
        let m = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 48).unwrap();
        let g = metric_from_potential(&m, &bump(m.grid(), 0.2)).unwrap();
        let c = curvature(&g).unwrap();
        let inv = g.inverse();
        for k in 0..48 {
            assert!((c.scalar.values()[k] - inv[k] * c.ricci[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_laws() {
        let m = ModelSpec::new(Family::Weighted, 2.0, 1.0, 48).unwrap();
        let g = metric_from_potential(&m, &bump(m.grid(), 0.3)).unwrap();
        let lam = 2.5;
        let h = g.scaled(lam).unwrap();
        let f = BasicField::from_fn(m.grid(), |s| (2.0 * s).cos());
        let (r1, r2) = (curvature(&g).unwrap().scalar, curvature(&h).unwrap().scalar);
        let (n1, n2) = (grad_norm_sq(&g, &f), grad_norm_sq(&h, &f));
        for k in 0..48 {
            assert!((r2.values()[k] * lam - r1.values()[k]).abs() < 1e-12);
            assert!((n2.values()[k] * lam - n1.values()[k]).abs() < 1e-12);
        }
        assert!((volume(&m, &h) - lam * volume(&m, &g)).abs() < 1e-11);
    }

    #[test]
    fn volume_ignores_constant_in_potential() {
        let m = ModelSpec::round(40).unwrap();
        let phi = bump(m.grid(), 0.4);
        let g1 = metric_from_potential(&m, &phi).unwrap();
        let g2 = metric_from_potential(&m, &phi.add_scalar(3.7)).unwrap();
        assert!((volume(&m, &g1) - volume(&m, &g2)).abs() < 1e-12);
        assert!((volume(&m, &g1) - BACKGROUND_VOLUME).abs() < 1e-10);
        assert!((volume_from_density(&m, &g1).unwrap() - volume(&m, &g1)).abs() < 1e-12);
    }
}
