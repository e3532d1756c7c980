//! Spectral grid on the leaf coordinate `s ∈ [0, 1]`.
//!
//! Nodes are the Chebyshev–Gauss points `s_j = sin²(ψ_j / 2)` with
//! `ψ_j = (j + ½)π / N`. They are equispaced and cell-centred in the polar
//! angle `ψ`, never touch the poles, and cluster in `s` exactly where the
//! polar-type degeneracies sit. Smooth functions of `s` are represented by
//! their degree `N − 1` interpolant, so derivatives, quadrature and
//! antiderivatives are all spectrally accurate.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest admissible number of nodes.
pub const MIN_NODES: usize = 16;

/// Square dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense { n, data: vec![0.0; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `out = self · x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        let n = self.n;
        let mut out = Dense::zeros(n);
        for i in 0..n {
            let row = self.row(i);
            let dst = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `diag(left) · self`.
    pub fn scale_rows(&self, left: &[f64]) -> Dense {
        let mut out = self.clone();
        for (i, &l) in left.iter().enumerate() {
            for v in &mut out.data[i * self.n..(i + 1) * self.n] {
                *v *= l;
            }
        }
        out
    }

    pub fn add(&self, other: &Dense) -> Dense {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Dense { n: self.n, data }
    }

    /// Resets each diagonal entry so that every row sums to zero, which makes
    /// the operator annihilate constants to rounding.
    pub fn fix_row_sums(&mut self) {
        for i in 0..self.n {
            let off: f64 = (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j)).sum();
            self.set(i, i, -off);
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Dot product with independent partial sums so the loop vectorises.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Chebyshev–Gauss collocation grid.
#[derive(Debug)]
pub struct Grid {
    n: usize,
    psi: Vec<f64>,
    s: Vec<f64>,
    one_minus_s: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
    d1: Dense,
    d2: Dense,
    cos_table: Vec<f64>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Arc<Grid>> {
        if n < MIN_NODES {
            return Err(Error::InvalidModel(format!("grid needs at least {MIN_NODES} nodes, got {n}")));
        }
        let nf = n as f64;
        let psi: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * PI / nf).collect();
        let s: Vec<f64> = psi.iter().map(|p| (0.5 * p).sin().powi(2)).collect();
        let one_minus_s: Vec<f64> = psi.iter().map(|p| (0.5 * p).cos().powi(2)).collect();

        // cos(k ψ_j) with exact argument reduction: k ψ_j = k(2j+1)π/(2N).
        let mut cos_table = vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n {
                let m = (k * (2 * j + 1)) % (4 * n);
                cos_table[k * n + j] = (m as f64 * PI / (2.0 * nf)).cos();
            }
        }

        // Fejér's first rule on x = cos ψ, halved for ds.
        let weights: Vec<f64> = (0..n)
            .map(|j| {
                let mut acc = 0.0;
                for k in 1..=n / 2 {
                    let m = (2 * k * (2 * j + 1)) % (4 * n);
                    let c = (m as f64 * PI / (2.0 * nf)).cos();
                    acc += c / (4.0 * (k * k) as f64 - 1.0);
                }
                (1.0 - 2.0 * acc) / nf
            })
            .collect();

        let bary: Vec<f64> = psi.iter().enumerate().map(|(j, p)| if j % 2 == 0 { p.sin() } else { -p.sin() }).collect();

        let mut d1 = Dense::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    // s_i − s_j without cancellation near the poles.
                    let diff = (0.5 * (psi[i] + psi[j])).sin() * (0.5 * (psi[i] - psi[j])).sin();
                    d1.set(i, j, bary[j] / bary[i] / diff);
                }
            }
        }
        d1.fix_row_sums();
        let mut d2 = d1.matmul(&d1);
        d2.fix_row_sums();

        Ok(Arc::new(Grid { n, psi, s, one_minus_s, weights, bary, d1, d2, cos_table }))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Leaf coordinates of the nodes, increasing.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// `1 − s` at the nodes, computed without cancellation.
    pub fn one_minus_s(&self) -> &[f64] {
        &self.one_minus_s
    }

    /// Polar angles of the nodes.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Quadrature weights for `∫_0^1 · ds`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn d1(&self) -> &Dense {
        &self.d1
    }

    pub fn d2(&self) -> &Dense {
        &self.d2
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        self.d1.matvec(f)
    }

    pub fn second_derivative(&self, f: &[f64]) -> Vec<f64> {
        self.d2.matvec(f)
    }

    /// `∫_0^1 f ds`.
    pub fn quadrature(&self, f: &[f64]) -> f64 {
        dot(&self.weights, f)
    }

    /// Chebyshev coefficients of the interpolant of `f`.
    pub fn series(&self, f: &[f64]) -> ChebSeries {
        let n = self.n;
        let nf = n as f64;
        let mut c: Vec<f64> = (0..n).map(|k| 2.0 / nf * dot(&self.cos_table[k * n..(k + 1) * n], f)).collect();
        c[0] *= 0.5;
        ChebSeries { c }
    }

    /// Exponential low-pass filter `c_k ↦ exp(−36 (k/N)^order) c_k` on the
    /// Chebyshev coefficients, returned as nodal values.
    pub fn filtered(&self, f: &[f64], order: i32) -> Vec<f64> {
        let n = self.n;
        let mut c = self.series(f).c;
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= (-36.0 * (k as f64 / n as f64).powi(order)).exp();
        }
        let mut out = vec![0.0; n];
        for (k, ck) in c.iter().enumerate() {
            let row = &self.cos_table[k * n..(k + 1) * n];
            for j in 0..n {
                out[j] += ck * row[j];
            }
        }
        out
    }

    /// Barycentric interpolation of nodal values at an arbitrary `s`.
    pub fn interpolate(&self, f: &[f64], s: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.n {
            let d = s - self.s[j];
            if d == 0.0 {
                return f[j];
            }
            let w = self.bary[j] / d;
            num += w * f[j];
            den += w;
        }
        num / den
    }

    /// Interpolates nodal values onto another grid.
    pub fn resample(&self, f: &[f64], target: &Grid) -> Vec<f64> {
        let series = self.series(f);
        target.s().iter().map(|&s| series.eval_s(s)).collect()
    }
}

/// Converts a leaf coordinate to the polar angle.
pub fn psi_of_s(s: f64) -> f64 {
    2.0 * s.clamp(0.0, 1.0).sqrt().asin()
}

/// Converts a polar angle to the leaf coordinate.
pub fn s_of_psi(psi: f64) -> f64 {
    (0.5 * psi).sin().powi(2)
}

/// Truncated Chebyshev series `f(ψ) = Σ c_k cos(kψ)`, equivalently
/// `Σ c_k T_k(1 − 2s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSeries {
    c: Vec<f64>,
}

impl ChebSeries {
    pub fn from_coefficients(c: Vec<f64>) -> Self {
        assert!(!c.is_empty(), "a series needs at least one coefficient");
        ChebSeries { c }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    /// Clenshaw evaluation at `x = cos ψ`.
    pub fn eval_x(&self, x: f64) -> f64 {
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &ck in self.c.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + ck;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.c[0]
    }

    pub fn eval_s(&self, s: f64) -> f64 {
        self.eval_x(1.0 - 2.0 * s)
    }

    pub fn eval_psi(&self, psi: f64) -> f64 {
        self.eval_x(psi.cos())
    }

    /// `∫_0^ψ f dψ'`.
    pub fn antiderivative_psi(&self, psi: f64) -> f64 {
        let (sin1, cos1) = psi.sin_cos();
        let mut acc = self.c[0] * psi;
        let (mut sk, mut ck) = (0.0, 1.0);
        for (k, &a) in self.c.iter().enumerate().skip(1) {
            let sn = sk * cos1 + ck * sin1;
            let cn = ck * cos1 - sk * sin1;
            sk = sn;
            ck = cn;
            acc += a * sk / k as f64;
        }
        acc
    }

    /// `∫_0^{s(ψ)} f ds`, using `ds = ½ sin ψ dψ`.
    pub fn cumulative_s(&self, psi: f64) -> f64 {
        // ∫_0^ψ cos(kψ') sin ψ' dψ' = ½[I_{k+1} − I_{k−1}], I_m = (1 − cos mψ)/m.
        let (sin1, cos1) = psi.sin_cos();
        let big_i = |m: usize, cos_m: f64| if m == 0 { 0.0 } else { (1.0 - cos_m) / m as f64 };
        let kmax = self.c.len();
        // cos(mψ) for m = 0..=kmax.
        let mut cosm = Vec::with_capacity(kmax + 1);
        let (mut sk, mut ck) = (0.0, 1.0);
        cosm.push(1.0);
        for _ in 0..kmax {
            let sn = sk * cos1 + ck * sin1;
            let cn = ck * cos1 - sk * sin1;
            sk = sn;
            ck = cn;
            cosm.push(ck);
        }
        let mut acc = 0.0;
        for (k, &a) in self.c.iter().enumerate() {
            let up = big_i(k + 1, cosm[k + 1]);
            let down = if k == 0 { -big_i(1, cosm[1]) } else { big_i(k - 1, cosm[k - 1]) };
            acc += a * 0.5 * (up - down);
        }
        0.5 * acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(s: f64) -> f64 {
        1.0 + 2.0 * s - 3.0 * s * s + 0.5 * s.powi(5)
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(Grid::new(8).is_err());
    }

    #[test]
    fn weights_integrate_polynomials() {
        let g = Grid::new(32).unwrap();
        let f: Vec<f64> = g.s().iter().map(|&s| poly(s)).collect();
        let exact = 1.0 + 1.0 - 1.0 + 0.5 / 6.0;
        assert!((g.quadrature(&f) - exact).abs() < 1e-14);
    }

    #[test]
    fn derivative_is_exact_on_polynomials() {
        let g = Grid::new(24).unwrap();
        let f: Vec<f64> = g.s().iter().map(|&s| poly(s)).collect();
        let df = g.derivative(&f);
        let d2f = g.second_derivative(&f);
        for (j, &s) in g.s().iter().enumerate() {
            assert!((df[j] - (2.0 - 6.0 * s + 2.5 * s.powi(4))).abs() < 1e-11);
            assert!((d2f[j] - (-6.0 + 10.0 * s.powi(3))).abs() < 1e-9);
        }
    }

    #[test]
    fn series_and_interpolation_agree() {
        let g = Grid::new(20).unwrap();
        let f: Vec<f64> = g.s().iter().map(|&s| (3.0 * s).sin()).collect();
        let series = g.series(&f);
        for &s in &[0.0, 0.013, 0.5, 0.77, 1.0] {
            let a = series.eval_s(s);
            let b = g.interpolate(&f, s);
            assert!((a - b).abs() < 1e-12, "{a} {b}");
            assert!((a - (3.0 * s).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn antiderivatives() {
        let g = Grid::new(32).unwrap();
        let f: Vec<f64> = g.s().iter().map(|&s| poly(s)).collect();
        let series = g.series(&f);
        let s: f64 = 0.3;
        let exact = s + s * s - s.powi(3) + 0.5 * s.powi(6) / 6.0;
        assert!((series.cumulative_s(psi_of_s(s)) - exact).abs() < 1e-13);
        // Constant integrand in ψ.
        let one = vec![1.0; g.len()];
        assert!((g.series(&one).antiderivative_psi(1.2) - 1.2).abs() < 1e-14);
    }
}
