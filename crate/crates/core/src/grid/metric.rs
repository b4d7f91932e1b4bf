use super::{multi_indices, partial, GridError, PeriodicGrid, Scheme};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

/// Riemannian metric on a periodic grid in the flat trivialization.
///
/// Components are stored as `n*n` scalar arrays indexed `a * n + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    grid: PeriodicGrid,
    g: Vec<Vec<f64>>,
    inv: Vec<Vec<f64>>,
    sqrt_det: Vec<f64>,
    min_eig: f64,
    flat: bool,
    regularity: Option<(usize, f64)>,
}

impl MetricField {
    pub fn flat(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, &DMatrix::identity(grid.dim(), grid.dim())).expect("identity metric")
    }

    pub fn constant(grid: &PeriodicGrid, m: &DMatrix<f64>) -> Result<Self, GridError> {
        let n = grid.dim();
        let comps = (0..n * n).map(|ab| vec![m[(ab / n, ab % n)]; grid.len()]).collect();
        Self::from_components(grid, comps)
    }

    /// Conformally flat metric `e^{2u} δ`.
    pub fn conformal(grid: &PeriodicGrid, u: &[f64]) -> Result<Self, GridError> {
        let n = grid.dim();
        if u.len() != grid.len() {
            return Err(GridError::ShapeMismatch { expected: grid.len(), got: u.len() });
        }
        let e: Vec<f64> = u.iter().map(|v| (2.0 * v).exp()).collect();
        let comps = (0..n * n)
            .map(|ab| if ab / n == ab % n { e.clone() } else { vec![0.0; grid.len()] })
            .collect();
        Self::from_components(grid, comps)
    }

    pub fn from_components(grid: &PeriodicGrid, g: Vec<Vec<f64>>) -> Result<Self, GridError> {
        let n = grid.dim();
        let np = grid.len();
        if g.len() != n * n {
            return Err(GridError::ShapeMismatch { expected: n * n, got: g.len() });
        }
        if let Some(bad) = g.iter().find(|c| c.len() != np) {
            return Err(GridError::ShapeMismatch { expected: np, got: bad.len() });
        }
        let mut inv = vec![vec![0.0; np]; n * n];
        let mut sqrt_det = vec![0.0; np];
        let mut min_eig = f64::INFINITY;
        let mut flat = true;
        for p in 0..np {
            let m = DMatrix::from_fn(n, n, |a, b| g[a * n + b][p]);
            let scale = m.amax().max(1.0);
            for a in 0..n {
                for b in 0..a {
                    let defect = (m[(a, b)] - m[(b, a)]).abs();
                    if defect > 1e-12 * scale || !defect.is_finite() {
                        return Err(GridError::NotSymmetric { point: p, defect });
                    }
                }
            }
            let eigs = m.clone().symmetric_eigenvalues();
            let lo = eigs.min();
            if !(lo > 0.0) {
                return Err(GridError::NotPositiveDefinite { point: p, min_eig: lo });
            }
            min_eig = min_eig.min(lo);
            let chol = m.clone().cholesky().ok_or(GridError::NotPositiveDefinite { point: p, min_eig: lo })?;
            let mi = chol.inverse();
            sqrt_det[p] = chol.l().diagonal().product();
            for ab in 0..n * n {
                inv[ab][p] = mi[(ab / n, ab % n)];
                let target = if ab / n == ab % n { 1.0 } else { 0.0 };
                if g[ab][p] != target {
                    flat = false;
                }
            }
        }
        Ok(Self { grid: grid.clone(), g, inv, sqrt_det, min_eig, flat, regularity: None })
    }

    /// Attaches declared regularity order `ℓ + α′`.
    pub fn with_regularity(mut self, order: usize, alpha: f64) -> Self {
        self.regularity = Some((order, alpha));
        self
    }

    pub fn regularity(&self) -> Option<(usize, f64)> {
        self.regularity
    }
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
    /// True when the metric is exactly the Euclidean identity everywhere.
    pub fn is_flat(&self) -> bool {
        self.flat
    }
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }
    pub fn component(&self, a: usize, b: usize) -> &[f64] {
        &self.g[a * self.dim() + b]
    }
    pub fn inverse_component(&self, a: usize, b: usize) -> &[f64] {
        &self.inv[a * self.dim() + b]
    }
    pub fn components(&self) -> &[Vec<f64>] {
        &self.g
    }
    pub fn sqrt_det(&self) -> &[f64] {
        &self.sqrt_det
    }

    pub fn at(&self, p: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.g[a * n + b][p])
    }

    pub fn inverse_at(&self, p: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.inv[a * n + b][p])
    }

    /// Rescaled metric `ε^{-2} g`.
    pub fn rescaled(&self, eps: f64) -> Self {
        let s = 1.0 / (eps * eps);
        let t = eps * eps;
        let g: Vec<Vec<f64>> = self.g.iter().map(|c| c.iter().map(|v| v * s).collect()).collect();
        let flat = self.flat && s == 1.0;
        Self {
            grid: self.grid.clone(),
            inv: self.inv.iter().map(|c| c.iter().map(|v| v * t).collect()).collect(),
            sqrt_det: self.sqrt_det.iter().map(|v| v * s.powf(self.dim() as f64 / 2.0)).collect(),
            min_eig: self.min_eig * s,
            flat,
            regularity: self.regularity,
            g,
        }
    }

    /// Bounded-geometry report for this metric.
    pub fn bounded_geometry(&self, order: usize, bounds: &GeometryBounds) -> Result<GeometryReport, GridError> {
        check_bounded_geometry(&self.grid, &self.g, order, bounds)
    }
}

/// Declared coefficient bounds for the bounded-geometry check.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryBounds {
    pub metric_sup: f64,
    pub derivative_sup: f64,
    pub inverse_sup: f64,
}

impl Default for GeometryBounds {
    fn default() -> Self {
        Self { metric_sup: 10.0, derivative_sup: 10.0, inverse_sup: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub metric_sup: f64,
    /// `derivative_sups[j-1]` is the max over components and multi-indices of order `j`.
    pub derivative_sups: Vec<f64>,
    pub inverse_sup: f64,
    pub min_eigenvalue: f64,
    pub symmetry_defect: f64,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Measures sup-norms of the metric, its fd2 derivatives up to `order`, and
/// its inverse, flagging each against declared bounds.
///
/// Works on raw components so that degenerate inputs are reported rather than
/// rejected.
pub fn check_bounded_geometry(
    grid: &PeriodicGrid,
    comps: &[Vec<f64>],
    order: usize,
    bounds: &GeometryBounds,
) -> Result<GeometryReport, GridError> {
    let n = grid.dim();
    let np = grid.len();
    if comps.len() != n * n || comps.iter().any(|c| c.len() != np) {
        return Err(GridError::ShapeMismatch { expected: n * n * np, got: comps.iter().map(Vec::len).sum() });
    }
    grid.check_order(order, Scheme::Fd2)?;
    let mut violations = Vec::new();
    let metric_sup = comps.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut derivative_sups = Vec::with_capacity(order);
    for j in 1..=order {
        let mut sup = 0.0f64;
        for beta in multi_indices(n, j) {
            for c in comps {
                let cf: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let d = partial(grid, &cf, &beta, Scheme::Fd2)?;
                sup = d.iter().fold(sup, |m, v| m.max(v.norm()));
            }
        }
        if sup > bounds.derivative_sup {
            violations.push(format!("order-{j} derivative sup {sup:e} exceeds bound {:e}", bounds.derivative_sup));
        }
        derivative_sups.push(sup);
    }
    let mut min_eigenvalue = f64::INFINITY;
    let mut symmetry_defect = 0.0f64;
    for p in 0..np {
        let m = DMatrix::from_fn(n, n, |a, b| comps[a * n + b][p]);
        symmetry_defect = symmetry_defect.max((&m - m.transpose()).amax());
        let sym = (&m + m.transpose()) * 0.5;
        min_eigenvalue = min_eigenvalue.min(sym.symmetric_eigenvalues().min());
    }
    let inverse_sup = if min_eigenvalue > 0.0 { 1.0 / min_eigenvalue } else { f64::INFINITY };
    if symmetry_defect > 1e-12 * metric_sup.max(1.0) {
        violations.push(format!("metric not symmetric (defect {symmetry_defect:e})"));
    }
    if !(min_eigenvalue > 0.0) {
        violations.push(format!("metric not positive definite (min eigenvalue {min_eigenvalue:e})"));
    }
    if metric_sup > bounds.metric_sup {
        violations.push(format!("metric sup {metric_sup:e} exceeds bound {:e}", bounds.metric_sup));
    }
    if inverse_sup > bounds.inverse_sup {
        violations.push(format!("inverse sup {inverse_sup:e} exceeds bound {:e}", bounds.inverse_sup));
    }
    Ok(GeometryReport {
        metric_sup,
        derivative_sups,
        inverse_sup,
        min_eigenvalue,
        symmetry_defect,
        pass: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rescale_flat_and_round_trip() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let g = MetricField::flat(&grid);
        let s = g.rescaled(0.5);
        assert!(s.component(0, 0).iter().all(|&v| v == 4.0));
        assert!(s.component(0, 1).iter().all(|&v| v == 0.0));
        assert!(s.inverse_component(1, 1).iter().all(|&v| v == 0.25));
        assert_eq!(g.rescaled(1.0), g);
        let u: Vec<f64> = grid.sample(|x| 0.3 * x[0].sin());
        let c = MetricField::conformal(&grid, &u).unwrap();
        let back = c.rescaled(0.3).rescaled(1.0 / 0.3);
        for (a, b) in back.components().iter().flatten().zip(c.components().iter().flatten()) {
            assert!((a - b).abs() < 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn flat_metric_report() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let r = MetricField::flat(&grid).bounded_geometry(2, &GeometryBounds::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.derivative_sups, vec![0.0, 0.0]);
        assert!((r.inverse_sup - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_multiple_metric_report_matches_grid_max() {
        let grid = PeriodicGrid::new(2, 16, 2.0 * PI).unwrap();
        let h = grid.spacing();
        let f: Vec<f64> = grid.sample(|x| 1.0 + 0.1 * x[0].sin());
        let comps = vec![f.clone(), vec![0.0; f.len()], vec![0.0; f.len()], f.clone()];
        let bounds = GeometryBounds { metric_sup: 10.0, derivative_sup: 10.0, inverse_sup: 10.0 };
        let r = check_bounded_geometry(&grid, &comps, 2, &bounds).unwrap();
        assert!(r.pass);
        // brute-force stencil maxima over the lattice
        let n = grid.points_per_axis();
        let xs: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 * h).sin()).collect();
        let d1 = (0..n).map(|i| ((xs[(i + 1) % n] - xs[(i + n - 1) % n]) / (2.0 * h)).abs()).fold(0.0, f64::max);
        let d2 = (0..n)
            .map(|i| ((xs[(i + 1) % n] - 2.0 * xs[i] + xs[(i + n - 1) % n]) / (h * h)).abs())
            .fold(0.0, f64::max);
        assert!((r.derivative_sups[0] - d1).abs() < 1e-13);
        assert!((r.derivative_sups[1] - d2).abs() < 1e-12);
        assert!((r.metric_sup - 1.1).abs() < 1e-12);
        assert!((r.inverse_sup - 1.0 / xs.iter().cloned().fold(f64::INFINITY, f64::min)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_metric_is_reported() {
        let grid = PeriodicGrid::new(1, 8, 2.0 * PI).unwrap();
        let mut c = vec![1.0; 8];
        c[3] = -0.5;
        let r = check_bounded_geometry(&grid, &[c.clone()], 1, &GeometryBounds::default()).unwrap();
        assert!(!r.pass);
        assert!(r.violations.iter().any(|v| v.contains("positive definite")));
        assert!(matches!(
            MetricField::from_components(&grid, vec![c]),
            Err(GridError::NotPositiveDefinite { point: 3, .. })
        ));
    }
}
