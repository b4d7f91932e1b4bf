//! Empirical uniformity checks for the semiclassical resolvent: elliptic
//! estimate constants, C⁰/C¹ bounds across ε, and the interpolation bound.

use super::{norm1_estimate, scale_adapted_probes, ResolventError, ShiftedSolver};
use crate::grid::{derivative_sups, holder_norm, semiclassical_holder_norm, GridField, MetricField, NormConfig};
use crate::operator::{commutator_with_gradient, DiscreteOperator, Representation};
use crate::stats::log_log_fit;
use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

/// Shared knobs of the battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformityConfig {
    pub alpha: f64,
    pub probes: usize,
    pub seed: u64,
    /// Hölder pair radius `r0`; `None` means `L/8`.
    pub radius: Option<f64>,
    pub tol: f64,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        Self { alpha: 0.5, probes: 200, seed: 0, radius: None, tol: 1e-10 }
    }
}

impl UniformityConfig {
    fn radius_for(&self, op: &DiscreteOperator) -> f64 {
        self.radius.unwrap_or(op.grid().length() / 8.0)
    }
}

fn check_zeta(zeta: Complex64) -> Result<(), ResolventError> {
    if !(zeta.re < 0.0) {
        return Err(ResolventError::Invalid(format!("Re zeta = {} must be negative", zeta.re)));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), ResolventError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ResolventError::Invalid(format!("eps = {eps} not in (0,1]")));
    }
    Ok(())
}

/// `(ζ - ε^m L) u`.
fn semiclassical_apply(op: &DiscreteOperator, zeta: Complex64, eps: f64, u: &GridField) -> Result<GridField, ResolventError> {
    let lu = op.apply(u.values())?;
    let em = Complex64::new(eps.powi(op.order() as i32), 0.0);
    Ok(u.with_values(u.values() * zeta - lu * em)?)
}

fn slope(eps: &[f64], c: &[f64]) -> Option<f64> {
    log_log_fit(eps, c).map(|f| f.slope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchauderRow {
    pub eps: f64,
    pub constant: f64,
    pub worst_probe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchauderTable {
    pub zeta: Complex64,
    pub alpha: f64,
    pub rows: Vec<SchauderRow>,
    pub sup: f64,
    /// Slope of `log C(ε)` against `log ε`.
    pub slope: Option<f64>,
}

/// Per ε, `C = max_u ‖u‖_{m,α,ε} / (‖(ζ-ε^m L)u‖_{0,α,ε} + sup|u|)` over
/// scale-adapted probes.
pub fn semiclassical_schauder_constant(
    op: &DiscreteOperator,
    metric: &MetricField,
    zeta: Complex64,
    eps_grid: &[f64],
    cfg: &UniformityConfig,
) -> Result<SchauderTable, ResolventError> {
    check_zeta(zeta)?;
    let grid = op.grid();
    let m = op.order();
    let r0 = cfg.radius_for(op);
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        check_eps(eps)?;
        let hi = NormConfig::new(grid, m, cfg.alpha).with_radius(r0).with_eps(eps).with_scheme(op.scheme());
        let lo = NormConfig { k: 0, ..hi };
        let mut best = (0.0f64, 0);
        for (i, u) in scale_adapted_probes(grid, op.rank(), eps, cfg.probes, cfg.seed).iter().enumerate() {
            let au = semiclassical_apply(op, zeta, eps, u)?;
            let lhs = semiclassical_holder_norm(u, metric, &hi)?;
            let rhs = semiclassical_holder_norm(&au, metric, &lo)? + u.sup_norm();
            let ratio = lhs / rhs;
            if ratio > best.0 {
                best = (ratio, i);
            }
        }
        rows.push(SchauderRow { eps, constant: best.0, worst_probe: best.1 });
    }
    let sup = rows.iter().map(|r| r.constant).fold(0.0, f64::max);
    let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.constant).collect();
    Ok(SchauderTable { zeta, alpha: cfg.alpha, rows, sup, slope: slope(&e, &c) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityRow {
    pub eps: f64,
    /// `max_u sup|u| / sup|(ζ-ε^m L)u|`.
    pub c0: f64,
    /// Same with `‖v‖_{1,ε} = sup|v| + ε sup|∇v|_g`.
    pub c1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityTable {
    pub zeta: Complex64,
    pub rows: Vec<UniformityRow>,
    pub slope_c0: Option<f64>,
    pub slope_c1: Option<f64>,
    /// Set when a fitted slope shows growth as ε decreases beyond `0.1`.
    pub growth_flagged: bool,
}

/// Empirical C⁰ and C¹ bounds of the semiclassical resolvent across ε.
pub fn c0_c1_uniformity(
    op: &DiscreteOperator,
    metric: &MetricField,
    zeta: Complex64,
    eps_grid: &[f64],
    cfg: &UniformityConfig,
) -> Result<UniformityTable, ResolventError> {
    check_zeta(zeta)?;
    let grid = op.grid();
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        check_eps(eps)?;
        let (mut c0, mut c1) = (0.0f64, 0.0f64);
        for u in scale_adapted_probes(grid, op.rank(), eps, cfg.probes, cfg.seed) {
            let au = semiclassical_apply(op, zeta, eps, &u)?;
            let su = derivative_sups(&u, metric, 1, op.scheme())?;
            let sa = derivative_sups(&au, metric, 1, op.scheme())?;
            c0 = c0.max(su[0] / sa[0]);
            c1 = c1.max((su[0] + eps * su[1]) / (sa[0] + eps * sa[1]));
        }
        rows.push(UniformityRow { eps, c0, c1 });
    }
    let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let slope_c0 = slope(&e, &rows.iter().map(|r| r.c0).collect::<Vec<_>>());
    let slope_c1 = slope(&e, &rows.iter().map(|r| r.c1).collect::<Vec<_>>());
    let growth_flagged = [slope_c0, slope_c1].iter().flatten().any(|s| s.abs() > 0.1);
    Ok(UniformityTable { zeta, rows, slope_c0, slope_c1, growth_flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub alpha: f64,
    /// `‖R‖` on `C⁰` (maximum row sum).
    pub c0: f64,
    /// Bound on `‖R‖` on `C¹`: `C0 + (Σ_i ‖R[∂_i, L]R‖_∞²)^{1/2}`.
    pub c1: f64,
    pub bound: f64,
    /// `‖Rf‖_{0,α} / (bound · ‖f‖_{0,α})` per probe.
    pub ratios: Vec<f64>,
    pub violations: usize,
    pub worst_margin: f64,
}

/// `C0^{1-α} C1^α`.
pub fn interpolated_constant(c0: f64, c1: f64, alpha: f64) -> f64 {
    c0.powf(1.0 - alpha) * c1.powf(alpha)
}

/// Operator `∞`-norm of `[∂_i, R(λ)] = R [∂_i, L] R`.
fn commutator_resolvent_norms(op: &DiscreteOperator, solver: &ShiftedSolver) -> Result<Vec<f64>, ResolventError> {
    if matches!(op.repr(), Representation::Multiplier(_)) {
        return Ok(vec![0.0; op.grid().dim()]);
    }
    let comms = commutator_with_gradient(op)?;
    let mut out = Vec::with_capacity(comms.len());
    match op.repr() {
        Representation::Dense(_) => {
            let r = solver.inverse()?;
            for c in &comms {
                let k = &r * c.to_dense() * &r;
                out.push(k.row_iter().map(|row| row.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max));
            }
        }
        _ => {
            let n = op.unknowns();
            for c in &comms {
                let ch = match c.repr() {
                    Representation::Sparse(m) => m.adjoint(),
                    _ => unreachable!("sparse operator has sparse commutators"),
                };
                // ‖K‖_∞ = ‖K^*‖_1
                let est = norm1_estimate(
                    n,
                    |x: &DVector<Complex64>| solver.solve_adjoint(&ch.mul_vec(&solver.solve_adjoint(x)?)),
                    |x: &DVector<Complex64>| solver.solve(&c.apply(&solver.solve(x)?)?),
                )?;
                out.push(est);
            }
        }
    }
    Ok(out)
}

/// Checks `‖R(λ)f‖_{0,α} ≤ C0^{1-α} C1^α ‖f‖_{0,α}` on every probe.
pub fn interpolation_check(
    op: &DiscreteOperator,
    metric: &MetricField,
    lambda: Complex64,
    probes: &[GridField],
    alpha: f64,
    radius: Option<f64>,
    tol: f64,
) -> Result<InterpolationReport, ResolventError> {
    let solver = ShiftedSolver::new(op, lambda, tol)?;
    let c0 = solver.norm_linf(op)?;
    let comm = commutator_resolvent_norms(op, &solver)?;
    let c1 = c0 + comm.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = interpolated_constant(c0, c1, alpha);
    let cfg = NormConfig::new(op.grid(), 0, alpha).with_radius(radius.unwrap_or(op.grid().length() / 8.0)).with_scheme(op.scheme());
    let mut ratios = Vec::with_capacity(probes.len());
    for f in probes {
        let u = f.with_values(solver.solve(f.values())?)?;
        let lhs = holder_norm(&u, metric, &cfg)?;
        let rhs = bound * holder_norm(f, metric, &cfg)?;
        ratios.push(lhs / rhs);
    }
    let violations = ratios.iter().filter(|&&r| r > 1.0 + 1e-10).count();
    let worst_margin = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(InterpolationReport { alpha, c0, c1, bound, ratios, violations, worst_margin })
}
