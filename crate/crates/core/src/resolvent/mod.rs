//! Resolvent solves, norm surrogates, sector sweeps and fits, and the
//! semiclassical reduction `λ(λ-L)^{-1} = ζ(ζ-ε^m L)^{-1}`.

mod battery;
mod lambda;
mod probes;

pub use battery::{
    c0_c1_uniformity, interpolation_check, semiclassical_schauder_constant, InterpolationReport, SchauderRow,
    SchauderTable, UniformityConfig, UniformityRow, UniformityTable,
};
pub use lambda::LambdaGrid;
pub use probes::{band_limited_probes, scale_adapted_probes};

use crate::grid::{holder_norm, GridError, GridField, MetricField, NormConfig};
use crate::operator::{gmres, CsrMatrix, DiscreteOperator, FourierMultiplier, OperatorError, Representation};
use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Condition estimates above this are treated as spectrum hits.
pub const CONDITION_LIMIT: f64 = 1e12;

const GMRES_RESTART: usize = 60;
const GMRES_MAX_ITER: usize = 4000;
const POWER_MAX_ITER: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolventError {
    #[error("lambda = {re}{im:+}i hits the numerical spectrum (condition estimate {condition:e})")]
    SpectrumHit { re: f64, im: f64, condition: f64 },
    #[error("iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("residual {residual:e} exceeds tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },
    #[error("semiclassical reduction is undefined at lambda = 0")]
    ZeroLambda,
    #[error("cannot fit sector: {0}")]
    CannotFit(String),
    #[error("invalid lambda grid: {0}")]
    GridSpec(String),
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Parameters of the empirical Hölder operator-norm surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderSurrogate {
    pub k: usize,
    pub alpha: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for HolderSurrogate {
    fn default() -> Self {
        Self { k: 0, alpha: 0.5, probes: 200, seed: 0 }
    }
}

/// Which operator norm is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surrogate {
    L2,
    Linf,
    Holder(HolderSurrogate),
}

impl Surrogate {
    pub fn tag(&self) -> &'static str {
        match self {
            Surrogate::L2 => "l2",
            Surrogate::Linf => "linf",
            Surrogate::Holder(_) => "holder",
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Surrogate::Holder(h) => write!(f, "holder(k={}, alpha={}, probes={}, seed={})", h.k, h.alpha, h.probes, h.seed),
            s => f.write_str(s.tag()),
        }
    }
}

impl FromStr for Surrogate {
    type Err = ResolventError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(Surrogate::L2),
            "linf" => Ok(Surrogate::Linf),
            "holder" => Ok(Surrogate::Holder(HolderSurrogate::default())),
            other => Err(ResolventError::Invalid(format!("unknown surrogate '{other}' (expected l2|linf|holder)"))),
        }
    }
}

/// A resolvent evaluation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventQuery {
    pub lambda: Complex64,
    pub surrogate: Surrogate,
    pub tol: f64,
}

impl ResolventQuery {
    pub fn new(lambda: Complex64, surrogate: Surrogate, tol: f64) -> Result<Self, ResolventError> {
        if !(tol > 0.0) {
            return Err(ResolventError::Invalid(format!("tolerance {tol} must be positive")));
        }
        Ok(Self { lambda, surrogate, tol })
    }
}

enum Backend {
    Dense { a: DMatrix<Complex64>, lu: LU<Complex64, Dyn, Dyn>, lu_adj: LU<Complex64, Dyn, Dyn> },
    Multiplier { inv: FourierMultiplier, inv_adj: FourierMultiplier, sigma_min: f64 },
    Sparse { a: CsrMatrix, a_adj: CsrMatrix, diag: Vec<Complex64>, diag_adj: Vec<Complex64> },
}

/// Prepared solver for `(λI - L) u = f` with a condition estimate.
pub struct ShiftedSolver {
    lambda: Complex64,
    n: usize,
    tol: f64,
    backend: Backend,
    condition: f64,
}

fn spectrum_hit(lambda: Complex64, condition: f64) -> ResolventError {
    ResolventError::SpectrumHit { re: lambda.re, im: lambda.im, condition }
}

fn norm1_dense(a: &DMatrix<Complex64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn norm_inf_dense(a: &DMatrix<Complex64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn l1(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

/// Hager–Higham estimate of `‖B‖_1` from products with `B` and `B^*`.
pub fn norm1_estimate<F, G, E>(n: usize, apply: F, apply_adj: G) -> Result<f64, E>
where
    F: Fn(&DVector<Complex64>) -> Result<DVector<Complex64>, E>,
    G: Fn(&DVector<Complex64>) -> Result<DVector<Complex64>, E>,
{
    if n == 0 {
        return Ok(0.0);
    }
    let mut x = DVector::from_element(n, Complex64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0f64;
    let mut last_j = usize::MAX;
    for iter in 0..5 {
        let y = apply(&x)?;
        est = est.max(l1(&y));
        let sgn = y.map(|z| if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) });
        let z = apply_adj(&sgn)?;
        let (j, zmax) = z.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.norm() > acc.1 { (i, v.norm()) } else { acc });
        let ztx = z.dotc(&x).re;
        if iter > 0 && (zmax <= ztx || j == last_j) {
            break;
        }
        last_j = j;
        x = DVector::zeros(n);
        x[j] = Complex64::new(1.0, 0.0);
    }
    let alt = DVector::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    let y = apply(&alt)?;
    Ok(est.max(2.0 * l1(&y) / (3.0 * n as f64)))
}

impl ShiftedSolver {
    pub fn new(op: &DiscreteOperator, lambda: Complex64, tol: f64) -> Result<Self, ResolventError> {
        if !(tol > 0.0) {
            return Err(ResolventError::Invalid(format!("tolerance {tol} must be positive")));
        }
        let n = op.unknowns();
        let (backend, condition) = match op.repr() {
            Representation::Dense(l) => {
                let mut a = -l.clone();
                for i in 0..n {
                    a[(i, i)] += lambda;
                }
                let lu = a.clone().lu();
                let lu_adj = a.adjoint().lu();
                let inv_norm = norm1_estimate(
                    n,
                    |x| lu.solve(x).ok_or_else(|| spectrum_hit(lambda, f64::INFINITY)),
                    |x| lu_adj.solve(x).ok_or_else(|| spectrum_hit(lambda, f64::INFINITY)),
                )?;
                let cond = norm1_dense(&a) * inv_norm;
                (Backend::Dense { a, lu, lu_adj }, cond)
            }
            Representation::Multiplier(m) => {
                let d = m.rank();
                let mut inv = Vec::with_capacity(m.blocks().len());
                let mut inv_adj = Vec::with_capacity(m.blocks().len());
                let (mut smin, mut smax) = (f64::INFINITY, 0.0f64);
                for b in m.blocks() {
                    let s = DMatrix::from_diagonal_element(d, d, lambda) - b;
                    let sv = s.clone().singular_values();
                    smin = smin.min(sv.min());
                    smax = smax.max(sv.max());
                    let si = s.try_inverse().ok_or_else(|| spectrum_hit(lambda, f64::INFINITY))?;
                    inv_adj.push(si.adjoint());
                    inv.push(si);
                }
                if smin == 0.0 {
                    return Err(spectrum_hit(lambda, f64::INFINITY));
                }
                let grid = op.grid();
                let backend = Backend::Multiplier {
                    inv: FourierMultiplier::new(grid, d, inv),
                    inv_adj: FourierMultiplier::new(grid, d, inv_adj),
                    sigma_min: smin,
                };
                (backend, smax / smin)
            }
            Representation::Sparse(l) => {
                let a = CsrMatrix::identity(n).scale(lambda).add_scaled(l, Complex64::new(-1.0, 0.0));
                let a_adj = a.adjoint();
                let diag = a.diagonal();
                let diag_adj = a_adj.diagonal();
                let norm1 = a_adj.norm_inf();
                let mut solver = Self {
                    lambda,
                    n,
                    tol,
                    backend: Backend::Sparse { a, a_adj, diag, diag_adj },
                    condition: f64::NAN,
                };
                let inv_norm = norm1_estimate(n, |x| solver.raw_solve(x, false), |x| solver.raw_solve(x, true))?;
                solver.condition = norm1 * inv_norm;
                if !(solver.condition <= CONDITION_LIMIT) {
                    return Err(spectrum_hit(lambda, solver.condition));
                }
                return Ok(solver);
            }
        };
        if !(condition <= CONDITION_LIMIT) {
            return Err(spectrum_hit(lambda, condition));
        }
        Ok(Self { lambda, n, tol, backend, condition })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }
    /// 1-norm condition estimate (2-norm for Fourier multipliers).
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn raw_solve(&self, f: &DVector<Complex64>, adjoint: bool) -> Result<DVector<Complex64>, ResolventError> {
        match &self.backend {
            Backend::Dense { lu, lu_adj, .. } => {
                let lu = if adjoint { lu_adj } else { lu };
                lu.solve(f).ok_or_else(|| spectrum_hit(self.lambda, f64::INFINITY))
            }
            Backend::Multiplier { inv, inv_adj, .. } => Ok(if adjoint { inv_adj.apply(f) } else { inv.apply(f) }),
            Backend::Sparse { a, a_adj, diag, diag_adj } => {
                let (m, dg) = if adjoint { (a_adj, diag_adj) } else { (a, diag) };
                let tol = (self.tol * 0.1).max(1e-15);
                let r = gmres(|x| m.mul_vec(x), f, Some(dg), tol, GMRES_RESTART, GMRES_MAX_ITER);
                if !r.converged {
                    return Err(ResolventError::IterationLimit(r.iterations));
                }
                Ok(r.x)
            }
        }
    }

    fn apply_shifted(&self, u: &DVector<Complex64>, adjoint: bool) -> Option<DVector<Complex64>> {
        match &self.backend {
            Backend::Dense { a, .. } => Some(if adjoint { a.adjoint() * u } else { a * u }),
            Backend::Sparse { a, a_adj, .. } => Some(if adjoint { a_adj.mul_vec(u) } else { a.mul_vec(u) }),
            Backend::Multiplier { .. } => None,
        }
    }

    fn checked(&self, f: &DVector<Complex64>, adjoint: bool) -> Result<DVector<Complex64>, ResolventError> {
        if f.len() != self.n {
            return Err(OperatorError::ShapeMismatch { expected: self.n, got: f.len() }.into());
        }
        let u = self.raw_solve(f, adjoint)?;
        if let Some(au) = self.apply_shifted(&u, adjoint) {
            let fnorm = f.norm();
            let residual = (au - f).norm();
            if residual > self.tol * fnorm.max(f64::MIN_POSITIVE) {
                return Err(ResolventError::Residual { residual: residual / fnorm, tol: self.tol });
            }
        }
        Ok(u)
    }

    /// `u = (λI - L)^{-1} f`.
    pub fn solve(&self, f: &DVector<Complex64>) -> Result<DVector<Complex64>, ResolventError> {
        self.checked(f, false)
    }

    /// `u = (λI - L)^{-*} f`.
    pub fn solve_adjoint(&self, f: &DVector<Complex64>) -> Result<DVector<Complex64>, ResolventError> {
        self.checked(f, true)
    }

    /// Dense `(λI - L)^{-1}` (column by column for non-dense backends).
    pub fn inverse(&self) -> Result<DMatrix<Complex64>, ResolventError> {
        if let Backend::Dense { lu, .. } = &self.backend {
            return lu.try_inverse().ok_or_else(|| spectrum_hit(self.lambda, f64::INFINITY));
        }
        let mut out = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let mut e = DVector::zeros(self.n);
            e[j] = Complex64::new(1.0, 0.0);
            out.set_column(j, &self.raw_solve(&e, false)?);
        }
        Ok(out)
    }

    /// Largest singular value of the resolvent.
    pub fn norm_l2(&self) -> Result<f64, ResolventError> {
        match &self.backend {
            Backend::Dense { a, .. } => {
                let sv = a.clone().singular_values();
                let (smin, smax) = (sv.min(), sv.max());
                if smin <= smax / CONDITION_LIMIT {
                    return Err(spectrum_hit(self.lambda, smax / smin));
                }
                Ok(1.0 / smin)
            }
            Backend::Multiplier { sigma_min, .. } => Ok(1.0 / sigma_min),
            Backend::Sparse { .. } => {
                let mut v = DVector::from_fn(self.n, |i, _| Complex64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05));
                v /= Complex64::new(v.norm(), 0.0);
                let mut prev = 0.0;
                for it in 0..POWER_MAX_ITER {
                    let w = self.raw_solve(&self.raw_solve(&v, false)?, true)?;
                    let est = w.norm().sqrt();
                    v = &w / Complex64::new(w.norm(), 0.0);
                    if it > 2 && (est - prev).abs() <= 1e-10 * est {
                        return Ok(est);
                    }
                    prev = est;
                }
                Err(ResolventError::IterationLimit(POWER_MAX_ITER))
            }
        }
    }

    /// `‖(λI - L)^{-1}‖_∞` (maximum absolute row sum); estimated for sparse storage.
    pub fn norm_linf(&self, op: &DiscreteOperator) -> Result<f64, ResolventError> {
        match &self.backend {
            Backend::Dense { .. } => Ok(norm_inf_dense(&self.inverse()?)),
            Backend::Multiplier { inv, .. } => {
                // translation invariance: the row sum for component r equals the
                // l1 norm of the r-rows of the columns through point 0
                let d = op.rank();
                let mut sums = vec![0.0; d];
                for c in 0..d {
                    let mut e = DVector::zeros(self.n);
                    e[c] = Complex64::new(1.0, 0.0);
                    let col = inv.apply(&e);
                    for (i, v) in col.iter().enumerate() {
                        sums[i % d] += v.norm();
                    }
                }
                Ok(sums.into_iter().fold(0.0, f64::max))
            }
            Backend::Sparse { .. } => norm1_estimate(self.n, |x| self.raw_solve(x, true), |x| self.raw_solve(x, false)),
        }
    }
}

/// `(λI - L)^{-1} f` with residual check.
pub fn solve_resolvent(op: &DiscreteOperator, lambda: Complex64, f: &DVector<Complex64>, tol: f64) -> Result<DVector<Complex64>, ResolventError> {
    ShiftedSolver::new(op, lambda, tol)?.solve(f)
}

/// `‖Rf‖_{k,α} / ‖f‖_{k,α}` for a single probe (flat-metric Hölder norm).
pub fn holder_ratio(solver: &ShiftedSolver, metric: &MetricField, f: &GridField, cfg: &NormConfig) -> Result<f64, ResolventError> {
    let u = f.with_values(solver.solve(f.values())?)?;
    let den = holder_norm(f, metric, cfg)?;
    if den == 0.0 {
        return Err(ResolventError::Invalid("probe has zero norm".into()));
    }
    Ok(holder_norm(&u, metric, cfg)? / den)
}

/// Operator-norm estimate of `(λI - L)^{-1}` in the requested surrogate.
pub fn resolvent_norm(op: &DiscreteOperator, query: &ResolventQuery) -> Result<f64, ResolventError> {
    let solver = ShiftedSolver::new(op, query.lambda, query.tol)?;
    match query.surrogate {
        Surrogate::L2 => solver.norm_l2(),
        Surrogate::Linf => solver.norm_linf(op),
        Surrogate::Holder(h) => {
            let metric = MetricField::flat(op.grid());
            let cfg = NormConfig::new(op.grid(), h.k, h.alpha);
            let probes = band_limited_probes(op.grid(), op.rank(), h.probes, h.seed, 2.0);
            let mut best = 0.0f64;
            for f in &probes {
                best = best.max(holder_ratio(&solver, &metric, f, &cfg)?);
            }
            Ok(best)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    SpectrumHit { condition: f64 },
    Error { message: String },
}

impl RowStatus {
    pub fn tag(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::SpectrumHit { .. } => "spectrum_hit",
            RowStatus::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: Complex64,
    pub norm: Option<f64>,
    /// `|λ| · ‖R(λ)‖`.
    pub scaled_norm: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub surrogate: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_lambda,im_lambda,norm,scaled_norm,status\n");
        for r in &self.rows {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_else(|| "nan".into());
            s.push_str(&format!("{:.17e},{:.17e},{},{},{}\n", r.lambda.re, r.lambda.im, f(r.norm), f(r.scaled_norm), r.status.tag()));
        }
        s
    }

    /// Largest `|λ|·‖R‖` over successful rows.
    pub fn sup_scaled(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.scaled_norm).reduce(f64::max)
    }
}

/// Evaluates the resolvent norm at every `λ`; spectrum hits are recorded per row.
pub fn sweep_sector(op: &DiscreteOperator, lambdas: &[Complex64], surrogate: Surrogate, tol: f64) -> SweepTable {
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let q = ResolventQuery { lambda, surrogate, tol };
            match resolvent_norm(op, &q) {
                Ok(norm) => SweepRow { lambda, norm: Some(norm), scaled_norm: Some(lambda.norm() * norm), status: RowStatus::Ok },
                Err(ResolventError::SpectrumHit { condition, .. }) => {
                    SweepRow { lambda, norm: None, scaled_norm: None, status: RowStatus::SpectrumHit { condition } }
                }
                Err(e) => SweepRow { lambda, norm: None, scaled_norm: None, status: RowStatus::Error { message: e.to_string() } },
            }
        })
        .collect();
    SweepTable { surrogate: surrogate.to_string(), rows }
}

/// Sector data `(ω, θ, C)` backed by a sweep. Only [`fit_sector`] creates these.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorEstimate {
    omega: f64,
    theta: f64,
    constant: f64,
    rows: usize,
    surrogate: String,
    degenerate: bool,
}

impl SectorEstimate {
    pub fn omega(&self) -> f64 {
        self.omega
    }
    /// Half-opening of the excluded cone: the sector is `|arg(λ-ω)| > θ`.
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn constant(&self) -> f64 {
        self.constant
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn surrogate(&self) -> &str {
        &self.surrogate
    }
    /// `θ = 0`: the ball argument gives no opening beyond the half-plane.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
    pub fn contains(&self, lambda: Complex64) -> bool {
        let z = lambda - self.omega;
        z.norm() > 0.0 && z.arg().abs() > self.theta
    }
}

/// Opening guaranteed by balls of radius `|λ-ω|/(2C)` centred on a line.
pub fn sector_angle(c: f64) -> f64 {
    FRAC_PI_2 - (1.0 / (2.0 * c)).min(1.0).asin()
}

/// `C = max |λ-ω|·‖R(λ)‖`, `θ = π/2 - arcsin(min(1, 1/(2C)))`.
pub fn fit_sector(sweep: &SweepTable, omega: f64) -> Result<SectorEstimate, ResolventError> {
    if sweep.rows.is_empty() {
        return Err(ResolventError::CannotFit("empty sweep".into()));
    }
    let mut c = 0.0f64;
    for r in &sweep.rows {
        match (r.status.clone(), r.norm) {
            (RowStatus::Ok, Some(n)) if n.is_finite() => c = c.max((r.lambda - omega).norm() * n),
            _ => {
                return Err(ResolventError::CannotFit(format!(
                    "row at lambda = {}{:+}i is {}",
                    r.lambda.re,
                    r.lambda.im,
                    r.status.tag()
                )))
            }
        }
    }
    if !(c > 0.0) {
        return Err(ResolventError::CannotFit("all rows have zero norm".into()));
    }
    let theta = sector_angle(c);
    Ok(SectorEstimate { omega, theta, constant: c, rows: sweep.rows.len(), surrogate: sweep.surrogate.clone(), degenerate: theta <= 0.0 })
}

/// `(ε, ζ)` with `ε = |λ|^{-1/m}` and `ζ = λ/|λ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalPoint {
    pub eps: f64,
    pub zeta: Complex64,
    pub m: usize,
}

impl SemiclassicalPoint {
    /// `ε^m` as used in `ζ - ε^m L`.
    pub fn eps_power(&self) -> f64 {
        self.eps.powi(self.m as i32)
    }
}

pub fn semiclassical_reduce(lambda: Complex64, m: usize) -> Result<SemiclassicalPoint, ResolventError> {
    let r = lambda.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(ResolventError::ZeroLambda);
    }
    if m == 0 {
        return Err(ResolventError::Invalid("order must be positive".into()));
    }
    Ok(SemiclassicalPoint { eps: r.powf(-1.0 / m as f64), zeta: lambda / r, m })
}

pub fn semiclassical_expand(p: &SemiclassicalPoint) -> Complex64 {
    p.zeta * p.eps.powf(-(p.m as f64))
}

/// `(ζ - ε^m L)^{-1} f`.
pub fn semiclassical_solve(op: &DiscreteOperator, p: &SemiclassicalPoint, f: &DVector<Complex64>, tol: f64) -> Result<DVector<Complex64>, ResolventError> {
    let scaled = op.scaled(Complex64::new(p.eps_power(), 0.0));
    solve_resolvent(&scaled, p.zeta, f, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{PeriodicGrid, Scheme};
    use crate::operator::{assemble_with, flat_bilaplacian, flat_laplacian, AssemblyMode};
    use crate::symbol::{Coefficient, SymbolPolynomial};
    use std::f64::consts::PI;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    fn variable_operator(n: usize) -> DiscreteOperator {
        let grid = PeriodicGrid::new(1, n, 2.0 * PI).unwrap();
        let a = grid.sample(|x| c(-(1.0 + 0.3 * x[0].sin())));
        let sym = SymbolPolynomial::new(1, 1, 2).unwrap().on_grid(&grid).unwrap()
            .with_term(&[2], Coefficient::scalar_field(a)).unwrap()
            .with_term(&[1], Coefficient::scalar(c(0.2))).unwrap();
        assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Dense).unwrap()
    }

    #[test]
    fn eigenfunction_solve() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let f = DVector::from_vec(grid.sample(|x| Complex64::new(0.0, 3.0 * x[0]).exp()));
        let u = solve_resolvent(&op, c(-1.0), &f, 1e-12).unwrap();
        assert!((u - &f / c(-10.0)).norm() < 1e-12);
    }

    #[test]
    fn eigenvalue_is_spectrum_hit() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let f = DVector::from_element(16, c(1.0));
        assert!(matches!(solve_resolvent(&op, c(4.0), &f, 1e-10), Err(ResolventError::SpectrumHit { .. })));
        let dense = op.densified();
        assert!(matches!(solve_resolvent(&dense, c(4.0), &f, 1e-10), Err(ResolventError::SpectrumHit { .. })));
    }

    #[test]
    fn dense_random_solve_residual() {
        let op = variable_operator(8);
        let f = DVector::from_fn(8, |i, _| Complex64::new((i as f64 * 1.3).sin(), (i as f64 * 0.7).cos()));
        let lambda = Complex64::new(-0.5, 2.0);
        let u = solve_resolvent(&op, lambda, &f, 1e-12).unwrap();
        let mut a = -op.to_dense();
        for i in 0..8 {
            a[(i, i)] += lambda;
        }
        assert!((&a * &u - &f).norm() <= 1e-10 * f.norm());
        let oracle = a.clone().try_inverse().unwrap() * &f;
        assert!((u - oracle).norm() < 1e-10);
    }

    #[test]
    fn sparse_solver_matches_dense() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let a = grid.sample(|x| c(-(1.0 + 0.3 * x[0].sin())));
        let sym = SymbolPolynomial::new(1, 1, 2).unwrap().on_grid(&grid).unwrap()
            .with_term(&[2], Coefficient::scalar_field(a)).unwrap();
        let dense = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Dense).unwrap();
        let sparse = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Sparse).unwrap();
        let lambda = Complex64::new(-1.0, 3.0);
        let f = DVector::from_fn(32, |i, _| c((i as f64).sin()));
        let ud = solve_resolvent(&dense, lambda, &f, 1e-12).unwrap();
        let us = solve_resolvent(&sparse, lambda, &f, 1e-12).unwrap();
        assert!((ud - us).norm() < 1e-9);
        for s in [Surrogate::L2, Surrogate::Linf] {
            let q = ResolventQuery::new(lambda, s, 1e-12).unwrap();
            let nd = resolvent_norm(&dense, &q).unwrap();
            let ns = resolvent_norm(&sparse, &q).unwrap();
            assert!((nd - ns).abs() < 1e-6 * nd, "{s}: {nd} vs {ns}");
        }
    }

    #[test]
    fn hermitian_l2_norm_is_inverse_distance_to_spectrum() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Fd2).unwrap().densified();
        let mut a = op.to_dense();
        for p in 0..64 {
            a[(p, p)] += c(0.5 * (p as f64 * 0.3).cos());
        }
        let op = DiscreteOperator::new(grid.clone(), 1, 2, Scheme::Fd2, Representation::Dense(a.clone()), "h").unwrap();
        let eig = a.symmetric_eigenvalues();
        for lambda in [Complex64::new(-1.0, 0.5), Complex64::new(2.0, 1.0), Complex64::new(0.3, -0.2)] {
            let dist = eig.iter().map(|&mu| (lambda - mu).norm()).fold(f64::INFINITY, f64::min);
            let q = ResolventQuery::new(lambda, Surrogate::L2, 1e-10).unwrap();
            assert!((resolvent_norm(&op, &q).unwrap() * dist - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_real_lambda_scaled_norm_at_most_one() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let lambdas: Vec<Complex64> = (0..10).map(|i| c(-(10f64.powf(i as f64 * 0.4 - 1.0)))).collect();
        let table = sweep_sector(&op, &lambdas, Surrogate::L2, 1e-10);
        for r in &table.rows {
            assert!(r.scaled_norm.unwrap() <= 1.0 + 1e-12);
        }
        assert!(sweep_sector(&op, &[], Surrogate::L2, 1e-10).rows.is_empty());
    }

    #[test]
    fn linf_norm_of_multiplier_matches_dense_inverse() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let op = flat_bilaplacian(&grid, 1, Scheme::Spectral).unwrap();
        let lambda = Complex64::new(-2.0, 1.0);
        let q = ResolventQuery::new(lambda, Surrogate::Linf, 1e-10).unwrap();
        let m = resolvent_norm(&op, &q).unwrap();
        let d = resolvent_norm(&op.densified(), &q).unwrap();
        assert!((m - d).abs() < 1e-9 * d, "{m} vs {d}");
    }

    #[test]
    fn holder_surrogate_on_constant_probe() {
        let grid = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let solver = ShiftedSolver::new(&op, c(-1.0), 1e-12).unwrap();
        let f = GridField::from_real(grid.clone(), &[1.0; 64]).unwrap();
        let cfg = NormConfig::new(&grid, 0, 0.5);
        let r = holder_ratio(&solver, &MetricField::flat(&grid), &f, &cfg).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm1_estimate_exact_on_small_matrices() {
        let a = DMatrix::from_fn(6, 6, |i, j| Complex64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, (i as f64 - j as f64) * 0.1));
        let est: Result<f64, ()> = norm1_estimate(6, |x| Ok(&a * x), |x| Ok(a.adjoint() * x));
        let exact = norm1_dense(&a);
        let est = est.unwrap();
        assert!(est <= exact * (1.0 + 1e-12));
        assert!(est >= exact / 3.0);
    }

    #[test]
    fn reduction_arithmetic() {
        let p = semiclassical_reduce(c(-16.0), 4).unwrap();
        assert!((p.eps - 0.5).abs() < 1e-15);
        assert!((p.zeta - c(-1.0)).norm() < 1e-15);
        let p = semiclassical_reduce(c(-1.0), 2).unwrap();
        assert_eq!((p.eps, p.zeta), (1.0, c(-1.0)));
        assert!(matches!(semiclassical_reduce(c(0.0), 2), Err(ResolventError::ZeroLambda)));
        let lambda = Complex64::new(-3.0, 7.0);
        let p = semiclassical_reduce(lambda, 4).unwrap();
        assert!((semiclassical_expand(&p) - lambda).norm() < 1e-12);
        assert!((p.zeta.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduction_operator_identity() {
        let grid = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let op = flat_bilaplacian(&grid, 1, Scheme::Spectral).unwrap().densified();
        let f = DVector::from_fn(64, |i, _| Complex64::new((i as f64 * 0.9).sin(), (i as f64 * 0.2).cos()));
        let lambda = c(-16.0);
        let p = semiclassical_reduce(lambda, 4).unwrap();
        let lhs = solve_resolvent(&op, lambda, &f, 1e-10).unwrap() * lambda;
        let rhs = semiclassical_solve(&op, &p, &f, 1e-10).unwrap() * p.zeta;
        assert!((lhs - rhs).norm() / f.norm() < 1e-10);
    }

    #[test]
    fn sweep_invariant_under_reduction() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let op = flat_bilaplacian(&grid, 1, Scheme::Spectral).unwrap();
        for lambda in [Complex64::new(-1.0, 30.0), Complex64::new(-5.0, -0.5), c(-200.0)] {
            let q = ResolventQuery::new(lambda, Surrogate::L2, 1e-10).unwrap();
            let direct = lambda.norm() * resolvent_norm(&op, &q).unwrap();
            let p = semiclassical_reduce(lambda, 4).unwrap();
            let scaled = op.scaled(c(p.eps_power()));
            let q2 = ResolventQuery::new(p.zeta, Surrogate::L2, 1e-10).unwrap();
            let reduced = resolvent_norm(&scaled, &q2).unwrap();
            assert!((direct - reduced).abs() < 1e-10 * direct);
        }
    }

    #[test]
    fn fit_sector_constants() {
        assert!((sector_angle(0.5) - 0.0).abs() < 1e-15);
        assert!((sector_angle(5.0) - (FRAC_PI_2 - 0.1f64.asin())).abs() < 1e-15);
        let mk = |c: f64| SweepTable {
            surrogate: "l2".into(),
            rows: vec![SweepRow { lambda: Complex64::new(-1.0, 1.0), norm: Some(c / 1.0), scaled_norm: None, status: RowStatus::Ok }],
        };
        let est = fit_sector(&mk(0.5), -1.0).unwrap();
        assert!(est.is_degenerate());
        let est = fit_sector(&mk(5.0), -1.0).unwrap();
        assert!((est.constant() - 5.0).abs() < 1e-14);
        assert!(!est.is_degenerate());
        assert!(fit_sector(&SweepTable { surrogate: "l2".into(), rows: vec![] }, -1.0).is_err());
        let bad = SweepTable {
            surrogate: "l2".into(),
            rows: vec![SweepRow { lambda: c(1.0), norm: None, scaled_norm: None, status: RowStatus::SpectrumHit { condition: 1e13 } }],
        };
        assert!(matches!(fit_sector(&bad, -1.0), Err(ResolventError::CannotFit(_))));
    }

    /// Every point of the fitted sector lying in the right of the line `Re λ = ω`
    /// must be covered by a Neumann ball `|λ - (ω + iμ)| ≤ |μ|/(2C)`.
    #[test]
    fn sector_angle_matches_ball_coverage() {
        for cst in [0.75, 1.0, 2.0, 5.0, 20.0] {
            let theta = sector_angle(cst);
            let omega = -1.0;
            for i in 1..200 {
                let phi = theta + (FRAC_PI_2 - theta) * (i as f64 / 200.0);
                for r in [0.01, 1.0, 37.0] {
                    let lam = Complex64::from_polar(r, phi) + omega;
                    let covered = (0..4000).any(|k| {
                        let mu = r * (0.5 + 1.5 * k as f64 / 4000.0);
                        (lam - Complex64::new(omega, mu)).norm() <= mu / (2.0 * cst) * (1.0 + 1e-9)
                    });
                    assert!(covered, "C={cst} phi={phi} r={r}");
                }
            }
            // and slightly beyond the angle, coverage fails
            let phi = theta * 0.97;
            let lam = Complex64::from_polar(1.0, phi) + omega;
            let covered = (0..4000).any(|k| {
                let mu = 0.5 + 1.5 * k as f64 / 4000.0;
                (lam - Complex64::new(omega, mu)).norm() <= mu / (2.0 * cst)
            });
            assert!(!covered);
        }
    }

    #[test]
    fn flat_laplacian_fit_on_half_plane() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let omega = -0.5;
        let lambdas: Vec<Complex64> = (0..41).map(|i| Complex64::new(omega, 10f64.powf(-2.0 + 0.1 * i as f64))).collect();
        let table = sweep_sector(&op, &lambdas, Surrogate::L2, 1e-10);
        let est = fit_sector(&table, omega).unwrap();
        // oracle: |λ - ω| / dist(λ, [0, ∞)) for the nonnegative self-adjoint operator
        let oracle = lambdas.iter().map(|l| (l - omega).norm() / l.norm()).fold(0.0, f64::max);
        assert!(est.constant() <= oracle * (1.0 + 1e-10));
        assert!((est.constant() - 1.0).abs() < 1e-3);
        assert!(est.theta() > 0.0);
    }

    #[test]
    fn resolvent_identity_on_probe() {
        let op = variable_operator(16);
        let f = DVector::from_fn(16, |i, _| Complex64::new((i as f64).cos(), 0.3));
        let (l1, l2) = (Complex64::new(-1.0, 2.0), Complex64::new(-3.0, -1.0));
        let s1 = ShiftedSolver::new(&op, l1, 1e-12).unwrap();
        let s2 = ShiftedSolver::new(&op, l2, 1e-12).unwrap();
        let lhs = s1.solve(&f).unwrap() - s2.solve(&f).unwrap();
        let rhs = s1.solve(&s2.solve(&f).unwrap()).unwrap() * (l2 - l1);
        assert!((lhs - rhs).norm() < 1e-12 * f.norm());
    }
}
