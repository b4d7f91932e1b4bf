//! Frozen-coefficient parametrix `G_ε ≈ (ζ - ε^m L)^{-1}` with Taylor
//! corrections, its residuals and Neumann inversion.
//!
//! Column `j` of `G_ε` is built around the base point `z = x_j`. Writing
//! `L = L_0 + Σ_i L_i` with `L_0` the operator frozen at `z` and `L_i` the
//! order-`i` Taylor terms `(∂^β a_J)(z)/β! (x-z)^β ∂^J`, `|β| = i`, the layers
//! solve `(ζ - ε^m L_0) g_k = ε^m Σ_{i=1..k} L_i g_{k-i}` and the column is
//! `g_0 + … + g_K`. Each layer of a Taylor order `i` gains one power of `ε`
//! because the kernels live at scale `ε`.

use super::KernelError;
use crate::grid::{partial, semiclassical_holder_norm, FftNd, GridField, MetricField, NormConfig, PeriodicGrid, Scheme};
use crate::operator::{assemble_with, AssemblyMode, DiscreteOperator, OperatorError, Representation};
use crate::resolvent::{scale_adapted_probes, Surrogate};
use crate::stats::log_log_fit;
use crate::symbol::{multi_factorial, Coefficient, SymbolPolynomial};
use crate::grid::{holder_norm, multi_indices};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

/// Highest Taylor order used in the correction layers.
pub const MAX_TRUNCATION_ORDER: usize = 4;
/// Parametrices are stored densely.
const PARAMETRIX_LIMIT: usize = 8192;
const NEUMANN_MAX_TERMS: usize = 500;

type Taylor = Vec<(Vec<usize>, Vec<usize>, Coefficient)>;

/// Dense parametrix at one `(ζ, ε)`, together with the operator it inverts.
#[derive(Debug, Clone)]
pub struct Parametrix {
    op: DiscreteOperator,
    zeta: Complex64,
    eps: f64,
    truncation: usize,
    matrix: DMatrix<Complex64>,
    q1_linf: f64,
}

impl Parametrix {
    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }
    pub fn zeta(&self) -> Complex64 {
        self.zeta
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn truncation(&self) -> usize {
        self.truncation
    }
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }
    /// `‖I - (ζ - ε^m L)G_ε‖_∞`.
    pub fn q1_linf(&self) -> f64 {
        self.q1_linf
    }
    fn eps_m(&self) -> Complex64 {
        Complex64::new(self.eps.powi(self.op.order() as i32), 0.0)
    }

    pub fn apply(&self, f: &DVector<Complex64>) -> DVector<Complex64> {
        &self.matrix * f
    }

    /// `(ζ - ε^m L) v`.
    pub fn apply_shifted(&self, v: &DVector<Complex64>) -> Result<DVector<Complex64>, OperatorError> {
        Ok(v * self.zeta - self.op.apply(v)? * self.eps_m())
    }

    /// `Q1 = I - (ζ - ε^m L) G_ε`.
    pub fn q1_matrix(&self) -> DMatrix<Complex64> {
        let lg = left_multiply(&self.op, &self.matrix);
        let n = self.matrix.nrows();
        DMatrix::identity(n, n) - (&self.matrix * self.zeta - lg * self.eps_m())
    }

    /// `Q2 = I - G_ε (ζ - ε^m L)`.
    pub fn q2_matrix(&self) -> DMatrix<Complex64> {
        let gl = right_multiply(&self.matrix, &self.op);
        let n = self.matrix.nrows();
        DMatrix::identity(n, n) - (&self.matrix * self.zeta - gl * self.eps_m())
    }
}

/// `L M` exploiting sparse storage.
fn left_multiply(op: &DiscreteOperator, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    match op.repr() {
        Representation::Dense(a) => a * m,
        Representation::Sparse(a) => {
            let mut out = DMatrix::zeros(a.nrows(), m.ncols());
            for (r, c, v) in a.triplets() {
                for j in 0..m.ncols() {
                    out[(r, j)] += v * m[(c, j)];
                }
            }
            out
        }
        Representation::Multiplier(_) => {
            let mut out = DMatrix::zeros(m.nrows(), m.ncols());
            for j in 0..m.ncols() {
                out.set_column(j, &op.apply(&m.column(j).into_owned()).expect("shape"));
            }
            out
        }
    }
}

/// `M L` exploiting sparse storage.
fn right_multiply(m: &DMatrix<Complex64>, op: &DiscreteOperator) -> DMatrix<Complex64> {
    match op.repr() {
        Representation::Dense(a) => m * a,
        Representation::Sparse(a) => {
            let mut out = DMatrix::zeros(m.nrows(), a.ncols());
            for (r, c, v) in a.triplets() {
                let src = m.column(r).into_owned();
                let mut dst = out.column_mut(c);
                dst.axpy(v, &src, Complex64::new(1.0, 0.0));
            }
            out
        }
        Representation::Multiplier(_) => m * op.to_dense(),
    }
}

fn row_sum_norm(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn taylor_layers(sym: &SymbolPolynomial, k: usize) -> Result<Vec<Taylor>, KernelError> {
    let n = sym.dim();
    let mut layers = vec![Vec::new(); k + 1];
    for (j, a) in sym.terms() {
        for (i, layer) in layers.iter_mut().enumerate().skip(1) {
            for beta in multi_indices(n, i) {
                let c = sym.coefficient_derivative(a, &beta)?;
                if c.is_zero() {
                    continue;
                }
                let scaled = match c {
                    Coefficient::Constant(m) => Coefficient::Constant(m / Complex64::new(multi_factorial(&beta), 0.0)),
                    Coefficient::Field(f) => {
                        let s = 1.0 / multi_factorial(&beta);
                        Coefficient::Field(f.into_iter().map(|e| e.into_iter().map(|z| z * s).collect()).collect())
                    }
                };
                layer.push((j.clone(), beta, scaled));
            }
        }
    }
    Ok(layers)
}

struct FrozenSolver<'a> {
    grid: &'a PeriodicGrid,
    fft: FftNd,
    d: usize,
    /// per-`J` discrete symbol arrays
    symbols: Vec<(Vec<usize>, Vec<Complex64>)>,
}

impl<'a> FrozenSolver<'a> {
    fn new(grid: &'a PeriodicGrid, sym: &SymbolPolynomial, scheme: Scheme) -> Self {
        let symbols = sym
            .terms()
            .map(|(j, _)| (j.clone(), (0..grid.len()).map(|k| grid.multi_derivative_symbol(k, j, scheme)).collect()))
            .collect();
        Self { grid, fft: FftNd::new(grid), d: sym.rank(), symbols }
    }

    /// Inverse blocks of `ζ - ε^m σ_frozen(k)` at base point `p`.
    fn blocks(&self, sym: &SymbolPolynomial, p: usize, zeta: Complex64, eps_m: f64) -> Result<Vec<DMatrix<Complex64>>, KernelError> {
        let d = self.d;
        let coeffs: Vec<DMatrix<Complex64>> = sym.terms().map(|(_, c)| c.at(p, d)).collect();
        (0..self.grid.len())
            .map(|k| {
                let mut b = DMatrix::from_diagonal_element(d, d, zeta);
                for (c, (_, s)) in coeffs.iter().zip(&self.symbols) {
                    b -= c * (s[k] * eps_m);
                }
                b.try_inverse().ok_or_else(|| KernelError::Singular { xi: self.grid.wavevector(k) })
            })
            .collect()
    }

    fn solve(&self, blocks: &[DMatrix<Complex64>], rhs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let d = self.d;
        let np = self.grid.len();
        let hats: Vec<Vec<Complex64>> = rhs
            .iter()
            .map(|c| {
                let mut v = c.clone();
                self.fft.forward(&mut v);
                v
            })
            .collect();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); np]; d];
        for k in 0..np {
            for r in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..d {
                    acc += blocks[k][(r, c)] * hats[c][k];
                }
                out[r][k] = acc;
            }
        }
        for o in out.iter_mut() {
            self.fft.inverse(o);
        }
        out
    }
}

/// Builds `G_ε` for `(ζ - ε^m L)` with `K` Taylor correction layers.
pub fn build_parametrix(
    sym: &SymbolPolynomial,
    grid: &PeriodicGrid,
    scheme: Scheme,
    zeta: Complex64,
    eps: f64,
    k: usize,
) -> Result<Parametrix, KernelError> {
    if !(zeta.re < 0.0) {
        return Err(KernelError::ZetaNotLeft(zeta.re));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(KernelError::Precondition(format!("eps = {eps} not in (0,1]")));
    }
    if k > MAX_TRUNCATION_ORDER {
        return Err(KernelError::Truncation { requested: k, max: MAX_TRUNCATION_ORDER });
    }
    let d = sym.rank();
    let np = grid.len();
    let n_unknowns = np * d;
    if n_unknowns > PARAMETRIX_LIMIT {
        return Err(OperatorError::TooLarge(n_unknowns).into());
    }
    let mode = if scheme == Scheme::Fd2 { AssemblyMode::Sparse } else { AssemblyMode::Auto };
    let op = assemble_with(sym, grid, scheme, mode)?;
    let m = sym.order();
    let eps_m = eps.powi(m as i32);
    let layers = taylor_layers(sym, k)?;
    let solver = FrozenSolver::new(grid, sym, scheme);
    let n = grid.dim();
    let positions: Vec<Vec<f64>> = (0..np).map(|p| grid.position(p)).collect();
    let constant = sym.is_constant();
    let mut shared_blocks = None;
    let mut g = DMatrix::zeros(n_unknowns, n_unknowns);
    for j in 0..np {
        let blocks = if constant {
            if shared_blocks.is_none() {
                shared_blocks = Some(solver.blocks(sym, 0, zeta, eps_m)?);
            }
            shared_blocks.as_ref().unwrap().clone()
        } else {
            solver.blocks(sym, j, zeta, eps_m)?
        };
        let disp: Vec<Vec<f64>> = (0..n).map(|a| positions.iter().map(|x| grid.periodic_difference(x[a], positions[j][a])).collect()).collect();
        for c in 0..d {
            let mut e = vec![vec![Complex64::new(0.0, 0.0); np]; d];
            e[c][j] = Complex64::new(1.0, 0.0);
            let mut gs = vec![solver.solve(&blocks, &e)];
            for lvl in 1..=k {
                let mut rhs = vec![vec![Complex64::new(0.0, 0.0); np]; d];
                for i in 1..=lvl {
                    let src = &gs[lvl - i];
                    for (jj, beta, coeff) in &layers[i] {
                        let t = coeff.at(j, d);
                        let derivs: Vec<Vec<Complex64>> = src.iter().map(|f| partial(grid, f, jj, scheme)).collect::<Result<_, _>>()?;
                        for p in 0..np {
                            let mut w = eps_m;
                            for (a, &b) in beta.iter().enumerate() {
                                w *= disp[a][p].powi(b as i32);
                            }
                            if w == 0.0 {
                                continue;
                            }
                            for r in 0..d {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for cc in 0..d {
                                    acc += t[(r, cc)] * derivs[cc][p];
                                }
                                rhs[r][p] += acc * w;
                            }
                        }
                    }
                }
                gs.push(solver.solve(&blocks, &rhs));
            }
            let col = j * d + c;
            for layer in &gs {
                for p in 0..np {
                    for r in 0..d {
                        g[(p * d + r, col)] += layer[r][p];
                    }
                }
            }
        }
    }
    let mut par = Parametrix { op, zeta, eps, truncation: k, matrix: g, q1_linf: 0.0 };
    par.q1_linf = row_sum_norm(&par.q1_matrix());
    Ok(par)
}

fn matrix_norm(m: &DMatrix<Complex64>, surrogate: &Surrogate, grid: &PeriodicGrid, d: usize) -> Result<f64, KernelError> {
    Ok(match surrogate {
        Surrogate::L2 => m.clone().singular_values().max(),
        Surrogate::Linf => row_sum_norm(m),
        Surrogate::Holder(h) => {
            let metric = MetricField::flat(grid);
            let cfg = NormConfig::new(grid, h.k, h.alpha);
            let mut best = 0.0f64;
            for f in crate::resolvent::band_limited_probes(grid, d, h.probes, h.seed, 2.0) {
                let qf = f.with_values(m * f.values())?;
                best = best.max(holder_norm(&qf, &metric, &cfg)? / holder_norm(&f, &metric, &cfg)?);
            }
            best
        }
    })
}

/// `(‖Q1‖, ‖Q2‖)` in the given surrogate.
pub fn residual_norms(par: &Parametrix, surrogate: &Surrogate) -> Result<(f64, f64), KernelError> {
    let grid = par.op.grid();
    let d = par.op.rank();
    let q1 = match surrogate {
        Surrogate::Linf => par.q1_linf,
        s => matrix_norm(&par.q1_matrix(), s, grid, d)?,
    };
    let q2 = matrix_norm(&par.q2_matrix(), surrogate, grid, d)?;
    Ok((q1, q2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametrixRecord {
    pub eps: f64,
    pub q1: f64,
    pub q2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametrixBundle {
    pub truncation: usize,
    pub surrogate: String,
    pub records: Vec<ParametrixRecord>,
    /// Log-log slope of `‖Q1‖` against `ε`.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

impl ParametrixBundle {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,order,q1,q2\n");
        for r in &self.records {
            s.push_str(&format!("{:.17e},{},{:.17e},{:.17e}\n", r.eps, self.truncation, r.q1, r.q2));
        }
        s
    }
}

/// Builds the parametrix at every `ε` and fits the residual decay order.
pub fn parametrix_family(
    sym: &SymbolPolynomial,
    grid: &PeriodicGrid,
    scheme: Scheme,
    zeta: Complex64,
    eps_grid: &[f64],
    k: usize,
    surrogate: &Surrogate,
) -> Result<ParametrixBundle, KernelError> {
    let mut records = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let par = build_parametrix(sym, grid, scheme, zeta, eps, k)?;
        let (q1, q2) = residual_norms(&par, surrogate)?;
        records.push(ParametrixRecord { eps, q1, q2 });
    }
    let fit = log_log_fit(&records.iter().map(|r| r.eps).collect::<Vec<_>>(), &records.iter().map(|r| r.q1).collect::<Vec<_>>());
    Ok(ParametrixBundle {
        truncation: k,
        surrogate: surrogate.to_string(),
        records,
        slope: fit.map(|f| f.slope),
        r_squared: fit.map(|f| f.r_squared),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannResult {
    pub u: DVector<Complex64>,
    pub terms: usize,
    /// `‖(ζ - ε^m L)u - f‖_∞ / ‖f‖_∞`.
    pub residual: f64,
}

fn sup(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `u = G_ε Σ_j Q1^j f`, stopped once an increment drops below `tol·‖f‖_∞`.
pub fn neumann_invert(par: &Parametrix, f: &DVector<Complex64>, tol: f64) -> Result<NeumannResult, KernelError> {
    if par.q1_linf >= 1.0 {
        return Err(KernelError::NonContractive(par.q1_linf));
    }
    let fnorm = sup(f);
    let mut acc = f.clone();
    let mut v = f.clone();
    let mut terms = 1;
    while sup(&v) > tol * fnorm {
        if terms >= NEUMANN_MAX_TERMS {
            return Err(KernelError::NeumannLimit(terms));
        }
        let gv = par.apply(&v);
        v = &v - par.apply_shifted(&gv)?;
        acc += &v;
        terms += 1;
    }
    let u = par.apply(&acc);
    let residual = sup(&(par.apply_shifted(&u)? - f)) / fnorm.max(f64::MIN_POSITIVE);
    Ok(NeumannResult { u, terms, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderUniformityRow {
    pub eps: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderUniformityReport {
    pub source_k: usize,
    pub target_k: usize,
    pub alpha: f64,
    pub rows: Vec<HolderUniformityRow>,
    /// `max ratio / min ratio` across ε.
    pub spread: f64,
    pub slope: Option<f64>,
    pub growth_flagged: bool,
}

/// Empirical `sup_f ‖G_ε f‖_{target,α,ε} / ‖f‖_{source,α,ε}` per ε over
/// scale-adapted probes. The parametrix gains at most `m` derivatives, so
/// `target > source + m` is rejected.
pub fn holder_uniformity_check(
    family: &[Parametrix],
    source_k: usize,
    target_k: usize,
    alpha: f64,
    probes: usize,
    seed: u64,
) -> Result<HolderUniformityReport, KernelError> {
    let first = family.first().ok_or_else(|| KernelError::Precondition("empty parametrix family".into()))?;
    let grid = first.op.grid().clone();
    let m = first.op.order();
    if target_k > source_k + m {
        return Err(KernelError::Precondition(format!(
            "target order {target_k} exceeds source order {source_k} + operator order {m}"
        )));
    }
    if family.iter().any(|p| p.op.grid() != &grid) {
        return Err(KernelError::Precondition("family members live on different grids".into()));
    }
    let metric = MetricField::flat(&grid);
    let mut rows = Vec::with_capacity(family.len());
    for par in family {
        let eps = par.eps;
        let hi = NormConfig::new(&grid, target_k, alpha).with_eps(eps).with_scheme(par.op.scheme());
        let lo = NormConfig { k: source_k, ..hi };
        let mut best = 0.0f64;
        for f in scale_adapted_probes(&grid, par.op.rank(), eps, probes, seed) {
            let gf = GridField::new(grid.clone(), f.components(), par.apply(f.values()))?;
            best = best.max(semiclassical_holder_norm(&gf, &metric, &hi)? / semiclassical_holder_norm(&f, &metric, &lo)?);
        }
        rows.push(HolderUniformityRow { eps, ratio: best });
    }
    let max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let slope = log_log_fit(&rows.iter().map(|r| r.eps).collect::<Vec<_>>(), &rows.iter().map(|r| r.ratio).collect::<Vec<_>>()).map(|f| f.slope);
    Ok(HolderUniformityReport {
        source_k,
        target_k,
        alpha,
        rows,
        spread: max / min,
        slope,
        growth_flagged: slope.is_some_and(|s| s < -0.1) || max / min > 2.0,
    })
}
