//! Assembly of discrete operators on periodic grids from symbols and metrics.

mod sparse;

pub use sparse::{gmres, CsrMatrix, GmresResult};

use crate::grid::{partial, FftNd, GridError, GridField, MetricField, PeriodicGrid, Scheme};
use crate::symbol::{Coefficient, SymbolError, SymbolPolynomial};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::io::Write;
use thiserror::Error;

/// Above this many unknowns variable-coefficient operators are stored sparse.
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error("operator with {0} unknowns is too large for a dense spectral discretization")]
    TooLarge(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Storage strategy requested from the assembler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    #[default]
    Auto,
    Dense,
    Sparse,
}

/// Constant-coefficient operator diagonalized by the FFT: one `d×d` block per
/// dual-lattice frequency (FFT ordering).
#[derive(Debug, Clone)]
pub struct FourierMultiplier {
    fft: FftNd,
    rank: usize,
    blocks: Vec<DMatrix<Complex64>>,
}

impl FourierMultiplier {
    pub fn new(grid: &PeriodicGrid, rank: usize, blocks: Vec<DMatrix<Complex64>>) -> Self {
        assert_eq!(blocks.len(), grid.len());
        Self { fft: FftNd::new(grid), rank, blocks }
    }
    pub fn blocks(&self) -> &[DMatrix<Complex64>] {
        &self.blocks
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    /// Applies `block ↦ f(block)` frequency by frequency to `x`.
    pub fn apply_with<F: Fn(&DMatrix<Complex64>, &DVector<Complex64>) -> DVector<Complex64>>(
        &self,
        x: &DVector<Complex64>,
        f: F,
    ) -> DVector<Complex64> {
        let d = self.rank;
        let np = self.blocks.len();
        let mut comps: Vec<Vec<Complex64>> = (0..d).map(|c| (0..np).map(|p| x[p * d + c]).collect()).collect();
        for c in comps.iter_mut() {
            self.fft.forward(c);
        }
        let mut hat = vec![vec![Complex64::new(0.0, 0.0); np]; d];
        for k in 0..np {
            let v = DVector::from_fn(d, |c, _| comps[c][k]);
            let w = f(&self.blocks[k], &v);
            for c in 0..d {
                hat[c][k] = w[c];
            }
        }
        let mut out = DVector::zeros(np * d);
        for (c, h) in hat.iter_mut().enumerate() {
            self.fft.inverse(h);
            for p in 0..np {
                out[p * d + c] = h[p];
            }
        }
        out
    }

    pub fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        self.apply_with(x, |b, v| b * v)
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    Dense(DMatrix<Complex64>),
    Sparse(CsrMatrix),
    Multiplier(FourierMultiplier),
}

/// Complex operator on `grid.len() * rank` unknowns (point-major ordering).
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: PeriodicGrid,
    rank: usize,
    order: usize,
    scheme: Scheme,
    repr: Representation,
    label: String,
}

impl DiscreteOperator {
    pub fn new(grid: PeriodicGrid, rank: usize, order: usize, scheme: Scheme, repr: Representation, label: &str) -> Result<Self, OperatorError> {
        let n = grid.len() * rank;
        let (r, c) = match &repr {
            Representation::Dense(m) => (m.nrows(), m.ncols()),
            Representation::Sparse(m) => (m.nrows(), m.ncols()),
            Representation::Multiplier(m) => (m.blocks.len() * m.rank, m.blocks.len() * m.rank),
        };
        if r != n || c != n {
            return Err(OperatorError::ShapeMismatch { expected: n, got: r.max(c) });
        }
        Ok(Self { grid, rank, order, scheme, repr, label: label.to_string() })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    pub fn repr(&self) -> &Representation {
        &self.repr
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn unknowns(&self) -> usize {
        self.grid.len() * self.rank
    }
    pub fn multiplier(&self) -> Option<&FourierMultiplier> {
        match &self.repr {
            Representation::Multiplier(m) => Some(m),
            _ => None,
        }
    }
    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn apply(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>, OperatorError> {
        if x.len() != self.unknowns() {
            return Err(OperatorError::ShapeMismatch { expected: self.unknowns(), got: x.len() });
        }
        Ok(match &self.repr {
            Representation::Dense(m) => m * x,
            Representation::Sparse(m) => m.mul_vec(x),
            Representation::Multiplier(m) => m.apply(x),
        })
    }

    pub fn apply_field(&self, u: &GridField) -> Result<GridField, OperatorError> {
        if u.grid() != &self.grid || u.components() != self.rank {
            return Err(OperatorError::ShapeMismatch { expected: self.unknowns(), got: u.values().len() });
        }
        Ok(u.with_values(self.apply(u.values())?)?)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        match &self.repr {
            Representation::Dense(m) => m.clone(),
            Representation::Sparse(m) => m.to_dense(),
            Representation::Multiplier(m) => {
                let n = self.unknowns();
                let mut out = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = DVector::zeros(n);
                    e[j] = Complex64::new(1.0, 0.0);
                    out.set_column(j, &m.apply(&e));
                }
                out
            }
        }
    }

    /// `c · L` in the same representation.
    pub fn scaled(&self, c: Complex64) -> Self {
        let repr = match &self.repr {
            Representation::Dense(m) => Representation::Dense(m * c),
            Representation::Sparse(m) => Representation::Sparse(m.scale(c)),
            Representation::Multiplier(m) => Representation::Multiplier(FourierMultiplier {
                fft: m.fft.clone(),
                rank: m.rank,
                blocks: m.blocks.iter().map(|b| b * c).collect(),
            }),
        };
        Self { repr, ..self.clone() }
    }

    /// Converts to a dense representation.
    pub fn densified(&self) -> Self {
        Self { repr: Representation::Dense(self.to_dense()), ..self.clone() }
    }

    /// `max |A - A^*|` entrywise.
    pub fn hermitian_defect(&self) -> f64 {
        let a = self.to_dense();
        (&a - a.adjoint()).camax()
    }

    /// Writes nonzero entries as `row,col,re,im` CSV.
    pub fn export_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,re,im")?;
        let triplets: Vec<(usize, usize, Complex64)> = match &self.repr {
            Representation::Sparse(m) => m.triplets().collect(),
            _ => {
                let a = self.to_dense();
                let mut t = Vec::new();
                for r in 0..a.nrows() {
                    for c in 0..a.ncols() {
                        if a[(r, c)] != Complex64::new(0.0, 0.0) {
                            t.push((r, c, a[(r, c)]));
                        }
                    }
                }
                t
            }
        };
        for (r, c, v) in triplets {
            writeln!(w, "{r},{c},{:e},{:e}", v.re, v.im)?;
        }
        Ok(())
    }
}

fn convolve(a: &[(i64, f64)], b: &[(i64, f64)]) -> Vec<(i64, f64)> {
    let mut map = std::collections::BTreeMap::new();
    for &(i, x) in a {
        for &(j, y) in b {
            *map.entry(i + j).or_insert(0.0) += x * y;
        }
    }
    map.into_iter().filter(|(_, v)| *v != 0.0).collect()
}

/// fd2 stencil of `∂^p` in one variable (offsets in lattice units).
pub fn stencil_1d(p: usize, h: f64) -> Vec<(i64, f64)> {
    let d1 = [(-1, -0.5 / h), (1, 0.5 / h)];
    let d2 = [(-1, 1.0 / (h * h)), (0, -2.0 / (h * h)), (1, 1.0 / (h * h))];
    let mut s = vec![(0i64, 1.0)];
    for _ in 0..p / 2 {
        s = convolve(&s, &d2);
    }
    if p % 2 == 1 {
        s = convolve(&s, &d1);
    }
    s
}

/// fd2 stencil of `∂^beta` as (offset vector, weight) pairs.
pub fn fd_stencil(grid: &PeriodicGrid, beta: &[usize]) -> Vec<(Vec<i64>, f64)> {
    let h = grid.spacing();
    let mut out = vec![(vec![0i64; grid.dim()], 1.0)];
    for (a, &p) in beta.iter().enumerate() {
        if p == 0 {
            continue;
        }
        if !grid.is_varying(a) {
            return Vec::new();
        }
        let s1 = stencil_1d(p, h);
        let mut next = Vec::with_capacity(out.len() * s1.len());
        for (off, w) in &out {
            for &(o, v) in &s1 {
                let mut o2 = off.clone();
                o2[a] += o;
                next.push((o2, w * v));
            }
        }
        out = next;
    }
    out
}

/// Scalar `∂^beta` as a sparse matrix (fd2) on the grid.
pub fn derivative_csr(grid: &PeriodicGrid, beta: &[usize]) -> CsrMatrix {
    let np = grid.len();
    let st = fd_stencil(grid, beta);
    let mut t = Vec::with_capacity(np * st.len());
    for p in 0..np {
        for (off, w) in &st {
            t.push((p, grid.shifted(p, off), Complex64::new(*w, 0.0)));
        }
    }
    CsrMatrix::from_triplets(np, np, t)
}

/// Scalar `∂^beta` as a dense matrix in the given scheme.
pub fn derivative_dense(grid: &PeriodicGrid, beta: &[usize], scheme: Scheme) -> Result<DMatrix<Complex64>, OperatorError> {
    let np = grid.len();
    match scheme {
        Scheme::Fd2 => Ok(derivative_csr(grid, beta).to_dense()),
        Scheme::Spectral => {
            let mut m = DMatrix::zeros(np, np);
            let mut e = vec![Complex64::new(0.0, 0.0); np];
            for q in 0..np {
                e[q] = Complex64::new(1.0, 0.0);
                let col = partial(grid, &e, beta, scheme)?;
                e[q] = Complex64::new(0.0, 0.0);
                for (p, v) in col.into_iter().enumerate() {
                    m[(p, q)] = v;
                }
            }
            Ok(m)
        }
    }
}

fn kron_identity_dense(s: &DMatrix<Complex64>, d: usize) -> DMatrix<Complex64> {
    if d == 1 {
        return s.clone();
    }
    let n = s.nrows();
    let mut out = DMatrix::zeros(n * d, n * d);
    for p in 0..n {
        for q in 0..n {
            let v = s[(p, q)];
            if v != Complex64::new(0.0, 0.0) {
                for c in 0..d {
                    out[(p * d + c, q * d + c)] = v;
                }
            }
        }
    }
    out
}

fn kron_identity_csr(s: &CsrMatrix, d: usize) -> CsrMatrix {
    if d == 1 {
        return s.clone();
    }
    let t = s.triplets().flat_map(|(p, q, v)| (0..d).map(move |c| (p * d + c, q * d + c, v))).collect();
    CsrMatrix::from_triplets(s.nrows() * d, s.ncols() * d, t)
}

fn check_symbol_orders(sym: &SymbolPolynomial, grid: &PeriodicGrid, scheme: Scheme) -> Result<(), OperatorError> {
    for (j, _) in sym.terms() {
        for &p in j {
            grid.check_order(p, scheme)?;
        }
    }
    Ok(())
}

/// Fourier blocks of a constant-coefficient symbol in the given scheme.
pub fn multiplier_blocks(sym: &SymbolPolynomial, grid: &PeriodicGrid, scheme: Scheme) -> Vec<DMatrix<Complex64>> {
    let d = sym.rank();
    (0..grid.len())
        .map(|k| {
            let mut b = DMatrix::zeros(d, d);
            for (j, c) in sym.terms() {
                b += c.at(0, d) * grid.multi_derivative_symbol(k, j, scheme);
            }
            b
        })
        .collect()
}

/// Discretizes `Σ_J a_J ∂^J` on `grid` (automatic storage choice).
pub fn assemble(sym: &SymbolPolynomial, grid: &PeriodicGrid, scheme: Scheme) -> Result<DiscreteOperator, OperatorError> {
    assemble_with(sym, grid, scheme, AssemblyMode::Auto)
}

pub fn assemble_with(
    sym: &SymbolPolynomial,
    grid: &PeriodicGrid,
    scheme: Scheme,
    mode: AssemblyMode,
) -> Result<DiscreteOperator, OperatorError> {
    if sym.dim() != grid.dim() {
        return Err(OperatorError::Domain(format!("symbol dim {} != grid dim {}", sym.dim(), grid.dim())));
    }
    if let Some(g) = sym.grid() {
        if g != grid {
            return Err(OperatorError::Domain("symbol coefficients live on a different grid".into()));
        }
    }
    check_symbol_orders(sym, grid, scheme)?;
    let d = sym.rank();
    let np = grid.len();
    let n = np * d;
    let label = format!("symbol(order {}, rank {d})", sym.order());
    if sym.is_constant() && mode == AssemblyMode::Auto {
        let m = FourierMultiplier::new(grid, d, multiplier_blocks(sym, grid, scheme));
        return DiscreteOperator::new(grid.clone(), d, sym.order(), scheme, Representation::Multiplier(m), &label);
    }
    let sparse = match mode {
        AssemblyMode::Sparse => true,
        AssemblyMode::Dense => false,
        AssemblyMode::Auto => n > DENSE_LIMIT,
    };
    if sparse {
        if scheme == Scheme::Spectral {
            return Err(OperatorError::TooLarge(n));
        }
        let mut t = Vec::new();
        for (j, c) in sym.terms() {
            let st = fd_stencil(grid, j);
            for p in 0..np {
                let a = c.at(p, d);
                for (off, w) in &st {
                    let q = grid.shifted(p, off);
                    for r in 0..d {
                        for cc in 0..d {
                            let v = a[(r, cc)] * *w;
                            if v != Complex64::new(0.0, 0.0) {
                                t.push((p * d + r, q * d + cc, v));
                            }
                        }
                    }
                }
            }
        }
        let m = CsrMatrix::from_triplets(n, n, t);
        return DiscreteOperator::new(grid.clone(), d, sym.order(), scheme, Representation::Sparse(m), &label);
    }
    let mut a = DMatrix::zeros(n, n);
    for (j, c) in sym.terms() {
        let dj = derivative_dense(grid, j, scheme)?;
        for p in 0..np {
            let coeff = c.at(p, d);
            for q in 0..np {
                let w = dj[(p, q)];
                if w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..d {
                    for cc in 0..d {
                        a[(p * d + r, q * d + cc)] += coeff[(r, cc)] * w;
                    }
                }
            }
        }
    }
    DiscreteOperator::new(grid.clone(), d, sym.order(), scheme, Representation::Dense(a), &label)
}

/// Flat positive Laplacian as a Fourier multiplier.
pub fn flat_laplacian(grid: &PeriodicGrid, rank: usize, scheme: Scheme) -> Result<DiscreteOperator, OperatorError> {
    let sym = SymbolPolynomial::laplacian(grid.dim(), rank)?;
    assemble(&sym, grid, scheme).map(|o| o.with_label("flat laplacian"))
}

/// Flat bi-Laplacian as a Fourier multiplier.
pub fn flat_bilaplacian(grid: &PeriodicGrid, rank: usize, scheme: Scheme) -> Result<DiscreteOperator, OperatorError> {
    let sym = SymbolPolynomial::bilaplacian(grid.dim(), rank)?;
    assemble(&sym, grid, scheme).map(|o| o.with_label("flat bilaplacian"))
}

/// Scalar `∇*∇ = -(1/√g) ∂_i(√g g^{ij} ∂_j)` in divergence form.
///
/// fd2 uses the compact half-point stencil for `i = j` and centered
/// differences for mixed terms, so `diag(√g) L` is symmetric.
fn scalar_laplace_triplets(g: &MetricField, scheme: Scheme) -> Result<DMatrix<Complex64>, OperatorError> {
    let grid = g.grid();
    let n = grid.dim();
    let np = grid.len();
    let h = grid.spacing();
    let sg = g.sqrt_det();
    let mut a = DMatrix::<Complex64>::zeros(np, np);
    match scheme {
        Scheme::Fd2 => {
            for i in 0..n {
                if !grid.is_varying(i) {
                    continue;
                }
                for j in 0..n {
                    if !grid.is_varying(j) {
                        continue;
                    }
                    let gij = g.inverse_component(i, j);
                    let coef: Vec<f64> = (0..np).map(|p| sg[p] * gij[p]).collect();
                    if i == j {
                        let mut up = vec![0i64; n];
                        up[i] = 1;
                        let mut dn = vec![0i64; n];
                        dn[i] = -1;
                        for p in 0..np {
                            let pu = grid.shifted(p, &up);
                            let pd = grid.shifted(p, &dn);
                            let cu = 0.5 * (coef[p] + coef[pu]);
                            let cd = 0.5 * (coef[p] + coef[pd]);
                            let s = -1.0 / (sg[p] * h * h);
                            a[(p, pu)] += s * cu;
                            a[(p, pd)] += s * cd;
                            a[(p, p)] -= s * (cu + cd);
                        }
                    } else {
                        let di = derivative_csr(grid, &unit(n, i));
                        let dj = derivative_csr(grid, &unit(n, j));
                        let c = CsrMatrix::from_triplets(np, np, (0..np).map(|p| (p, p, Complex64::new(coef[p], 0.0))).collect());
                        let m = di.mul(&c).mul(&dj);
                        for (p, q, v) in m.triplets() {
                            a[(p, q)] -= v / sg[p];
                        }
                    }
                }
            }
        }
        Scheme::Spectral => {
            let ds: Vec<DMatrix<Complex64>> = (0..n).map(|i| derivative_dense(grid, &unit(n, i), scheme)).collect::<Result<_, _>>()?;
            for i in 0..n {
                for j in 0..n {
                    if !grid.is_varying(i) || !grid.is_varying(j) {
                        continue;
                    }
                    let gij = g.inverse_component(i, j);
                    let c = DMatrix::from_diagonal(&DVector::from_fn(np, |p, _| Complex64::new(sg[p] * gij[p], 0.0)));
                    let m = &ds[i] * c * &ds[j];
                    for p in 0..np {
                        for q in 0..np {
                            a[(p, q)] -= m[(p, q)] / sg[p];
                        }
                    }
                }
            }
        }
    }
    Ok(a)
}

fn unit(n: usize, i: usize) -> Vec<usize> {
    let mut v = vec![0; n];
    v[i] = 1;
    v
}

/// Generalized Laplace-type operator `(∇*∇)^{m'} ⊗ Id_d + ℛ`.
///
/// `endomorphism` is a rank-`d` zeroth-order coefficient (constant or field).
/// Flat metrics with constant `ℛ` give a Fourier multiplier; otherwise the
/// operator is dense (sparse above [`DENSE_LIMIT`] unknowns, fd2 only).
pub fn generalized_laplacian(
    g: &MetricField,
    endomorphism: Option<&Coefficient>,
    rank: usize,
    power: usize,
    scheme: Scheme,
) -> Result<DiscreteOperator, OperatorError> {
    if power == 0 {
        return Err(OperatorError::Domain("power must be at least 1".into()));
    }
    if !(g.min_eigenvalue() > 0.0) {
        return Err(OperatorError::Domain("metric is not positive definite".into()));
    }
    let grid = g.grid().clone();
    let np = grid.len();
    let d = rank;
    let n = np * d;
    let constant_endo = !matches!(endomorphism, Some(Coefficient::Field(_)));
    if let Some(c) = endomorphism {
        if let Coefficient::Constant(m) = c {
            if m.nrows() != d || m.ncols() != d {
                return Err(OperatorError::Domain(format!("endomorphism must be {d}x{d}")));
            }
        }
        if let Coefficient::Field(f) = c {
            if f.len() != d * d || f.iter().any(|x| x.len() != np) {
                return Err(OperatorError::Domain("endomorphism field has wrong shape".into()));
            }
        }
    }
    let label = format!("generalized laplacian^{power}");
    for a in 0..grid.dim() {
        if grid.is_varying(a) {
            grid.check_order(2 * power, scheme)?;
        }
    }
    if g.is_flat() && constant_endo {
        let lap = SymbolPolynomial::laplacian(grid.dim(), d)?;
        let mut blocks = multiplier_blocks(&lap, &grid, scheme);
        for b in blocks.iter_mut() {
            let base = b.clone();
            for _ in 1..power {
                *b = &*b * &base;
            }
            if let Some(c) = endomorphism {
                *b += c.at(0, d);
            }
        }
        let m = FourierMultiplier::new(&grid, d, blocks);
        return DiscreteOperator::new(grid, d, 2 * power, scheme, Representation::Multiplier(m), &label);
    }
    if n > DENSE_LIMIT && scheme == Scheme::Spectral {
        return Err(OperatorError::TooLarge(n));
    }
    let scalar = scalar_laplace_triplets(g, scheme)?;
    if n > DENSE_LIMIT {
        let s = CsrMatrix::from_triplets(
            np,
            np,
            (0..np).flat_map(|p| (0..np).map(move |q| (p, q))).filter_map(|(p, q)| {
                let v = scalar[(p, q)];
                (v != Complex64::new(0.0, 0.0)).then_some((p, q, v))
            }).collect(),
        );
        let mut pw = s.clone();
        for _ in 1..power {
            pw = pw.mul(&s);
        }
        let mut full = kron_identity_csr(&pw, d);
        if let Some(c) = endomorphism {
            let t = (0..np).flat_map(|p| {
                let m = c.at(p, d);
                (0..d * d).map(move |rc| (p * d + rc / d, p * d + rc % d, m[(rc / d, rc % d)]))
            }).collect();
            full = full.add_scaled(&CsrMatrix::from_triplets(n, n, t), Complex64::new(1.0, 0.0));
        }
        return DiscreteOperator::new(grid, d, 2 * power, scheme, Representation::Sparse(full), &label);
    }
    let mut pw = scalar.clone();
    for _ in 1..power {
        pw = &pw * &scalar;
    }
    let mut full = kron_identity_dense(&pw, d);
    if let Some(c) = endomorphism {
        for p in 0..np {
            let m = c.at(p, d);
            for r in 0..d {
                for cc in 0..d {
                    full[(p * d + r, p * d + cc)] += m[(r, cc)];
                }
            }
        }
    }
    DiscreteOperator::new(grid, d, 2 * power, scheme, Representation::Dense(full), &label)
}

/// Commutators `[∂_i, L] = D_i L - L D_i`, one per axis, with `D_i` the
/// first derivative of the operator's own scheme.
pub fn commutator_with_gradient(op: &DiscreteOperator) -> Result<Vec<DiscreteOperator>, OperatorError> {
    let grid = op.grid().clone();
    let n = grid.dim();
    let d = op.rank();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = format!("[d_{i}, {}]", op.label());
        let repr = match op.repr() {
            Representation::Multiplier(m) => Representation::Multiplier(FourierMultiplier {
                fft: m.fft.clone(),
                rank: d,
                blocks: m.blocks.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect(),
            }),
            Representation::Dense(a) => {
                let di = kron_identity_dense(&derivative_dense(&grid, &unit(n, i), op.scheme())?, d);
                Representation::Dense(&di * a - a * &di)
            }
            Representation::Sparse(a) => {
                if op.scheme() == Scheme::Spectral {
                    return Err(OperatorError::TooLarge(op.unknowns()));
                }
                let di = kron_identity_csr(&derivative_csr(&grid, &unit(n, i)), d);
                Representation::Sparse(di.mul(a).add_scaled(&a.mul(&di), Complex64::new(-1.0, 0.0)))
            }
        };
        out.push(DiscreteOperator::new(grid.clone(), d, op.order(), op.scheme(), repr, &label)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    fn sorted_real_eigs(a: &DMatrix<Complex64>) -> Vec<f64> {
        let mut e: Vec<f64> = a.clone().symmetric_eigenvalues().iter().cloned().collect();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        e
    }

    #[test]
    fn spectral_laplacian_eigenvalues_are_k_squared() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let eigs = sorted_real_eigs(&op.to_dense());
        let mut expect: Vec<f64> = (0..16).map(|i| grid.wavenumber(0, i).powi(2)).collect();
        expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (a, b) in eigs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn fd2_laplacian_eigenvalues_match_stencil_symbol() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let h = grid.spacing();
        let sym = SymbolPolynomial::laplacian(1, 1).unwrap();
        let op = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Dense).unwrap();
        let eigs = sorted_real_eigs(&op.to_dense());
        let mut expect: Vec<f64> = (0..16).map(|i| (2.0 / (h * h)) * (1.0 - (grid.wavenumber(0, i) * h).cos())).collect();
        expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (a, b) in eigs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_symbol_gives_zero_matrix() {
        let grid = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let sym = SymbolPolynomial::new(2, 1, 2).unwrap();
        let op = assemble(&sym, &grid, Scheme::Spectral).unwrap();
        assert_eq!(op.to_dense().camax(), 0.0);
    }

    #[test]
    fn sparse_and_dense_assembly_agree() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let a: Vec<Complex64> = grid.sample(|x| c(1.0 + 0.3 * x[0].sin() * x[1].cos()));
        let sym = SymbolPolynomial::new(2, 1, 2).unwrap().on_grid(&grid).unwrap()
            .with_term(&[2, 0], Coefficient::scalar_field(a.iter().map(|v| -v).collect())).unwrap()
            .with_term(&[0, 2], Coefficient::scalar(c(-1.0))).unwrap()
            .with_term(&[1, 1], Coefficient::scalar(c(0.25))).unwrap()
            .with_term(&[0, 1], Coefficient::scalar(Complex64::new(0.0, 0.3))).unwrap();
        let dense = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Dense).unwrap();
        let sparse = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Sparse).unwrap();
        assert!((dense.to_dense() - sparse.to_dense()).camax() < 1e-12);
        let u = DVector::from_fn(64, |i, _| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos()));
        assert!((dense.apply(&u).unwrap() - sparse.apply(&u).unwrap()).norm() < 1e-11);
    }

    #[test]
    fn multiplier_matches_dense_assembly() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let sym = SymbolPolynomial::bilaplacian(2, 2).unwrap();
        for scheme in [Scheme::Spectral, Scheme::Fd2] {
            let m = assemble(&sym, &grid, scheme).unwrap();
            assert!(m.multiplier().is_some());
            let d = assemble_with(&sym, &grid, scheme, AssemblyMode::Dense).unwrap();
            assert!((m.to_dense() - d.to_dense()).camax() < 1e-9);
        }
    }

    #[test]
    fn plane_wave_is_eigenfunction_of_spectral_laplacian() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        let u = DVector::from_vec(grid.sample(|x| Complex64::new(0.0, 5.0 * x[0]).exp()));
        let lu = op.apply(&u).unwrap();
        assert!((lu - &u * c(25.0)).norm() < 1e-10);
    }

    #[test]
    fn endomorphism_shifts_spectrum() {
        let grid = PeriodicGrid::new(1, 8, 2.0 * PI).unwrap();
        let g = MetricField::flat(&grid);
        let base = generalized_laplacian(&g, None, 1, 1, Scheme::Spectral).unwrap();
        let shift = generalized_laplacian(&g, Some(&Coefficient::scalar(c(3.0))), 1, 1, Scheme::Spectral).unwrap();
        let e0 = sorted_real_eigs(&base.to_dense());
        let e1 = sorted_real_eigs(&shift.to_dense());
        for (a, b) in e0.iter().zip(&e1) {
            assert!((b - a - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn curved_laplacian_symmetric_in_weighted_inner_product() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let comps = vec![
            grid.sample(|x| 1.0 + 0.2 * x[0].sin()),
            grid.sample(|x| 0.1 * x[1].cos()),
            grid.sample(|x| 0.1 * x[1].cos()),
            grid.sample(|x| 1.1 + 0.1 * (x[0] + x[1]).cos()),
        ];
        let g = MetricField::from_components(&grid, comps).unwrap();
        let op = generalized_laplacian(&g, None, 1, 1, Scheme::Fd2).unwrap();
        let w = DMatrix::from_diagonal(&DVector::from_iterator(64, g.sqrt_det().iter().map(|&v| c(v))));
        let wl = &w * op.to_dense();
        assert!((&wl - wl.transpose()).camax() < 1e-12);
        // constants are in the kernel
        let one = DVector::from_element(64, c(1.0));
        assert!(op.apply(&one).unwrap().norm() < 1e-11);
    }

    #[test]
    fn commutators_vanish_for_constant_coefficients() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let op = flat_laplacian(&grid, 1, Scheme::Spectral).unwrap();
        for cmt in commutator_with_gradient(&op).unwrap() {
            assert_eq!(cmt.to_dense().camax(), 0.0);
        }
        let dense = op.densified();
        for cmt in commutator_with_gradient(&dense).unwrap() {
            assert!(cmt.to_dense().camax() < 1e-10);
        }
    }

    #[test]
    fn coo_export_lists_nonzeros() {
        let grid = PeriodicGrid::new(1, 4, 4.0).unwrap();
        let sym = SymbolPolynomial::laplacian(1, 1).unwrap();
        let op = assemble_with(&sym, &grid, Scheme::Fd2, AssemblyMode::Sparse).unwrap();
        let mut buf = Vec::new();
        op.export_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.starts_with("row,col,re,im\n0,0,2e0,0e0"));
    }
}
