//! Matrix-valued polynomial symbols of differential operators on the torus,
//! ellipticity and admissibility checks, weight conjugation and the indicial
//! roots of the hyperbolic model Laplacian.

mod ellipticity;
mod indicial;
mod io;
mod weight;

pub use ellipticity::{
    check_admissibility, check_strong_ellipticity, default_xi_samples, numerical_range_angle, unit_directions,
    AdmissibilityReport, Cone, EllipticityReport,
};
pub use indicial::{indicial_gap, indicial_roots, weight_interval, zeta0, IndicialQuery};
pub use io::{CoeffRef, SymbolSpec, TermSpec};
pub use weight::{conjugate_by_weight, WeightField};

use crate::grid::{multi_indices, partial, GridError, PeriodicGrid, Scheme};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

pub type MultiIndex = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("invalid symbol: {0}")]
    Invalid(String),
    #[error("principal symbol singular at point {point}, xi = {xi:?}")]
    EllipticityFailure { point: usize, xi: Vec<f64> },
    #[error("zeta - sigma singular at zeta = {zeta}, point {point}, xi = {xi:?}")]
    AdmissibilityFailure { zeta: Complex64, point: usize, xi: Vec<f64> },
    #[error("weight must be strictly positive (min {min})")]
    NonPositiveWeight { min: f64 },
    #[error("empty interval: delta = {0} must be positive")]
    EmptyInterval(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Coefficient `a_J` of one monomial: constant matrix or per-point matrix field.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(DMatrix<Complex64>),
    /// `d*d` scalar arrays over the grid, entry `(r, c)` at index `r * d + c`.
    Field(Vec<Vec<Complex64>>),
}

impl Coefficient {
    pub fn scalar(v: Complex64) -> Self {
        Coefficient::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn scalar_field(values: Vec<Complex64>) -> Self {
        Coefficient::Field(vec![values])
    }

    pub fn at(&self, p: usize, d: usize) -> DMatrix<Complex64> {
        match self {
            Coefficient::Constant(m) => m.clone(),
            Coefficient::Field(f) => DMatrix::from_fn(d, d, |r, c| f[r * d + c][p]),
        }
    }

    fn to_field(&self, d: usize, np: usize) -> Vec<Vec<Complex64>> {
        match self {
            Coefficient::Constant(m) => (0..d * d).map(|rc| vec![m[(rc / d, rc % d)]; np]).collect(),
            Coefficient::Field(f) => f.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant(m) => m.iter().all(|v| *v == Complex64::new(0.0, 0.0)),
            Coefficient::Field(f) => f.iter().flatten().all(|v| *v == Complex64::new(0.0, 0.0)),
        }
    }
}

/// `σ(x, ξ) = Σ_{|J| ≤ m} a_J(x) (iξ)^J`, the symbol of `Σ a_J ∂^J`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPolynomial {
    dim: usize,
    rank: usize,
    order: usize,
    grid: Option<PeriodicGrid>,
    terms: BTreeMap<MultiIndex, Coefficient>,
}

fn i_pow(xi: &[f64], j: &[usize]) -> Complex64 {
    let mut v = Complex64::new(1.0, 0.0);
    for (x, &p) in xi.iter().zip(j) {
        v *= Complex64::new(0.0, *x).powu(p as u32);
    }
    v
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Π_a C(J_a, K_a)`.
pub fn multi_binomial(j: &[usize], k: &[usize]) -> f64 {
    j.iter().zip(k).map(|(&a, &b)| binomial(a, b)).product()
}

/// `J!` for a multi-index.
pub fn multi_factorial(j: &[usize]) -> f64 {
    j.iter().map(|&a| (1..=a).product::<usize>() as f64).product()
}

/// All multi-indices `K ≤ J` componentwise.
pub fn sub_indices(j: &[usize]) -> Vec<MultiIndex> {
    let mut out = vec![vec![]];
    for &a in j {
        let mut next = Vec::new();
        for prefix in &out {
            for v in 0..=a {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

impl SymbolPolynomial {
    pub fn new(dim: usize, rank: usize, order: usize) -> Result<Self, SymbolError> {
        if order == 0 || order % 2 == 1 {
            return Err(SymbolError::Invalid(format!("order {order} must be even and positive")));
        }
        if !(1..=4).contains(&dim) || rank == 0 {
            return Err(SymbolError::Invalid(format!("dim {dim} / rank {rank} out of range")));
        }
        Ok(Self { dim, rank, order, grid: None, terms: BTreeMap::new() })
    }

    /// Attaches the grid on which field coefficients live.
    pub fn on_grid(mut self, grid: &PeriodicGrid) -> Result<Self, SymbolError> {
        if grid.dim() != self.dim {
            return Err(SymbolError::Invalid(format!("grid dim {} != symbol dim {}", grid.dim(), self.dim)));
        }
        if let Some(g) = &self.grid {
            if g != grid {
                return Err(SymbolError::Invalid("symbol already bound to a different grid".into()));
            }
        }
        self.grid = Some(grid.clone());
        Ok(self)
    }

    /// Adds `coeff ∂^J` (accumulating onto an existing term).
    pub fn with_term(mut self, j: &[usize], coeff: Coefficient) -> Result<Self, SymbolError> {
        self.add_term(j, coeff)?;
        Ok(self)
    }

    pub fn add_term(&mut self, j: &[usize], coeff: Coefficient) -> Result<(), SymbolError> {
        if j.len() != self.dim {
            return Err(SymbolError::Invalid(format!("multi-index {j:?} has wrong length")));
        }
        if j.iter().sum::<usize>() > self.order {
            return Err(SymbolError::Invalid(format!("multi-index {j:?} exceeds order {}", self.order)));
        }
        let d = self.rank;
        match &coeff {
            Coefficient::Constant(m) if m.nrows() != d || m.ncols() != d => {
                return Err(SymbolError::Invalid(format!("coefficient must be {d}x{d}")));
            }
            Coefficient::Field(f) => {
                let grid = self
                    .grid
                    .as_ref()
                    .ok_or_else(|| SymbolError::Invalid("field coefficient requires a grid".into()))?;
                if f.len() != d * d || f.iter().any(|c| c.len() != grid.len()) {
                    return Err(SymbolError::Invalid("field coefficient has wrong shape".into()));
                }
            }
            _ => {}
        }
        let merged = match self.terms.remove(j) {
            None => coeff,
            Some(Coefficient::Constant(a)) => match coeff {
                Coefficient::Constant(b) => Coefficient::Constant(a + b),
                Coefficient::Field(f) => Coefficient::Field(add_fields(&Coefficient::Constant(a).to_field(d, f[0].len()), &f)),
            },
            Some(Coefficient::Field(a)) => {
                let np = a[0].len();
                Coefficient::Field(add_fields(&a, &coeff.to_field(d, np)))
            }
        };
        self.terms.insert(j.to_vec(), merged);
        Ok(())
    }

    /// Flat positive Laplacian `-Σ ∂_a^2` acting diagonally on rank `d`.
    pub fn laplacian(dim: usize, rank: usize) -> Result<Self, SymbolError> {
        let mut s = Self::new(dim, rank, 2)?;
        for a in 0..dim {
            let mut j = vec![0; dim];
            j[a] = 2;
            s.add_term(&j, Coefficient::Constant(-DMatrix::identity(rank, rank)))?;
        }
        Ok(s)
    }

    /// Flat bi-Laplacian `(Σ ∂_a^2)^2`.
    pub fn bilaplacian(dim: usize, rank: usize) -> Result<Self, SymbolError> {
        let lap = Self::laplacian(dim, rank)?;
        lap.compose(&lap)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn grid(&self) -> Option<&PeriodicGrid> {
        self.grid.as_ref()
    }
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &Coefficient)> {
        self.terms.iter()
    }
    pub fn coefficient(&self, j: &[usize]) -> Option<&Coefficient> {
        self.terms.get(j)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|c| matches!(c, Coefficient::Constant(_)))
    }

    /// Number of points at which coefficients are sampled (1 if constant).
    pub fn point_count(&self) -> usize {
        self.grid.as_ref().map_or(1, |g| g.len())
    }

    /// Full symbol `Σ_J a_J(x)(iξ)^J` at grid point `p`.
    pub fn full_symbol(&self, p: usize, xi: &[f64]) -> DMatrix<Complex64> {
        self.sum_terms(p, xi, |_| true)
    }

    /// Principal symbol `Σ_{|J|=m} a_J(x)(iξ)^J` at grid point `p`.
    pub fn principal_symbol(&self, p: usize, xi: &[f64]) -> DMatrix<Complex64> {
        let m = self.order;
        self.sum_terms(p, xi, |j| j.iter().sum::<usize>() == m)
    }

    fn sum_terms(&self, p: usize, xi: &[f64], keep: impl Fn(&[usize]) -> bool) -> DMatrix<Complex64> {
        let d = self.rank;
        let mut out = DMatrix::zeros(d, d);
        for (j, c) in &self.terms {
            if keep(j) {
                out += c.at(p, d) * i_pow(xi, j);
            }
        }
        out
    }

    /// Terms of top order only.
    pub fn principal_part(&self) -> Self {
        let mut s = self.clone();
        s.terms.retain(|j, _| j.iter().sum::<usize>() == self.order);
        s
    }

    /// Constant-coefficient symbol with every coefficient frozen at point `p`.
    pub fn frozen_at(&self, p: usize) -> Self {
        let d = self.rank;
        let terms = self.terms.iter().map(|(j, c)| (j.clone(), Coefficient::Constant(c.at(p, d)))).collect();
        Self { dim: self.dim, rank: d, order: self.order, grid: None, terms }
    }

    /// `∂^beta a_J` as a coefficient (spectral differentiation of fields).
    pub fn coefficient_derivative(&self, c: &Coefficient, beta: &[usize]) -> Result<Coefficient, SymbolError> {
        if beta.iter().all(|&b| b == 0) {
            return Ok(c.clone());
        }
        match c {
            Coefficient::Constant(m) => Ok(Coefficient::Constant(DMatrix::zeros(m.nrows(), m.ncols()))),
            Coefficient::Field(f) => {
                let grid = self.grid.as_ref().expect("field coefficient without grid");
                let mut out = Vec::with_capacity(f.len());
                for entry in f {
                    out.push(partial(grid, entry, beta, Scheme::Spectral)?);
                }
                Ok(Coefficient::Field(out))
            }
        }
    }

    /// Symbol of the composition `P ∘ Q` (apply `Q` first), by Leibniz:
    /// `a_J ∂^J (b_K ∂^K) = Σ_{L ≤ J} C(J,L) a_J (∂^{J-L} b_K) ∂^{L+K}`.
    pub fn compose(&self, q: &Self) -> Result<Self, SymbolError> {
        if self.dim != q.dim || self.rank != q.rank {
            return Err(SymbolError::Invalid("composition of incompatible symbols".into()));
        }
        let grid = match (&self.grid, &q.grid) {
            (Some(a), Some(b)) if a != b => {
                return Err(SymbolError::Invalid("composition of symbols on different grids".into()))
            }
            (Some(a), _) => Some(a.clone()),
            (None, b) => b.clone(),
        };
        let mut out = Self::new(self.dim, self.rank, self.order + q.order)?;
        if let Some(g) = &grid {
            out = out.on_grid(g)?;
        }
        let q_on = Self { grid: grid.clone(), ..q.clone() };
        let d = self.rank;
        for (j, a) in &self.terms {
            for l in sub_indices(j) {
                let rest: Vec<usize> = j.iter().zip(&l).map(|(x, y)| x - y).collect();
                let c = multi_binomial(j, &l);
                for (k, b) in &q.terms {
                    let db = q_on.coefficient_derivative(b, &rest)?;
                    if db.is_zero() {
                        continue;
                    }
                    let idx: Vec<usize> = l.iter().zip(k).map(|(x, y)| x + y).collect();
                    let prod = multiply(a, &db, d, grid.as_ref().map_or(1, |g| g.len()), c);
                    out.add_term(&idx, prod)?;
                }
            }
        }
        Ok(out)
    }

    /// `c · P` for a complex scalar `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        let mut s = self.clone();
        for v in s.terms.values_mut() {
            match v {
                Coefficient::Constant(m) => *m *= c,
                Coefficient::Field(f) => f.iter_mut().flatten().for_each(|x| *x *= c),
            }
        }
        s
    }

    /// Highest total order of a term with a nonzero coefficient.
    pub fn effective_order(&self) -> usize {
        self.terms.iter().filter(|(_, c)| !c.is_zero()).map(|(j, _)| j.iter().sum()).max().unwrap_or(0)
    }

    /// Every multi-index of order ≤ m (for enumerating Taylor data).
    pub fn all_indices(&self) -> Vec<MultiIndex> {
        (0..=self.order).flat_map(|j| multi_indices(self.dim, j)).collect()
    }
}

fn add_fields(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn multiply(a: &Coefficient, b: &Coefficient, d: usize, np: usize, scale: f64) -> Coefficient {
    match (a, b) {
        (Coefficient::Constant(x), Coefficient::Constant(y)) => Coefficient::Constant(x * y * Complex64::new(scale, 0.0)),
        _ => {
            let fa = a.to_field(d, np);
            let fb = b.to_field(d, np);
            let mut out = vec![vec![Complex64::new(0.0, 0.0); np]; d * d];
            for r in 0..d {
                for c in 0..d {
                    for k in 0..d {
                        let (x, y) = (&fa[r * d + k], &fb[k * d + c]);
                        for p in 0..np {
                            out[r * d + c][p] += x[p] * y[p] * scale;
                        }
                    }
                }
            }
            Coefficient::Field(out)
        }
    }
}
