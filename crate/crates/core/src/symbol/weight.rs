use super::{multi_binomial, sub_indices, Coefficient, SymbolError, SymbolPolynomial};
use crate::grid::{multi_indices, partial, PeriodicGrid, Scheme};
use num_complex::Complex64;

/// Strictly positive weight function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl WeightField {
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self, SymbolError> {
        if values.len() != grid.len() {
            return Err(SymbolError::Invalid("weight has wrong length".into()));
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(SymbolError::NonPositiveWeight { min });
        }
        Ok(Self { grid: grid.clone(), values })
    }

    /// Periodic surrogate `exp(a sin(2π x_axis / L))` of the exponential weight
    /// `e^{a x}`: near the origin its log-derivative is `a` (times `2π/L`).
    pub fn periodic_exponential(grid: &PeriodicGrid, axis: usize, a: f64) -> Self {
        let k = 2.0 * std::f64::consts::PI / grid.length();
        let values = grid.sample(|x| (a * (k * x[axis]).sin()).exp());
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `∂^beta 𝔴 / 𝔴` by spectral differentiation.
    pub fn log_derivative(&self, beta: &[usize]) -> Result<Vec<Complex64>, SymbolError> {
        let w: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let d = partial(&self.grid, &w, beta, Scheme::Spectral)?;
        Ok(d.iter().zip(&self.values).map(|(a, b)| a / b).collect())
    }

    /// `sup |∂^beta 𝔴/𝔴|` over all `1 ≤ |beta| ≤ order`.
    pub fn log_derivative_bound(&self, order: usize) -> Result<f64, SymbolError> {
        let mut sup = 0.0f64;
        for j in 1..=order {
            for beta in multi_indices(self.grid.dim(), j) {
                sup = self.log_derivative(&beta)?.iter().fold(sup, |m, v| m.max(v.norm()));
            }
        }
        Ok(sup)
    }

    pub fn product(&self, other: &Self) -> Result<Self, SymbolError> {
        if self.grid != other.grid {
            return Err(SymbolError::Invalid("weights on different grids".into()));
        }
        Self::new(&self.grid, self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect())
    }
}

/// Symbol of `𝔴^{-1} L 𝔴`:
/// `Σ_J a_J 𝔴^{-1} ∂^J(𝔴 u) = Σ_J Σ_{K ≤ J} C(J,K) a_J (∂^{J-K}𝔴/𝔴) ∂^K u`.
pub fn conjugate_by_weight(sym: &SymbolPolynomial, w: &WeightField) -> Result<SymbolPolynomial, SymbolError> {
    if let Some(g) = sym.grid() {
        if g != w.grid() {
            return Err(SymbolError::Invalid("symbol and weight live on different grids".into()));
        }
    }
    let grid = w.grid();
    let d = sym.rank();
    let np = grid.len();
    let mut out = SymbolPolynomial::new(sym.dim(), d, sym.order())?.on_grid(grid)?;
    let bound = sym.clone().on_grid(grid)?;
    for (j, a) in bound.terms() {
        for k in sub_indices(j) {
            let rest: Vec<usize> = j.iter().zip(&k).map(|(x, y)| x - y).collect();
            let c = multi_binomial(j, &k);
            if rest.iter().all(|&r| r == 0) {
                out.add_term(&k, a.clone())?;
                continue;
            }
            let ld = w.log_derivative(&rest)?;
            let field: Vec<Vec<Complex64>> = (0..d * d)
                .map(|rc| (0..np).map(|p| a.at(p, d)[(rc / d, rc % d)] * ld[p] * c).collect())
                .collect();
            out.add_term(&k, Coefficient::Field(field))?;
        }
    }
    Ok(out)
}
