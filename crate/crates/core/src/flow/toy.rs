//! Scalar model flows: `u_t = -Lu` and `u_t = -u_xxxx + u²`.

use super::{FlowError, FlowRhs};
use crate::grid::{holder_norm, GridField, MetricField, NormConfig, PeriodicGrid, Scheme};
use crate::operator::{flat_bilaplacian, DiscreteOperator};
use crate::Complex64;
use nalgebra::DVector;

fn apply_real(op: &DiscreteOperator, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
    let uc = u.map(|v| Complex64::new(v, 0.0));
    Ok(op.apply(&uc)?.map(|z| z.re))
}

/// `F(u) = -Lu` for a real operator `L`.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    op: DiscreteOperator,
}

impl LinearFlow {
    pub fn new(op: DiscreteOperator) -> Result<Self, FlowError> {
        Ok(Self { op })
    }
    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }
}

impl FlowRhs for LinearFlow {
    fn grid(&self) -> &PeriodicGrid {
        self.op.grid()
    }
    fn components(&self) -> usize {
        self.op.rank()
    }
    fn order(&self) -> usize {
        self.op.order()
    }
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
        Ok(-apply_real(&self.op, u)?)
    }
}

/// `u_t = -u_xxxx + u²` with the spectral bi-Laplacian.
#[derive(Debug, Clone)]
pub struct Toy1d {
    op: DiscreteOperator,
}

impl Toy1d {
    pub fn new(grid: &PeriodicGrid) -> Result<Self, FlowError> {
        if grid.dim() != 1 {
            return Err(FlowError::Invalid(format!("toy flow is one-dimensional, grid has dimension {}", grid.dim())));
        }
        Ok(Self { op: flat_bilaplacian(grid, 1, Scheme::Spectral)? })
    }
}

impl FlowRhs for Toy1d {
    fn grid(&self) -> &PeriodicGrid {
        self.op.grid()
    }
    fn components(&self) -> usize {
        1
    }
    fn order(&self) -> usize {
        4
    }
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
        Ok(u.map(|v| v * v) - apply_real(&self.op, u)?)
    }
}

/// Flat `C^{k,α}` norm of a point-major state with `components` entries per point.
pub fn holder_state_norm(grid: &PeriodicGrid, components: usize, k: usize, alpha: f64, u: &DVector<f64>) -> Result<f64, FlowError> {
    let field = GridField::new(grid.clone(), components, u.map(|v| Complex64::new(v, 0.0)))?;
    let cfg = NormConfig::new(grid, k, alpha).with_scheme(Scheme::Spectral);
    Ok(holder_norm(&field, &MetricField::flat(grid), &cfg)?)
}
