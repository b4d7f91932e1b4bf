use super::{GridError, PeriodicGrid};
use nalgebra::DVector;
use num_complex::Complex64;

/// Section of a trivial rank-`d` bundle sampled on a grid.
///
/// Unknown ordering is point-major: `values[point * d + component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: PeriodicGrid,
    components: usize,
    values: DVector<Complex64>,
}

impl GridField {
    pub fn new(grid: PeriodicGrid, components: usize, values: DVector<Complex64>) -> Result<Self, GridError> {
        let expected = grid.len() * components;
        if components == 0 || values.len() != expected {
            return Err(GridError::ShapeMismatch { expected, got: values.len() });
        }
        Ok(Self { grid, components, values })
    }

    pub fn zeros(grid: PeriodicGrid, components: usize) -> Self {
        let n = grid.len() * components;
        Self { grid, components, values: DVector::zeros(n) }
    }

    pub fn scalar(grid: PeriodicGrid, values: Vec<Complex64>) -> Result<Self, GridError> {
        Self::new(grid, 1, DVector::from_vec(values))
    }

    pub fn from_real(grid: PeriodicGrid, values: &[f64]) -> Result<Self, GridError> {
        Self::scalar(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Scalar field sampled from a function of position.
    pub fn from_fn<F: FnMut(&[f64]) -> Complex64>(grid: PeriodicGrid, f: F) -> Self {
        let v = grid.sample(f);
        Self { values: DVector::from_vec(v), grid, components: 1 }
    }

    /// Assembles a field from per-component scalar arrays.
    pub fn from_components(grid: PeriodicGrid, comps: &[Vec<Complex64>]) -> Result<Self, GridError> {
        let d = comps.len();
        let np = grid.len();
        if d == 0 {
            return Err(GridError::ShapeMismatch { expected: np, got: 0 });
        }
        let mut v = DVector::zeros(np * d);
        for (c, arr) in comps.iter().enumerate() {
            if arr.len() != np {
                return Err(GridError::ShapeMismatch { expected: np, got: arr.len() });
            }
            for (p, &x) in arr.iter().enumerate() {
                v[p * d + c] = x;
            }
        }
        Ok(Self { grid, components: d, values: v })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    pub fn components(&self) -> usize {
        self.components
    }
    pub fn values(&self) -> &DVector<Complex64> {
        &self.values
    }
    pub fn into_values(self) -> DVector<Complex64> {
        self.values
    }

    pub fn component(&self, c: usize) -> Vec<Complex64> {
        let d = self.components;
        (0..self.grid.len()).map(|p| self.values[p * d + c]).collect()
    }

    pub fn with_values(&self, values: DVector<Complex64>) -> Result<Self, GridError> {
        Self::new(self.grid.clone(), self.components, values)
    }

    pub fn sup_norm(&self) -> f64 {
        let d = self.components;
        (0..self.grid.len())
            .map(|p| (0..d).map(|c| self.values[p * d + c].norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}
