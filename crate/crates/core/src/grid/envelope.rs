use super::{GridError, GridField, MetricField, PeriodicGrid};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One component array: real values or `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentData {
    Real(Vec<f64>),
    Complex(Vec<[f64; 2]>),
}

impl ComponentData {
    pub fn len(&self) -> usize {
        match self {
            ComponentData::Real(v) => v.len(),
            ComponentData::Complex(v) => v.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn to_complex(&self) -> Vec<Complex64> {
        match self {
            ComponentData::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            ComponentData::Complex(v) => v.iter().map(|&[a, b]| Complex64::new(a, b)).collect(),
        }
    }
    pub fn to_real(&self) -> Vec<f64> {
        match self {
            ComponentData::Real(v) => v.clone(),
            ComponentData::Complex(v) => v.iter().map(|p| p[0]).collect(),
        }
    }
    fn from_complex(v: &[Complex64]) -> Self {
        if v.iter().all(|z| z.im == 0.0) {
            ComponentData::Real(v.iter().map(|z| z.re).collect())
        } else {
            ComponentData::Complex(v.iter().map(|z| [z.re, z.im]).collect())
        }
    }
}

/// JSON envelope `{dims, N, L, components}` for fields sampled on a grid.
/// Component arrays are row-major over the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEnvelope {
    pub dims: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varying: Option<usize>,
    pub components: Vec<ComponentData>,
}

impl FieldEnvelope {
    pub fn grid(&self) -> Result<PeriodicGrid, GridError> {
        PeriodicGrid::reduced(self.dims, self.n, self.length, self.varying.unwrap_or(self.dims))
    }

    fn header(grid: &PeriodicGrid) -> (usize, usize, f64, Option<usize>) {
        let varying = (grid.varying_axes() != grid.dim()).then_some(grid.varying_axes());
        (grid.dim(), grid.points_per_axis(), grid.length(), varying)
    }

    pub fn from_field(u: &GridField) -> Self {
        let (dims, n, length, varying) = Self::header(u.grid());
        let components = (0..u.components()).map(|c| ComponentData::from_complex(&u.component(c))).collect();
        Self { dims, n, length, varying, components }
    }

    pub fn from_real_components(grid: &PeriodicGrid, comps: &[Vec<f64>]) -> Self {
        let (dims, n, length, varying) = Self::header(grid);
        Self { dims, n, length, varying, components: comps.iter().map(|c| ComponentData::Real(c.clone())).collect() }
    }

    pub fn from_metric(g: &MetricField) -> Self {
        Self::from_real_components(g.grid(), g.components())
    }

    pub fn to_field(&self) -> Result<GridField, GridError> {
        let grid = self.grid()?;
        let comps: Vec<Vec<Complex64>> = self.components.iter().map(ComponentData::to_complex).collect();
        GridField::from_components(grid, &comps)
    }

    pub fn to_metric(&self) -> Result<MetricField, GridError> {
        let grid = self.grid()?;
        let comps: Vec<Vec<f64>> = self.components.iter().map(ComponentData::to_real).collect();
        MetricField::from_components(&grid, comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let grid = PeriodicGrid::new(2, 4, 1.0).unwrap();
        let u = GridField::from_fn(grid.clone(), |x| Complex64::new(x[0], x[1]));
        let env = FieldEnvelope::from_field(&u);
        let text = serde_json::to_string(&env).unwrap();
        assert!(text.contains("\"N\":4"));
        let back: FieldEnvelope = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_field().unwrap(), u);
        let real: FieldEnvelope =
            serde_json::from_str(r#"{"dims":1,"N":4,"L":2.0,"components":[[1,2,3,4]]}"#).unwrap();
        assert_eq!(real.to_field().unwrap().component(0)[2], Complex64::new(3.0, 0.0));
    }
}
