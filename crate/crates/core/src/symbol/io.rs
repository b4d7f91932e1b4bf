use super::{Coefficient, SymbolError, SymbolPolynomial};
use crate::grid::{FieldEnvelope, PeriodicGrid};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reference to a coefficient in a symbol file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffRef {
    /// Row-major `d×d` entries as `[re, im]` pairs (a single pair for scalars).
    Constant(Vec<[f64; 2]>),
    /// Path (relative to the symbol file) of a field envelope with `d*d` components.
    File(String),
    /// Inline field envelope with `d*d` components.
    Field(FieldEnvelope),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub multi_index: Vec<usize>,
    pub coeff_field_ref: CoeffRef,
}

/// On-disk form `{m, rank, dim, terms: [{multi_index, coeff_field_ref}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolSpec {
    pub m: usize,
    pub rank: usize,
    pub dim: usize,
    pub terms: Vec<TermSpec>,
}

impl SymbolSpec {
    pub fn load(path: &Path) -> Result<SymbolPolynomial, SymbolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SymbolError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let spec: SymbolSpec = serde_json::from_str(&text)
            .map_err(|e| SymbolError::Invalid(format!("{}: {e}", path.display())))?;
        spec.build(path.parent())
    }

    pub fn build(&self, base: Option<&Path>) -> Result<SymbolPolynomial, SymbolError> {
        let d = self.rank;
        let mut sym = SymbolPolynomial::new(self.dim, d, self.m)?;
        let mut grid: Option<PeriodicGrid> = None;
        for t in &self.terms {
            let coeff = match &t.coeff_field_ref {
                CoeffRef::Constant(v) => {
                    if v.len() != d * d {
                        return Err(SymbolError::Invalid(format!("constant for {:?} needs {} entries", t.multi_index, d * d)));
                    }
                    Coefficient::Constant(DMatrix::from_fn(d, d, |r, c| {
                        let [a, b] = v[r * d + c];
                        Complex64::new(a, b)
                    }))
                }
                CoeffRef::File(f) => {
                    let p = base.map_or_else(|| Path::new(f).to_path_buf(), |b| b.join(f));
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| SymbolError::Invalid(format!("cannot read {}: {e}", p.display())))?;
                    let env: FieldEnvelope = serde_json::from_str(&text)
                        .map_err(|e| SymbolError::Invalid(format!("{}: {e}", p.display())))?;
                    field_coefficient(&env, d, &mut grid, &mut sym)?
                }
                CoeffRef::Field(env) => field_coefficient(env, d, &mut grid, &mut sym)?,
            };
            sym.add_term(&t.multi_index, coeff)?;
        }
        Ok(sym)
    }

    /// Serializable description of a constant-coefficient symbol.
    pub fn from_constant(sym: &SymbolPolynomial) -> Result<Self, SymbolError> {
        let d = sym.rank();
        let mut terms = Vec::new();
        for (j, c) in sym.terms() {
            let Coefficient::Constant(m) = c else {
                return Err(SymbolError::Invalid("field coefficients must be written separately".into()));
            };
            let v = (0..d * d).map(|rc| [m[(rc / d, rc % d)].re, m[(rc / d, rc % d)].im]).collect();
            terms.push(TermSpec { multi_index: j.clone(), coeff_field_ref: CoeffRef::Constant(v) });
        }
        Ok(Self { m: sym.order(), rank: d, dim: sym.dim(), terms })
    }
}

fn field_coefficient(
    env: &FieldEnvelope,
    d: usize,
    grid: &mut Option<PeriodicGrid>,
    sym: &mut SymbolPolynomial,
) -> Result<Coefficient, SymbolError> {
    let g = env.grid()?;
    if grid.is_none() {
        *grid = Some(g.clone());
        *sym = sym.clone().on_grid(&g)?;
    } else if grid.as_ref() != Some(&g) {
        return Err(SymbolError::Invalid("coefficient fields on different grids".into()));
    }
    if env.components.len() != d * d {
        return Err(SymbolError::Invalid(format!("field coefficient needs {} components", d * d)));
    }
    Ok(Coefficient::Field(env.components.iter().map(|c| c.to_complex()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_constant_and_inline_field() {
        let text = r#"{"m":2,"rank":1,"dim":1,"terms":[
            {"multi_index":[2],"coeff_field_ref":{"field":{"dims":1,"N":4,"L":6.283185307179586,"components":[[-1,-1.1,-1,-0.9]]}}},
            {"multi_index":[0],"coeff_field_ref":{"constant":[[0.5,0]]}}]}"#;
        let spec: SymbolSpec = serde_json::from_str(text).unwrap();
        let s = spec.build(None).unwrap();
        assert_eq!(s.order(), 2);
        assert!(!s.is_constant());
        assert!((s.full_symbol(1, &[1.0])[(0, 0)] - Complex64::new(1.6, 0.0)).norm() < 1e-14);
        let lap = SymbolPolynomial::laplacian(2, 1).unwrap();
        let round = SymbolSpec::from_constant(&lap).unwrap().build(None).unwrap();
        assert_eq!(round, lap);
    }
}
