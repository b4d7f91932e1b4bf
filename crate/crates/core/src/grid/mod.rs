//! Periodic lattices on the flat torus, discrete differentiation, metrics and
//! Hölder norms.

mod envelope;
mod fft;
mod field;
mod holder;
mod metric;

pub use envelope::{ComponentData, FieldEnvelope};
pub use fft::FftNd;
pub use field::GridField;
pub use holder::{
    derivative_sups, holder_norm, holder_seminorm, holder_terms, semiclassical_holder_norm, HolderTerms,
    NormConfig, MAX_HOLDER_ORDER,
};
pub use metric::{check_bounded_geometry, GeometryBounds, GeometryReport, MetricField};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Largest lattice we are willing to allocate fields on.
pub const MAX_POINTS: usize = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("stencil of derivative order {order} needs {needed} points per axis, grid has {available}")]
    Resolution { order: usize, needed: usize, available: usize },
    #[error("derivative order {requested} exceeds supported maximum {max}")]
    UnsupportedOrder { requested: usize, max: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("metric is not positive definite at point {point} (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { point: usize, min_eig: f64 },
    #[error("metric is not symmetric at point {point} (defect {defect:e})")]
    NotSymmetric { point: usize, defect: f64 },
    #[error("invalid norm configuration: {0}")]
    Norm(String),
}

/// Discrete differentiation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Spectral,
    Fd2,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Spectral => "spectral",
            Scheme::Fd2 => "fd2",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "fd2" => Ok(Scheme::Fd2),
            other => Err(format!("unknown scheme '{other}' (expected spectral|fd2)")),
        }
    }
}

/// Uniform periodic lattice `(R/LZ)^n` with `N` points per varying axis.
///
/// Axes beyond `varying` carry a single point; fields are constant along
/// them and every derivative in those directions vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    length: f64,
    varying: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self, GridError> {
        Self::reduced(dim, n, length, dim)
    }

    /// Grid on which only the first `varying` coordinates are resolved.
    pub fn reduced(dim: usize, n: usize, length: f64, varying: usize) -> Result<Self, GridError> {
        if !(1..=4).contains(&dim) {
            return Err(GridError::Config(format!("dimension {dim} not in 1..=4")));
        }
        if n < 4 {
            return Err(GridError::Config(format!("need at least 4 points per axis, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::Config(format!("period must be positive, got {length}")));
        }
        if varying == 0 || varying > dim {
            return Err(GridError::Config(format!("varying axes {varying} not in 1..={dim}")));
        }
        let total = (n as u128).pow(varying as u32);
        if total > MAX_POINTS as u128 {
            return Err(GridError::Config(format!(
                "{total} grid points exceed the memory budget of {MAX_POINTS}"
            )));
        }
        Ok(Self { dim, n, length, varying })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn points_per_axis(&self) -> usize {
        self.n
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }
    pub fn varying_axes(&self) -> usize {
        self.varying
    }
    pub fn is_varying(&self, axis: usize) -> bool {
        axis < self.varying
    }
    pub fn axis_len(&self, axis: usize) -> usize {
        if axis < self.varying {
            self.n
        } else {
            1
        }
    }
    pub fn shape(&self) -> Vec<usize> {
        (0..self.dim).map(|a| self.axis_len(a)).collect()
    }
    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.n.pow(self.varying as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major stride of `axis` (last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        ((axis + 1)..self.dim).map(|a| self.axis_len(a)).product()
    }

    pub fn coords(&self, flat: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim];
        let mut r = flat;
        for a in (0..self.dim).rev() {
            let m = self.axis_len(a);
            c[a] = r % m;
            r /= m;
        }
        c
    }

    pub fn flat_index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .enumerate()
            .fold(0, |acc, (a, &c)| acc * self.axis_len(a) + c % self.axis_len(a))
    }

    /// Index of the point displaced by `offset` lattice steps (periodic).
    pub fn shifted(&self, flat: usize, offset: &[i64]) -> usize {
        let c = self.coords(flat);
        let mut out = 0;
        for a in 0..self.dim {
            let m = self.axis_len(a) as i64;
            let v = (c[a] as i64 + offset[a]).rem_euclid(m);
            out = out * m as usize + v as usize;
        }
        out
    }

    pub fn position(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        self.coords(flat).into_iter().map(|c| c as f64 * h).collect()
    }

    /// Minimal periodic image of `x - y` along one axis, in `(-L/2, L/2]`.
    pub fn periodic_difference(&self, x: f64, y: f64) -> f64 {
        let l = self.length;
        let d = (x - y).rem_euclid(l);
        if d > l / 2.0 {
            d - l
        } else {
            d
        }
    }

    /// Angular wavenumber of FFT index `i` along `axis`.
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        let m = self.axis_len(axis);
        if m == 1 {
            return 0.0;
        }
        let j = if i <= (m - 1) / 2 { i as f64 } else { i as f64 - m as f64 };
        j * 2.0 * PI / self.length
    }

    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        let m = self.axis_len(axis);
        m > 1 && m % 2 == 0 && i == m / 2
    }

    /// Wavevector at flat FFT index.
    pub fn wavevector(&self, flat: usize) -> Vec<f64> {
        self.coords(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.wavenumber(a, i))
            .collect()
    }

    /// Fourier symbol of the 1D derivative of order `p` at FFT index `i`.
    ///
    /// Spectral: `(ik)^p`, with odd orders annihilating the Nyquist mode.
    /// fd2: centered first difference `i sin(kh)/h` and the three-point second
    /// difference `-(2 - 2cos kh)/h^2`, composed for higher orders.
    pub fn derivative_symbol(&self, axis: usize, i: usize, p: usize, scheme: Scheme) -> Complex64 {
        if p == 0 {
            return Complex64::new(1.0, 0.0);
        }
        if !self.is_varying(axis) {
            return Complex64::new(0.0, 0.0);
        }
        let k = self.wavenumber(axis, i);
        match scheme {
            Scheme::Spectral => {
                if p % 2 == 1 && self.is_nyquist(axis, i) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k).powu(p as u32)
                }
            }
            Scheme::Fd2 => {
                let h = self.spacing();
                let d2 = -(2.0 - 2.0 * (k * h).cos()) / (h * h);
                let mut s = Complex64::new(d2.powi((p / 2) as i32), 0.0);
                if p % 2 == 1 {
                    s *= Complex64::new(0.0, (k * h).sin() / h);
                }
                s
            }
        }
    }

    /// Symbol of `∂^beta` at flat FFT index.
    pub fn multi_derivative_symbol(&self, flat: usize, beta: &[usize], scheme: Scheme) -> Complex64 {
        let c = self.coords(flat);
        beta.iter()
            .enumerate()
            .fold(Complex64::new(1.0, 0.0), |acc, (a, &p)| acc * self.derivative_symbol(a, c[a], p, scheme))
    }

    /// Half-width of the fd2 stencil for a derivative of order `p`.
    pub fn fd_half_width(p: usize) -> usize {
        p / 2 + p % 2
    }

    /// Checks that the scheme can represent a derivative of order `p` per axis.
    pub fn check_order(&self, p: usize, scheme: Scheme) -> Result<(), GridError> {
        if scheme == Scheme::Fd2 {
            let needed = 2 * Self::fd_half_width(p) + 1;
            if p > 0 && needed > self.n {
                return Err(GridError::Resolution { order: p, needed, available: self.n });
            }
        } else if p > self.n {
            return Err(GridError::Resolution { order: p, needed: p, available: self.n });
        }
        Ok(())
    }

    /// Samples a function of position on every lattice point.
    pub fn sample<F: FnMut(&[f64]) -> T, T>(&self, mut f: F) -> Vec<T> {
        (0..self.len()).map(|p| f(&self.position(p))).collect()
    }

    /// Short human-readable description used in reports.
    pub fn describe(&self) -> String {
        if self.varying == self.dim {
            format!("T^{} N={} L={}", self.dim, self.n, self.length)
        } else {
            format!("T^{} N={} L={} varying={}", self.dim, self.n, self.length, self.varying)
        }
    }
}

/// Applies `∂^beta` to a scalar field.
pub fn partial(
    grid: &PeriodicGrid,
    f: &[Complex64],
    beta: &[usize],
    scheme: Scheme,
) -> Result<Vec<Complex64>, GridError> {
    if f.len() != grid.len() {
        return Err(GridError::ShapeMismatch { expected: grid.len(), got: f.len() });
    }
    for &p in beta {
        grid.check_order(p, scheme)?;
    }
    if beta.iter().all(|&p| p == 0) {
        return Ok(f.to_vec());
    }
    if beta.iter().enumerate().any(|(a, &p)| p > 0 && !grid.is_varying(a)) {
        return Ok(vec![Complex64::new(0.0, 0.0); f.len()]);
    }
    match scheme {
        Scheme::Spectral => {
            let fft = FftNd::new(grid);
            let mut buf = f.to_vec();
            fft.forward(&mut buf);
            for (i, v) in buf.iter_mut().enumerate() {
                *v *= grid.multi_derivative_symbol(i, beta, scheme);
            }
            fft.inverse(&mut buf);
            Ok(buf)
        }
        Scheme::Fd2 => {
            let mut out = f.to_vec();
            for (axis, &p) in beta.iter().enumerate() {
                for _ in 0..p / 2 {
                    out = fd_second(grid, &out, axis);
                }
                if p % 2 == 1 {
                    out = fd_first(grid, &out, axis);
                }
            }
            Ok(out)
        }
    }
}

/// Centered first difference along `axis`.
pub fn fd_first(grid: &PeriodicGrid, f: &[Complex64], axis: usize) -> Vec<Complex64> {
    let h = grid.spacing();
    let m = grid.axis_len(axis);
    let s = grid.stride(axis);
    (0..f.len())
        .map(|p| {
            let c = (p / s) % m;
            let up = p - c * s + ((c + 1) % m) * s;
            let dn = p - c * s + ((c + m - 1) % m) * s;
            (f[up] - f[dn]) / (2.0 * h)
        })
        .collect()
}

/// Three-point second difference along `axis`.
pub fn fd_second(grid: &PeriodicGrid, f: &[Complex64], axis: usize) -> Vec<Complex64> {
    let h = grid.spacing();
    let m = grid.axis_len(axis);
    let s = grid.stride(axis);
    (0..f.len())
        .map(|p| {
            let c = (p / s) % m;
            let up = p - c * s + ((c + 1) % m) * s;
            let dn = p - c * s + ((c + m - 1) % m) * s;
            (f[up] - 2.0 * f[p] + f[dn]) / (h * h)
        })
        .collect()
}

/// All multi-indices of total order `j` in `n` variables, graded lexicographically.
pub fn multi_indices(n: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(n, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, j, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Multi-index counting how often each axis appears in an ordered index tuple.
pub fn tuple_to_multi(tuple: &[usize], n: usize) -> Vec<usize> {
    let mut m = vec![0; n];
    for &a in tuple {
        m[a] += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_grid_spacing_and_counts() {
        let g = PeriodicGrid::new(1, 8, 2.0 * PI).unwrap();
        assert!((g.spacing() - PI / 4.0).abs() < 1e-15);
        assert_eq!(PeriodicGrid::new(2, 32, 2.0 * PI).unwrap().len(), 1024);
        assert_eq!(PeriodicGrid::new(4, 16, 2.0 * PI).unwrap().len(), 65536);
        assert!(PeriodicGrid::new(2, 3, 1.0).is_err());
        assert!(PeriodicGrid::new(5, 8, 1.0).is_err());
        assert!(matches!(PeriodicGrid::new(4, 128, 1.0), Err(GridError::Config(_))));
    }

    #[test]
    fn index_round_trip() {
        let g = PeriodicGrid::new(3, 4, 1.0).unwrap();
        for p in 0..g.len() {
            assert_eq!(g.flat_index(&g.coords(p)), p);
        }
        assert_eq!(g.shifted(0, &[-1, 0, 0]), g.flat_index(&[3, 0, 0]));
        let r = PeriodicGrid::reduced(4, 8, 1.0, 2).unwrap();
        assert_eq!(r.len(), 64);
        assert_eq!(r.shape(), vec![8, 8, 1, 1]);
    }

    #[test]
    fn wavenumbers_follow_fft_ordering() {
        let g = PeriodicGrid::new(1, 8, 2.0 * PI).unwrap();
        let ks: Vec<f64> = (0..8).map(|i| g.wavenumber(0, i)).collect();
        assert_eq!(ks, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn spectral_derivative_of_trig_is_exact() {
        let g = PeriodicGrid::new(2, 16, 2.0 * PI).unwrap();
        let f: Vec<Complex64> = g.sample(|x| Complex64::new((2.0 * x[0]).sin() * x[1].cos(), 0.0));
        let d = partial(&g, &f, &[1, 2], Scheme::Spectral).unwrap();
        for p in 0..g.len() {
            let x = g.position(p);
            let exact = -2.0 * (2.0 * x[0]).cos() * x[1].cos();
            assert!((d[p].re - exact).abs() < 1e-12 && d[p].im.abs() < 1e-12);
        }
    }

    #[test]
    fn fd2_derivative_matches_stencil_symbol() {
        let g = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let f: Vec<Complex64> = g.sample(|x| Complex64::new((3.0 * x[0]).sin(), 0.0));
        let d = partial(&g, &f, &[3], Scheme::Fd2).unwrap();
        let h = g.spacing();
        let factor = -(2.0 - 2.0 * (3.0 * h).cos()) / (h * h) * (3.0 * h).sin() / h;
        for p in 0..g.len() {
            let x = g.position(p)[0];
            assert!((d[p].re - factor * (3.0 * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn fd2_resolution_error() {
        let g = PeriodicGrid::new(1, 4, 1.0).unwrap();
        let f = vec![Complex64::new(1.0, 0.0); 4];
        assert!(matches!(partial(&g, &f, &[4], Scheme::Fd2), Err(GridError::Resolution { .. })));
        assert!(partial(&g, &f, &[2], Scheme::Fd2).is_ok());
    }

    #[test]
    fn frozen_axis_derivatives_vanish() {
        let g = PeriodicGrid::reduced(2, 8, 1.0, 1).unwrap();
        let f: Vec<Complex64> = g.sample(|x| Complex64::new(x[0], 0.0));
        let d = partial(&g, &f, &[0, 1], Scheme::Spectral).unwrap();
        assert!(d.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(multi_indices(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(multi_indices(4, 3).len(), 20);
        assert_eq!(multi_indices(3, 0), vec![vec![0, 0, 0]]);
    }
}
