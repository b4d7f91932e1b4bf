use super::{SymbolError, SymbolPolynomial};
use crate::grid::PeriodicGrid;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;

/// Unit directions: ± coordinate axes, normalized diagonals and `random`
/// seeded directions.
pub fn unit_directions(dim: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for a in 0..dim {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[a] = s;
            out.push(v);
        }
    }
    if dim > 1 {
        for mask in 0..(1usize << (dim - 1)) {
            let mut v: Vec<f64> = (0..dim).map(|a| if a > 0 && mask >> (a - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let nrm = (dim as f64).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            out.push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-3 {
            out.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    out
}

/// Unit directions times radii `2^-4 … 2^8`, plus the nonzero dual-lattice
/// frequencies of `grid` (subsampled to at most 512).
pub fn default_xi_samples(dim: usize, grid: Option<&PeriodicGrid>, seed: u64) -> Vec<Vec<f64>> {
    let dirs = unit_directions(dim, 8, seed);
    let mut out = Vec::new();
    for e in -4..=8 {
        let r = 2f64.powi(e);
        for d in &dirs {
            out.push(d.iter().map(|x| x * r).collect());
        }
    }
    if let Some(g) = grid {
        let step = (g.len() / 512).max(1);
        for p in (1..g.len()).step_by(step) {
            out.push(g.wavevector(p));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    /// Largest `|arg μ|` over eigenvalues μ of the sampled principal symbols.
    pub spectral_angle: f64,
    /// Largest numerical-range half-angle over the samples.
    pub numerical_range_angle: f64,
    /// `θ′ = max(spectral_angle, numerical_range_angle)`.
    pub theta: f64,
    /// Smallest singular value of `σ_m(x, ξ)/|ξ|^m` over the samples.
    pub margin: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Smallest `θ ∈ [0, π/2]` with the numerical range of `a` inside
/// `{|arg z| ≤ θ}`; returns `π/2` when not even the closed right half-plane
/// contains it.
pub fn numerical_range_angle(a: &DMatrix<Complex64>) -> f64 {
    let tol = 1e-12 * a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let lowest = |theta: f64| -> f64 {
        let mut lo = f64::INFINITY;
        for s in [1.0, -1.0] {
            let rot = Complex64::from_polar(1.0, s * (FRAC_PI_2 - theta));
            let b = a * rot;
            let herm = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
            lo = lo.min(herm.symmetric_eigenvalues().min());
        }
        lo
    };
    if lowest(FRAC_PI_2) < -tol {
        return FRAC_PI_2;
    }
    if lowest(0.0) >= -tol {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if lowest(mid) >= -tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Tests that the spectrum and numerical range of `σ_m(x, ξ)` stay in a sector
/// `|arg λ| ≤ θ′ < π/2` over the sample sets (`points` index grid points).
pub fn check_strong_ellipticity(
    sym: &SymbolPolynomial,
    xi_samples: &[Vec<f64>],
    points: &[usize],
) -> Result<EllipticityReport, SymbolError> {
    if xi_samples.is_empty() || points.is_empty() {
        return Err(SymbolError::Invalid("empty sample set".into()));
    }
    let mut spectral_angle = 0.0f64;
    let mut nr_angle = 0.0f64;
    let mut margin = f64::INFINITY;
    let mut samples = 0;
    for &p in points {
        for xi in xi_samples {
            let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                continue;
            }
            let unit: Vec<f64> = xi.iter().map(|v| v / r).collect();
            let s = sym.principal_symbol(p, &unit);
            let sv = s.clone().svd(false, false).singular_values;
            let smin = sv.min();
            if smin <= 1e-12 * sv.max().max(1.0) {
                return Err(SymbolError::EllipticityFailure { point: p, xi: xi.clone() });
            }
            margin = margin.min(smin);
            let eigs = s.clone().schur().eigenvalues().ok_or_else(|| SymbolError::Invalid("Schur decomposition failed".into()))?;
            for mu in eigs.iter() {
                spectral_angle = spectral_angle.max(mu.arg().abs());
            }
            nr_angle = nr_angle.max(numerical_range_angle(&s));
            samples += 1;
        }
    }
    let theta = spectral_angle.max(nr_angle);
    Ok(EllipticityReport {
        spectral_angle,
        numerical_range_angle: nr_angle,
        theta,
        margin,
        samples,
        pass: theta < FRAC_PI_2 - 1e-12,
    })
}

/// Closed cone `Γ = {λ : |arg(λ e^{-i axis})| ≤ half_angle}` expected to
/// contain the symbol values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cone {
    pub axis: f64,
    pub half_angle: f64,
}

impl Cone {
    /// Cone around the positive real axis.
    pub fn right(half_angle: f64) -> Self {
        Self { axis: 0.0, half_angle }
    }
    pub fn contains(&self, z: Complex64) -> bool {
        if z.norm() == 0.0 {
            return true;
        }
        (z * Complex64::from_polar(1.0, -self.axis)).arg().abs() <= self.half_angle
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// `sup ‖(ζ - σ_m)^{-1}‖ (1+|ξ|)^m` over all samples.
    pub constant: f64,
    /// Fitted constant per ζ, in input order.
    pub per_zeta: Vec<(f64, f64, f64)>,
    /// Samples ζ that lie inside the cone Γ (precondition violations).
    pub flagged: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Fits `C = max ‖(ζ - σ_m(x,ξ))^{-1}‖ (1+|ξ|)^m` over the sample sets.
pub fn check_admissibility(
    sym: &SymbolPolynomial,
    cone: &Cone,
    zetas: &[Complex64],
    xi_samples: &[Vec<f64>],
    points: &[usize],
) -> Result<AdmissibilityReport, SymbolError> {
    if zetas.is_empty() || xi_samples.is_empty() || points.is_empty() {
        return Err(SymbolError::Invalid("empty sample set".into()));
    }
    let d = sym.rank();
    let m = sym.order() as i32;
    let mut per_zeta = Vec::with_capacity(zetas.len());
    let mut flagged = Vec::new();
    let mut constant = 0.0f64;
    for &z in zetas {
        if cone.contains(z) {
            flagged.push((z.re, z.im));
        }
        let mut cz = 0.0f64;
        for &p in points {
            for xi in xi_samples {
                let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                let a = DMatrix::identity(d, d) * z - sym.principal_symbol(p, xi);
                let sv = a.svd(false, false).singular_values;
                let smin = sv.min();
                if smin <= 1e-12 * sv.max().max(z.norm()).max(1.0) {
                    return Err(SymbolError::AdmissibilityFailure { zeta: z, point: p, xi: xi.clone() });
                }
                cz = cz.max((1.0 + r).powi(m) / smin);
            }
        }
        constant = constant.max(cz);
        per_zeta.push((z.re, z.im, cz));
    }
    Ok(AdmissibilityReport { constant, per_zeta, pass: flagged.is_empty() && constant.is_finite(), flagged })
}
