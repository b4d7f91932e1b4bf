//! Contour-quadrature evaluation of `e^{-tL}` from resolvent solves.
//!
//! With the spectrum of `L` inside the closed cone `|arg(λ-ω)| ≤ θ`,
//! `e^{-tL} = (2πi)^{-1} ∫_Γ e^{-tλ} (λ-L)^{-1} dλ` over a left-opening arc `Γ`
//! in the resolvent sector. The arc is the hyperbola
//! `λ(u) = ω + μ(sin(α - iu) - 1)`, sampled with the trapezoid rule in `u`.

use crate::operator::DiscreteOperator;
use crate::resolvent::{ResolventError, SectorEstimate, ShiftedSolver};
use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

/// Smallest node count accepted by [`design_contour`].
pub const MIN_NODES: usize = 8;
/// Default node count for command-line runs.
pub const DEFAULT_NODES: usize = 48;
/// Node count that reaches `1e-8` on sectors fitted with `C ≈ 1`.
pub const ACCURATE_NODES: usize = 128;
/// Openings `π/2 - θ` below this trigger the near-degenerate warning.
pub const NARROW_OPENING: f64 = 0.1;
const MAX_INFLATION: usize = 8;
const SOLVE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemigroupError {
    #[error("{0} nodes under-resolve the contour (need at least {MIN_NODES})")]
    UnderResolved(usize),
    #[error("time must be positive and finite, got {0}")]
    InvalidTime(f64),
    #[error("sector cannot carry a contour: {0}")]
    InvalidSector(String),
    #[error("contour node {re}{im:+}i hits the spectrum; redesign the contour")]
    NodeHitsSpectrum { re: f64, im: f64 },
    #[error("contour node {re}{im:+}i lies outside the certified sector")]
    NodeOutsideSector { re: f64, im: f64 },
    #[error("state has {got} entries, operator expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
}

/// Trapezoid nodes and weights on the hyperbolic arc, for one time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourQuadrature {
    pub family: &'static str,
    pub nodes: Vec<Complex64>,
    pub weights: Vec<Complex64>,
    /// Derivative `λ'(u_j)` times `h/(2πi)`, kept so the arc can be retimed.
    #[serde(skip)]
    measure: Vec<Complex64>,
    pub omega: f64,
    pub theta: f64,
    pub constant: f64,
    pub t: f64,
    pub mu: f64,
    pub step: f64,
    pub alpha: f64,
    /// Model bound on the quadrature error relative to `‖u0‖`.
    pub error_estimate: f64,
    pub warnings: Vec<String>,
}

impl ContourQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Same arc, weights for another time. The enclosure does not depend on
    /// `t`, only the accuracy does.
    pub fn retimed(&self, t: f64) -> Result<Self, SemigroupError> {
        check_time(t)?;
        let mut out = self.clone();
        out.t = t;
        out.weights = self.nodes.iter().zip(&self.measure).map(|(l, m)| m * (-t * l).exp()).collect();
        out.error_estimate = self.constant * (-t * self.omega).exp() * error_model(t, self.mu, self.step, self.alpha, FRAC_PI_2 - self.theta, self.len());
        Ok(out)
    }
}

fn check_time(t: f64) -> Result<(), SemigroupError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(SemigroupError::InvalidTime(t))
    }
}

/// Strip half-width available to the arc of asymptotic angle `α` inside an
/// opening `β` beyond the imaginary direction.
fn strip(alpha: f64, beta: f64) -> f64 {
    alpha.min(beta - alpha)
}

/// Discretization plus truncation estimate for the trapezoid rule on the
/// hyperbola, in units of the integrand scale.
fn error_model(t: f64, mu: f64, h: f64, alpha: f64, beta: f64, nodes: usize) -> f64 {
    let d = strip(alpha, beta);
    if d <= 0.0 {
        return f64::INFINITY;
    }
    let umax = (nodes as f64 - 1.0) * h / 2.0;
    let den = (2.0 * PI * d / h).exp_m1();
    let e1 = (t * mu * (1.0 - (alpha - d).sin())).exp() / den;
    let e2 = (t * mu * (1.0 - (alpha + d).sin())).exp() / den;
    let e3 = (t * mu * (1.0 - alpha.sin() * umax.cosh())).exp();
    e1 + e2 + e3
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

/// Grid search for `(α, h, μ)` minimizing [`error_model`].
fn optimize(t: f64, beta: f64, nodes: usize) -> (f64, f64, f64, f64) {
    let mut best = (f64::INFINITY, 1.0, 0.1, beta / 2.0);
    let lmu_max = (1e4 / t).ln().max(0.0);
    for alpha in linspace(0.04 * beta, 0.96 * beta, 25) {
        for lh in linspace(0.01f64.ln(), 2.0f64.ln(), 120) {
            let h = lh.exp();
            for lmu in linspace(-2.0, lmu_max, 120) {
                let mu = lmu.exp();
                let e = error_model(t, mu, h, alpha, beta, nodes);
                if e < best.0 {
                    best = (e, mu, h, alpha);
                }
            }
        }
    }
    best
}

/// Hyperbolic arc with `nq` nodes for time `t`, certified against `est`.
pub fn design_contour(est: &SectorEstimate, t: f64, nq: usize) -> Result<ContourQuadrature, SemigroupError> {
    check_time(t)?;
    if nq < MIN_NODES {
        return Err(SemigroupError::UnderResolved(nq));
    }
    let theta = est.theta();
    if !(0.0..FRAC_PI_2).contains(&theta) || !est.omega().is_finite() {
        return Err(SemigroupError::InvalidSector(format!("theta = {theta}, omega = {}", est.omega())));
    }
    let beta = FRAC_PI_2 - theta;
    let mut warnings = Vec::new();
    let mut nodes_count = nq;
    if beta < NARROW_OPENING {
        let factor = ((NARROW_OPENING / beta).ceil() as usize).clamp(1, MAX_INFLATION);
        nodes_count = nq * factor;
        warnings.push(format!(
            "near-degenerate sector: opening {beta:.3e} rad beyond the half-plane, node count inflated {nq} -> {nodes_count}"
        ));
    }
    let (model, mu, h, alpha) = optimize(t, beta, nodes_count);
    if !model.is_finite() {
        return Err(SemigroupError::InvalidSector(format!("no admissible arc for opening {beta}")));
    }
    let omega = est.omega();
    let mut nodes = Vec::with_capacity(nodes_count);
    let mut measure = Vec::with_capacity(nodes_count);
    let i = Complex64::i();
    for k in 0..nodes_count {
        let u = (k as f64 - (nodes_count as f64 - 1.0) / 2.0) * h;
        let s = Complex64::new(alpha, -u);
        let lambda = omega + mu * (s.sin() - 1.0);
        if !est.contains(lambda) {
            return Err(SemigroupError::NodeOutsideSector { re: lambda.re, im: lambda.im });
        }
        let dlambda = -i * mu * s.cos();
        nodes.push(lambda);
        measure.push(dlambda * h / (2.0 * PI * i));
    }
    let weights = nodes.iter().zip(&measure).map(|(l, m)| m * (-t * l).exp()).collect();
    Ok(ContourQuadrature {
        family: "hyperbola",
        nodes,
        weights,
        measure,
        omega,
        theta,
        constant: est.constant(),
        t,
        mu,
        step: h,
        alpha,
        error_estimate: est.constant() * (-t * omega).exp() * model,
        warnings,
    })
}

/// `Σ_j w_j (λ_j - L)^{-1} u0` over a designed contour.
pub fn apply_contour(op: &DiscreteOperator, contour: &ContourQuadrature, u0: &DVector<Complex64>) -> Result<DVector<Complex64>, SemigroupError> {
    if u0.len() != op.unknowns() {
        return Err(SemigroupError::Shape { expected: op.unknowns(), got: u0.len() });
    }
    let mut acc = DVector::zeros(u0.len());
    for (lambda, w) in contour.nodes.iter().zip(&contour.weights) {
        let solver = ShiftedSolver::new(op, *lambda, SOLVE_TOL).map_err(|e| match e {
            ResolventError::SpectrumHit { .. } => SemigroupError::NodeHitsSpectrum { re: lambda.re, im: lambda.im },
            other => other.into(),
        })?;
        acc += solver.solve(u0)? * *w;
    }
    Ok(acc)
}

/// `e^{-tL} u0`; `t = 0` returns `u0` unchanged.
pub fn evolve(op: &DiscreteOperator, est: &SectorEstimate, u0: &DVector<Complex64>, t: f64, nq: usize) -> Result<DVector<Complex64>, SemigroupError> {
    if t == 0.0 {
        if u0.len() != op.unknowns() {
            return Err(SemigroupError::Shape { expected: op.unknowns(), got: u0.len() });
        }
        return Ok(u0.clone());
    }
    let contour = design_contour(est, t, nq)?;
    apply_contour(op, &contour, u0)
}

/// Composition and boundedness measurements for one `(t1, t2)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub t1: f64,
    pub t2: f64,
    /// `‖u(t1+t2) - u(t2; u(t1))‖ / ‖u0‖` in ℓ².
    pub composition_residual: f64,
    /// `‖u(t1+t2)‖ / ‖u0‖`.
    pub growth: f64,
}

pub fn semigroup_axiom_check(
    op: &DiscreteOperator,
    est: &SectorEstimate,
    u0: &DVector<Complex64>,
    t1: f64,
    t2: f64,
    nq: usize,
) -> Result<AxiomReport, SemigroupError> {
    let scale = u0.norm();
    let direct = evolve(op, est, u0, t1 + t2, nq)?;
    let mid = evolve(op, est, u0, t1, nq)?;
    let composed = evolve(op, est, &mid, t2, nq)?;
    let (residual, growth) = if scale > 0.0 { ((&direct - composed).norm() / scale, direct.norm() / scale) } else { (0.0, 0.0) };
    Ok(AxiomReport { t1, t2, composition_residual: residual, growth })
}
