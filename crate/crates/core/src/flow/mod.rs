//! Nonlinear flows `du/dt = F(u)`: probed linearizations, a linearly
//! implicit Euler stepper, self-convergence and continuous-dependence
//! experiments, plus the fourth-order gauged Bach flow.

mod bach;
mod geometry;
mod toy;

pub use bach::{
    deturck_fields, deturck_laplacian_coefficient, gauge_pullback, integrate_gauge, metric_from_state, modified_flow_rhs,
    obstruction_coefficient, pull_back, state_from_metric, symmetric_pairs, BachFlow, GaugeData, Pullback, GRADIENT_S_COEFFICIENT,
};
pub use geometry::{
    bach_tensor, centered_difference, christoffel, curvature, divergence, gradient_vector, lie_derivative_metric,
    scalar_laplacian, trace, vector_laplacian, CurvatureBundle,
};
pub use toy::{holder_state_norm, LinearFlow, Toy1d};

use crate::grid::{GridError, PeriodicGrid, Scheme};
use crate::operator::{gmres, DiscreteOperator, OperatorError, Representation, DENSE_LIMIT};
use crate::Complex64;
use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dimension {0} is not supported here (need 4)")]
    Dimension(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state left the admissible set at t = {t}: {reason}")]
    Admissibility { t: f64, reason: String },
    #[error("inner solve failed after {0} step halvings")]
    StepRejected(usize),
    #[error("state has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("diffeomorphism displacement {displacement} exceeds the trust region {limit}")]
    TrustRegion { displacement: f64, limit: f64 },
    #[error("invalid flow request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Right-hand side `F` of an autonomous flow on grid fields, stored
/// point-major with `components()` real unknowns per point.
pub trait FlowRhs {
    fn grid(&self) -> &PeriodicGrid;
    fn components(&self) -> usize;
    /// Differential order of `F`.
    fn order(&self) -> usize;
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError>;
    /// Rejects states outside the working set (e.g. indefinite metrics).
    fn check_state(&self, _u: &DVector<f64>) -> Result<(), String> {
        Ok(())
    }
    fn unknowns(&self) -> usize {
        self.grid().len() * self.components()
    }
}

fn check_len<F: FlowRhs + ?Sized>(f: &F, u: &DVector<f64>) -> Result<(), FlowError> {
    if u.len() != f.unknowns() {
        return Err(FlowError::Shape { expected: f.unknowns(), got: u.len() });
    }
    Ok(())
}

fn sup(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `δ = ε_mach^{1/3} max(1, ‖u0‖∞) / ‖h‖∞`.
pub fn default_delta(u0: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let hs = sup(h);
    f64::EPSILON.cbrt() * sup(u0).max(1.0) / if hs > 0.0 { hs } else { 1.0 }
}

fn central<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>, h: &DVector<f64>, delta: f64) -> Result<DVector<f64>, FlowError> {
    let plus = f.eval(&(u0 + h * delta))?;
    let minus = f.eval(&(u0 - h * delta))?;
    Ok((plus - minus) / (2.0 * delta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalDerivative {
    pub value: DVector<f64>,
    pub delta: f64,
    /// `‖D_δ - D_{δ/2}‖∞ / max(1, ‖D_δ‖∞)`.
    pub halving_disagreement: f64,
    pub noisy: bool,
}

/// Relative halving disagreement above which a derivative is flagged.
pub const NOISE_THRESHOLD: f64 = 1e-5;

/// `(F(u0 + δh) - F(u0 - δh)) / 2δ` with a step-halving consistency check.
pub fn linearize<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>, h: &DVector<f64>, delta: Option<f64>) -> Result<DirectionalDerivative, FlowError> {
    check_len(f, u0)?;
    check_len(f, h)?;
    let delta = delta.unwrap_or_else(|| default_delta(u0, h));
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(FlowError::Invalid(format!("finite-difference step {delta}")));
    }
    let value = central(f, u0, h, delta)?;
    let half = central(f, u0, h, delta / 2.0)?;
    let disagreement = sup(&(&value - half)) / sup(&value).max(1.0);
    Ok(DirectionalDerivative { value, delta, halving_disagreement: disagreement, noisy: disagreement > NOISE_THRESHOLD })
}

fn jacobian_matrix<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>) -> Result<DMatrix<f64>, FlowError> {
    let n = f.unknowns();
    let delta = f64::EPSILON.cbrt() * sup(u0).max(1.0);
    let mut jac = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        jac.set_column(j, &central(f, u0, &e, delta)?);
        e[j] = 0.0;
    }
    Ok(jac)
}

/// Dense linearization of `F` at `u0`, probed column by column.
pub fn linearized_operator<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>) -> Result<DiscreteOperator, FlowError> {
    check_len(f, u0)?;
    if f.unknowns() > DENSE_LIMIT {
        return Err(OperatorError::TooLarge(f.unknowns()).into());
    }
    let jac = jacobian_matrix(f, u0)?.map(|v| Complex64::new(v, 0.0));
    Ok(DiscreteOperator::new(f.grid().clone(), f.components(), f.order(), Scheme::Fd2, Representation::Dense(jac), "linearization")?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub t: f64,
    #[serde(serialize_with = "serialize_vector")]
    pub u: DVector<f64>,
    /// Step size that produced this state (0 for the initial state).
    pub tau: f64,
    pub steps: usize,
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl FlowState {
    pub fn initial(u: DVector<f64>) -> Self {
        Self { t: 0.0, u, tau: 0.0, steps: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepControls {
    /// Re-linearize every this many steps; 0 keeps the first Jacobian.
    pub jacobian_refresh: usize,
    pub max_halvings: usize,
    /// Relative tolerance of matrix-free inner solves.
    pub inner_tol: f64,
}

impl Default for StepControls {
    fn default() -> Self {
        Self { jacobian_refresh: 1, max_halvings: 10, inner_tol: 1e-10 }
    }
}

/// Relative residual accepted from matrix-free solves, whose Jacobian
/// products carry finite-difference noise of roughly this size.
pub const MATRIX_FREE_FLOOR: f64 = 1e-8;

enum Inner {
    Dense { jac: DMatrix<f64>, lu: Option<(f64, LU<f64, Dyn, Dyn>)> },
    MatrixFree { at: DVector<f64> },
}

/// Linearly implicit Euler: `u_{n+1} = u_n + τ(I - τJ_n)^{-1} F(u_n)`.
pub struct Stepper<'a, F: FlowRhs + ?Sized> {
    rhs: &'a F,
    controls: StepControls,
    inner: Option<Inner>,
    since_refresh: usize,
}

impl<'a, F: FlowRhs + ?Sized> Stepper<'a, F> {
    pub fn new(rhs: &'a F, controls: StepControls) -> Self {
        Self { rhs, controls, inner: None, since_refresh: 0 }
    }

    fn relinearize(&mut self, u: &DVector<f64>) -> Result<(), FlowError> {
        let stale = match self.controls.jacobian_refresh {
            0 => self.inner.is_none(),
            k => self.inner.is_none() || self.since_refresh >= k,
        };
        if stale {
            self.inner = Some(if self.rhs.unknowns() <= DENSE_LIMIT {
                Inner::Dense { jac: jacobian_matrix(self.rhs, u)?, lu: None }
            } else {
                Inner::MatrixFree { at: u.clone() }
            });
            self.since_refresh = 0;
        }
        Ok(())
    }

    /// Solves `(I - τJ)x = b`; `None` when the inner solve fails.
    fn inner_solve(&mut self, b: &DVector<f64>, tau: f64) -> Result<Option<DVector<f64>>, FlowError> {
        let rhs = self.rhs;
        let tol = self.controls.inner_tol;
        match self.inner.as_mut().expect("linearized before solving") {
            Inner::Dense { jac, lu } => {
                if lu.as_ref().map(|(t, _)| *t != tau).unwrap_or(true) {
                    let n = jac.nrows();
                    *lu = Some((tau, (DMatrix::identity(n, n) - &*jac * tau).lu()));
                }
                let x = lu.as_ref().unwrap().1.solve(b);
                Ok(x.filter(|x| x.iter().all(|v| v.is_finite())))
            }
            Inner::MatrixFree { at } => {
                let at = at.clone();
                let delta = f64::EPSILON.cbrt() * sup(&at).max(1.0);
                let apply = |v: &DVector<Complex64>| -> DVector<Complex64> {
                    let re = v.map(|z| z.re);
                    let s = sup(&re);
                    let jv = if s > 0.0 {
                        central(rhs, &at, &(&re / s), delta).map(|d| d * s).unwrap_or_else(|_| DVector::from_element(re.len(), f64::NAN))
                    } else {
                        DVector::zeros(re.len())
                    };
                    DVector::from_fn(v.len(), |i, _| v[i] - Complex64::new(tau * jv[i], 0.0))
                };
                let bc = b.map(|v| Complex64::new(v, 0.0));
                let res = gmres(apply, &bc, None, tol, 60, 600);
                let ok = res.relative_residual <= tol.max(MATRIX_FREE_FLOOR) && res.x.iter().all(|z| z.re.is_finite());
                Ok(ok.then(|| res.x.map(|z| z.re)))
            }
        }
    }

    /// One step from `state`, halving `τ` on inner-solve failure.
    pub fn step(&mut self, state: &FlowState, tau: f64) -> Result<FlowState, FlowError> {
        check_len(self.rhs, &state.u)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(FlowError::Invalid(format!("step size {tau}")));
        }
        let fu = self.rhs.eval(&state.u)?;
        if fu.iter().all(|v| *v == 0.0) {
            return Ok(FlowState { t: state.t + tau, u: state.u.clone(), tau, steps: state.steps + 1 });
        }
        self.relinearize(&state.u)?;
        let mut tt = tau;
        for _ in 0..=self.controls.max_halvings {
            if let Some(x) = self.inner_solve(&fu, tt)? {
                self.since_refresh += 1;
                let u = &state.u + x * tt;
                if let Err(reason) = self.rhs.check_state(&u) {
                    return Err(FlowError::Admissibility { t: state.t + tt, reason });
                }
                return Ok(FlowState { t: state.t + tt, u, tau: tt, steps: state.steps + 1 });
            }
            tt /= 2.0;
        }
        Err(FlowError::StepRejected(self.controls.max_halvings))
    }
}

/// Single step with a fresh linearization.
pub fn step<F: FlowRhs + ?Sized>(f: &F, state: &FlowState, tau: f64) -> Result<FlowState, FlowError> {
    Stepper::new(f, StepControls::default()).step(state, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<FlowState>,
    /// Reason the run stopped early; the last state is the last good one.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory holds the initial state")
    }
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

/// States at `t = 0, τ, 2τ, …, T` (the last step is shortened to land on `T`).
pub fn solve_ivp<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>, t_end: f64, tau: f64, controls: StepControls) -> Result<Trajectory, FlowError> {
    check_len(f, u0)?;
    if !(t_end >= 0.0 && t_end.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(FlowError::Invalid(format!("horizon {t_end}, step {tau}")));
    }
    f.check_state(u0).map_err(|reason| FlowError::Admissibility { t: 0.0, reason })?;
    let mut stepper = Stepper::new(f, controls);
    let mut states = vec![FlowState::initial(u0.clone())];
    let mut aborted = None;
    let tol = 1e-12 * t_end.max(tau);
    loop {
        let cur = states.last().unwrap();
        let remaining = t_end - cur.t;
        if remaining <= tol {
            break;
        }
        let h = tau.min(remaining);
        match stepper.step(cur, h) {
            Ok(mut next) => {
                if (t_end - next.t).abs() <= tol {
                    next.t = t_end;
                }
                states.push(next);
            }
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
    }
    Ok(Trajectory { states, aborted })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub taus: [f64; 3],
    /// `‖u_τ - u_{τ/2}‖∞` and `‖u_{τ/2} - u_{τ/4}‖∞` at `T`.
    pub differences: [f64; 2],
    pub order: f64,
}

/// Self-convergence order at `T` from runs with `τ`, `τ/2`, `τ/4`.
pub fn self_convergence<F: FlowRhs + ?Sized>(f: &F, u0: &DVector<f64>, t_end: f64, tau: f64, controls: StepControls) -> Result<ConvergenceReport, FlowError> {
    let taus = [tau, tau / 2.0, tau / 4.0];
    let mut finals = Vec::with_capacity(3);
    for &t in &taus {
        let traj = solve_ivp(f, u0, t_end, t, controls)?;
        if let Some(reason) = traj.aborted {
            return Err(FlowError::Invalid(format!("run with step {t} aborted: {reason}")));
        }
        finals.push(traj.last().u.clone());
    }
    let d1 = sup(&(&finals[0] - &finals[1]));
    let d2 = sup(&(&finals[1] - &finals[2]));
    Ok(ConvergenceReport { taus, differences: [d1, d2], order: (d1 / d2).log2() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceRow {
    pub t: f64,
    pub separation: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceTable {
    pub initial_separation: f64,
    pub rows: Vec<DependenceRow>,
    /// Fitted constant: the largest ratio over the horizon.
    pub constant: f64,
}

/// Per-time ratios `‖v(t) - w(t)‖ / ‖v0 - w0‖` in the supplied norm.
pub fn continuous_dependence<F, N>(
    f: &F,
    v0: &DVector<f64>,
    w0: &DVector<f64>,
    t_end: f64,
    tau: f64,
    controls: StepControls,
    norm: N,
) -> Result<DependenceTable, FlowError>
where
    F: FlowRhs + ?Sized,
    N: Fn(&DVector<f64>) -> Result<f64, FlowError>,
{
    let v = solve_ivp(f, v0, t_end, tau, controls)?;
    let initial = norm(&(v0 - w0))?;
    if initial == 0.0 {
        let rows = v.states.iter().map(|s| DependenceRow { t: s.t, separation: 0.0, ratio: 0.0 }).collect();
        return Ok(DependenceTable { initial_separation: 0.0, rows, constant: 0.0 });
    }
    let w = solve_ivp(f, w0, t_end, tau, controls)?;
    for (traj, label) in [(&v, "first"), (&w, "second")] {
        if let Some(reason) = &traj.aborted {
            return Err(FlowError::Invalid(format!("{label} run aborted: {reason}")));
        }
    }
    let mut rows = Vec::with_capacity(v.states.len());
    for (a, b) in v.states.iter().zip(&w.states) {
        let sep = norm(&(&a.u - &b.u))?;
        rows.push(DependenceRow { t: a.t, separation: sep, ratio: sep / initial });
    }
    let constant = rows.iter().fold(0.0f64, |m, r| m.max(r.ratio));
    Ok(DependenceTable { initial_separation: initial, rows, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::flat_laplacian;
    use std::f64::consts::PI;

    struct Square(PeriodicGrid);
    impl FlowRhs for Square {
        fn grid(&self) -> &PeriodicGrid {
            &self.0
        }
        fn components(&self) -> usize {
            1
        }
        fn order(&self) -> usize {
            0
        }
        fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
            Ok(u.map(|v| v * v))
        }
    }

    struct Zero(PeriodicGrid);
    impl FlowRhs for Zero {
        fn grid(&self) -> &PeriodicGrid {
            &self.0
        }
        fn components(&self) -> usize {
            1
        }
        fn order(&self) -> usize {
            0
        }
        fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
            Ok(DVector::zeros(u.len()))
        }
    }

    fn heat(n: usize) -> LinearFlow {
        let grid = PeriodicGrid::new(1, n, 2.0 * PI).unwrap();
        LinearFlow::new(flat_laplacian(&grid, 1, Scheme::Spectral).unwrap()).unwrap()
    }

    fn smooth(grid: &PeriodicGrid) -> DVector<f64> {
        DVector::from_vec(grid.sample(|x| 0.5 * x[0].sin() + 0.2 * (2.0 * x[0]).cos() + 0.1))
    }

    #[test]
    fn linear_rhs_linearizes_to_itself() {
        let f = heat(32);
        let u0 = smooth(f.grid()) * 3.0;
        let h = DVector::from_vec(f.grid().sample(|x| (3.0 * x[0]).cos()));
        let d = linearize(&f, &u0, &h, None).unwrap();
        let fh = f.eval(&h).unwrap();
        assert!(sup(&(d.value - &fh)) <= 1e-10 * sup(&fh).max(1.0));
        assert!(!d.noisy);
    }

    #[test]
    fn square_linearizes_to_twice_u() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let f = Square(grid.clone());
        let u0 = smooth(&grid);
        let h = DVector::from_vec(grid.sample(|x| x[0].cos()));
        let d = linearize(&f, &u0, &h, None).unwrap();
        let expect = u0.component_mul(&h) * 2.0;
        assert!(sup(&(d.value - expect)) < 1e-10);
        let op = linearized_operator(&f, &u0).unwrap();
        let dense = op.to_dense();
        for i in 0..16 {
            assert!((dense[(i, i)].re - 2.0 * u0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_delta_is_flagged_noisy() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let f = Square(grid.clone());
        let u0 = smooth(&grid) * 1e3;
        let h = DVector::from_vec(grid.sample(|x| x[0].cos()));
        assert!(linearize(&f, &u0, &h, Some(1e-13)).unwrap().noisy);
        assert!(matches!(linearize(&f, &u0, &h, Some(0.0)), Err(FlowError::Invalid(_))));
    }

    #[test]
    fn zero_rhs_leaves_state_unchanged() {
        let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let f = Zero(grid.clone());
        let s = FlowState::initial(smooth(&grid));
        let next = step(&f, &s, 0.1).unwrap();
        assert_eq!(next.u, s.u);
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn stationary_input_is_a_fixed_point() {
        let f = heat(16);
        let u0 = DVector::from_element(16, 0.7);
        let traj = solve_ivp(&f, &u0, 0.5, 0.1, StepControls::default()).unwrap();
        assert!(sup(&(&traj.last().u - &u0)) < 1e-12);
    }

    #[test]
    fn local_error_is_second_order() {
        let f = heat(32);
        let u0 = smooth(f.grid());
        let exact = |t: f64| DVector::from_vec(f.grid().sample(|x| 0.5 * (-t).exp() * x[0].sin() + 0.2 * (-4.0 * t).exp() * (2.0 * x[0]).cos() + 0.1));
        let err = |tau: f64| sup(&(step(&f, &FlowState::initial(u0.clone()), tau).unwrap().u - exact(tau)));
        let ratio = err(0.02) / err(0.01);
        assert!((ratio.log2() - 2.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let f = heat(16);
        let u0 = smooth(f.grid());
        let traj = solve_ivp(&f, &u0, 0.0, 0.1, StepControls::default()).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.states[0].u, u0);
    }

    #[test]
    fn trajectory_lands_on_horizon() {
        let f = heat(16);
        let traj = solve_ivp(&f, &smooth(f.grid()), 0.25, 0.1, StepControls::default()).unwrap();
        let ts: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
        assert_eq!(ts.len(), 4);
        assert_eq!(*ts.last().unwrap(), 0.25);
        assert!((traj.states[3].tau - 0.05).abs() < 1e-12);
    }

    #[test]
    fn linear_dependence_ratios_contract() {
        let f = heat(32);
        let v0 = smooth(f.grid());
        let w0 = &v0 + DVector::from_vec(f.grid().sample(|x| 0.01 * (3.0 * x[0]).sin()));
        let tab = continuous_dependence(&f, &v0, &w0, 0.2, 0.02, StepControls::default(), |d| Ok(d.norm())).unwrap();
        assert!(tab.rows.iter().all(|r| r.ratio <= 1.0 + 1e-12));
        assert!((tab.rows[0].ratio - 1.0).abs() < 1e-14);
        let same = continuous_dependence(&f, &v0, &v0, 0.2, 0.02, StepControls::default(), |d| Ok(d.norm())).unwrap();
        assert!(same.rows.iter().all(|r| r.ratio == 0.0));
    }

    #[test]
    fn frozen_jacobian_still_converges() {
        let grid = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let f = Toy1d::new(&grid).unwrap();
        let u0 = smooth(&grid) * 0.2;
        let frozen = StepControls { jacobian_refresh: 0, ..Default::default() };
        let rep = self_convergence(&f, &u0, 0.05, 0.05 / 8.0, frozen).unwrap();
        assert!(rep.order > 0.9, "{rep:?}");
    }

    #[test]
    fn matrix_free_path_matches_dense() {
        // More unknowns than the dense limit forces GMRES inner solves.
        let grid = PeriodicGrid::new(2, 72, 2.0 * PI).unwrap();
        let f = LinearFlow::new(flat_laplacian(&grid, 1, Scheme::Fd2).unwrap()).unwrap();
        assert!(f.unknowns() > DENSE_LIMIT);
        let u0 = DVector::from_vec(grid.sample(|x| x[0].sin() * x[1].cos()));
        let s = step(&f, &FlowState::initial(u0.clone()), 0.1).unwrap();
        // The mode is an eigenvector of the 5-point Laplacian.
        let h = grid.spacing();
        let mu = 2.0 * (4.0 / (h * h)) * (h / 2.0).sin().powi(2);
        let expect = &u0 / (1.0 + 0.1 * mu);
        assert_eq!(s.tau, 0.1);
        assert!(sup(&(&s.u - &expect)) < 1e-8, "{}", sup(&(s.u - expect)));
    }
}
