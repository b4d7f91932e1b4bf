//! The four-dimensional Bach flow `∂_t g = B(g) - (1/12)(ΔS)g + L_U g`,
//! its DeTurck gauge field and the pullback that removes the gauge.
//!
//! `Δ` is the positive Laplacian throughout. With that sign the gauged
//! linearization at the flat metric is `-¼Δ²` on every component.

use super::geometry::{
    christoffel, curvature, gradient_vector, lie_derivative_metric, scalar_laplacian, vector_laplacian, Comps,
    CurvatureBundle,
};
use super::{FlowError, FlowRhs, FlowState};
use crate::grid::{GridError, MetricField, PeriodicGrid};
use nalgebra::DVector;
use num_rational::Ratio;
use serde::Serialize;

/// Coefficient of `∇S` in the gauge field `U`.
pub const GRADIENT_S_COEFFICIENT: f64 = 1.0 / 12.0;

/// `c_n = (2^{n/2-1} (n/2-2)! (n-2)(n-1))^{-1}` for even `n ≥ 4`.
pub fn obstruction_coefficient(n: usize) -> Result<Ratio<i64>, FlowError> {
    if n < 4 || n % 2 == 1 {
        return Err(FlowError::Domain(format!("obstruction coefficient needs even n >= 4, got {n}")));
    }
    let half = n / 2;
    let fact: i64 = (1..=(half as i64 - 2)).product();
    let den = (1i64 << (half - 1)) * fact * (n as i64 - 2) * (n as i64 - 1);
    Ok(Ratio::new(1, den))
}

/// Folds `c_n (n-1) (-1)^{n/2-1} (-Δ)^{n/2-1}` into `a Δ^p`, returning `(a, p)`.
pub fn deturck_laplacian_coefficient(n: usize) -> Result<(Ratio<i64>, usize), FlowError> {
    let c = obstruction_coefficient(n)?;
    let p = n / 2 - 1;
    let sign = |k: usize| if k % 2 == 0 { 1 } else { -1 };
    // (-Δ)^p = (-1)^p Δ^p.
    Ok((c * (n as i64 - 1) * sign(p) * sign(p), p))
}

/// Upper-triangular component pairs `(a, b)`, `a ≤ b`, in state order.
pub fn symmetric_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect()
}

/// Point-major state with the `n(n+1)/2` independent metric components.
pub fn state_from_metric(g: &MetricField) -> DVector<f64> {
    let pairs = symmetric_pairs(g.dim());
    let np = g.grid().len();
    DVector::from_fn(np * pairs.len(), |i, _| {
        let (a, b) = pairs[i % pairs.len()];
        g.component(a, b)[i / pairs.len()]
    })
}

fn comps_from_state(grid: &PeriodicGrid, u: &DVector<f64>) -> Result<Comps, FlowError> {
    let n = grid.dim();
    let pairs = symmetric_pairs(n);
    let np = grid.len();
    if u.len() != np * pairs.len() {
        return Err(FlowError::Shape { expected: np * pairs.len(), got: u.len() });
    }
    let mut comps = vec![vec![0.0; np]; n * n];
    for (c, &(a, b)) in pairs.iter().enumerate() {
        for p in 0..np {
            let v = u[p * pairs.len() + c];
            comps[a * n + b][p] = v;
            comps[b * n + a][p] = v;
        }
    }
    Ok(comps)
}

pub fn metric_from_state(grid: &PeriodicGrid, u: &DVector<f64>) -> Result<MetricField, FlowError> {
    MetricField::from_components(grid, comps_from_state(grid, u)?).map_err(|e| match e {
        GridError::NotPositiveDefinite { .. } | GridError::NotSymmetric { .. } => FlowError::Domain(e.to_string()),
        other => other.into(),
    })
}

fn pack(grid: &PeriodicGrid, t: &Comps) -> DVector<f64> {
    let pairs = symmetric_pairs(grid.dim());
    let n = grid.dim();
    DVector::from_fn(grid.len() * pairs.len(), |i, _| {
        let (a, b) = pairs[i % pairs.len()];
        t[a * n + b][i / pairs.len()]
    })
}

/// Reference metric and the gauge vector fields `V`, `U` at one metric.
#[derive(Debug, Clone)]
pub struct GaugeData {
    pub reference: MetricField,
    pub v: Comps,
    pub u: Comps,
}

fn gauge_fields(g: &MetricField, bundle: &CurvatureBundle, ref_gamma: &Comps) -> Result<(Comps, Comps), FlowError> {
    let n = g.dim();
    let np = g.grid().len();
    let mut v = vec![vec![0.0; np]; n];
    for p in 0..np {
        for k in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let gi = g.inverse_component(a, b)[p];
                    if gi != 0.0 {
                        let idx = (k * n + a) * n + b;
                        s += gi * (bundle.christoffel[idx][p] - ref_gamma[idx][p]);
                    }
                }
            }
            v[k][p] = s;
        }
    }
    let (coef, power) = deturck_laplacian_coefficient(n)?;
    debug_assert_eq!(power, 1);
    let a = *coef.numer() as f64 / *coef.denom() as f64;
    let lap = vector_laplacian(g, &bundle.christoffel, &v);
    let grad = gradient_vector(g, &bundle.scalar);
    let u = (0..n).map(|k| (0..np).map(|p| a * lap[k][p] + GRADIENT_S_COEFFICIENT * grad[k][p]).collect()).collect();
    Ok((v, u))
}

/// `V^k = g^{pq}(Γ(g)^k_{pq} - Γ(g̃)^k_{pq})` and `U = ¼ΔV + (1/12)∇S`.
pub fn deturck_fields(g: &MetricField, reference: &MetricField) -> Result<GaugeData, FlowError> {
    if g.dim() != 4 {
        return Err(FlowError::Dimension(g.dim()));
    }
    if g.grid() != reference.grid() {
        return Err(FlowError::Invalid("reference metric lives on a different grid".into()));
    }
    let bundle = curvature(g)?;
    let (v, u) = gauge_fields(g, &bundle, &christoffel(reference))?;
    Ok(GaugeData { reference: reference.clone(), v, u })
}

fn rhs_from(g: &MetricField, bundle: &CurvatureBundle, u: Option<&Comps>) -> Comps {
    let n = g.dim();
    let np = g.grid().len();
    let bach = bundle.bach.as_ref().expect("four-dimensional bundle");
    let lap_s = scalar_laplacian(g, &bundle.christoffel, &bundle.scalar);
    let mut out = bach.clone();
    for ab in 0..n * n {
        for p in 0..np {
            out[ab][p] -= GRADIENT_S_COEFFICIENT * lap_s[p] * g.components()[ab][p];
        }
    }
    if let Some(u) = u {
        let lie = lie_derivative_metric(g, u);
        for ab in 0..n * n {
            for p in 0..np {
                out[ab][p] += lie[ab][p];
            }
        }
    }
    out
}

/// `B(g) - (1/12)(ΔS)g`, plus `L_U g` when gauge data is given.
pub fn modified_flow_rhs(g: &MetricField, gauge: Option<&GaugeData>) -> Result<Comps, FlowError> {
    if g.dim() != 4 {
        return Err(FlowError::Dimension(g.dim()));
    }
    let bundle = curvature(g)?;
    Ok(rhs_from(g, &bundle, gauge.map(|d| &d.u)))
}

/// Bach flow on symmetric-tensor states, optionally in DeTurck gauge.
#[derive(Debug, Clone)]
pub struct BachFlow {
    grid: PeriodicGrid,
    reference: Option<(MetricField, Comps)>,
}

impl BachFlow {
    pub fn new(grid: &PeriodicGrid, reference: Option<&MetricField>) -> Result<Self, FlowError> {
        if grid.dim() != 4 {
            return Err(FlowError::Dimension(grid.dim()));
        }
        let reference = match reference {
            Some(r) if r.grid() != grid => return Err(FlowError::Invalid("reference metric lives on a different grid".into())),
            Some(r) => Some((r.clone(), christoffel(r))),
            None => None,
        };
        Ok(Self { grid: grid.clone(), reference })
    }

    pub fn reference(&self) -> Option<&MetricField> {
        self.reference.as_ref().map(|(r, _)| r)
    }

    /// Gauge field `U` at a state; zero without a reference metric.
    pub fn gauge_field(&self, u: &DVector<f64>) -> Result<Comps, FlowError> {
        let g = metric_from_state(&self.grid, u)?;
        match &self.reference {
            Some((_, rg)) => Ok(gauge_fields(&g, &curvature(&g)?, rg)?.1),
            None => Ok(vec![vec![0.0; self.grid.len()]; 4]),
        }
    }
}

impl FlowRhs for BachFlow {
    fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    fn components(&self) -> usize {
        10
    }
    fn order(&self) -> usize {
        4
    }
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
        let g = metric_from_state(&self.grid, u)?;
        let bundle = curvature(&g)?;
        let gauge = match &self.reference {
            Some((_, rg)) => Some(gauge_fields(&g, &bundle, rg)?.1),
            None => None,
        };
        Ok(pack(&self.grid, &rhs_from(&g, &bundle, gauge.as_ref())))
    }
    fn check_state(&self, u: &DVector<f64>) -> Result<(), String> {
        metric_from_state(&self.grid, u).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Periodic tensor-product cubic Lagrange interpolation of `f` at grid
/// point `p` displaced by `x`.
fn interpolate(grid: &PeriodicGrid, f: &[f64], p: usize, x: &[f64]) -> f64 {
    let h = grid.spacing();
    let coords = grid.coords(p);
    let axes: Vec<usize> = (0..grid.dim()).filter(|&a| grid.is_varying(a)).collect();
    let mut base = vec![0i64; axes.len()];
    let mut weights = vec![[0.0; 4]; axes.len()];
    for (j, &a) in axes.iter().enumerate() {
        let s = coords[a] as f64 + x[a] / h;
        let fl = s.floor();
        let t = s - fl;
        base[j] = fl as i64 - 1;
        weights[j] = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
    }
    let mut acc = 0.0;
    let mut c = coords;
    for corner in 0..(1usize << (2 * axes.len())) {
        let mut w = 1.0;
        for (j, &a) in axes.iter().enumerate() {
            let o = corner >> (2 * j) & 3;
            w *= weights[j][o];
            c[a] = (base[j] + o as i64).rem_euclid(grid.axis_len(a) as i64) as usize;
        }
        if w != 0.0 {
            acc += w * f[grid.flat_index(&c)];
        }
    }
    acc
}

/// Fourth-order centered first difference along `axis`.
fn difference4(grid: &PeriodicGrid, f: &[f64], axis: usize) -> Vec<f64> {
    let m = grid.axis_len(axis);
    if m == 1 {
        return vec![0.0; f.len()];
    }
    let s = grid.stride(axis);
    let h = grid.spacing();
    (0..f.len())
        .map(|p| {
            let c = (p / s) % m;
            let at = |o: usize| f[p - c * s + ((c + o) % m) * s];
            (8.0 * (at(1) - at(m - 1)) - (at(2) - at(m - 2))) / (12.0 * h)
        })
        .collect()
}

/// Displacements `X(t_k)` of `φ_t(x) = x + X(t, x)` solving
/// `dφ/dt = -U(t, φ)`, `φ_0 = id`, by RK4 with `U` linear in time between
/// the supplied samples.
pub fn integrate_gauge(grid: &PeriodicGrid, times: &[f64], fields: &[Comps]) -> Result<Vec<Comps>, FlowError> {
    let n = grid.dim();
    let np = grid.len();
    if times.len() != fields.len() || times.is_empty() {
        return Err(FlowError::Invalid("need one gauge field per time".into()));
    }
    let limit = grid.length() / 4.0;
    let mut x = vec![vec![0.0; np]; n];
    let mut out = vec![x.clone()];
    let rate = |u: &Comps, x: &Comps| -> Comps {
        (0..n)
            .map(|k| {
                (0..np)
                    .map(|p| {
                        let d: Vec<f64> = (0..n).map(|a| x[a][p]).collect();
                        -interpolate(grid, &u[k], p, &d)
                    })
                    .collect()
            })
            .collect()
    };
    let axpy = |x: &Comps, k: &Comps, s: f64| -> Comps {
        x.iter().zip(k).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + s * v).collect()).collect()
    };
    for w in 0..times.len() - 1 {
        let tau = times[w + 1] - times[w];
        let mid: Comps = fields[w].iter().zip(&fields[w + 1]).map(|(a, b)| a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect()).collect();
        let k1 = rate(&fields[w], &x);
        let k2 = rate(&mid, &axpy(&x, &k1, tau / 2.0));
        let k3 = rate(&mid, &axpy(&x, &k2, tau / 2.0));
        let k4 = rate(&fields[w + 1], &axpy(&x, &k3, tau));
        for a in 0..n {
            for p in 0..np {
                x[a][p] += tau / 6.0 * (k1[a][p] + 2.0 * k2[a][p] + 2.0 * k3[a][p] + k4[a][p]);
            }
        }
        let disp = (0..np).map(|p| (0..n).map(|a| x[a][p] * x[a][p]).sum::<f64>().sqrt()).fold(0.0, f64::max);
        if disp > limit {
            return Err(FlowError::TrustRegion { displacement: disp, limit });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// `(φ^*g)_ij(x) = (δ_ia + D_i X^a)(δ_jb + D_j X^b) g_ab(x + X(x))`.
pub fn pull_back(g: &MetricField, displacement: &Comps) -> Result<MetricField, FlowError> {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let jac: Vec<Vec<f64>> = (0..n * n)
        .map(|ai| {
            let (a, i) = (ai / n, ai % n);
            let mut d = difference4(grid, &displacement[a], i);
            if a == i {
                d.iter_mut().for_each(|v| *v += 1.0);
            }
            d
        })
        .collect();
    let mut out = vec![vec![0.0; np]; n * n];
    let mut ga = vec![0.0; n * n];
    for p in 0..np {
        let x: Vec<f64> = (0..n).map(|a| displacement[a][p]).collect();
        for ab in 0..n * n {
            ga[ab] = interpolate(grid, &g.components()[ab], p, &x);
        }
        for i in 0..n {
            for j in i..n {
                let mut v = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        v += jac[a * n + i][p] * jac[b * n + j][p] * ga[a * n + b];
                    }
                }
                out[i * n + j][p] = v;
                out[j * n + i][p] = v;
            }
        }
    }
    MetricField::from_components(grid, out).map_err(|e| FlowError::Domain(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Pullback {
    /// Ungauged states at the trajectory times.
    pub states: Vec<FlowState>,
    pub max_displacement: f64,
}

/// Removes the DeTurck gauge from a gauged trajectory.
pub fn gauge_pullback(flow: &BachFlow, states: &[FlowState]) -> Result<Pullback, FlowError> {
    let grid = flow.grid();
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    let fields = states.iter().map(|s| flow.gauge_field(&s.u)).collect::<Result<Vec<_>, _>>()?;
    let disps = integrate_gauge(grid, &times, &fields)?;
    let mut out = Vec::with_capacity(states.len());
    let mut max_disp = 0.0f64;
    for (s, d) in states.iter().zip(&disps) {
        for p in 0..grid.len() {
            max_disp = max_disp.max(d.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt());
        }
        let g = metric_from_state(grid, &s.u)?;
        out.push(FlowState { u: state_from_metric(&pull_back(&g, d)?), ..s.clone() });
    }
    Ok(Pullback { states: out, max_displacement: max_disp })
}
