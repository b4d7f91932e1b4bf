use super::{partial, tuple_to_multi, GridError, GridField, MetricField, PeriodicGrid, Scheme};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Highest derivative order the norm machinery evaluates.
pub const MAX_HOLDER_ORDER: usize = 4;

/// Parameters of a (semiclassical) Hölder norm `‖·‖_{k,α}` or `‖·‖_{k,α,ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub k: usize,
    pub alpha: f64,
    /// Pair radius `r0` of the Hölder quotient.
    pub ball_radius: f64,
    pub eps: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
}

impl NormConfig {
    /// Ordinary norm with the default radius `L/8` and spectral derivatives.
    pub fn new(grid: &PeriodicGrid, k: usize, alpha: f64) -> Self {
        Self { k, alpha, ball_radius: grid.length() / 8.0, eps: None, scheme: Scheme::Spectral }
    }
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }
    pub fn with_radius(mut self, r0: f64) -> Self {
        self.ball_radius = r0;
        self
    }
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self, grid: &PeriodicGrid) -> Result<(), GridError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GridError::Norm(format!("alpha = {} not in (0,1)", self.alpha)));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius <= grid.length() / 4.0 * (1.0 + 1e-12)) {
            return Err(GridError::Norm(format!(
                "ball radius {} not in (0, L/4 = {}]",
                self.ball_radius,
                grid.length() / 4.0
            )));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(GridError::Norm(format!("eps = {e} not in (0,1]")));
            }
        }
        if self.k > MAX_HOLDER_ORDER {
            return Err(GridError::UnsupportedOrder { requested: self.k, max: MAX_HOLDER_ORDER });
        }
        grid.check_order(self.k, self.scheme)
    }
}

/// The individual summands of a Hölder norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderTerms {
    /// `sups[j] = sup_x |∇^j u|_g` for `j = 0..=k`.
    pub sups: Vec<f64>,
    /// `[∇^k u]_α` over the admissible pair set.
    pub seminorm: f64,
}

impl HolderTerms {
    pub fn total(&self) -> f64 {
        self.sups.iter().sum::<f64>() + self.seminorm
    }
}

/// Coordinate derivative tensors `∂_{a1}…∂_{aj} u` for one order `j`.
///
/// `data[t * d + c]` is the field of tuple `t` (row-major over `n^j`) and
/// bundle component `c`.
struct DerivativeTensor {
    j: usize,
    data: Vec<Vec<Complex64>>,
}

fn derivative_tensors(u: &GridField, k: usize, scheme: Scheme) -> Result<Vec<DerivativeTensor>, GridError> {
    let grid = u.grid();
    let n = grid.dim();
    let d = u.components();
    let comps: Vec<Vec<Complex64>> = (0..d).map(|c| u.component(c)).collect();
    let mut cache: HashMap<Vec<usize>, Vec<Vec<Complex64>>> = HashMap::new();
    let mut out = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let count = n.pow(j as u32);
        let mut data = Vec::with_capacity(count * d);
        for t in 0..count {
            let tuple = tuple_of(t, j, n);
            let beta = tuple_to_multi(&tuple, n);
            if !cache.contains_key(&beta) {
                let fields = comps
                    .iter()
                    .map(|f| partial(grid, f, &beta, scheme))
                    .collect::<Result<Vec<_>, _>>()?;
                cache.insert(beta.clone(), fields);
            }
            data.extend(cache[&beta].iter().cloned());
        }
        out.push(DerivativeTensor { j, data });
    }
    Ok(out)
}

fn tuple_of(mut t: usize, j: usize, n: usize) -> Vec<usize> {
    let mut tuple = vec![0; j];
    for s in (0..j).rev() {
        tuple[s] = t % n;
        t /= n;
    }
    tuple
}

impl DerivativeTensor {
    fn gather(&self, p: usize, out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(self.data.iter().map(|f| f[p]));
    }
}

/// `|T|^2` of a covariant `j`-tensor with values in `C^d`, contracted with `ginv`.
///
/// Layout of `t` is `t[tuple * d + c]`; `None` means the Euclidean metric.
fn tensor_norm_sq(t: &[Complex64], d: usize, j: usize, n: usize, ginv: Option<&DMatrix<f64>>) -> f64 {
    let Some(ginv) = ginv else {
        return t.iter().map(|v| v.norm_sqr()).sum();
    };
    if j == 0 {
        return t.iter().map(|v| v.norm_sqr()).sum();
    }
    let mut s = t.to_vec();
    let mut tmp = vec![Complex64::new(0.0, 0.0); s.len()];
    for slot in 0..j {
        // raise index `slot`: stride of that index within the tuple block
        let inner = n.pow((j - 1 - slot) as u32) * d;
        let outer = n * inner;
        for (blk, chunk) in s.chunks(outer).enumerate() {
            for a in 0..n {
                for r in 0..inner {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for b in 0..n {
                        acc += chunk[b * inner + r] * ginv[(a, b)];
                    }
                    tmp[blk * outer + a * inner + r] = acc;
                }
            }
        }
        std::mem::swap(&mut s, &mut tmp);
    }
    t.iter().zip(&s).map(|(x, y)| (x.conj() * y).re).sum::<f64>().max(0.0)
}

/// Lattice offsets of the half-space (first nonzero entry positive) within
/// the given per-axis box.
fn half_space_offsets(reach: &[i64]) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let dim = reach.len();
    let mut cur = vec![0i64; dim];
    fn rec(a: usize, reach: &[i64], cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if a == reach.len() {
            if let Some(first) = cur.iter().find(|&&v| v != 0) {
                if *first > 0 {
                    out.push(cur.clone());
                }
            }
            return;
        }
        for v in -reach[a]..=reach[a] {
            cur[a] = v;
            rec(a + 1, reach, cur, out);
        }
    }
    rec(0, reach, &mut cur, &mut out);
    let _ = dim;
    out
}

fn seminorm_of(
    tensor: &DerivativeTensor,
    grid: &PeriodicGrid,
    metric: &MetricField,
    d: usize,
    alpha: f64,
    radius: Option<f64>,
) -> f64 {
    let n = grid.dim();
    let h = grid.spacing();
    let reach: Vec<i64> = (0..n)
        .map(|a| {
            if !grid.is_varying(a) {
                return 0;
            }
            let half = (grid.points_per_axis() / 2) as i64;
            match radius {
                None => half,
                Some(r) => {
                    let lattice = (r / (h * metric.min_eigenvalue().sqrt())).ceil() as i64;
                    lattice.clamp(1, half)
                }
            }
        })
        .collect();
    let offsets = half_space_offsets(&reach);
    let flat = metric.is_flat();
    if flat {
        return flat_seminorm(tensor, grid, &offsets, alpha, radius);
    }
    let j = tensor.j;
    let mut best = 0.0f64;
    let mut tp = Vec::new();
    let mut tq = Vec::new();
    let mut diff = Vec::new();
    for p in 0..grid.len() {
        tensor.gather(p, &mut tp);
        for o in &offsets {
            let unit = o.iter().map(|v| v.abs()).sum::<i64>() == 1;
            let delta: Vec<f64> = o.iter().map(|&v| v as f64 * h).collect();
            let q = grid.shifted(p, o);
            let (dist, ginv) = if flat {
                (delta.iter().map(|v| v * v).sum::<f64>().sqrt(), None)
            } else {
                let gbar = (metric.at(p) + metric.at(q)) * 0.5;
                let dv = nalgebra::DVector::from_vec(delta.clone());
                let dist = (dv.transpose() * &gbar * &dv)[(0, 0)].sqrt();
                let inv = if j == 0 { None } else { gbar.try_inverse() };
                (dist, inv)
            };
            if let Some(r) = radius {
                if dist > r * (1.0 + 1e-12) && !unit {
                    continue;
                }
            }
            tensor.gather(q, &mut tq);
            diff.clear();
            diff.extend(tp.iter().zip(&tq).map(|(a, b)| a - b));
            let num = tensor_norm_sq(&diff, d, j, n, ginv.as_ref()).sqrt();
            best = best.max(num / dist.powf(alpha));
        }
    }
    best
}

/// Euclidean-metric quotient: offsets outer, points inner, no per-pair allocation.
fn flat_seminorm(tensor: &DerivativeTensor, grid: &PeriodicGrid, offsets: &[Vec<i64>], alpha: f64, radius: Option<f64>) -> f64 {
    let h = grid.spacing();
    let np = grid.len();
    let n = grid.dim();
    let coords: Vec<Vec<usize>> = (0..np).map(|p| grid.coords(p)).collect();
    let sizes: Vec<i64> = (0..n).map(|a| grid.axis_len(a) as i64).collect();
    let strides: Vec<usize> = (0..n).map(|a| grid.stride(a)).collect();
    let mut acc = vec![0.0f64; np];
    let mut qs = vec![0usize; np];
    let mut best = 0.0f64;
    for o in offsets {
        let unit = o.iter().map(|v| v.abs()).sum::<i64>() == 1;
        let dist = o.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>().sqrt();
        if let Some(r) = radius {
            if dist > r * (1.0 + 1e-12) && !unit {
                continue;
            }
        }
        for (p, c) in coords.iter().enumerate() {
            let mut q = 0;
            for a in 0..n {
                q += ((c[a] as i64 + o[a]).rem_euclid(sizes[a]) as usize) * strides[a];
            }
            qs[p] = q;
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for f in &tensor.data {
            for p in 0..np {
                acc[p] += (f[p] - f[qs[p]]).norm_sqr();
            }
        }
        let worst = acc.iter().cloned().fold(0.0, f64::max);
        best = best.max(worst.sqrt() / dist.powf(alpha));
    }
    best
}

fn sup_terms(tensors: &[DerivativeTensor], metric: &MetricField, d: usize) -> Vec<f64> {
    let grid = metric.grid();
    let n = grid.dim();
    let flat = metric.is_flat();
    let mut buf = Vec::new();
    tensors
        .iter()
        .map(|t| {
            let mut sup = 0.0f64;
            for p in 0..grid.len() {
                t.gather(p, &mut buf);
                let ginv = if flat || t.j == 0 { None } else { Some(metric.inverse_at(p)) };
                sup = sup.max(tensor_norm_sq(&buf, d, t.j, n, ginv.as_ref()).sqrt());
            }
            sup
        })
        .collect()
}

fn check_compatible(u: &GridField, metric: &MetricField) -> Result<(), GridError> {
    if u.grid() != metric.grid() {
        return Err(GridError::ShapeMismatch { expected: metric.grid().len(), got: u.grid().len() });
    }
    Ok(())
}

/// Summands of the Hölder norm with quotient over pairs at distance `≤ radius`
/// (all pairs when `radius` is `None`); lattice nearest neighbours always count.
pub fn holder_terms(
    u: &GridField,
    metric: &MetricField,
    k: usize,
    alpha: f64,
    radius: Option<f64>,
    scheme: Scheme,
) -> Result<HolderTerms, GridError> {
    check_compatible(u, metric)?;
    if k > MAX_HOLDER_ORDER {
        return Err(GridError::UnsupportedOrder { requested: k, max: MAX_HOLDER_ORDER });
    }
    u.grid().check_order(k, scheme)?;
    let tensors = derivative_tensors(u, k, scheme)?;
    let sups = sup_terms(&tensors, metric, u.components());
    let seminorm = seminorm_of(&tensors[k], u.grid(), metric, u.components(), alpha, radius);
    Ok(HolderTerms { sups, seminorm })
}

/// `sup|∇^j u|_g` for `j = 0..=k`.
pub fn derivative_sups(u: &GridField, metric: &MetricField, k: usize, scheme: Scheme) -> Result<Vec<f64>, GridError> {
    check_compatible(u, metric)?;
    if k > MAX_HOLDER_ORDER {
        return Err(GridError::UnsupportedOrder { requested: k, max: MAX_HOLDER_ORDER });
    }
    u.grid().check_order(k, scheme)?;
    let tensors = derivative_tensors(u, k, scheme)?;
    Ok(sup_terms(&tensors, metric, u.components()))
}

/// `[∇^k u]_α` with an optional pair radius.
pub fn holder_seminorm(
    u: &GridField,
    metric: &MetricField,
    k: usize,
    alpha: f64,
    radius: Option<f64>,
    scheme: Scheme,
) -> Result<f64, GridError> {
    check_compatible(u, metric)?;
    if k > MAX_HOLDER_ORDER {
        return Err(GridError::UnsupportedOrder { requested: k, max: MAX_HOLDER_ORDER });
    }
    let tensors = derivative_tensors(u, k, scheme)?;
    Ok(seminorm_of(&tensors[k], u.grid(), metric, u.components(), alpha, radius))
}

/// `‖u‖_{k,α} = Σ_{j≤k} sup|∇^j u|_g + [∇^k u]_α`.
pub fn holder_norm(u: &GridField, metric: &MetricField, cfg: &NormConfig) -> Result<f64, GridError> {
    cfg.validate(u.grid())?;
    if cfg.eps.is_some() {
        return Err(GridError::Norm("ordinary Hölder norm requested with eps set".into()));
    }
    Ok(holder_terms(u, metric, cfg.k, cfg.alpha, Some(cfg.ball_radius), cfg.scheme)?.total())
}

/// `‖u‖_{k,α,ε} = Σ_j ε^j sup|∇^j u|_g + ε^{k+α}[∇^k u]_α`, the quotient taken
/// over pairs within `ε r0`.
pub fn semiclassical_holder_norm(u: &GridField, metric: &MetricField, cfg: &NormConfig) -> Result<f64, GridError> {
    cfg.validate(u.grid())?;
    let eps = cfg.eps.ok_or_else(|| GridError::Norm("semiclassical norm requires eps".into()))?;
    let terms = holder_terms(u, metric, cfg.k, cfg.alpha, Some(eps * cfg.ball_radius), cfg.scheme)?;
    let mut total = 0.0;
    for (j, s) in terms.sups.iter().enumerate() {
        total += eps.powi(j as i32) * s;
    }
    Ok(total + eps.powf(cfg.k as f64 + cfg.alpha) * terms.seminorm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cos_field(n: usize) -> (PeriodicGrid, GridField) {
        let grid = PeriodicGrid::new(1, n, 2.0 * PI).unwrap();
        let u = GridField::from_fn(grid.clone(), |x| Complex64::new(x[0].cos(), 0.0));
        (grid, u)
    }

    /// Exhaustive pair search with explicit periodic distance, no shortcuts.
    fn brute_seminorm(vals: &[f64], h: f64, alpha: f64, r0: f64) -> f64 {
        let n = vals.len();
        let l = n as f64 * h;
        let mut best = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut dx = ((i as f64 - j as f64) * h).rem_euclid(l);
                if dx > l / 2.0 {
                    dx = l - dx;
                }
                if dx <= r0 + 1e-12 || (i as i64 - j as i64).rem_euclid(n as i64) == 1 {
                    best = best.max((vals[i] - vals[j]).abs() / dx.powf(alpha));
                }
            }
        }
        best
    }

    #[test]
    fn constant_and_zero_fields() {
        let grid = PeriodicGrid::new(2, 8, 2.0 * PI).unwrap();
        let g = MetricField::flat(&grid);
        let cfg = NormConfig::new(&grid, 0, 0.5);
        let one = GridField::from_fn(grid.clone(), |_| Complex64::new(1.0, 0.0));
        assert!((holder_norm(&one, &g, &cfg).unwrap() - 1.0).abs() < 1e-15);
        let zero = GridField::zeros(grid.clone(), 1);
        assert_eq!(holder_norm(&zero, &g, &cfg).unwrap(), 0.0);
        for eps in [1.0, 0.5, 0.01] {
            let c = cfg.with_eps(eps);
            assert!((semiclassical_holder_norm(&one, &g, &c).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cos_norm_matches_brute_force() {
        let (grid, u) = cos_field(256);
        let g = MetricField::flat(&grid);
        let cfg = NormConfig::new(&grid, 0, 0.5);
        let vals: Vec<f64> = (0..256).map(|i| (i as f64 * grid.spacing()).cos()).collect();
        let expect = 1.0 + brute_seminorm(&vals, grid.spacing(), 0.5, cfg.ball_radius);
        let got = holder_norm(&u, &g, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn semiclassical_cos_term_by_term() {
        let (grid, u) = cos_field(256);
        let g = MetricField::flat(&grid);
        let eps = 0.25;
        let cfg = NormConfig::new(&grid, 1, 0.5).with_eps(eps);
        let h = grid.spacing();
        let vals: Vec<f64> = (0..256).map(|i| (i as f64 * h).cos()).collect();
        let der: Vec<f64> = (0..256).map(|i| -(i as f64 * h).sin()).collect();
        let sup0 = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup1 = der.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let semi = brute_seminorm(&der, h, 0.5, eps * cfg.ball_radius);
        let expect = sup0 + eps * sup1 + eps.powf(1.5) * semi;
        let got = semiclassical_holder_norm(&u, &g, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        // eps = 1 collapses to the ordinary norm
        let one = semiclassical_holder_norm(&u, &g, &cfg.with_eps(1.0)).unwrap();
        let plain = holder_norm(&u, &g, &NormConfig::new(&grid, 1, 0.5)).unwrap();
        assert!((one - plain).abs() < 1e-14);
    }

    #[test]
    fn rescaled_metric_identity_on_curved_metric() {
        let grid = PeriodicGrid::new(2, 16, 2.0 * PI).unwrap();
        let comps = vec![
            grid.sample(|x| 1.0 + 0.2 * x[0].sin()),
            grid.sample(|x| 0.1 * (x[0] + x[1]).cos()),
            grid.sample(|x| 0.1 * (x[0] + x[1]).cos()),
            grid.sample(|x| 1.3 + 0.1 * x[1].cos()),
        ];
        let g = MetricField::from_components(&grid, comps).unwrap();
        let u = GridField::from_fn(grid.clone(), |x| Complex64::new((x[0] - 2.0 * x[1]).sin(), x[0].cos()));
        for (eps, k) in [(0.5, 0), (0.25, 1), (0.125, 2)] {
            let cfg = NormConfig::new(&grid, k, 0.4).with_eps(eps);
            let sc = semiclassical_holder_norm(&u, &g, &cfg).unwrap();
            let plain_cfg = NormConfig::new(&grid, k, 0.4);
            let direct = holder_norm(&u, &g.rescaled(eps), &plain_cfg).unwrap();
            assert!((sc - direct).abs() <= 1e-12 * direct, "eps {eps}: {sc} vs {direct}");
        }
    }

    #[test]
    fn config_validation() {
        let (grid, u) = cos_field(16);
        let g = MetricField::flat(&grid);
        let bad_alpha = NormConfig::new(&grid, 0, 1.0);
        assert!(matches!(holder_norm(&u, &g, &bad_alpha), Err(GridError::Norm(_))));
        let too_high = NormConfig::new(&grid, 5, 0.5);
        assert!(matches!(holder_norm(&u, &g, &too_high), Err(GridError::UnsupportedOrder { .. })));
        let wide = NormConfig::new(&grid, 0, 0.5).with_radius(grid.length());
        assert!(holder_norm(&u, &g, &wide).is_err());
        let missing_eps = NormConfig::new(&grid, 0, 0.5);
        assert!(semiclassical_holder_norm(&u, &g, &missing_eps).is_err());
    }

    #[test]
    fn tensor_norm_raises_every_index() {
        // g = diag(4, 1): |T|^2 for T = dx ⊗ dx is (g^{11})^2 = 1/16
        let ginv = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 1.0]);
        let t = vec![Complex64::new(1.0, 0.0), 0.0.into(), 0.0.into(), 0.0.into()];
        assert!((tensor_norm_sq(&t, 1, 2, 2, Some(&ginv)) - 1.0 / 16.0).abs() < 1e-15);
        let t2 = vec![Complex64::new(0.0, 0.0), 1.0.into(), 0.0.into(), 0.0.into()];
        assert!((tensor_norm_sq(&t2, 1, 2, 2, Some(&ginv)) - 0.25).abs() < 1e-15);
    }
}
