//! Curvature of a grid metric by centered differences.
//!
//! Every derivative is the centered first difference `D_i`, and second
//! derivatives are compositions `D_i D_j`. All linearized identities at a
//! constant background therefore hold with `ξ_i` replaced by `sin(ξ_i h)/h`.

use super::FlowError;
use crate::grid::{MetricField, PeriodicGrid};
use serde::Serialize;

pub(crate) type Comps = Vec<Vec<f64>>;

/// Centered first difference along `axis`; zero on unresolved axes.
pub fn centered_difference(grid: &PeriodicGrid, f: &[f64], axis: usize) -> Vec<f64> {
    let m = grid.axis_len(axis);
    if m == 1 {
        return vec![0.0; f.len()];
    }
    let s = grid.stride(axis);
    let scale = 0.5 / grid.spacing();
    (0..f.len())
        .map(|p| {
            let c = (p / s) % m;
            let up = p - c * s + ((c + 1) % m) * s;
            let dn = p - c * s + ((c + m - 1) % m) * s;
            (f[up] - f[dn]) * scale
        })
        .collect()
}

/// `D_l` of every component, indexed `c * n + l`.
fn gradient_all(grid: &PeriodicGrid, comps: &[Vec<f64>]) -> Comps {
    let n = grid.dim();
    let mut out = Vec::with_capacity(comps.len() * n);
    for c in comps {
        for l in 0..n {
            out.push(centered_difference(grid, c, l));
        }
    }
    out
}

/// Curvature tensors of a metric; index layouts are row-major in the
/// written index order (`Γ^k_{ij}` at `(k*n+i)*n+j`, `R_{ijkl}` at
/// `((i*n+j)*n+k)*n+l`).
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureBundle {
    pub dim: usize,
    pub christoffel: Comps,
    /// Fully lowered Riemann tensor; Ricci contracts the first and third slots.
    pub riemann: Comps,
    pub ricci: Comps,
    pub scalar: Vec<f64>,
    /// Empty below dimension 3.
    pub schouten: Comps,
    pub weyl: Comps,
    /// Present in dimension 4 only.
    pub bach: Option<Comps>,
    /// `max |R_{ijkl} + R_{jikl}|`, `max |R_{ijkl} - R_{klij}|` and the Ricci
    /// asymmetry before symmetrization.
    pub antisymmetry_defect: f64,
    pub pair_symmetry_defect: f64,
    pub ricci_asymmetry: f64,
}

/// Christoffel symbols `Γ^k_{ij}` of `g`.
pub fn christoffel(g: &MetricField) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let dg = gradient_all(grid, g.components());
    let d = |a: usize, b: usize, l: usize, p: usize| dg[(a * n + b) * n + l][p];
    let mut gam = vec![vec![0.0; np]; n * n * n];
    for p in 0..np {
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let gi = g.inverse_component(k, l)[p];
                        if gi != 0.0 {
                            s += gi * (d(j, l, i, p) + d(i, l, j, p) - d(i, j, l, p));
                        }
                    }
                    gam[(k * n + i) * n + j][p] = 0.5 * s;
                    gam[(k * n + j) * n + i][p] = 0.5 * s;
                }
            }
        }
    }
    gam
}

fn idx4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

/// Curvature, Schouten, Weyl and (for `n = 4`) Bach tensors.
pub fn curvature(g: &MetricField) -> Result<CurvatureBundle, FlowError> {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let gam = christoffel(g);
    let dgam = gradient_all(grid, &gam);
    // D_μ Γ^ρ_{νσ} at ((ρ n + ν) n + σ) n + μ.
    let dg_ = |r: usize, nu: usize, s: usize, mu: usize, p: usize| dgam[idx4(n, r, nu, s, mu)][p];
    let gm = |k: usize, i: usize, j: usize, p: usize| gam[(k * n + i) * n + j][p];

    let mut riem = vec![vec![0.0; np]; n * n * n * n];
    let mut up = vec![0.0; n * n * n * n];
    for p in 0..np {
        for r in 0..n {
            for s in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        let mut v = dg_(r, nu, s, mu, p) - dg_(r, mu, s, nu, p);
                        for l in 0..n {
                            v += gm(r, mu, l, p) * gm(l, nu, s, p) - gm(r, nu, l, p) * gm(l, mu, s, p);
                        }
                        up[idx4(n, r, s, mu, nu)] = v;
                    }
                }
            }
        }
        for a in 0..n {
            for s in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        let mut v = 0.0;
                        for r in 0..n {
                            v += g.component(a, r)[p] * up[idx4(n, r, s, mu, nu)];
                        }
                        riem[idx4(n, a, s, mu, nu)][p] = v;
                    }
                }
            }
        }
    }

    let mut anti = 0.0f64;
    let mut pair = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let a = &riem[idx4(n, i, j, k, l)];
                    let b = &riem[idx4(n, j, i, k, l)];
                    let c = &riem[idx4(n, k, l, i, j)];
                    for p in 0..np {
                        anti = anti.max((a[p] + b[p]).abs());
                        pair = pair.max((a[p] - c[p]).abs());
                    }
                }
            }
        }
    }

    let mut ricci = vec![vec![0.0; np]; n * n];
    let mut asym = 0.0f64;
    for p in 0..np {
        let raw = |s: usize, nu: usize| -> f64 {
            let mut v = 0.0;
            for a in 0..n {
                for mu in 0..n {
                    let gi = g.inverse_component(a, mu)[p];
                    if gi != 0.0 {
                        v += gi * riem[idx4(n, a, s, mu, nu)][p];
                    }
                }
            }
            v
        };
        for s in 0..n {
            for nu in s..n {
                let (x, y) = (raw(s, nu), raw(nu, s));
                asym = asym.max((x - y).abs());
                ricci[s * n + nu][p] = 0.5 * (x + y);
                ricci[nu * n + s][p] = 0.5 * (x + y);
            }
        }
    }
    let scalar = trace(g, &ricci);

    let (schouten, weyl) = if n >= 3 {
        let nf = n as f64;
        let mut pt = vec![vec![0.0; np]; n * n];
        for ab in 0..n * n {
            let gab = g.components()[ab].as_slice();
            for p in 0..np {
                pt[ab][p] = (ricci[ab][p] - scalar[p] / (2.0 * (nf - 1.0)) * gab[p]) / (nf - 2.0);
            }
        }
        let mut w = riem.clone();
        for r in 0..n {
            for s in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        let slot = &mut w[idx4(n, r, s, mu, nu)];
                        for p in 0..np {
                            let kn = pt[r * n + mu][p] * g.component(s, nu)[p] + pt[s * n + nu][p] * g.component(r, mu)[p]
                                - pt[r * n + nu][p] * g.component(s, mu)[p]
                                - pt[s * n + mu][p] * g.component(r, nu)[p];
                            slot[p] -= kn;
                        }
                    }
                }
            }
        }
        (pt, w)
    } else {
        (Vec::new(), Vec::new())
    };

    let bach = if n == 4 { Some(bach_from(g, &gam, &schouten, &weyl)) } else { None };
    Ok(CurvatureBundle {
        dim: n,
        christoffel: gam,
        riemann: riem,
        ricci,
        scalar,
        schouten,
        weyl,
        bach,
        antisymmetry_defect: anti,
        pair_symmetry_defect: pair,
        ricci_asymmetry: asym,
    })
}

/// `B_ij = ∇^k∇_k P_ij - ∇^k∇_j P_ik - P^{kl} W_{kijl}`, symmetrized.
fn bach_from(g: &MetricField, gam: &Comps, pt: &Comps, w: &Comps) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let gm = |k: usize, i: usize, j: usize, p: usize| gam[(k * n + i) * n + j][p];
    // T_{ikj} = ∇_j P_ik.
    let dp = gradient_all(grid, pt);
    let mut t = vec![vec![0.0; np]; n * n * n];
    for p in 0..np {
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    let mut v = dp[(i * n + k) * n + j][p];
                    for m in 0..n {
                        v -= gm(m, j, i, p) * pt[m * n + k][p] + gm(m, j, k, p) * pt[i * n + m][p];
                    }
                    t[(i * n + k) * n + j][p] = v;
                }
            }
        }
    }
    let dt = gradient_all(grid, &t);
    let tt = |i: usize, k: usize, j: usize, p: usize| t[(i * n + k) * n + j][p];
    // ∇_l T_{ikj}.
    let nabla_t = |i: usize, k: usize, j: usize, l: usize, p: usize| -> f64 {
        let mut v = dt[idx4(n, i, k, j, l)][p];
        for m in 0..n {
            v -= gm(m, l, i, p) * tt(m, k, j, p) + gm(m, l, k, p) * tt(i, m, j, p) + gm(m, l, j, p) * tt(i, k, m, p);
        }
        v
    };
    let mut b = vec![vec![0.0; np]; n * n];
    let mut pu = vec![0.0; n * n];
    for p in 0..np {
        let gi = |a: usize, c: usize| g.inverse_component(a, c)[p];
        for k in 0..n {
            for l in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        v += gi(k, a) * gi(l, c) * pt[a * n + c][p];
                    }
                }
                pu[k * n + l] = v;
            }
        }
        for i in 0..n {
            for j in i..n {
                let mut val = [0.0; 2];
                for (slot, (x, y)) in [(i, j), (j, i)].into_iter().enumerate() {
                    let mut v = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            let gkl = gi(k, l);
                            if gkl != 0.0 {
                                v += gkl * (nabla_t(x, y, k, l, p) - nabla_t(x, k, y, l, p));
                            }
                            v -= pu[k * n + l] * w[idx4(n, k, x, y, l)][p];
                        }
                    }
                    val[slot] = v;
                }
                let s = 0.5 * (val[0] + val[1]);
                b[i * n + j][p] = s;
                b[j * n + i][p] = s;
            }
        }
    }
    b
}

/// Bach tensor of a four-dimensional metric.
pub fn bach_tensor(g: &MetricField) -> Result<Comps, FlowError> {
    if g.dim() != 4 {
        return Err(FlowError::Dimension(g.dim()));
    }
    Ok(curvature(g)?.bach.expect("dimension 4 carries the Bach tensor"))
}

/// `g^{ij} T_ij` pointwise.
pub fn trace(g: &MetricField, t: &[Vec<f64>]) -> Vec<f64> {
    let n = g.dim();
    let np = g.grid().len();
    (0..np)
        .map(|p| {
            let mut v = 0.0;
            for a in 0..n {
                for b in 0..n {
                    v += g.inverse_component(a, b)[p] * t[a * n + b][p];
                }
            }
            v
        })
        .collect()
}

/// `(div T)_j = g^{il} ∇_l T_ij` for a 2-tensor, using Christoffels `gam`.
pub fn divergence(g: &MetricField, gam: &[Vec<f64>], t: &[Vec<f64>]) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let dt = gradient_all(grid, t);
    let gm = |k: usize, i: usize, j: usize, p: usize| gam[(k * n + i) * n + j][p];
    let mut out = vec![vec![0.0; np]; n];
    for p in 0..np {
        for j in 0..n {
            let mut v = 0.0;
            for i in 0..n {
                for l in 0..n {
                    let gil = g.inverse_component(i, l)[p];
                    if gil == 0.0 {
                        continue;
                    }
                    let mut cov = dt[(i * n + j) * n + l][p];
                    for m in 0..n {
                        cov -= gm(m, l, i, p) * t[m * n + j][p] + gm(m, l, j, p) * t[i * n + m][p];
                    }
                    v += gil * cov;
                }
            }
            out[j][p] = v;
        }
    }
    out
}

/// Positive Laplacian `Δf = -g^{ij}(D_i D_j f - Γ^k_{ij} D_k f)`.
pub fn scalar_laplacian(g: &MetricField, gam: &[Vec<f64>], f: &[f64]) -> Vec<f64> {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let df: Comps = (0..n).map(|l| centered_difference(grid, f, l)).collect();
    let ddf = gradient_all(grid, &df);
    (0..np)
        .map(|p| {
            let mut v = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let gij = g.inverse_component(i, j)[p];
                    if gij == 0.0 {
                        continue;
                    }
                    let mut h = ddf[j * n + i][p];
                    for k in 0..n {
                        h -= gam[(k * n + i) * n + j][p] * df[k][p];
                    }
                    v += gij * h;
                }
            }
            -v
        })
        .collect()
}

/// Positive rough Laplacian `ΔV^k = -g^{ij} ∇_i ∇_j V^k` of a vector field.
pub fn vector_laplacian(g: &MetricField, gam: &[Vec<f64>], v: &[Vec<f64>]) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let gm = |k: usize, i: usize, j: usize, p: usize| gam[(k * n + i) * n + j][p];
    let dv = gradient_all(grid, v);
    // A^k_j = ∇_j V^k at k * n + j.
    let mut a = vec![vec![0.0; np]; n * n];
    for p in 0..np {
        for k in 0..n {
            for j in 0..n {
                let mut s = dv[k * n + j][p];
                for m in 0..n {
                    s += gm(k, j, m, p) * v[m][p];
                }
                a[k * n + j][p] = s;
            }
        }
    }
    let da = gradient_all(grid, &a);
    let mut out = vec![vec![0.0; np]; n];
    for p in 0..np {
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let gij = g.inverse_component(i, j)[p];
                    if gij == 0.0 {
                        continue;
                    }
                    let mut h = da[(k * n + j) * n + i][p];
                    for m in 0..n {
                        h += gm(k, i, m, p) * a[m * n + j][p] - gm(m, i, j, p) * a[k * n + m][p];
                    }
                    s += gij * h;
                }
            }
            out[k][p] = -s;
        }
    }
    out
}

/// `∇^k f = g^{kl} D_l f`.
pub fn gradient_vector(g: &MetricField, f: &[f64]) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let df: Comps = (0..n).map(|l| centered_difference(grid, f, l)).collect();
    (0..n)
        .map(|k| (0..grid.len()).map(|p| (0..n).map(|l| g.inverse_component(k, l)[p] * df[l][p]).sum()).collect())
        .collect()
}

/// Lie derivative `(L_U g)_ij = U^k D_k g_ij + g_kj D_i U^k + g_ik D_j U^k`.
pub fn lie_derivative_metric(g: &MetricField, u: &[Vec<f64>]) -> Comps {
    let grid = g.grid();
    let n = g.dim();
    let np = grid.len();
    let dg = gradient_all(grid, g.components());
    let du = gradient_all(grid, u);
    let mut out = vec![vec![0.0; np]; n * n];
    for p in 0..np {
        for i in 0..n {
            for j in i..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += u[k][p] * dg[(i * n + j) * n + k][p]
                        + g.component(k, j)[p] * du[k * n + i][p]
                        + g.component(i, k)[p] * du[k * n + j][p];
                }
                out[i * n + j][p] = v;
                out[j * n + i][p] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::log_log_fit;
    use std::f64::consts::PI;

    fn max_abs(c: &[Vec<f64>]) -> f64 {
        c.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn conformal(n_axis: usize, varying: usize, u: impl Fn(&[f64]) -> f64) -> MetricField {
        let grid = PeriodicGrid::reduced(4, n_axis, 2.0 * PI, varying).unwrap();
        let vals = grid.sample(|x| u(x));
        MetricField::conformal(&grid, &vals).unwrap()
    }

    /// Smooth metric that is not conformally flat, varying in two coordinates.
    fn generic(n_axis: usize, amp: f64) -> MetricField {
        let grid = PeriodicGrid::reduced(4, n_axis, 2.0 * PI, 2).unwrap();
        let n = 4;
        let comps = (0..n * n)
            .map(|ab| {
                let (a, b) = (ab / n, ab % n);
                grid.sample(|x| {
                    let base = if a == b { 1.0 } else { 0.0 };
                    let s = (a + b) as f64;
                    base + amp * (x[0] + 0.3 * s).sin() * (x[1] - 0.2 * s).cos() / (1.0 + s)
                })
            })
            .collect();
        MetricField::from_components(&grid, comps).unwrap()
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let grid = PeriodicGrid::reduced(4, 6, 2.0 * PI, 4).unwrap();
        let c = curvature(&MetricField::flat(&grid)).unwrap();
        assert!(max_abs(&c.riemann) < 1e-12);
        assert!(max_abs(&c.christoffel) < 1e-12);
        assert!(c.scalar.iter().all(|v| v.abs() < 1e-12));
        assert!(max_abs(c.bach.as_ref().unwrap()) < 1e-10);
    }

    #[test]
    fn constant_conformal_factor_is_flat_up_to_scale() {
        let g = conformal(8, 2, |_| 0.3);
        let b = bach_tensor(&g).unwrap();
        assert!(max_abs(&b) < 1e-12);
    }

    #[test]
    fn first_bianchi_and_weyl_traces() {
        let g = generic(8, 0.05);
        let c = curvature(&g).unwrap();
        let n = 4;
        let np = g.grid().len();
        let mut bianchi = 0.0f64;
        for r in 0..n {
            for s in 0..n {
                for m in 0..n {
                    for v in 0..n {
                        for p in 0..np {
                            let x = c.riemann[idx4(n, r, s, m, v)][p] + c.riemann[idx4(n, r, m, v, s)][p] + c.riemann[idx4(n, r, v, s, m)][p];
                            bianchi = bianchi.max(x.abs());
                        }
                    }
                }
            }
        }
        assert!(bianchi < 1e-12, "{bianchi}");
        // g^{ρμ} W_{ρσμν} = 0.
        let mut wt = 0.0f64;
        for s in 0..n {
            for v in 0..n {
                for p in 0..np {
                    let mut t = 0.0;
                    for r in 0..n {
                        for m in 0..n {
                            t += g.inverse_component(r, m)[p] * c.weyl[idx4(n, r, s, m, v)][p];
                        }
                    }
                    wt = wt.max(t.abs());
                }
            }
        }
        // Only the antisymmetric part of the raw Ricci contraction survives.
        assert!(wt <= 0.5 * c.ricci_asymmetry + 1e-12, "{wt} {}", c.ricci_asymmetry);
        // g^{ij} P_ij = S/(2(n-1)).
        let tp = trace(&g, &c.schouten);
        for p in 0..np {
            assert!((tp[p] - c.scalar[p] / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetry_defects_shrink_at_second_order() {
        let mut hs = Vec::new();
        let mut anti = Vec::new();
        let mut pair = Vec::new();
        for n in [32, 48, 64] {
            let c = curvature(&generic(n, 0.05)).unwrap();
            hs.push(2.0 * PI / n as f64);
            anti.push(c.antisymmetry_defect);
            pair.push(c.pair_symmetry_defect);
        }
        let fa = log_log_fit(&hs, &anti).unwrap();
        let fp = log_log_fit(&hs, &pair).unwrap();
        assert!((fa.slope - 2.0).abs() < 0.3, "{fa:?}");
        assert!((fp.slope - 2.0).abs() < 0.3, "{fp:?}");
    }

    #[test]
    fn conformal_scalar_curvature_matches_closed_form() {
        // S(e^{2u}δ) = -6 e^{-2u}(∂²u + |∇u|²) in dimension 4.
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = conformal(n, 1, |x| 0.01 * x[0].cos());
            let c = curvature(&g).unwrap();
            let grid = g.grid();
            let mut err = 0.0f64;
            for p in 0..grid.len() {
                let x = grid.position(p)[0];
                let u = 0.01 * x.cos();
                let exact = -6.0 * (-2.0 * u).exp() * (-0.01 * x.cos() + 1e-4 * x.sin().powi(2));
                err = err.max((c.scalar[p] - exact).abs());
            }
            hs.push(2.0 * PI / n as f64);
            errs.push(err);
        }
        let fit = log_log_fit(&hs, &errs).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.2, "{fit:?} {errs:?}");
    }

    #[test]
    fn ricci_linearization_on_plane_waves() {
        // Rc'(h)_ij = ½(|k̃|² h_ij - k̃_i k̃^l h_lj - k̃_j k̃^l h_li + k̃_i k̃_j tr h) e^{ik·x}
        // for h = a cos(k·x) E, with k̃ = sin(k h)/h.
        let grid = PeriodicGrid::reduced(4, 12, 2.0 * PI, 2).unwrap();
        let kv = [1.0, 2.0, 0.0, 0.0];
        let h = grid.spacing();
        let kt: Vec<f64> = kv.iter().map(|k| (k * h).sin() / h).collect();
        let e = [[0.3, 0.5, 0.0, 0.1], [0.5, -0.2, 0.4, 0.0], [0.0, 0.4, 0.7, 0.2], [0.1, 0.0, 0.2, -0.1]];
        let a = 1e-6;
        let n = 4;
        let comps = (0..16)
            .map(|ab| grid.sample(|x| (if ab / 4 == ab % 4 { 1.0 } else { 0.0 }) + a * e[ab / 4][ab % 4] * (kv[0] * x[0] + kv[1] * x[1]).cos()))
            .collect();
        let g = MetricField::from_components(&grid, comps).unwrap();
        let c = curvature(&g).unwrap();
        let k2: f64 = kt.iter().map(|v| v * v).sum();
        let tr: f64 = (0..n).map(|i| e[i][i]).sum();
        for i in 0..n {
            for j in 0..n {
                let ke = |i: usize| (0..n).map(|l| kt[l] * e[l][i]).sum::<f64>();
                let sym = 0.5 * (k2 * e[i][j] - kt[i] * ke(j) - kt[j] * ke(i) + kt[i] * kt[j] * tr);
                for p in 0..grid.len() {
                    let x = grid.position(p);
                    let expect = a * sym * (kv[0] * x[0] + kv[1] * x[1]).cos();
                    assert!((c.ricci[i * n + j][p] - expect).abs() < 1e-4 * a, "{i}{j}");
                }
            }
        }
    }

    #[test]
    fn bach_is_trace_and_divergence_free_to_second_order() {
        let mut hs = Vec::new();
        let mut tr = Vec::new();
        let mut dv = Vec::new();
        for n in [32, 48, 64] {
            let g = generic(n, 0.1);
            let c = curvature(&g).unwrap();
            let b = c.bach.as_ref().unwrap();
            hs.push(2.0 * PI / n as f64);
            tr.push(trace(&g, b).iter().fold(0.0f64, |m, v| m.max(v.abs())));
            dv.push(max_abs(&divergence(&g, &c.christoffel, b)));
        }
        let ft = log_log_fit(&hs, &tr).unwrap();
        let fd = log_log_fit(&hs, &dv).unwrap();
        assert!((ft.slope - 2.0).abs() < 0.3, "{ft:?} {tr:?}");
        assert!((fd.slope - 2.0).abs() < 0.3, "{fd:?} {dv:?}");
    }

    #[test]
    fn grid_shift_commutes_with_curvature() {
        let g = generic(8, 0.05);
        let grid = g.grid().clone();
        let shift = |f: &[f64]| -> Vec<f64> { (0..grid.len()).map(|p| f[grid.shifted(p, &[1, 0, 0, 0])]).collect() };
        let shifted = MetricField::from_components(&grid, g.components().iter().map(|c| shift(c)).collect()).unwrap();
        let b0 = bach_tensor(&g).unwrap();
        let b1 = bach_tensor(&shifted).unwrap();
        for (x, y) in b0.iter().zip(&b1) {
            assert_eq!(shift(x), *y);
        }
    }

    #[test]
    fn bach_requires_four_dimensions() {
        let grid = PeriodicGrid::new(3, 6, 2.0 * PI).unwrap();
        assert_eq!(bach_tensor(&MetricField::flat(&grid)).unwrap_err(), FlowError::Dimension(3));
    }
}
