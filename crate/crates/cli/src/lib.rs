//! Experiment runners behind the `sectlab` binary.
//!
//! [`run`] executes one [`ExperimentConfig`] and writes its artifacts into
//! `config.out`. The returned [`Outcome`] says whether the certified check of
//! that experiment held; the binary maps it onto exit codes.

use nalgebra::DVector;
use sectorlab::flow::{
    curvature, divergence, metric_from_state, solve_ivp, state_from_metric, trace, BachFlow, FlowError, FlowRhs, FlowState,
    StepControls, Toy1d,
};
use sectorlab::grid::{MetricField, PeriodicGrid};
use sectorlab::operator::assemble;
use sectorlab::report::{collect_sidecars, num, write_json, write_table, ExperimentConfig, ExperimentKind, Provenance, Table};
use sectorlab::resolvent::{band_limited_probes, fit_sector, sweep_sector, LambdaGrid, RowStatus, SectorEstimate, SweepTable};
use sectorlab::semiclassical::{fit_decay, model_green_function_with, parametrix_family, verify_delta_identity, KernelSampling};
use sectorlab::semigroup::{design_contour, evolve, semigroup_axiom_check};
use sectorlab::symbol::{check_admissibility, check_strong_ellipticity, default_xi_samples, Coefficient, Cone, SymbolPolynomial, SymbolSpec};
use sectorlab::Complex64;
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: maps to exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// A computation could not be carried out: maps to exit code 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub passed: bool,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Scalar `-Σ_a ∂_a(c ∂_a)` with `c = 1 + amp·sin x_1`.
pub fn divergence_symbol(grid: &PeriodicGrid, amp: f64) -> Result<SymbolPolynomial, CliError> {
    let n = grid.dim();
    let re = |v: f64| Complex64::new(v, 0.0);
    let c: Vec<Complex64> = grid.sample(|x| re(-(1.0 + amp * x[0].sin())));
    let dc: Vec<Complex64> = grid.sample(|x| re(-amp * x[0].cos()));
    let mut sym = SymbolPolynomial::new(n, 1, 2).and_then(|s| s.on_grid(grid)).map_err(usage)?;
    for a in 0..n {
        let mut j = vec![0; n];
        j[a] = 2;
        sym.add_term(&j, Coefficient::scalar_field(c.clone())).map_err(usage)?;
    }
    let mut j = vec![0; n];
    j[0] = 1;
    sym.add_term(&j, Coefficient::scalar_field(dc)).map_err(usage)?;
    Ok(sym)
}

fn symbol(cfg: &ExperimentConfig, grid: &PeriodicGrid) -> Result<SymbolPolynomial, CliError> {
    let n = grid.dim();
    let sym = match cfg.operator.as_str() {
        "laplacian" => SymbolPolynomial::laplacian(n, 1).map_err(usage)?,
        "bilaplacian" => SymbolPolynomial::bilaplacian(n, 1).map_err(usage)?,
        "divergence" => divergence_symbol(grid, cfg.param_f64("amp").unwrap_or(0.2))?,
        path => SymbolSpec::load(Path::new(path)).map_err(usage)?,
    };
    if sym.dim() != n {
        return Err(usage(format!("operator has dimension {}, grid has {}", sym.dim(), n)));
    }
    match sym.grid() {
        Some(g) if g != grid => Err(usage("operator coefficients live on a different grid than `grid`")),
        _ => Ok(sym),
    }
}

fn zeta(cfg: &ExperimentConfig) -> Complex64 {
    cfg.zeta.map(|[a, b]| Complex64::new(a, b)).unwrap_or(Complex64::new(-1.0, 0.0))
}

fn lambdas(cfg: &ExperimentConfig, default: &str) -> Result<Vec<Complex64>, CliError> {
    let spec = cfg.lambdas.as_deref().unwrap_or(default);
    Ok(spec.parse::<LambdaGrid>().map_err(usage)?.points)
}

fn sweep_table(sweep: &SweepTable) -> Table {
    let mut t = Table::new(&["re_lambda", "im_lambda", "norm", "scaled_norm", "status"]);
    for r in &sweep.rows {
        let o = |v: Option<f64>| num(v.unwrap_or(f64::NAN));
        t.push(vec![num(r.lambda.re), num(r.lambda.im), o(r.norm), o(r.scaled_norm), r.status.tag().into()]);
    }
    t
}

/// Runs one experiment; configuration problems are [`CliError::Usage`].
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate().map_err(usage)?;
    let grid = cfg.grid.build().map_err(usage)?;
    let prov = cfg.provenance();
    let out = cfg.out.as_path();
    write_json(out, "config", cfg, &prov).map_err(failed)?;
    let (passed, summary, mut artifacts) = match cfg.kind {
        ExperimentKind::CheckAdmissible => check_admissible(cfg, &grid, &prov)?,
        ExperimentKind::Sweep => sweep(cfg, &grid, &prov)?,
        ExperimentKind::FitSector => sector(cfg, &grid, &prov)?,
        ExperimentKind::Green => green(cfg, &grid, &prov)?,
        ExperimentKind::Parametrix => parametrix(cfg, &grid, &prov)?,
        ExperimentKind::Evolve => evolve_run(cfg, &grid, &prov)?,
        ExperimentKind::Flow => flow(cfg, &grid, &prov)?,
    };
    artifacts.insert(0, out.join("config.json"));
    Ok(Outcome { kind: cfg.kind, passed, summary, artifacts })
}

type Run = Result<(bool, String, Vec<PathBuf>), CliError>;

fn check_admissible(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sym = symbol(cfg, grid)?;
    let xi = default_xi_samples(grid.dim(), Some(grid), cfg.seed);
    let points: Vec<usize> = (0..sym.point_count()).collect();
    let ell = check_strong_ellipticity(&sym, &xi, &points).map_err(failed)?;
    let cone = Cone::right(cfg.param_f64("cone_half_angle").unwrap_or(ell.theta));
    let zetas = match &cfg.lambdas {
        Some(_) => lambdas(cfg, "")?,
        None => vec![zeta(cfg)],
    };
    let adm = check_admissibility(&sym, &cone, &zetas, &xi, &points).map_err(failed)?;
    let mut t = Table::new(&["re_zeta", "im_zeta", "constant"]);
    for &(a, b, c) in &adm.per_zeta {
        t.push(vec![num(a), num(b), num(c)]);
    }
    let table = write_table(&cfg.out, "admissibility", &t, prov).map_err(failed)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        ellipticity: &'a sectorlab::symbol::EllipticityReport,
        admissibility: &'a sectorlab::symbol::AdmissibilityReport,
    }
    let json = write_json(&cfg.out, "admissibility_summary", &Summary { ellipticity: &ell, admissibility: &adm }, prov).map_err(failed)?;
    let passed = ell.pass && adm.pass;
    let summary = format!("theta' = {:.6}, C = {:.6e}, flagged = {}", ell.theta, adm.constant, adm.flagged.len());
    Ok((passed, summary, vec![table, json]))
}

fn run_sweep(cfg: &ExperimentConfig, grid: &PeriodicGrid) -> Result<SweepTable, CliError> {
    let sym = symbol(cfg, grid)?;
    let op = assemble(&sym, grid, cfg.scheme).map_err(failed)?;
    let surrogate = cfg.surrogate().map_err(usage)?;
    Ok(sweep_sector(&op, &lambdas(cfg, "")?, surrogate, cfg.tolerances.solve))
}

fn sweep(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sw = run_sweep(cfg, grid)?;
    let path = write_table(&cfg.out, "sweep", &sweep_table(&sw), prov).map_err(failed)?;
    let bad = sw.rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    let sup = sw.sup_scaled().unwrap_or(f64::NAN);
    let within = match cfg.param_f64("bound") {
        Some(b) => sup <= b + cfg.tolerances.bound,
        None => true,
    };
    Ok((bad == 0 && within, format!("{} rows, sup |lambda| ||R|| = {:.12e}, failed rows = {bad}", sw.rows.len(), sup), vec![path]))
}

fn sector_of(cfg: &ExperimentConfig, sw: &SweepTable) -> Result<SectorEstimate, CliError> {
    fit_sector(sw, cfg.param_f64("omega").unwrap_or(0.0)).map_err(failed)
}

fn sector(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sw = run_sweep(cfg, grid)?;
    let table = write_table(&cfg.out, "sweep", &sweep_table(&sw), prov).map_err(failed)?;
    match sector_of(cfg, &sw) {
        Ok(est) => {
            let json = write_json(&cfg.out, "sector", &est, prov).map_err(failed)?;
            let summary = format!("omega = {}, theta = {:.12e}, C = {:.12e}", est.omega(), est.theta(), est.constant());
            Ok((!est.is_degenerate(), summary, vec![table, json]))
        }
        Err(e) => Ok((false, e.to_string(), vec![table])),
    }
}

fn green(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sym = symbol(cfg, grid)?;
    let sampling = match cfg.param_u64("alias_reach") {
        Some(reach) => KernelSampling::AliasSummed { reach: reach as usize },
        None => KernelSampling::BandLimited,
    };
    let base = cfg.param_u64("base_point").unwrap_or(0) as usize;
    let kern = model_green_function_with(&sym, base, zeta(cfg), grid, sampling).map_err(failed)?;
    let mut t = Table::new(&["x", "radius", "re", "im", "magnitude"]);
    for p in 0..grid.len() {
        let z = kern.scalar()[p];
        t.push(vec![num(grid.position(p)[0]), num(kern.radius(p)), num(z.re), num(z.im), num(kern.magnitude(p))]);
    }
    let table = write_table(&cfg.out, "kernel", &t, prov).map_err(failed)?;
    let half = grid.length() / 2.0;
    let r_min = cfg.param_f64("r_min").unwrap_or(0.5).min(half);
    let r_max = cfg.param_f64("r_max").unwrap_or(10.0).min(half);
    let fit = fit_decay(&kern, r_min, r_max);
    let delta = verify_delta_identity(&kern, &sym, cfg.scheme).map_err(failed)?;
    #[derive(Serialize)]
    struct Summary {
        decay_bound: f64,
        prefactor: f64,
        fitted_decay: Option<f64>,
        fitted_prefactor: Option<f64>,
        fit_error: Option<String>,
        delta_origin: Complex64,
        delta_expected_origin: f64,
        delta_max_off_origin: f64,
    }
    let s = Summary {
        decay_bound: kern.decay(),
        prefactor: kern.prefactor(),
        fitted_decay: fit.as_ref().ok().map(|f| f.0),
        fitted_prefactor: fit.as_ref().ok().map(|f| f.1),
        fit_error: fit.as_ref().err().map(|e| e.to_string()),
        delta_origin: delta.origin_value,
        delta_expected_origin: delta.expected_origin,
        delta_max_off_origin: delta.max_off_origin,
    };
    let json = write_json(&cfg.out, "green", &s, prov).map_err(failed)?;
    let passed = matches!(s.fitted_decay, Some(d) if d > 0.0);
    let summary = match s.fitted_decay {
        Some(d) => format!("fitted decay = {d:.6}, off-origin delta residual = {:.3e}", s.delta_max_off_origin),
        None => format!("decay fit failed: {}", s.fit_error.unwrap_or_default()),
    };
    Ok((passed, summary, vec![table, json]))
}

fn parametrix(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sym = symbol(cfg, grid)?;
    let k = cfg.param_u64("order").unwrap_or(1) as usize;
    let eps = cfg.eps.clone().unwrap_or_default();
    let surrogate = cfg.surrogate().map_err(usage)?;
    let bundle = parametrix_family(&sym, grid, cfg.scheme, zeta(cfg), &eps, k, &surrogate).map_err(failed)?;
    let mut t = Table::new(&["eps", "order", "q1", "q2"]);
    for r in &bundle.records {
        t.push(vec![num(r.eps), k.to_string(), num(r.q1), num(r.q2)]);
    }
    let table = write_table(&cfg.out, "parametrix", &t, prov).map_err(failed)?;
    let json = write_json(&cfg.out, "parametrix_fit", &bundle, prov).map_err(failed)?;
    let exact = bundle.records.iter().all(|r| r.q1 <= cfg.tolerances.bound);
    let passed = exact || matches!(bundle.slope, Some(s) if s >= (k + 1) as f64 - 0.2);
    let summary = format!("K = {k}, slope = {:?}, r^2 = {:?}", bundle.slope, bundle.r_squared);
    Ok((passed, summary, vec![table, json]))
}

fn evolve_run(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let sym = symbol(cfg, grid)?;
    let op = assemble(&sym, grid, cfg.scheme).map_err(failed)?;
    let surrogate = cfg.surrogate().map_err(usage)?;
    let sw = sweep_sector(&op, &lambdas(cfg, "vline:re=-1,imax=1e4,n=40,spacing=log")?, surrogate, cfg.tolerances.solve);
    let est = sector_of(cfg, &sw)?;
    let nq = cfg.param_u64("nodes").unwrap_or(sectorlab::semigroup::ACCURATE_NODES as u64) as usize;
    let u0 = band_limited_probes(grid, sym.rank(), 1, cfg.seed, 1.0).remove(0).values().clone();
    let times = cfg.times.clone().unwrap_or_default();
    let mut t = Table::new(&["t", "l2_norm", "sup_norm", "error_estimate", "nodes"]);
    let mut worst = 0.0f64;
    for &tt in &times {
        let u = evolve(&op, &est, &u0, tt, nq).map_err(failed)?;
        let (estimate, nodes) = if tt > 0.0 {
            let c = design_contour(&est, tt, nq).map_err(failed)?;
            (c.error_estimate, c.len())
        } else {
            (0.0, 0)
        };
        worst = worst.max(estimate);
        let sup = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
        t.push(vec![num(tt), num(u.norm()), num(sup), num(estimate), nodes.to_string()]);
    }
    let mut artifacts = vec![write_table(&cfg.out, "evolve", &t, prov).map_err(failed)?];
    let positive: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    let mut composition = None;
    if positive.len() >= 2 {
        let rep = semigroup_axiom_check(&op, &est, &u0, positive[0], positive[1], nq).map_err(failed)?;
        composition = Some(rep.composition_residual);
        artifacts.push(write_json(&cfg.out, "axioms", &rep, prov).map_err(failed)?);
    }
    let passed = worst <= cfg.tolerances.contour;
    let summary = format!("sector theta = {:.6}, worst contour estimate = {worst:.3e}, composition residual = {composition:?}", est.theta());
    Ok((passed, summary, artifacts))
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: expected a JSON array of numbers ({e})", path.display())))
}

fn max_abs(c: &[Vec<f64>]) -> f64 {
    c.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

struct GeometryMetrics {
    trace: f64,
    divergence: f64,
    min_eigenvalue: f64,
}

fn geometry_metrics(grid: &PeriodicGrid, u: &DVector<f64>) -> Result<GeometryMetrics, FlowError> {
    let g = metric_from_state(grid, u)?;
    let c = curvature(&g)?;
    let b = c.bach.as_ref().expect("four-dimensional metric");
    Ok(GeometryMetrics {
        trace: trace(&g, b).iter().fold(0.0, |m, v| m.max(v.abs())),
        divergence: max_abs(&divergence(&g, &c.christoffel, b)),
        min_eigenvalue: g.min_eigenvalue(),
    })
}

fn flow(cfg: &ExperimentConfig, grid: &PeriodicGrid, prov: &Provenance) -> Run {
    let kind = cfg.param_str("flow").unwrap_or("toy1d");
    let t_end = cfg.param_f64("T").unwrap_or(0.05);
    let tau = cfg.param_f64("tau").unwrap_or(1e-3);
    let every = cfg.param_u64("save_every").unwrap_or(1).max(1) as usize;
    let mut controls = StepControls::default();
    if let Some(r) = cfg.param_u64("jacobian_refresh") {
        controls.jacobian_refresh = r as usize;
    }
    let u0_file = cfg.param_str("u0").map(PathBuf::from);
    let np = grid.len();
    let (rhs, u0): (Box<dyn FlowRhs>, DVector<f64>) = match kind {
        "toy1d" => {
            let f = Toy1d::new(grid).map_err(usage)?;
            let u0 = match &u0_file {
                Some(p) => read_vector(p)?,
                None => grid.sample(|x| 0.3 * x[0].sin() + 0.2 * (2.0 * x[0]).cos()),
            };
            if u0.len() != np {
                return Err(usage(format!("initial state has {} entries, grid has {np} points", u0.len())));
            }
            (Box::new(f), DVector::from_vec(u0))
        }
        "bach4" => {
            if grid.dim() != 4 {
                return Err(usage("the bach4 flow needs a four-dimensional grid"));
            }
            let raw = match &u0_file {
                Some(p) => read_vector(p)?,
                None => grid.sample(|x| 0.01 * x[0].cos()),
            };
            let g0 = if raw.len() == np {
                MetricField::conformal(grid, &raw).map_err(usage)?
            } else if raw.len() == 10 * np {
                metric_from_state(grid, &DVector::from_vec(raw)).map_err(usage)?
            } else {
                return Err(usage(format!("bach4 initial data needs {np} conformal factors or {} metric entries", 10 * np)));
            };
            let gauge = match cfg.param_str("gauge").unwrap_or("deturck") {
                "deturck" => true,
                "none" => false,
                other => return Err(usage(format!("unknown gauge '{other}' (expected deturck|none)"))),
            };
            let f = BachFlow::new(grid, gauge.then_some(&g0)).map_err(usage)?;
            (Box::new(f), state_from_metric(&g0))
        }
        other => return Err(usage(format!("unknown flow kind '{other}' (expected bach4|toy1d)"))),
    };
    let traj = solve_ivp(rhs.as_ref(), &u0, t_end, tau, controls).map_err(|e| match e {
        FlowError::Invalid(m) => usage(m),
        e => failed(e),
    })?;
    let geometric = kind == "bach4";
    let flat = if geometric { state_from_metric(&MetricField::flat(grid)) } else { DVector::zeros(u0.len()) };
    let mut t = Table::new(&["t", "step", "l2_norm", "sup_norm", "trace_residual", "divergence_residual", "min_eigenvalue"]);
    let mut artifacts = Vec::new();
    let last = traj.states.len() - 1;
    for (k, s) in traj.states.iter().enumerate() {
        let dev = &s.u - &flat;
        let sup = dev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (tr, dv, me) = if geometric {
            let m = geometry_metrics(grid, &s.u).map_err(failed)?;
            (m.trace, m.divergence, m.min_eigenvalue)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        t.push(vec![num(s.t), s.steps.to_string(), num(dev.norm()), num(sup), num(tr), num(dv), num(me)]);
        if k % every == 0 || k == last {
            artifacts.push(write_json(&cfg.out, &format!("state_{k}"), s, prov).map_err(failed)?);
        }
    }
    artifacts.insert(0, write_table(&cfg.out, "metrics", &t, prov).map_err(failed)?);
    let end: &FlowState = traj.last();
    let summary = match &traj.aborted {
        None => format!("{kind}: reached t = {} in {} steps", end.t, end.steps),
        Some(reason) => format!("{kind}: aborted at t = {}: {reason}", end.t),
    };
    Ok((traj.completed(), summary, artifacts))
}

/// Collects every sidecar under `dir` into `dir/report.csv`.
pub fn report(dir: &Path) -> Result<(Table, PathBuf), CliError> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let entries = collect_sidecars(dir).map_err(failed)?;
    let mut t = Table::new(&["artifact", "kind", "config_hash", "seed", "grid", "scheme", "surrogate", "claim"]);
    for e in entries.iter().filter(|e| e.artifact != "report") {
        let p = &e.provenance;
        let g = &p.grid;
        let grid = format!("dim={} n={} L={} varying={}", g.dim, g.n, g.length, g.varying.unwrap_or(g.dim));
        t.push(vec![
            e.artifact.clone(),
            p.kind.tag().into(),
            p.config_hash.clone(),
            p.seed.to_string(),
            grid,
            p.scheme.tag().into(),
            p.surrogate.clone(),
            p.claim.clone(),
        ]);
    }
    let path = dir.join("report.csv");
    std::fs::write(&path, t.to_csv().map_err(failed)?).map_err(failed)?;
    Ok((t, path))
}
