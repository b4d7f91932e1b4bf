use clap::{Args, Parser, Subcommand};
use sectlab::{report, run, CliError};
use sectorlab::grid::Scheme;
use sectorlab::report::{ExperimentConfig, ExperimentKind, GridSpec};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

/// Resolvent, semigroup and geometric-flow experiments on periodic grids.
///
/// Exit status: 0 when the certified check holds, 1 on a numeric failure,
/// 2 on a usage error.
#[derive(Parser, Debug)]
#[command(name = "sectlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Strong ellipticity and the symbol resolvent bound.
    CheckAdmissible(Common),
    /// |λ|·‖R(λ)‖ on a λ grid.
    Sweep(Common),
    /// Sweep, then fit a sector (ω, θ, C).
    FitSector(Common),
    /// Model Green function, decay fit and delta identity.
    Green(Common),
    /// Parametrix residuals across ε.
    Parametrix(Common),
    /// Contour-integral semigroup at the given times.
    Evolve(Common),
    /// Run the toy flow or the gauged Bach flow.
    Flow(FlowArgs),
    /// Summarize the provenance sidecars in an output directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; other flags except --out are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long = "n", default_value_t = 64)]
    n: usize,
    /// Period of every axis (default 2π).
    #[arg(long)]
    length: Option<f64>,
    /// Number of resolved leading axes.
    #[arg(long)]
    varying: Option<usize>,
    #[arg(long, default_value = "spectral")]
    scheme: Scheme,
    /// laplacian | bilaplacian | divergence | path to a symbol file.
    #[arg(long, default_value = "laplacian")]
    operator: String,
    /// λ grid, e.g. `vline:re=-1,imax=1e3,n=40,spacing=log`.
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// ζ as `re,im`.
    #[arg(long, value_parser = parse_zeta, allow_hyphen_values = true)]
    zeta: Option<[f64; 2]>,
    /// Comma-separated evolution times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// l2 | linf | holder.
    #[arg(long, default_value = "l2")]
    surrogate: String,
    #[arg(long, default_value_t = 200)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra kind-specific parameter `key=value` (repeatable).
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, serde_json::Value)>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// bach4 | toy1d.
    #[arg(long, default_value = "toy1d")]
    kind: String,
    /// JSON array with the initial state (conformal factor for bach4).
    #[arg(long)]
    u0: Option<PathBuf>,
    #[arg(long = "T", default_value_t = 0.05)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// deturck | none (bach4 only).
    #[arg(long, default_value = "deturck")]
    gauge: String,
    /// Re-linearize every k steps; 0 freezes the first Jacobian.
    #[arg(long)]
    jacobian_refresh: Option<u64>,
    /// Write state_<k>.json every this many steps.
    #[arg(long, default_value_t = 1)]
    save_every: u64,
    #[command(flatten)]
    common: Common,
}

fn parse_param(s: &str) -> Result<(String, serde_json::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn parse_zeta(s: &str) -> Result<[f64; 2], String> {
    let (re, im) = s.split_once(',').ok_or_else(|| format!("expected re,im, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok([p(re)?, p(im)?])
}

fn config(kind: ExperimentKind, c: Common) -> Result<ExperimentConfig, CliError> {
    if let Some(path) = &c.config {
        let mut cfg = ExperimentConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.kind != kind {
            return Err(CliError::Usage(format!("config kind '{}' does not match subcommand '{}'", cfg.kind.tag(), kind.tag())));
        }
        if c.out.as_os_str() != "out" {
            cfg.out = c.out;
        }
        return Ok(cfg);
    }
    let grid = GridSpec { dim: c.dim, n: c.n, length: c.length.unwrap_or(2.0 * std::f64::consts::PI), varying: c.varying };
    let mut cfg = ExperimentConfig::new(kind, grid, c.out);
    cfg.scheme = c.scheme;
    cfg.operator = c.operator;
    cfg.lambdas = c.lambdas;
    cfg.eps = c.eps;
    cfg.zeta = c.zeta;
    cfg.times = c.times;
    cfg.surrogate = c.surrogate;
    cfg.probes = c.probes;
    cfg.seed = c.seed;
    cfg.params = c.params.into_iter().collect::<BTreeMap<_, _>>();
    Ok(cfg)
}

fn flow_config(f: FlowArgs) -> Result<ExperimentConfig, CliError> {
    let explicit = f.common.config.is_some();
    let mut cfg = config(ExperimentKind::Flow, f.common)?;
    if !explicit {
        let p = &mut cfg.params;
        p.insert("flow".into(), f.kind.into());
        p.insert("T".into(), f.t_end.into());
        p.insert("tau".into(), f.tau.into());
        p.insert("gauge".into(), f.gauge.into());
        p.insert("save_every".into(), f.save_every.into());
        if let Some(r) = f.jacobian_refresh {
            p.insert("jacobian_refresh".into(), r.into());
        }
        if let Some(u0) = f.u0 {
            p.insert("u0".into(), u0.to_string_lossy().into_owned().into());
        }
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let cfg = match cli.command {
        Command::Report { dir } => {
            let (table, path) = report(&dir)?;
            println!("{} artifacts summarized in {}", table.rows.len(), path.display());
            return Ok(0);
        }
        Command::Flow(f) => flow_config(f)?,
        Command::CheckAdmissible(c) => config(ExperimentKind::CheckAdmissible, c)?,
        Command::Sweep(c) => config(ExperimentKind::Sweep, c)?,
        Command::FitSector(c) => config(ExperimentKind::FitSector, c)?,
        Command::Green(c) => config(ExperimentKind::Green, c)?,
        Command::Parametrix(c) => config(ExperimentKind::Parametrix, c)?,
        Command::Evolve(c) => config(ExperimentKind::Evolve, c)?,
    };
    let outcome = run(&cfg)?;
    println!("{} {}: {}", outcome.kind.tag(), if outcome.passed { "PASS" } else { "FAIL" }, outcome.summary);
    for a in &outcome.artifacts {
        println!("  {}", a.display());
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("sectlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
