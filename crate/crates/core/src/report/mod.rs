//! Experiment configuration, provenance sidecars and table output.
//!
//! Configs and states are JSON, tables are CSV. Every artifact `name.csv` or
//! `name.json` gets a `name.meta.json` sidecar carrying the config hash,
//! seed, grid, norm surrogate and the property the run exercises. Nothing
//! time-dependent is written, so reruns are byte-identical.

use crate::grid::{GridError, PeriodicGrid, Scheme};
use crate::resolvent::{LambdaGrid, Surrogate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("config field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

fn schema(field: &str, message: impl Into<String>) -> ReportError {
    ReportError::Schema { field: field.to_string(), message: message.into() }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CheckAdmissible,
    Sweep,
    FitSector,
    Green,
    Parametrix,
    Evolve,
    Flow,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::CheckAdmissible,
        ExperimentKind::Sweep,
        ExperimentKind::FitSector,
        ExperimentKind::Green,
        ExperimentKind::Parametrix,
        ExperimentKind::Evolve,
        ExperimentKind::Flow,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::CheckAdmissible => "check-admissible",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::FitSector => "fit-sector",
            ExperimentKind::Green => "green",
            ExperimentKind::Parametrix => "parametrix",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Flow => "flow",
        }
    }

    /// The property a run of this kind exercises.
    pub fn claim(self) -> &'static str {
        match self {
            ExperimentKind::CheckAdmissible => "strong ellipticity implies the symbol resolvent bound off a cone",
            ExperimentKind::Sweep => "|lambda| ||R(lambda)|| stays bounded on a left half-plane line",
            ExperimentKind::FitSector => "a half-plane resolvent bound extends to a sector",
            ExperimentKind::Green => "the frozen-coefficient Green function decays exponentially",
            ExperimentKind::Parametrix => "parametrix residuals vanish to order K+1 in eps",
            ExperimentKind::Evolve => "the contour integral of the resolvent is an analytic semigroup",
            ExperimentKind::Flow => "the linearly implicit scheme converges and depends continuously on data",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.tag() == s).ok_or_else(|| {
            format!("unknown experiment kind '{s}' (expected one of {})", Self::ALL.map(|k| k.tag()).join(", "))
        })
    }
}

fn default_length() -> f64 {
    2.0 * PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Number of resolved leading axes; all axes when absent.
    #[serde(default)]
    pub varying: Option<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<PeriodicGrid, GridError> {
        PeriodicGrid::reduced(self.dim, self.n, self.length, self.varying.unwrap_or(self.dim))
    }

    pub fn of(grid: &PeriodicGrid) -> Self {
        let varying = grid.varying_axes();
        Self {
            dim: grid.dim(),
            n: grid.points_per_axis(),
            length: grid.length(),
            varying: (varying != grid.dim()).then_some(varying),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Linear-solve tolerance.
    #[serde(default = "Tolerances::default_solve")]
    pub solve: f64,
    /// Slack in certified bounds such as `|λ|‖R(λ)‖ ≤ bound`.
    #[serde(default = "Tolerances::default_bound")]
    pub bound: f64,
    /// Contour error estimate above which an evolution counts as failed.
    #[serde(default = "Tolerances::default_contour")]
    pub contour: f64,
}

impl Tolerances {
    fn default_solve() -> f64 {
        1e-10
    }
    fn default_bound() -> f64 {
        1e-10
    }
    fn default_contour() -> f64 {
        1e-6
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { solve: Self::default_solve(), bound: Self::default_bound(), contour: Self::default_contour() }
    }
}

fn default_operator() -> String {
    "laplacian".into()
}
fn default_surrogate() -> String {
    "l2".into()
}
fn default_probes() -> usize {
    200
}

/// One experiment. Kind-specific knobs without a dedicated field live in `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub grid: GridSpec,
    #[serde(default)]
    pub scheme: Scheme,
    /// `laplacian`, `bilaplacian`, `divergence` or the path of a symbol file.
    #[serde(default = "default_operator")]
    pub operator: String,
    #[serde(default)]
    pub lambdas: Option<String>,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub zeta: Option<[f64; 2]>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_surrogate")]
    pub surrogate: String,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

pub const BUILTIN_OPERATORS: [&str; 3] = ["laplacian", "bilaplacian", "divergence"];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, grid: GridSpec, out: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            grid,
            scheme: Scheme::default(),
            operator: default_operator(),
            lambdas: None,
            eps: None,
            zeta: None,
            times: None,
            surrogate: default_surrogate(),
            probes: default_probes(),
            seed: 0,
            out: out.into(),
            tolerances: Tolerances::default(),
            params: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // A missing field is reported at its parent, so append its name.
            let named = msg.split('`').nth(1).filter(|_| msg.starts_with("missing field"));
            let field = match (path.as_str(), named) {
                (".", Some(f)) => f.to_string(),
                (p, Some(f)) => format!("{p}.{f}"),
                (".", None) => "<root>".to_string(),
                (p, None) => p.to_string(),
            };
            ReportError::Schema { field, message: msg }
        })
    }

    /// Reads and validates a config; relative operator paths resolve against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let mut cfg = Self::from_json(&text)?;
        if !BUILTIN_OPERATORS.contains(&cfg.operator.as_str()) {
            let p = Path::new(&cfg.operator);
            if p.is_relative() {
                if let Some(base) = path.parent() {
                    cfg.operator = base.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        self.grid.build().map_err(|e| schema("grid", e.to_string()))?;
        if !BUILTIN_OPERATORS.contains(&self.operator.as_str()) && !Path::new(&self.operator).is_file() {
            return Err(schema("operator", format!("'{}' is neither a builtin ({}) nor an existing file", self.operator, BUILTIN_OPERATORS.join(", "))));
        }
        self.surrogate().map_err(|e| schema("surrogate", e))?;
        if let Some(spec) = &self.lambdas {
            spec.parse::<LambdaGrid>().map_err(|e| schema("lambdas", e.to_string()))?;
        }
        if let Some(eps) = &self.eps {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                return Err(schema("eps", "values must lie in (0, 1]"));
            }
        }
        if let Some(times) = &self.times {
            if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                return Err(schema("times", "values must be finite and non-negative"));
            }
        }
        for (name, v) in [("solve", self.tolerances.solve), ("bound", self.tolerances.bound), ("contour", self.tolerances.contour)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(schema(&format!("tolerances.{name}"), "must be positive"));
            }
        }
        let required: &[(&str, bool)] = match self.kind {
            ExperimentKind::Sweep | ExperimentKind::FitSector => &[("lambdas", self.lambdas.is_some())],
            ExperimentKind::Parametrix => &[("eps", self.eps.is_some())],
            ExperimentKind::Evolve => &[("times", self.times.is_some())],
            _ => &[],
        };
        for (field, present) in required {
            if !present {
                return Err(schema(field, format!("required for kind '{}'", self.kind.tag())));
            }
        }
        Ok(())
    }

    /// Surrogate with the configured probe count and seed.
    pub fn surrogate(&self) -> Result<Surrogate, String> {
        match self.surrogate.parse::<Surrogate>().map_err(|e| e.to_string())? {
            Surrogate::Holder(mut h) => {
                h.probes = self.probes;
                h.seed = self.seed;
                if let Some(a) = self.param_f64("alpha") {
                    h.alpha = a;
                }
                Ok(Surrogate::Holder(h))
            }
            s => Ok(s),
        }
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(|v| v.as_f64())
    }
    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(|v| v.as_u64())
    }
    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(|v| v.as_str())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = value.as_object_mut() {
            m.remove("out");
        }
        let bytes = serde_json::to_vec(&value).expect("config serializes");
        hex_digest(&bytes)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            kind: self.kind,
            claim: self.kind.claim().to_string(),
            seed: self.seed,
            grid: self.grid.clone(),
            scheme: self.scheme,
            surrogate: self.surrogate().map(|s| s.to_string()).unwrap_or_else(|_| self.surrogate.clone()),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar metadata attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub claim: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub scheme: Scheme,
    pub surrogate: String,
    pub version: String,
}

/// Fixed-width scientific format used for every float in a table.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.17e}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| ReportError::Serialize(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| ReportError::Serialize(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ReportError::Serialize(e.to_string()))
    }
}

fn sidecar(dir: &Path, stem: &str, prov: &Provenance) -> Result<PathBuf, ReportError> {
    let path = dir.join(format!("{stem}.meta.json"));
    let text = serde_json::to_string_pretty(prov).map_err(|e| ReportError::Serialize(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

/// Writes `dir/stem.csv` and its sidecar; returns the CSV path.
pub fn write_table(dir: &Path, stem: &str, table: &Table, prov: &Provenance) -> Result<PathBuf, ReportError> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{stem}.csv"));
    std::fs::write(&path, table.to_csv()?).map_err(io(&path))?;
    sidecar(dir, stem, prov)?;
    Ok(path)
}

/// Writes `dir/stem.json` and its sidecar; returns the JSON path.
pub fn write_json<T: Serialize>(dir: &Path, stem: &str, value: &T, prov: &Provenance) -> Result<PathBuf, ReportError> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(value).map_err(|e| ReportError::Serialize(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io(&path))?;
    sidecar(dir, stem, prov)?;
    Ok(path)
}

/// Artifact stem plus its provenance, as collected by [`collect_sidecars`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub artifact: String,
    pub provenance: Provenance,
}

/// Every sidecar under `dir`, sorted by artifact name.
pub fn collect_sidecars(dir: &Path) -> Result<Vec<ArtifactEntry>, ReportError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(io(&d))? {
            let path = entry.map_err(io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(stem) = name.strip_suffix(".meta.json") {
                let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                let provenance: Provenance = serde_json::from_str(&text).map_err(|e| schema(name, e.to_string()))?;
                let rel = path.parent().and_then(|p| p.strip_prefix(dir).ok()).unwrap_or(Path::new(""));
                out.push(ArtifactEntry { artifact: rel.join(stem).to_string_lossy().into_owned(), provenance });
            }
        }
    }
    out.sort_by(|a, b| a.artifact.cmp(&b.artifact));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"kind":"sweep","grid":{"dim":2,"n":16},"lambdas":"vline:re=-1,imax=10,n=4","out":"o"}"#
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        assert_eq!(c.operator, "laplacian");
        assert_eq!(c.probes, 200);
        assert_eq!(c.grid.length, 2.0 * PI);
        assert_eq!(c.tolerances, Tolerances::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_field_names_the_field() {
        let text = minimal().replace("\"out\"", "\"bogus\":1,\"out\"");
        match ExperimentConfig::from_json(&text) {
            Err(ReportError::Schema { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_a_schema_error() {
        let text = minimal().replace("sweep", "heatmap");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ReportError::Schema { field, .. }) if field == "kind"));
        let text = minimal().replace("\"n\":16", "\"n\":16,\"m\":1");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ReportError::Schema { field, .. }) if field == "grid.m"));
        let text = minimal().replace("\"n\":16", "\"n\":\"x\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ReportError::Schema { field, .. }) if field == "grid.n"));
        assert!("heatmap".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn kind_specific_fields_are_required() {
        let mut c = ExperimentConfig::from_json(minimal()).unwrap();
        c.lambdas = None;
        match c.validate() {
            Err(ReportError::Schema { field, .. }) => assert_eq!(field, "lambdas"),
            other => panic!("{other:?}"),
        }
        c.lambdas = Some("vline:re=-1".into());
        assert!(matches!(c.validate(), Err(ReportError::Schema { field, .. }) if field == "lambdas"));
    }

    #[test]
    fn missing_operator_file_is_rejected() {
        let mut c = ExperimentConfig::from_json(minimal()).unwrap();
        c.operator = "/nonexistent/symbol.json".into();
        assert!(matches!(c.validate(), Err(ReportError::Schema { field, .. }) if field == "operator"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json(minimal()).unwrap();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        // Known digest of the empty input.
        assert_eq!(hex_digest(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn holder_surrogate_picks_up_probes_and_seed() {
        let mut c = ExperimentConfig::from_json(minimal()).unwrap();
        c.surrogate = "holder".into();
        c.probes = 12;
        c.seed = 7;
        match c.surrogate().unwrap() {
            Surrogate::Holder(h) => assert_eq!((h.probes, h.seed), (12, 7)),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn tables_and_sidecars_round_trip() {
        let dir = std::env::temp_dir().join(format!("sectorlab-report-{}", std::process::id()));
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![num(0.5), num(f64::NAN)]);
        let p = write_table(&dir, "tab", &t, &c.provenance()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "x,y\n5.00000000000000000e-1,nan\n");
        write_json(&dir.join("sub"), "state", &vec![1.0, 2.0], &c.provenance()).unwrap();
        let entries = collect_sidecars(&dir).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].artifact, "sub/state");
        assert_eq!(entries[1].provenance.config_hash, c.hash());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
