//! Parsing of λ-grid specifications.
//!
//! A spec is a `;`-separated list of pieces:
//!
//! * `vline:re=-1,imax=1e3,n=40[,spacing=lin|log][,imin=1]`: points on `Re λ = re`
//!   (log spacing puts `n/2` points on each half-line, `|Im λ| ∈ [imin, imax]`)
//! * `ray:omega=-1,angle=2.0,rmin=0.1,rmax=100,n=20`: `ω + r e^{i angle}`, log-spaced `r`
//! * `real:min=-10,max=-0.1,n=10`: evenly spaced real points
//! * `point:re=-1,im=2`: a single point

use super::ResolventError;
use num_complex::Complex64;
use std::collections::HashMap;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub spec: String,
    pub points: Vec<Complex64>,
}

fn err(msg: impl Into<String>) -> ResolventError {
    ResolventError::GridSpec(msg.into())
}

fn params(body: &str) -> Result<HashMap<String, String>, ResolventError> {
    let mut out = HashMap::new();
    for kv in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{kv}'")))?;
        out.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    Ok(out)
}

fn get<T: FromStr>(p: &HashMap<String, String>, key: &str, default: Option<T>) -> Result<T, ResolventError> {
    match p.get(key) {
        Some(v) => v.parse().map_err(|_| err(format!("cannot parse {key}='{v}'"))),
        None => default.ok_or_else(|| err(format!("missing '{key}'"))),
    }
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![b];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn piece(kind: &str, p: &HashMap<String, String>) -> Result<Vec<Complex64>, ResolventError> {
    match kind {
        "vline" => {
            let re: f64 = get(p, "re", None)?;
            let imax: f64 = get(p, "imax", None)?;
            let n: usize = get(p, "n", None)?;
            let spacing: String = get(p, "spacing", Some("lin".to_string()))?;
            if !(imax > 0.0) {
                return Err(err("imax must be positive"));
            }
            match spacing.as_str() {
                "lin" => Ok(linspace(-imax, imax, n).into_iter().map(|im| Complex64::new(re, im)).collect()),
                "log" => {
                    let imin: f64 = get(p, "imin", Some(imax * 1e-3))?;
                    if !(imin > 0.0 && imin < imax) {
                        return Err(err("need 0 < imin < imax"));
                    }
                    let half = logspace(imin, imax, n / 2);
                    let mut pts: Vec<Complex64> = half.iter().rev().map(|&im| Complex64::new(re, -im)).collect();
                    if n % 2 == 1 {
                        pts.push(Complex64::new(re, 0.0));
                    }
                    pts.extend(half.iter().map(|&im| Complex64::new(re, im)));
                    Ok(pts)
                }
                other => Err(err(format!("unknown spacing '{other}'"))),
            }
        }
        "ray" => {
            let omega: f64 = get(p, "omega", Some(0.0))?;
            let angle: f64 = get(p, "angle", None)?;
            let rmin: f64 = get(p, "rmin", None)?;
            let rmax: f64 = get(p, "rmax", None)?;
            let n: usize = get(p, "n", None)?;
            if !(rmin > 0.0 && rmax >= rmin) {
                return Err(err("need 0 < rmin <= rmax"));
            }
            Ok(logspace(rmin, rmax, n).into_iter().map(|r| Complex64::from_polar(r, angle) + omega).collect())
        }
        "real" => {
            let min: f64 = get(p, "min", None)?;
            let max: f64 = get(p, "max", None)?;
            let n: usize = get(p, "n", None)?;
            Ok(linspace(min, max, n).into_iter().map(|x| Complex64::new(x, 0.0)).collect())
        }
        "point" => Ok(vec![Complex64::new(get(p, "re", None)?, get(p, "im", Some(0.0))?)]),
        other => Err(err(format!("unknown piece '{other}'"))),
    }
}

impl FromStr for LambdaGrid {
    type Err = ResolventError;
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let mut points = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (kind, body) = part.split_once(':').ok_or_else(|| err(format!("missing ':' in '{part}'")))?;
            let p = params(body)?;
            let pts = piece(kind.trim(), &p)?;
            if pts.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(err("non-finite point"));
            }
            points.extend(pts);
        }
        Ok(Self { spec: spec.to_string(), points })
    }
}
