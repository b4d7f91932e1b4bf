use super::SymbolError;
use num_complex::Complex64;
use serde::Serialize;

/// Indicial data of `λ - Δ` for the scalar Laplacian of the hyperbolic model
/// `(dx² + dy²)/x²` in dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicialQuery {
    pub n: usize,
    pub lambda: Complex64,
}

impl IndicialQuery {
    pub fn new(n: usize, lambda: Complex64) -> Result<Self, SymbolError> {
        if n < 2 {
            return Err(SymbolError::Invalid(format!("dimension {n} < 2")));
        }
        Ok(Self { n, lambda })
    }

    /// Threshold `(n-1)²/4` (bottom of the continuous spectrum).
    pub fn threshold(&self) -> f64 {
        let a = (self.n as f64 - 1.0) / 2.0;
        a * a
    }
}

/// `ζ_0(λ) = sqrt((n-1)²/4 - λ)`, principal branch.
///
/// With the positive Laplacian `Δ x^γ = γ(n-1-γ) x^γ`, so the indicial
/// equation of `λ - Δ` is `γ² - (n-1)γ + λ = 0`.
pub fn zeta0(n: usize, lambda: Complex64) -> Complex64 {
    let a = (n as f64 - 1.0) / 2.0;
    (Complex64::new(a * a, 0.0) - lambda).sqrt()
}

/// `(γ_-, γ_+) = (n-1)/2 ∓ ζ_0(λ)`.
pub fn indicial_roots(q: IndicialQuery) -> (Complex64, Complex64) {
    let mid = (q.n as f64 - 1.0) / 2.0;
    let z = zeta0(q.n, q.lambda);
    (mid - z, mid + z)
}

/// `δ(B) = inf_{Re λ ≤ -B} Re ζ_0(λ)`: returns the closed form
/// `sqrt((n-1)²/4 + B)` together with the minimum over a sampled line.
pub fn indicial_gap(n: usize, b: f64) -> Result<(f64, f64), SymbolError> {
    let a = (n as f64 - 1.0) / 2.0;
    if a * a + b <= 0.0 {
        return Err(SymbolError::Invalid(format!("half-plane Re λ ≤ {} meets the threshold", -b)));
    }
    let closed = (a * a + b).sqrt();
    let sampled = (-400i32..=400)
        .map(|i| {
            let t = if i == 0 { 0.0 } else { (i as f64).signum() * 10f64.powf((i.abs() as f64) / 100.0 - 2.0) };
            zeta0(n, Complex64::new(-b, t)).re
        })
        .fold(f64::INFINITY, f64::min);
    Ok((closed, sampled))
}

/// Admissible weight exponents `((n-1)/2 - δ, (n-1)/2 + δ)` (open interval).
pub fn weight_interval(n: usize, delta: f64) -> Result<(f64, f64), SymbolError> {
    if !(delta > 0.0) {
        return Err(SymbolError::EmptyInterval(delta));
    }
    let mid = (n as f64 - 1.0) / 2.0;
    Ok((mid - delta, mid + delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Indicial function `(Δ_g x^γ)/x^γ` of the model metric evaluated by a
    /// sixth-order finite difference in `x` at `x = 1` (the y-directions do
    /// not see `x^γ`). Uses `Δ_g = -x^n ∂_x(x^{2-n} ∂_x)`.
    fn indicial_fd(n: usize, gamma: f64) -> f64 {
        let h = 1e-3;
        let nn = n as f64;
        let flux = |x: f64| -> f64 {
            // x^{2-n} ∂_x x^γ evaluated by a centered difference of x^γ
            let f = |s: f64| s.powf(gamma);
            let d = (-f(x + 3.0 * h) + 9.0 * f(x + 2.0 * h) - 45.0 * f(x + h) + 45.0 * f(x - h)
                - 9.0 * f(x - 2.0 * h)
                + f(x - 3.0 * h))
                / (-60.0 * h);
            x.powf(2.0 - nn) * d
        };
        let x = 1.0;
        let dflux = (-flux(x + 3.0 * h) + 9.0 * flux(x + 2.0 * h) - 45.0 * flux(x + h) + 45.0 * flux(x - h)
            - 9.0 * flux(x - 2.0 * h)
            + flux(x - 3.0 * h))
            / (-60.0 * h);
        -x.powf(nn) * dflux
    }

    #[test]
    fn roots_match_numerical_indicial_equation() {
        for n in [2usize, 3, 4, 5] {
            // the indicial function is a quadratic in γ: recover it from samples
            let gs = [-1.0, 0.5, 2.0];
            let vals: Vec<f64> = gs.iter().map(|&g| indicial_fd(n, g)).collect();
            // fit c2 γ² + c1 γ + c0 through three points
            let (g0, g1, g2) = (gs[0], gs[1], gs[2]);
            let (v0, v1, v2) = (vals[0], vals[1], vals[2]);
            let c2 = ((v2 - v0) / (g2 - g0) - (v1 - v0) / (g1 - g0)) / (g2 - g1);
            let c1 = (v1 - v0) / (g1 - g0) - c2 * (g0 + g1);
            let c0 = v0 - c1 * g0 - c2 * g0 * g0;
            assert!((c2 + 1.0).abs() < 1e-6 && (c1 - (n as f64 - 1.0)).abs() < 1e-6 && c0.abs() < 1e-6);
            for lambda in [0.0, -2.5, 0.1] {
                // roots of λ - (c2 γ² + c1 γ + c0) = 0
                let disc = c1 * c1 + 4.0 * c2 * (lambda - c0);
                let r1 = (-c1 + disc.sqrt()) / (2.0 * c2);
                let r2 = (-c1 - disc.sqrt()) / (2.0 * c2);
                let (gm, gp) = indicial_roots(IndicialQuery::new(n, Complex64::new(lambda, 0.0)).unwrap());
                let (lo, hi) = (r1.min(r2), r1.max(r2));
                assert!((gm.re - lo).abs() < 1e-5 && (gp.re - hi).abs() < 1e-5, "n={n} λ={lambda}");
            }
        }
        let (gm, gp) = indicial_roots(IndicialQuery::new(3, Complex64::new(0.0, 0.0)).unwrap());
        assert!((gm - 0.0).norm() < 1e-15 && (gp - 2.0).norm() < 1e-15);
    }

    #[test]
    fn double_root_and_root_sum() {
        let q = IndicialQuery::new(4, Complex64::new(2.25, 0.0)).unwrap();
        let (a, b) = indicial_roots(q);
        assert!((a - 1.5).norm() < 1e-15 && (b - 1.5).norm() < 1e-15);
        for lam in [Complex64::new(-7.0, 3.0), Complex64::new(5.0, -1.0), Complex64::new(0.3, 0.0)] {
            let (a, b) = indicial_roots(IndicialQuery::new(5, lam).unwrap());
            assert!((a + b - 4.0).norm() < 1e-13);
        }
        let z = zeta0(3, Complex64::new(-50.0, 0.0));
        assert!(z.re > 0.0 && z.im == 0.0);
    }

    #[test]
    fn gap_closed_form_matches_samples() {
        for (n, b) in [(2usize, 0.5), (3, 1.0), (4, 0.0)] {
            let (closed, sampled) = indicial_gap(n, b).unwrap();
            assert!((closed - sampled).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_intervals() {
        assert_eq!(weight_interval(4, 1.0).unwrap(), (0.5, 2.5));
        assert_eq!(weight_interval(2, 0.5).unwrap(), (0.0, 1.0));
        assert!(matches!(weight_interval(3, 0.0), Err(SymbolError::EmptyInterval(_))));
        let (a, b) = weight_interval(7, 0.37).unwrap();
        assert!(((a + b) / 2.0 - 3.0).abs() < 1e-15);
    }
}
