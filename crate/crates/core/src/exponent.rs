//! Error-exponent solver.
//!
//! `psi(l) = 1 - log2((2p)^l + (2pbar)^l)` is concave with `psi(0) = psi(1) = 0`.
//! Its conjugate `psi*(b) = sup_{0 < l <= 1} psi(l) - l b` is nonincreasing and
//! convex, which makes both fixed-point equations below monotone in their
//! unknown and solvable by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logmath::log2_add;

/// Tolerances of the solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Bound on the reported fixed-point residual.
    pub root: f64,
    /// Width of the final golden-section bracket in `lambda`.
    pub line: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { root: 1e-9, line: 1e-12 }
    }
}

/// Value and maximizer of the conjugate at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conjugate {
    pub value: f64,
    pub lambda: f64,
    /// The unconstrained maximizer lies beyond `lambda = 1`.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSolution {
    pub n: u64,
    pub p: f64,
    pub beta: f64,
    pub lambda_star: f64,
    /// `|beta - (psi*(beta) - 1/n)|`.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub p: f64,
    pub eta: f64,
    pub rate: f64,
    /// `|psi*(eta R) - (eta + 1) R|`.
    pub residual: f64,
}

/// Both minimands of the stabilizable log-gain bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBound {
    /// `1/n`, the one-bit-per-budget quantization limit.
    pub rate_limit: f64,
    /// `beta(n) / eta`, or zero without a positive exponent.
    pub exponent_limit: f64,
    pub log_alpha: f64,
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("crossover probability {p} outside (0, 1/2]")))
    }
}

/// `psi(lambda)` for BSC(p), in bits.
pub fn psi(lambda: f64, p: f64) -> f64 {
    let a = (2.0 * p).log2();
    let b = (2.0 * (1.0 - p)).log2();
    1.0 - log2_add(lambda * a, lambda * b)
}

/// `psi'(lambda)`.
pub fn psi_derivative(lambda: f64, p: f64) -> f64 {
    let a = (2.0 * p).log2();
    let b = (2.0 * (1.0 - p)).log2();
    // weight of the 2p term in the log-sum
    let w = 1.0 / (1.0 + (lambda * (b - a)).exp2());
    -(w * a + (1.0 - w) * b)
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// `C(p) = 1 - h(p)`.
pub fn capacity(p: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Domain(format!("crossover probability {p} outside [0, 1/2]")));
    }
    Ok(1.0 - binary_entropy(p))
}

/// Golden-section maximizer of a unimodal function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    // endpoints are candidates too: the maximizer may sit on the boundary
    [(lo, f(lo)), (hi, f(hi)), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((lo, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// Bisection for the root of a decreasing function on `[lo, hi]`.
fn bisect_decreasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v.abs() <= tol * 1e-3 || hi - lo <= f64::EPSILON * hi.abs().max(1e-300) {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stateless solver parameterized by its tolerances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExponentSolver {
    pub tol: SolverTolerances,
}

impl ExponentSolver {
    pub fn new(tol: SolverTolerances) -> Self {
        Self { tol }
    }

    pub fn psi_star(&self, beta: f64, p: f64) -> Result<Conjugate> {
        check_p(p)?;
        if !(beta >= 0.0) {
            return Err(Error::Domain(format!("conjugate evaluated at negative point {beta}")));
        }
        let (lambda, value) = golden_max(|l| psi(l, p) - l * beta, 0.0, 1.0, self.tol.line);
        let clamped = lambda >= 1.0 - self.tol.line && psi_derivative(1.0, p) - beta > 0.0;
        Ok(Conjugate {
            value: value.max(0.0),
            lambda,
            clamped,
        })
    }

    pub fn beta_of_n(&self, n: u64, p: f64) -> Result<ExponentSolution> {
        check_p(p)?;
        if n == 0 {
            return Err(Error::Domain("budget n must be at least 1".into()));
        }
        let inv_n = 1.0 / n as f64;
        let top = self.psi_star(0.0, p)?.value;
        if top <= inv_n {
            return Err(Error::NoPositiveExponent { p, budget: Some(n) });
        }
        let g = |b: f64| self.psi_star(b, p).map(|c| c.value).unwrap_or(0.0) - b - inv_n;
        let beta = bisect_decreasing(g, 0.0, top, self.tol.root);
        let conj = self.psi_star(beta, p)?;
        let residual = (beta - (conj.value - inv_n)).abs();
        if residual > self.tol.root || beta <= 0.0 {
            return Err(Error::NoPositiveExponent { p, budget: Some(n) });
        }
        Ok(ExponentSolution {
            n,
            p,
            beta,
            lambda_star: conj.lambda,
            residual,
        })
    }

    pub fn rate_bound(&self, p: f64, eta: f64) -> Result<RateBound> {
        check_p(p)?;
        if !(eta >= 1.0) {
            return Err(Error::Domain(format!("moment order {eta} below 1")));
        }
        let top = self.psi_star(0.0, p)?.value;
        if top <= 0.0 {
            return Err(Error::NoPositiveExponent { p, budget: None });
        }
        let phi = |r: f64| self.psi_star(eta * r, p).map(|c| c.value).unwrap_or(0.0) - (eta + 1.0) * r;
        let rate = bisect_decreasing(phi, 0.0, top, self.tol.root);
        let residual = phi(rate).abs();
        if residual > self.tol.root || rate <= 0.0 {
            return Err(Error::NoPositiveExponent { p, budget: None });
        }
        Ok(RateBound { p, eta, rate, residual })
    }

    pub fn max_log_alpha(&self, n: u64, eta: f64, p: f64) -> Result<AlphaBound> {
        if !(eta >= 1.0) {
            return Err(Error::Domain(format!("moment order {eta} below 1")));
        }
        let rate_limit = 1.0 / n.max(1) as f64;
        let exponent_limit = match self.beta_of_n(n, p) {
            Ok(sol) => sol.beta / eta,
            Err(Error::NoPositiveExponent { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(AlphaBound {
            rate_limit,
            exponent_limit,
            log_alpha: rate_limit.min(exponent_limit),
        })
    }

    /// `lambda*(n)` when a positive exponent exists; otherwise the maximizer
    /// of `psi`.
    pub fn default_lambda(&self, n: u64, p: f64) -> Result<f64> {
        match self.beta_of_n(n, p) {
            Ok(sol) => Ok(sol.lambda_star),
            Err(Error::NoPositiveExponent { .. }) => Ok(self.psi_star(0.0, p)?.lambda),
            Err(e) => Err(e),
        }
    }
}

pub fn psi_star(beta: f64, p: f64) -> Result<Conjugate> {
    ExponentSolver::default().psi_star(beta, p)
}

pub fn beta_of_n(n: u64, p: f64) -> Result<ExponentSolution> {
    ExponentSolver::default().beta_of_n(n, p)
}

pub fn rate_bound(p: f64, eta: f64) -> Result<RateBound> {
    ExponentSolver::default().rate_bound(p, eta)
}

pub fn max_log_alpha(n: u64, eta: f64, p: f64) -> Result<AlphaBound> {
    ExponentSolver::default().max_log_alpha(n, eta, p)
}

pub fn default_lambda(n: u64, p: f64) -> Result<f64> {
    ExponentSolver::default().default_lambda(n, p)
}

/// `kappa 2^{-beta (t - n (j - 1))}`.
pub fn error_bound(t: f64, j: u64, n: u64, beta: f64, kappa: f64) -> f64 {
    let elapsed = t - (n * j.saturating_sub(1)) as f64;
    kappa * (-beta * elapsed).exp2()
}

/// Prefix-error bound for periodic arrivals with `beta = beta(n)`.
pub fn theoretical_error_curve(t: u64, j: u64, n: u64, p: f64, kappa: f64) -> Result<f64> {
    if j > t / n.max(1) {
        return Err(Error::Domain(format!("prefix {j} has not fully arrived by t = {t}")));
    }
    let sol = beta_of_n(n, p)?;
    Ok(error_bound(t as f64, j, n, sol.beta, kappa))
}

/// Least-squares `log2 kappa` for `log2 y = log2 kappa - beta x` with the
/// slope held at `-beta`; points with `y = 0` are skipped.
pub fn fit_log_kappa(points: &[(f64, f64)], beta: f64) -> Option<f64> {
    let vals: Vec<f64> = points
        .iter()
        .filter(|(_, y)| *y > 0.0)
        .map(|(x, y)| y.log2() + beta * x)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Least-squares slope of `log2 y` against `x`; points with `y = 0` are skipped.
pub fn fit_log2_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(_, y)| *y > 0.0).map(|(x, y)| (*x, y.log2())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense grid over `lambda in [1e-6, 1]`.
    fn grid_conjugate(beta: f64, p: f64, points: usize) -> (f64, f64) {
        (0..points)
            .map(|i| {
                let l = 1e-6 + (1.0 - 1e-6) * i as f64 / (points - 1) as f64;
                (l, psi(l, p) - l * beta)
            })
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    #[test]
    fn psi_endpoints() {
        for p in [0.01, 0.1, 0.25, 0.45] {
            assert!(psi(0.0, p).abs() < 1e-12);
            assert!(psi(1.0, p).abs() < 1e-12);
            assert!(psi(0.5, p) > 0.0);
        }
        let expected = 1.0 - (0.5f64.sqrt() + 1.5f64.sqrt()).log2();
        assert!((psi(0.5, 0.25) - expected).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for l in [0.1, 0.5, 0.9] {
            let h = 1e-6;
            let fd = (psi(l + h, 0.1) - psi(l - h, 0.1)) / (2.0 * h);
            assert!((psi_derivative(l, 0.1) - fd).abs() < 1e-8);
        }
        // the slope at one is minus the capacity, so the box never binds
        assert!((psi_derivative(1.0, 0.1) + capacity(0.1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn conjugate_matches_grid_search() {
        for (beta, p) in [(0.1, 0.1), (0.0, 0.1), (0.05, 0.2), (0.3, 0.01)] {
            let c = psi_star(beta, p).unwrap();
            let (_, grid) = grid_conjugate(beta, p, 1_000_001);
            assert!((c.value - grid).abs() < 1e-8, "beta {beta} p {p}: {} vs {grid}", c.value);
            assert!(!c.clamped);
        }
    }

    #[test]
    fn conjugate_limits() {
        let c = psi_star(0.2, 0.5).unwrap();
        assert!(c.value.abs() < 1e-15);
        let c = psi_star(50.0, 0.1).unwrap();
        assert!(c.value < 1e-6);
        assert!(c.lambda < 1e-6);
    }

    #[test]
    fn beta_values() {
        let b = beta_of_n(10, 0.1).unwrap();
        assert!((b.beta - 0.04306).abs() < 1e-4);
        assert!((b.lambda_star - 0.427).abs() < 2e-3);
        assert!(b.residual <= 1e-9);
        let b = beta_of_n(5, 0.05).unwrap();
        assert!((b.beta - 0.0305).abs() < 1e-4);
        assert!(matches!(beta_of_n(5, 0.1), Err(Error::NoPositiveExponent { .. })));
        assert!(matches!(beta_of_n(40, 0.5), Err(Error::NoPositiveExponent { .. })));
        assert!(beta_of_n(0, 0.1).is_err());
    }

    #[test]
    fn rate_bound_values_and_limits() {
        let r = rate_bound(0.1, 2.0).unwrap();
        assert!((r.rate - 0.0420).abs() < 1e-4);
        assert!(r.residual <= 1e-9);
        assert!(r.rate < capacity(0.1).unwrap());
        // R -> 1/(eta + 1) as p -> 0, but only logarithmically fast in p
        let r6 = rate_bound(1e-6, 2.0).unwrap().rate;
        let r12 = rate_bound(1e-12, 2.0).unwrap().rate;
        let r300 = rate_bound(1e-300, 2.0).unwrap().rate;
        assert!((r6 - 0.20984).abs() < 1e-4);
        assert!(r6 < r12 && r12 < r300 && r300 < 1.0 / 3.0);
        assert!(1.0 / 3.0 - r300 < 0.02, "{r300}");
        assert!(matches!(rate_bound(0.5, 2.0), Err(Error::NoPositiveExponent { .. })));
    }

    #[test]
    fn capacity_values() {
        assert_eq!(capacity(0.0).unwrap(), 1.0);
        assert_eq!(capacity(0.5).unwrap(), 0.0);
        assert!((capacity(0.11).unwrap() - 0.5).abs() < 0.01);
        assert!(capacity(0.6).is_err());
    }

    #[test]
    fn alpha_bound_minimands() {
        let a = max_log_alpha(10, 2.0, 0.05).unwrap();
        assert_eq!(a.rate_limit, 0.1);
        assert!(a.exponent_limit > 0.0 && a.log_alpha == a.exponent_limit);
        let a = max_log_alpha(3, 2.0, 0.1).unwrap();
        assert_eq!(a.exponent_limit, 0.0);
        assert_eq!(a.log_alpha, 0.0);
        let a = max_log_alpha(20, 2.0, 0.499).unwrap();
        assert_eq!(a.log_alpha, 0.0);
    }

    #[test]
    fn default_lambda_falls_back_to_psi_maximizer() {
        let l = default_lambda(5, 0.1).unwrap();
        let (grid_l, _) = grid_conjugate(0.0, 0.1, 100_001);
        assert!((l - grid_l).abs() < 1e-4);
        assert_eq!(default_lambda(10, 0.1).unwrap(), beta_of_n(10, 0.1).unwrap().lambda_star);
    }

    #[test]
    fn error_curve_shape() {
        assert_eq!(error_bound(5.0, 2, 5, 0.3, 2.0), 2.0);
        let a = error_bound(10.0, 1, 5, 0.1, 1.0);
        let b = error_bound(20.0, 1, 5, 0.1, 1.0);
        assert!((a * a - b).abs() < 1e-15);
        assert!(theoretical_error_curve(60, 1, 10, 0.1, 1.0).is_ok());
        assert!(theoretical_error_curve(9, 1, 10, 0.1, 1.0).is_err());
    }

    #[test]
    fn fits_recover_synthetic_lines() {
        let pts: Vec<(f64, f64)> = (0..20).map(|t| (t as f64, 3.0 * (-0.2 * t as f64).exp2())).collect();
        assert!((fit_log2_slope(&pts).unwrap() + 0.2).abs() < 1e-12);
        assert!((fit_log_kappa(&pts, 0.2).unwrap() - 3f64.log2()).abs() < 1e-12);
        assert_eq!(fit_log2_slope(&[(1.0, 0.0), (2.0, 0.5)]), None);
    }

    proptest! {
        #[test]
        fn psi_positive_inside(l in 0.001f64..0.999, p in 0.001f64..0.499) {
            prop_assert!(psi(l, p) > 0.0);
        }

        #[test]
        fn conjugate_nonincreasing_and_convex(p in 0.01f64..0.45, b in 0.0f64..0.5, h in 0.001f64..0.05) {
            let f = |x: f64| psi_star(x, p).unwrap().value;
            prop_assert!(f(b + h) <= f(b) + 1e-12);
            prop_assert!(f(b) + f(b + 2.0 * h) - 2.0 * f(b + h) >= -1e-10);
        }
    }
}
