//! Test-only reference implementations, written without the library's
//! posterior or codec internals.

#![allow(dead_code)]

/// Explicit posterior on a fixed grid of `2^LEVEL` bins, updated with the
/// closed-form CDF ratios directly.
pub struct BinOracle {
    pub p: f64,
    pub lambda: f64,
    pub bins: Vec<f64>,
    pub resolution: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePlan {
    pub k: u64,
    pub at_left_edge: bool,
    pub d1: f64,
    pub d2: f64,
    pub pi1: Option<f64>,
    /// Threshold index on the grid of the current resolution.
    pub threshold: u64,
    pub lower: bool,
}

impl BinOracle {
    pub const LEVEL: u32 = 12;
    pub const EDGE_TOL: f64 = 1e-12;

    pub fn new(p: f64, lambda: f64) -> Self {
        let n = 1usize << Self::LEVEL;
        Self {
            p,
            lambda,
            bins: vec![1.0 / n as f64; n],
            resolution: 0,
        }
    }

    pub fn arrive(&mut self, count: u64) {
        self.resolution += count as u32;
        assert!(self.resolution <= Self::LEVEL, "oracle grid too coarse");
    }

    /// `F(k 2^-LEVEL)` for every `k` in `0..=2^LEVEL`.
    pub fn cdf_grid(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bins.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for m in &self.bins {
            acc += m;
            out.push(acc);
        }
        out
    }

    fn cdf_at_resolution(&self, k: u64) -> f64 {
        let width = 1usize << (Self::LEVEL - self.resolution);
        self.bins[..k as usize * width].iter().sum()
    }

    fn h(&self, d: f64) -> f64 {
        let c = 2.0 * (1.0 - 2.0 * self.p) * d;
        (1.0 - c).powf(-self.lambda) - (1.0 + c).powf(-self.lambda)
    }

    pub fn plan(&self, draw: f64) -> OraclePlan {
        let bins = 1u64 << self.resolution;
        for k in 0..bins {
            let lo = self.cdf_at_resolution(k);
            let hi = self.cdf_at_resolution(k + 1);
            if (lo - 0.5).abs() <= Self::EDGE_TOL {
                return OraclePlan {
                    k,
                    at_left_edge: true,
                    d1: 0.0,
                    d2: hi - 0.5,
                    pi1: None,
                    threshold: k,
                    lower: true,
                };
            }
            if lo < 0.5 && hi > 0.5 + Self::EDGE_TOL {
                let (d1, d2) = (0.5 - lo, hi - 0.5);
                let pi1 = self.h(d2) / (self.h(d1) + self.h(d2));
                let lower = draw < pi1;
                return OraclePlan {
                    k,
                    at_left_edge: false,
                    d1,
                    d2,
                    pi1: Some(pi1),
                    threshold: if lower { k } else { k + 1 },
                    lower,
                };
            }
        }
        panic!("no median bin found");
    }

    /// Applies the CDF ratio to every point left of the threshold and the
    /// complementary ratio to every point right of it.
    pub fn update(&mut self, plan: &OraclePlan, y: bool) -> (f64, f64) {
        let (p, q) = (self.p, 1.0 - self.p);
        let gap = q - p;
        let (left, right) = if plan.lower {
            let d = plan.d1;
            if y {
                (p / (0.5 + gap * d), q / (0.5 + gap * d))
            } else {
                (q / (0.5 - gap * d), p / (0.5 - gap * d))
            }
        } else {
            let d = plan.d2;
            if y {
                (p / (0.5 - gap * d), q / (0.5 - gap * d))
            } else {
                (q / (0.5 + gap * d), p / (0.5 + gap * d))
            }
        };
        let cut = (plan.threshold as usize) << (Self::LEVEL - self.resolution);
        for (i, m) in self.bins.iter_mut().enumerate() {
            *m *= if i < cut { left } else { right };
        }
        (left, right)
    }
}

/// Least-squares slope of `log2 y` against `x`, written out directly.
pub fn log2_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.log2())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
