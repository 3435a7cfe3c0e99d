//! Composite Gauss-Legendre quadrature on finite windows.
//!
//! Used as the independent numerical route for every analytic overlap and
//! for the direct-detection Fisher integrals.

use std::f64::consts::PI;

/// Nodes per panel of the composite rule.
pub const NODES_PER_PANEL: usize = 16;

/// Panel width in units of the pulse RMS width.
pub const PANEL_WIDTH: f64 = 0.5;

/// Half-width of the integration window around the outermost pulse center,
/// in units of the pulse RMS width.
pub const WINDOW_HALF_WIDTH: f64 = 12.0;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes an `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A composite Gauss-Legendre rule with equal panels on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    points: Vec<(f64, f64)>,
    lo: f64,
    hi: f64,
}

impl CompositeRule {
    /// Builds a rule whose panels are at most `panel` wide.
    pub fn new(lo: f64, hi: f64, panel: f64) -> Self {
        assert!(hi > lo && panel > 0.0);
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        let n_panels = ((hi - lo) / panel).ceil().max(1.0) as usize;
        let h = (hi - lo) / n_panels as f64;
        let mut points = Vec::with_capacity(n_panels * NODES_PER_PANEL);
        for k in 0..n_panels {
            let mid = lo + (k as f64 + 0.5) * h;
            for (x, w) in gl.nodes().iter().zip(gl.weights()) {
                points.push((mid + 0.5 * h * x, 0.5 * h * w));
            }
        }
        Self { points, lo, hi }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points.iter().map(|&(x, w)| w * f(x)).sum()
    }
}
