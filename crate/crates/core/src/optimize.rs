//! Deterministic box-constrained minimization in three variables.
//!
//! A 5x5x5 grid spanning the box (endpoints included) is scanned, Nelder-Mead
//! is started from the three best grid nodes, and the best local solution is
//! polished with projected Newton steps on a finite-difference quadratic
//! model. Every vertex is clamped into the box, so bounds hold exactly.

use nalgebra::{Matrix3, Vector3};

pub(crate) const GRID_PER_AXIS: usize = 5;
pub(crate) const N_STARTS: usize = 10;
pub(crate) const MAX_ITERATIONS: usize = 500;
const X_TOL: f64 = 1e-11;
const F_TOL: f64 = 1e-15;
const NEWTON_STEPS: usize = 8;
const FD_REL_STEP: f64 = 1e-5;
const SNAP_REL: f64 = 1e-7;
const NOISE_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bounds {
    fn width(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]).max(1e-12)
    }

    fn clamp(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| x[k].clamp(self.lo[k], self.hi[k]))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Solution {
    pub x: [f64; 3],
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective wrapper that maps NaN to +inf.
fn eval<F: Fn(&[f64; 3]) -> f64>(f: &F, x: &[f64; 3]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub(crate) fn minimize<F: Fn(&[f64; 3]) -> f64>(f: &F, bounds: &Bounds) -> Solution {
    let mut grid: Vec<([f64; 3], f64)> = Vec::with_capacity(GRID_PER_AXIS.pow(3));
    let node = |k: usize, i: usize| {
        bounds.lo[k] + (bounds.hi[k] - bounds.lo[k]) * i as f64 / (GRID_PER_AXIS - 1) as f64
    };
    for i in 0..GRID_PER_AXIS {
        for j in 0..GRID_PER_AXIS {
            for l in 0..GRID_PER_AXIS {
                let x = [node(0, i), node(1, j), node(2, l)];
                grid.push((x, eval(f, &x)));
            }
        }
    }
    // stable sort keeps grid order among ties
    grid.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut best: Option<Solution> = None;
    for (start, _) in grid.iter().take(N_STARTS) {
        let s = nelder_mead(f, bounds, *start);
        if best.map_or(true, |b| s.f < b.f) {
            best = Some(s);
        }
    }
    let best = best.expect("start grid is never empty");
    snap_to_bounds(f, bounds, newton_polish(f, bounds, best))
}

/// Moves coordinates lying within a hair of a bound onto it when that does
/// not raise the objective beyond rounding.
fn snap_to_bounds<F: Fn(&[f64; 3]) -> f64>(f: &F, bounds: &Bounds, mut sol: Solution) -> Solution {
    for k in 0..3 {
        for target in [bounds.lo[k], bounds.hi[k]] {
            if sol.x[k] != target && (sol.x[k] - target).abs() <= SNAP_REL * bounds.width(k) {
                let mut x = sol.x;
                x[k] = target;
                let fx = eval(f, &x);
                if fx <= sol.f + F_TOL * (1.0 + sol.f.abs()) {
                    sol.x = x;
                    sol.f = fx.min(sol.f);
                }
            }
        }
    }
    sol
}

/// Local Nelder-Mead search from `start`.
pub(crate) fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(f: &F, bounds: &Bounds, start: [f64; 3]) -> Solution {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, eval(f, &start)));
    for k in 0..3 {
        let mut x = start;
        let step = 0.1 * bounds.width(k);
        x[k] = if x[k] + step <= bounds.hi[k] { x[k] + step } else { x[k] - step };
        let x = bounds.clamp(x);
        simplex.push((x, eval(f, &x)));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[3].1;
        let size = (1..4)
            .map(|i| {
                (0..3)
                    .map(|k| ((simplex[i].0[k] - simplex[0].0[k]) / bounds.width(k)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size < X_TOL && (f_worst - f_best).abs() <= F_TOL * (1.0 + f_best.abs()) {
            converged = true;
            break;
        }
        if size < X_TOL * 1e-3 {
            // collapsed simplex with no further progress possible
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: [f64; 3] =
            std::array::from_fn(|k| (simplex[0].0[k] + simplex[1].0[k] + simplex[2].0[k]) / 3.0);
        let toward = |t: f64| -> [f64; 3] {
            bounds.clamp(std::array::from_fn(|k| centroid[k] + t * (simplex[3].0[k] - centroid[k])))
        };
        let xr = toward(-1.0);
        let fr = eval(f, &xr);
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = eval(f, &xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let x = toward(-0.5);
                (x, eval(f, &x))
            } else {
                let x = toward(0.5);
                (x, eval(f, &x))
            };
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = bounds.clamp(std::array::from_fn(|k| x0[k] + 0.5 * (v.0[k] - x0[k])));
                    *v = (x, eval(f, &x));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Solution { x: simplex[0].0, f: simplex[0].1, iterations, converged }
}

/// Offsets (in steps) and weights of a first-derivative stencil that stays
/// inside the box: fourth order in the interior, second order at a bound.
fn first_stencil(x: f64, h: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    if x - h < lo {
        vec![(0.0, -1.5), (1.0, 2.0), (2.0, -0.5)]
    } else if x + h > hi {
        vec![(0.0, 1.5), (-1.0, -2.0), (-2.0, 0.5)]
    } else if x - 2.0 * h < lo || x + 2.0 * h > hi {
        vec![(-1.0, -0.5), (1.0, 0.5)]
    } else {
        vec![(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)]
    }
}

/// Second-order stencil used for the mixed Hessian entries.
fn mixed_stencil(x: f64, h: f64, lo: f64, hi: f64) -> [(f64, f64); 2] {
    if x - h < lo {
        [(0.0, -1.0), (1.0, 1.0)]
    } else if x + h > hi {
        [(-1.0, -1.0), (0.0, 1.0)]
    } else {
        [(-1.0, -0.5), (1.0, 0.5)]
    }
}

fn second_stencil(x: f64, h: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    if x - h < lo {
        vec![(0.0, 2.0), (1.0, -5.0), (2.0, 4.0), (3.0, -1.0)]
    } else if x + h > hi {
        vec![(0.0, 2.0), (-1.0, -5.0), (-2.0, 4.0), (-3.0, 1.0)]
    } else {
        vec![(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)]
    }
}

/// Finite-difference gradient and Hessian with one-sided stencils at bounds.
pub(crate) fn fd_gradient_hessian<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    bounds: &Bounds,
    x: [f64; 3],
) -> (Vector3<f64>, Matrix3<f64>) {
    let h: [f64; 3] = std::array::from_fn(|k| FD_REL_STEP * bounds.width(k));
    let at = |offs: [f64; 3]| -> f64 {
        let p: [f64; 3] = std::array::from_fn(|k| x[k] + offs[k] * h[k]);
        eval(f, &p)
    };
    let mut g = Vector3::zeros();
    let mut hess = Matrix3::zeros();
    for k in 0..3 {
        let st = first_stencil(x[k], h[k], bounds.lo[k], bounds.hi[k]);
        let mut acc = 0.0;
        for (o, w) in st {
            if w != 0.0 {
                let mut offs = [0.0; 3];
                offs[k] = o;
                acc += w * at(offs);
            }
        }
        g[k] = acc / h[k];
        let st2 = second_stencil(x[k], h[k], bounds.lo[k], bounds.hi[k]);
        let mut acc = 0.0;
        for (o, w) in st2 {
            let mut offs = [0.0; 3];
            offs[k] = o;
            acc += w * at(offs);
        }
        hess[(k, k)] = acc / (h[k] * h[k]);
    }
    for k in 0..3 {
        for l in (k + 1)..3 {
            let sk = mixed_stencil(x[k], h[k], bounds.lo[k], bounds.hi[k]);
            let sl = mixed_stencil(x[l], h[l], bounds.lo[l], bounds.hi[l]);
            let mut acc = 0.0;
            for (ok, wk) in sk {
                for (ol, wl) in sl {
                    let mut offs = [0.0; 3];
                    offs[k] = ok;
                    offs[l] = ol;
                    acc += wk * wl * at(offs);
                }
            }
            let v = acc / (h[k] * h[l]);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }
    (g, hess)
}

/// Projected Newton refinement on the local quadratic model.
fn newton_polish<F: Fn(&[f64; 3]) -> f64>(f: &F, bounds: &Bounds, mut sol: Solution) -> Solution {
    for _ in 0..NEWTON_STEPS {
        if !sol.f.is_finite() {
            break;
        }
        let (g, h) = fd_gradient_hessian(f, bounds, sol.x);
        // Coordinates pinned at a bound with the gradient pushing outward stay fixed.
        let free: Vec<usize> = (0..3)
            .filter(|&k| {
                let at_lo = sol.x[k] <= bounds.lo[k] && g[k] > 0.0;
                let at_hi = sol.x[k] >= bounds.hi[k] && g[k] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let n = free.len();
        let hf = nalgebra::DMatrix::from_fn(n, n, |r, c| h[(free[r], free[c])]);
        let gf = nalgebra::DVector::from_fn(n, |r, _| g[free[r]]);
        let Some(step) = hf.clone().cholesky().map(|ch| ch.solve(&gf)) else {
            break;
        };
        // Close to the optimum the predicted decrease drops below rounding of
        // the objective; a full step is then taken unless it visibly hurts.
        let predicted = 0.5 * gf.dot(&step);
        let noise = NOISE_REL * (1.0 + sol.f.abs());
        let in_noise = predicted.abs() < noise;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let mut x = sol.x;
            for (r, &k) in free.iter().enumerate() {
                x[k] -= t * step[r];
            }
            let x = bounds.clamp(x);
            let fx = eval(f, &x);
            if fx < sol.f || (in_noise && t == 1.0 && fx <= sol.f + noise) {
                let moved = (0..3).map(|k| ((x[k] - sol.x[k]) / bounds.width(k)).abs()).fold(0.0, f64::max);
                sol.x = x;
                sol.f = fx;
                improved = true;
                if moved < 1e-14 {
                    return sol;
                }
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    sol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let b = Bounds { lo: [-1.0, 0.0, 0.0], hi: [1.0, 3.0, 1.0] };
        let f = |x: &[f64; 3]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 1.1).powi(2) + 5.0 * (x[2] - 0.25).powi(2) + 0.5 * (x[0] - 0.3) * (x[1] - 1.1);
        let s = minimize(&f, &b);
        assert!((s.x[0] - 0.3).abs() < 1e-8);
        assert!((s.x[1] - 1.1).abs() < 1e-8);
        assert!((s.x[2] - 0.25).abs() < 1e-8);
        assert!(s.converged);
    }

    #[test]
    fn respects_bounds_exactly() {
        let b = Bounds { lo: [-1.0, 0.0, 0.0], hi: [1.0, 3.0, 1.0] };
        let f = |x: &[f64; 3]| (x[0] - 0.1).powi(2) + (x[1] + 0.7).powi(2) + (x[2] - 1.4).powi(2);
        let s = minimize(&f, &b);
        assert_eq!(s.x[1], 0.0);
        assert_eq!(s.x[2], 1.0);
        assert!((s.x[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn handles_infinite_regions() {
        let b = Bounds { lo: [-1.0, 0.0, 0.0], hi: [1.0, 3.0, 1.0] };
        let f = |x: &[f64; 3]| if x[1] > 2.0 { f64::INFINITY } else { (x[1] - 1.5).powi(2) + x[0] * x[0] + (x[2] - 0.5).powi(2) };
        let s = minimize(&f, &b);
        assert!((s.x[1] - 1.5).abs() < 1e-8);
    }

    #[test]
    fn fd_hessian_of_quadratic() {
        let b = Bounds { lo: [0.0, 0.0, 0.0], hi: [1.0, 1.0, 1.0] };
        let f = |x: &[f64; 3]| 3.0 * x[0] * x[0] + x[0] * x[1] + 2.0 * x[1] * x[1] + 4.0 * x[2] * x[2] - x[2];
        for x in [[0.5, 0.5, 0.5], [0.0, 1.0, 0.0]] {
            let (g, h) = fd_gradient_hessian(&f, &b, x);
            assert!((g[0] - (6.0 * x[0] + x[1])).abs() < 1e-6);
            assert!((h[(0, 0)] - 6.0).abs() < 1e-3);
            assert!((h[(0, 1)] - 1.0).abs() < 1e-3);
            assert!((h[(2, 2)] - 8.0).abs() < 1e-3);
        }
    }
}
