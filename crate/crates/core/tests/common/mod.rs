//! Reference computations that share no code with the library: explicit
//! Hermite series, trapezoidal integrals on sampled functions, finite
//! differences, and a brute-force SLD solve in the span of the pulse states.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;

/// Trapezoid step in units of sigma. Gaussian integrands converge
/// geometrically in the step, so this is far below the test tolerances.
pub const STEP: f64 = 1.0 / 64.0;

/// Integration margin around the outermost center, in units of sigma.
pub const MARGIN: f64 = 14.0;

/// Sample times and trapezoid weights covering `centers`.
pub fn time_grid(sigma: f64, centers: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - MARGIN * sigma;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + MARGIN * sigma;
    let dt = STEP * sigma;
    let n = ((hi - lo) / dt).ceil() as usize + 1;
    let t: Vec<f64> = (0..n).map(|i| lo + i as f64 * dt).collect();
    let mut w = vec![dt; n];
    w[0] = 0.5 * dt;
    w[n - 1] = 0.5 * dt;
    (t, w)
}

pub fn integrate(w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    w.iter().enumerate().map(|(i, wi)| wi * f(i)).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Physicists' Hermite polynomial from its explicit series.
pub fn hermite_poly(n: usize, y: f64) -> f64 {
    (0..=n / 2)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n) / (factorial(m) * factorial(n - 2 * m)) * (2.0 * y).powi((n - 2 * m) as i32)
        })
        .sum()
}

/// Hermite-Gauss amplitude mode whose ground mode has intensity RMS `sigma`.
pub fn hg(n: usize, t: f64, sigma: f64) -> f64 {
    let a = std::f64::consts::SQRT_2 * sigma;
    let y = t / a;
    let norm = (2f64.powi(n as i32) * factorial(n) * PI.sqrt() * a).sqrt();
    hermite_poly(n, y) * (-0.5 * y * y).exp() / norm
}

/// Unit-norm Gaussian pulse amplitude centered at `c`.
pub fn pulse(t: f64, c: f64, sigma: f64) -> f64 {
    (2.0 * PI * sigma * sigma).powf(-0.25) * (-(t - c) * (t - c) / (4.0 * sigma * sigma)).exp()
}

/// `<u_n | pulse(. - s)>` by quadrature.
pub fn overlap_numeric(n: usize, s: f64, sigma: f64) -> f64 {
    let (t, w) = time_grid(sigma, &[0.0, s]);
    integrate(&w, |i| hg(n, t[i], sigma) * pulse(t[i], s, sigma))
}

/// Pulse centers `(a, b)`: `a` carries weight `q`.
pub fn centers(tau0: f64, tau: f64) -> (f64, f64) {
    (tau0 - 0.5 * tau, tau0 + 0.5 * tau)
}

/// Channel probabilities by projecting the sampled pulses onto the sampled
/// projector functions `sum_k coeffs[j][k] u_k(t)`.
pub fn probabilities_by_quadrature(coeffs: &[[f64; 4]; 4], tau0: f64, tau: f64, q: f64, sigma: f64) -> [f64; 4] {
    let (a, b) = centers(tau0, tau);
    let (t, w) = time_grid(sigma, &[a, b]);
    let modes: Vec<[f64; 4]> = t.iter().map(|&ti| std::array::from_fn(|k| hg(k, ti, sigma))).collect();
    std::array::from_fn(|j| {
        let proj = |i: usize| (0..4).map(|k| coeffs[j][k] * modes[i][k]).sum::<f64>();
        let ia = integrate(&w, |i| proj(i) * pulse(t[i], a, sigma));
        let ib = integrate(&w, |i| proj(i) * pulse(t[i], b, sigma));
        q * ia * ia + (1.0 - q) * ib * ib
    })
}

/// Intensity of the incoherent mixture.
pub fn mixture_intensity(t: f64, theta: [f64; 3], sigma: f64) -> f64 {
    let (a, b) = centers(theta[0], theta[1]);
    theta[2] * pulse(t, a, sigma).powi(2) + (1.0 - theta[2]) * pulse(t, b, sigma).powi(2)
}

/// Direct-detection Fisher information per photon, with central-difference
/// derivatives of the intensity.
pub fn direct_fisher_reference(theta: [f64; 3], sigma: f64) -> [[f64; 3]; 3] {
    let (a, b) = centers(theta[0], theta[1]);
    let (t, w) = time_grid(sigma, &[a, b]);
    let h = [1e-5 * sigma, 1e-5 * sigma, 1e-6];
    let grads: Vec<[f64; 3]> = t
        .iter()
        .map(|&ti| {
            std::array::from_fn(|k| {
                let mut up = theta;
                let mut dn = theta;
                up[k] += h[k];
                dn[k] -= h[k];
                (mixture_intensity(ti, up, sigma) - mixture_intensity(ti, dn, sigma)) / (2.0 * h[k])
            })
        })
        .collect();
    std::array::from_fn(|k| {
        std::array::from_fn(|l| {
            integrate(&w, |i| {
                let p = mixture_intensity(t[i], theta, sigma);
                if p < 1e-300 {
                    0.0
                } else {
                    grads[i][k] * grads[i][l] / p
                }
            })
        })
    })
}

/// Fisher information per photon of a discrete outcome model, with
/// central-difference derivatives.
pub fn outcome_fisher(probs: impl Fn([f64; 3]) -> Vec<f64>, theta: [f64; 3], h: [f64; 3]) -> [[f64; 3]; 3] {
    let p = probs(theta);
    let grads: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let mut up = theta;
            let mut dn = theta;
            up[k] += h[k];
            dn[k] -= h[k];
            let (pu, pd) = (probs(up), probs(dn));
            pu.iter().zip(&pd).map(|(u, d)| (u - d) / (2.0 * h[k])).collect()
        })
        .collect();
    std::array::from_fn(|k| {
        std::array::from_fn(|l| {
            (0..p.len()).filter(|&j| p[j] > 0.0).map(|j| grads[k][j] * grads[l][j] / p[j]).sum()
        })
    })
}

/// Quantum Fisher information per photon by brute force.
///
/// The pulses and their finite-difference derivatives are sampled and
/// orthonormalized (twice-iterated Gram-Schmidt); `rho` and `d rho` are
/// assembled in that basis and the SLD equation
/// `(rho (x) I + I (x) rho) vec L = 2 vec d rho` is solved with an SVD
/// pseudo-inverse.
pub fn sld_qfi_reference(theta: [f64; 3], sigma: f64) -> [[f64; 3]; 3] {
    let h = [1e-5 * sigma, 1e-5 * sigma, 1e-6];
    let (a, b) = centers(theta[0], theta[1]);
    let (t, w) = time_grid(sigma, &[a, b]);
    let sample = |c: f64| -> Vec<f64> { t.iter().map(|&ti| pulse(ti, c, sigma)).collect() };

    // States of the mixture at theta and at the shifted parameters.
    let states = |th: [f64; 3]| {
        let (ca, cb) = centers(th[0], th[1]);
        (th[2], sample(ca), sample(cb))
    };
    let shifted: Vec<[_; 2]> = (0..3)
        .map(|k| {
            let mut up = theta;
            let mut dn = theta;
            up[k] += h[k];
            dn[k] -= h[k];
            [states(up), states(dn)]
        })
        .collect();

    // Orthonormal basis of everything the states touch.
    let dot = |x: &[f64], y: &[f64]| integrate(&w, |i| x[i] * y[i]);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (_, sa, sb) = states(theta);
    let mut candidates = vec![sa.clone(), sb.clone()];
    for pair in &shifted {
        for (_, xa, xb) in pair {
            candidates.push(xa.iter().zip(&sa).map(|(u, v)| u - v).collect());
            candidates.push(xb.iter().zip(&sb).map(|(u, v)| u - v).collect());
        }
    }
    for mut v in candidates {
        let scale = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for e in &basis {
                let c = dot(&v, e);
                v.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 * scale && norm > 0.0 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    let m = basis.len();
    let coords = |v: &[f64]| -> Vec<f64> { basis.iter().map(|e| dot(v, e)).collect() };
    let rho_of = |(q, xa, xb): &(f64, Vec<f64>, Vec<f64>)| {
        let (ua, ub) = (coords(xa), coords(xb));
        DMatrix::from_fn(m, m, |i, j| q * ua[i] * ua[j] + (1.0 - q) * ub[i] * ub[j])
    };
    let rho = rho_of(&states(theta));
    let drho: Vec<DMatrix<f64>> =
        (0..3).map(|k| (rho_of(&shifted[k][0]) - rho_of(&shifted[k][1])) / (2.0 * h[k])).collect();

    let eye = DMatrix::<f64>::identity(m, m);
    let sylvester = rho.kronecker(&eye) + eye.kronecker(&rho);
    let pinv = sylvester.pseudo_inverse(1e-12).expect("svd");
    let slds: Vec<DMatrix<f64>> = drho
        .iter()
        .map(|d| {
            let vec_l = &pinv * (2.0 * DMatrix::from_column_slice(m * m, 1, d.as_slice()));
            DMatrix::from_column_slice(m, m, vec_l.as_slice())
        })
        .collect();
    std::array::from_fn(|k| std::array::from_fn(|l| (&drho[k] * &slds[l]).trace()))
}
