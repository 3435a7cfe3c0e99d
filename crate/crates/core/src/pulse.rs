//! Gaussian pulses and their Hermite-Gauss temporal-mode expansion.
//!
//! The pulse amplitude with RMS width `sigma` is
//! `u_0(t) = (2 pi sigma^2)^(-1/4) exp(-t^2 / (4 sigma^2))`, and `u_n` is the
//! `n`-th Hermite-Gauss mode built on the same width (physicists' Hermite
//! polynomials, positive leading coefficient). A pulse displaced by `s` is a
//! coherent superposition of these modes with amplitudes
//! `c_n(s) = exp(-d^2/2) d^n / sqrt(n!)`, `d = s / (2 sigma)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::quadrature::{CompositeRule, PANEL_WIDTH, WINDOW_HALF_WIDTH};
use crate::{Error, Result};

/// Default number of Hermite-Gauss modes kept in expansions.
pub const DEFAULT_TRUNCATION: usize = 32;

/// Absolute tolerance of [`quadrature_overlap`].
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Temporal shape of a single pulse: the RMS width of its amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PulseShape {
    sigma: f64,
}

impl PulseShape {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pulse width must be finite and positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    /// Unit RMS width; all times are then dimensionless.
    pub fn unit() -> Self {
        Self { sigma: 1.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl TryFrom<f64> for PulseShape {
    type Error = Error;
    fn try_from(sigma: f64) -> Result<Self> {
        Self::new(sigma)
    }
}

impl From<PulseShape> for f64 {
    fn from(s: PulseShape) -> f64 {
        s.sigma
    }
}

/// The estimated quantities: midpoint `tau0`, separation `tau` and the
/// weight `q` of the pulse centered at `tau0 - tau/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub tau0: f64,
    pub tau: f64,
    pub q: f64,
    pub shape: PulseShape,
}

impl PulseParams {
    pub fn new(tau0: f64, tau: f64, q: f64, shape: PulseShape) -> Result<Self> {
        let p = Self { tau0, tau, q, shape };
        p.validate()?;
        Ok(p)
    }

    /// Parameters in units of the pulse width.
    pub fn unit(tau0: f64, tau: f64, q: f64) -> Result<Self> {
        Self::new(tau0, tau, q, PulseShape::unit())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0.is_finite() && self.tau.is_finite() && self.q.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite parameters ({}, {}, {})",
                self.tau0, self.tau, self.q
            )));
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "separation must be non-negative, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::InvalidParameter(format!(
                "imbalance must lie in [0, 1], got {}",
                self.q
            )));
        }
        Ok(())
    }

    /// Centers of pulse A (weight `q`) and pulse B (weight `1 - q`).
    pub fn centers(&self) -> (f64, f64) {
        (self.tau0 - 0.5 * self.tau, self.tau0 + 0.5 * self.tau)
    }

    /// `(tau0, tau, q)` with times divided by the pulse width.
    pub fn scaled(&self) -> [f64; 3] {
        let s = self.shape.sigma;
        [self.tau0 / s, self.tau / s, self.q]
    }

    /// Inverse of [`PulseParams::scaled`]. Does not validate.
    pub fn from_scaled(theta: [f64; 3], shape: PulseShape) -> Self {
        let s = shape.sigma;
        Self {
            tau0: theta[0] * s,
            tau: theta[1] * s,
            q: theta[2],
            shape,
        }
    }
}

/// Hermite-Gauss amplitudes of a pulse displaced by `shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapVector {
    pub coeffs: Vec<f64>,
    pub shift: f64,
    pub shape: PulseShape,
}

impl OverlapVector {
    pub fn new(shift: f64, shape: PulseShape, n_modes: usize) -> Self {
        Self {
            coeffs: overlap_coeffs(shift / shape.sigma, n_modes),
            shift,
            shape,
        }
    }

    /// Weight of the pulse outside the kept modes, `1 - sum c_n^2`.
    pub fn truncation_loss(&self) -> f64 {
        1.0 - self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }
}

/// `u_n(t)` for the mode family of `shape`.
///
/// Evaluated with the three-term recurrence of normalized Hermite functions
/// `h_{n+1} = sqrt(2/(n+1)) y h_n - sqrt(n/(n+1)) h_{n-1}`, `y = t/(sqrt(2) sigma)`.
pub fn hg_mode_value(n: usize, t: f64, shape: PulseShape) -> f64 {
    let y = t / (std::f64::consts::SQRT_2 * shape.sigma);
    let scale = (std::f64::consts::SQRT_2 * shape.sigma).sqrt();
    hermite_function(n, y) / scale
}

fn hermite_function(n: usize, y: f64) -> f64 {
    let h0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * y * y).exp();
    if n == 0 {
        return h0;
    }
    let mut prev = h0;
    let mut cur = std::f64::consts::SQRT_2 * y * h0;
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * y * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `c_n(s) = <u_n | u_0(. - s)>` in closed form.
pub fn displaced_overlap(n: usize, s: f64, shape: PulseShape) -> f64 {
    let d = s / (2.0 * shape.sigma);
    let mut c = (-0.5 * d * d).exp();
    let ad = d.abs();
    for k in 1..=n {
        c *= ad / (k as f64).sqrt();
    }
    if d < 0.0 && n % 2 == 1 {
        -c
    } else {
        c
    }
}

/// `c_0..c_{n_modes-1}` for a dimensionless shift `x = s / sigma`.
pub(crate) fn overlap_coeffs(x: f64, n_modes: usize) -> Vec<f64> {
    let d = 0.5 * x;
    let ad = d.abs();
    let mut out = Vec::with_capacity(n_modes);
    let mut c = (-0.5 * d * d).exp();
    for k in 0..n_modes {
        if k > 0 {
            c *= ad / (k as f64).sqrt();
        }
        out.push(if d < 0.0 && k % 2 == 1 { -c } else { c });
    }
    out
}

/// Derivative of the coefficients with respect to the dimensionless shift:
/// `dc_n/dx = (sqrt(n) c_{n-1} - sqrt(n+1) c_{n+1}) / 2`.
///
/// `coeffs` must hold at least `n_modes + 1` entries.
pub(crate) fn overlap_coeff_derivs(coeffs: &[f64], n_modes: usize) -> Vec<f64> {
    debug_assert!(coeffs.len() > n_modes);
    (0..n_modes)
        .map(|n| {
            let lower = if n > 0 { (n as f64).sqrt() * coeffs[n - 1] } else { 0.0 };
            0.5 * (lower - ((n + 1) as f64).sqrt() * coeffs[n + 1])
        })
        .collect()
}

/// Time-resolved intensity of the incoherent two-pulse mixture.
pub fn intensity(t: f64, p: &PulseParams) -> f64 {
    let s = p.shape.sigma;
    let (a, b) = p.centers();
    p.q * gaussian_density((t - a) / s) / s + (1.0 - p.q) * gaussian_density((t - b) / s) / s
}

/// Standard normal density.
pub(crate) fn gaussian_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Integration window covering the given centers with the documented margin.
pub fn quadrature_window(shape: PulseShape, centers: &[f64]) -> (f64, f64) {
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = WINDOW_HALF_WIDTH * shape.sigma;
    (lo - margin, hi + margin)
}

/// `integral conj(f(t)) g(t) dt` by composite Gauss-Legendre quadrature.
///
/// The window spans `[min(centers) - 12 sigma, max(centers) + 12 sigma]` with
/// 16-node panels of width `sigma / 2`. The tail mass `integral |f g|` over a
/// further `8 sigma` on each side is estimated with the same rule and must
/// stay below [`QUADRATURE_TOL`].
pub fn quadrature_overlap<F, G>(f: F, g: G, shape: PulseShape, centers: &[f64]) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
    G: Fn(f64) -> Complex64,
{
    if centers.is_empty() {
        return Err(Error::InvalidParameter("at least one center is required".into()));
    }
    let (lo, hi) = quadrature_window(shape, centers);
    let panel = PANEL_WIDTH * shape.sigma;
    let rule = CompositeRule::new(lo, hi, panel);
    let mut acc = Complex64::new(0.0, 0.0);
    for &(t, w) in rule.points() {
        acc += f(t).conj() * g(t) * w;
    }
    let ext = 8.0 * shape.sigma;
    let tail: f64 = [
        CompositeRule::new(lo - ext, lo, panel),
        CompositeRule::new(hi, hi + ext, panel),
    ]
    .iter()
    .map(|r| r.integrate(|t| (f(t).conj() * g(t)).norm()))
    .sum();
    if tail > QUADRATURE_TOL {
        return Err(Error::QuadratureTail { tail, tol: QUADRATURE_TOL });
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn real(f: impl Fn(f64) -> f64) -> impl Fn(f64) -> Complex64 {
        move |t| Complex64::new(f(t), 0.0)
    }

    #[test]
    fn ground_mode_at_origin() {
        let v = hg_mode_value(0, 0.0, PulseShape::unit());
        assert_abs_diff_eq!(v, (2.0 * std::f64::consts::PI).powf(-0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.63162, epsilon = 1e-5);
        assert_eq!(hg_mode_value(1, 0.0, PulseShape::unit()), 0.0);
    }

    #[test]
    fn ground_mode_matches_pulse_formula() {
        let shape = PulseShape::new(1.7).unwrap();
        for t in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            let s2 = 1.7f64 * 1.7;
            let expect = (2.0 * std::f64::consts::PI * s2).powf(-0.25) * (-t * t / (4.0 * s2)).exp();
            assert_abs_diff_eq!(hg_mode_value(0, t, shape), expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn mode_four_matches_explicit_polynomial() {
        // H_4(y) = 16 y^4 - 48 y^2 + 12, normalized by sqrt(2^4 4! sqrt(pi)).
        let t = 1.3;
        let y = t / std::f64::consts::SQRT_2;
        let h4 = 16.0 * y.powi(4) - 48.0 * y * y + 12.0;
        let norm = (16.0 * 24.0 * std::f64::consts::PI.sqrt()).sqrt();
        let expect = h4 / norm * (-0.5 * y * y).exp() / std::f64::consts::SQRT_2.sqrt();
        assert_abs_diff_eq!(hg_mode_value(4, t, PulseShape::unit()), expect, epsilon = 1e-14);
        // extended-precision reference value (40 digits)
        assert_abs_diff_eq!(hg_mode_value(4, t, PulseShape::unit()), -0.3619922876803779, epsilon = 1e-14);
    }

    #[test]
    fn overlap_examples() {
        let u = PulseShape::unit();
        assert_eq!(displaced_overlap(0, 0.0, u), 1.0);
        for n in 1..6 {
            assert_eq!(displaced_overlap(n, 0.0, u), 0.0);
        }
        assert_abs_diff_eq!(displaced_overlap(1, 2.0, u), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(displaced_overlap(1, 2.0, u), 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn quadrature_normalization_and_orthogonality() {
        let u = PulseShape::unit();
        let v = quadrature_overlap(real(|t| hg_mode_value(0, t, u)), real(|t| hg_mode_value(0, t, u)), u, &[0.0]).unwrap();
        assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-10);
        let v = quadrature_overlap(real(|t| hg_mode_value(2, t, u)), real(|t| hg_mode_value(3, t, u)), u, &[0.0]).unwrap();
        assert_abs_diff_eq!(v.norm(), 0.0, epsilon = 1e-10);
        let v = quadrature_overlap(real(|t| hg_mode_value(1, t, u)), real(|t| hg_mode_value(0, t - 2.0, u)), u, &[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(v.re, (-0.5f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn quadrature_rejects_heavy_tails() {
        let u = PulseShape::unit();
        let wide = real(|t: f64| 1.0 / (1.0 + t * t));
        assert!(matches!(
            quadrature_overlap(&wide, &wide, u, &[0.0]),
            Err(Error::QuadratureTail { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(PulseParams::unit(0.0, -0.1, 0.5).is_err());
        assert!(PulseParams::unit(0.0, 0.1, 1.5).is_err());
        assert!(PulseParams::unit(f64::NAN, 0.1, 0.5).is_err());
        assert!(PulseShape::new(0.0).is_err());
    }

    #[test]
    fn intensity_at_origin() {
        let p = PulseParams::unit(0.0, 0.0, 0.3).unwrap();
        assert_abs_diff_eq!(intensity(0.0, &p), 0.39894, epsilon = 1e-5);
    }

    #[test]
    fn coefficient_derivative_matches_finite_difference() {
        let h = 1e-6;
        for x in [-1.3, 0.0, 0.7, 2.5] {
            let c = overlap_coeffs(x, 12);
            let d = overlap_coeff_derivs(&c, 10);
            let cp = overlap_coeffs(x + h, 10);
            let cm = overlap_coeffs(x - h, 10);
            for n in 0..10 {
                assert_abs_diff_eq!(d[n], (cp[n] - cm[n]) / (2.0 * h), epsilon = 1e-9);
            }
        }
    }
}
