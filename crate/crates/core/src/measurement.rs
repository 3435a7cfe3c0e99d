//! Temporal-mode projectors, the exact forward model, and the polynomial
//! response model used for calibration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::pulse::{overlap_coeff_derivs, overlap_coeffs, PulseParams};
use crate::{Error, Result};

/// Number of projector channels.
pub const N_CHANNELS: usize = 4;

/// Number of monomials in the response polynomial.
pub const N_TERMS: usize = 10;

/// Monomial labels in the fixed evaluation order.
pub const TERM_LABELS: [&str; N_TERMS] = [
    "1", "tau0", "tau", "q", "tau0^2", "tau0*tau", "tau0*q", "tau^2", "tau*q", "tau0*tau*q",
];

/// A projector onto a superposition of HG_0..HG_3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub coeffs: [Complex64; N_CHANNELS],
}

impl Projector {
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `<self | v>` for a vector given in the HG_0..HG_3 basis.
    pub fn inner(&self, v: &[f64]) -> Complex64 {
        self.coeffs
            .iter()
            .zip(v)
            .map(|(c, &x)| c.conj() * x)
            .sum()
    }
}

/// The four projectors, indexed by channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSet {
    pub projectors: [Projector; N_CHANNELS],
}

impl ProjectorSet {
    /// `sum_j |pi_j><pi_j|` as a 4x4 complex matrix.
    pub fn resolution(&self) -> [[Complex64; N_CHANNELS]; N_CHANNELS] {
        let mut m = [[Complex64::new(0.0, 0.0); N_CHANNELS]; N_CHANNELS];
        for p in &self.projectors {
            for (r, row) in m.iter_mut().enumerate() {
                for (c, e) in row.iter_mut().enumerate() {
                    *e += p.coeffs[r] * p.coeffs[c].conj();
                }
            }
        }
        m
    }

    /// Max-abs entry of `sum_j |pi_j><pi_j| - I`.
    pub fn completeness_error(&self) -> f64 {
        let m = self.resolution();
        let mut err: f64 = 0.0;
        for (r, row) in m.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                let id = if r == c { 1.0 } else { 0.0 };
                err = err.max((*e - id).norm());
            }
        }
        err
    }
}

/// The optimal four-channel projector set.
///
/// Channels 0 and 1 carry no HG_0 component and stay dark for a single,
/// centered pulse. The first component of channel 3 is `-sqrt(3/5)`, the
/// reading under which the four vectors form an orthonormal basis.
pub fn canonical_projectors() -> ProjectorSet {
    let r = |x: f64| Complex64::new(x, 0.0);
    let s = f64::sqrt;
    ProjectorSet {
        projectors: [
            Projector { coeffs: [r(0.0), r(1.0 / s(6.0)), r(1.0 / s(2.0)), r(-1.0 / s(3.0))] },
            Projector { coeffs: [r(0.0), r(1.0 / s(6.0)), r(-1.0 / s(2.0)), r(-1.0 / s(3.0))] },
            Projector { coeffs: [r(s(2.0) / s(5.0)), r(s(2.0) / s(5.0)), r(0.0), r(1.0 / s(5.0))] },
            Projector { coeffs: [r(-s(3.0) / s(5.0)), r(2.0 / s(15.0)), r(0.0), r(s(2.0) / s(15.0))] },
        ],
    }
}

/// Click probabilities of the four channels plus the no-click sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProbabilities {
    pub p: [f64; N_CHANNELS],
    pub p_sink: f64,
}

impl ChannelProbabilities {
    /// Completes `p` with the sink probability `1 - sum p`.
    pub fn from_channels(p: [f64; N_CHANNELS]) -> Self {
        let p_sink = 1.0 - p.iter().sum::<f64>();
        Self { p, p_sink }
    }

    /// All five outcome probabilities, sink last.
    pub fn outcomes(&self) -> [f64; N_CHANNELS + 1] {
        [self.p[0], self.p[1], self.p[2], self.p[3], self.p_sink]
    }

    /// Scales every channel by a detection efficiency; lost clicks go to the sink.
    pub fn with_efficiency(&self, eta: f64) -> Self {
        Self::from_channels(self.p.map(|x| eta * x))
    }
}

fn channel_amplitudes(set: &ProjectorSet, c: &[f64]) -> [Complex64; N_CHANNELS] {
    std::array::from_fn(|j| set.projectors[j].inner(c))
}

/// Weight of a pulse displaced by `x` (units of sigma) outside HG_0..HG_3 and
/// its derivative in `x`.
///
/// The weights `c_n^2` are Poisson in `n` with mean `x^2/4`, so the tail is
/// the regularized lower incomplete gamma `P(4, x^2/4)`. Small means use the
/// series directly; `1 - sum` would lose all digits there.
fn subspace_leakage(x: f64) -> (f64, f64) {
    let lam = 0.25 * x * x;
    let head_term = (-lam).exp() * lam.powi(3) / 6.0;
    let deriv = head_term * 0.5 * x;
    if lam < 10.0 {
        let mut term = head_term * lam / 4.0;
        let mut sum: f64 = 0.0;
        let mut n = 4.0;
        while term > 1e-18 * sum.max(f64::MIN_POSITIVE) && n < 400.0 {
            sum += term;
            n += 1.0;
            term *= lam / n;
        }
        (sum, deriv)
    } else {
        let e = (-lam).exp();
        (1.0 - e * (1.0 + lam + lam * lam / 2.0 + lam.powi(3) / 6.0), deriv)
    }
}

/// Completeness tolerance above which the sink is taken as `1 - sum p_j`.
const SUBSPACE_TOL: f64 = 1e-12;

/// Exact channel probabilities of the incoherent mixture.
///
/// For a complete projector set the sink probability is the weight outside
/// HG_0..HG_3, computed directly; otherwise it is `1 - sum p_j`.
pub fn channel_probabilities(p: &PulseParams, set: &ProjectorSet) -> ChannelProbabilities {
    let [tau0, tau, q] = p.scaled();
    let (xa, xb) = (tau0 - 0.5 * tau, tau0 + 0.5 * tau);
    let aa = channel_amplitudes(set, &overlap_coeffs(xa, N_CHANNELS));
    let ab = channel_amplitudes(set, &overlap_coeffs(xb, N_CHANNELS));
    let probs = std::array::from_fn(|j| q * aa[j].norm_sqr() + (1.0 - q) * ab[j].norm_sqr());
    if set.completeness_error() <= SUBSPACE_TOL {
        let p_sink = q * subspace_leakage(xa).0 + (1.0 - q) * subspace_leakage(xb).0;
        ChannelProbabilities { p: probs, p_sink }
    } else {
        ChannelProbabilities::from_channels(probs)
    }
}

/// Probabilities and their gradients with respect to `(tau0, tau, q)`.
///
/// Gradients are with respect to the dimensionless parameters
/// `(tau0/sigma, tau/sigma, q)`. Row `j` of the returned jacobian belongs to
/// outcome `j` (sink last).
pub fn channel_jacobian(
    p: &PulseParams,
    set: &ProjectorSet,
) -> (ChannelProbabilities, [[f64; 3]; N_CHANNELS + 1]) {
    let [tau0, tau, q] = p.scaled();
    let ca = overlap_coeffs(tau0 - 0.5 * tau, N_CHANNELS + 1);
    let cb = overlap_coeffs(tau0 + 0.5 * tau, N_CHANNELS + 1);
    let da = overlap_coeff_derivs(&ca, N_CHANNELS);
    let db = overlap_coeff_derivs(&cb, N_CHANNELS);
    let mut probs = [0.0; N_CHANNELS];
    let mut jac = [[0.0; 3]; N_CHANNELS + 1];
    for (j, proj) in set.projectors.iter().enumerate() {
        let a = proj.inner(&ca[..N_CHANNELS]);
        let b = proj.inner(&cb[..N_CHANNELS]);
        let a_shift = 2.0 * (a.conj() * proj.inner(&da)).re;
        let b_shift = 2.0 * (b.conj() * proj.inner(&db)).re;
        probs[j] = q * a.norm_sqr() + (1.0 - q) * b.norm_sqr();
        jac[j] = [
            q * a_shift + (1.0 - q) * b_shift,
            0.5 * (-q * a_shift + (1.0 - q) * b_shift),
            a.norm_sqr() - b.norm_sqr(),
        ];
    }
    if set.completeness_error() <= SUBSPACE_TOL {
        let (ta, dta) = subspace_leakage(tau0 - 0.5 * tau);
        let (tb, dtb) = subspace_leakage(tau0 + 0.5 * tau);
        jac[N_CHANNELS] = [
            q * dta + (1.0 - q) * dtb,
            0.5 * (-q * dta + (1.0 - q) * dtb),
            ta - tb,
        ];
        let p_sink = q * ta + (1.0 - q) * tb;
        (ChannelProbabilities { p: probs, p_sink }, jac)
    } else {
        for k in 0..3 {
            jac[N_CHANNELS][k] = -(0..N_CHANNELS).map(|j| jac[j][k]).sum::<f64>();
        }
        (ChannelProbabilities::from_channels(probs), jac)
    }
}

/// An axis-aligned box in `(tau0, tau, q)`, in the caller's time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub tau0: [f64; 2],
    pub tau: [f64; 2],
    pub q: [f64; 2],
}

impl ParamBox {
    pub fn new(tau0: [f64; 2], tau: [f64; 2], q: [f64; 2]) -> Result<Self> {
        let b = Self { tau0, tau, q };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("tau0", self.tau0), ("tau", self.tau), ("q", self.q)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidParameter(format!("bad {name} range {r:?}")));
            }
        }
        if self.tau[0] < 0.0 || self.q[0] < 0.0 || self.q[1] > 1.0 {
            return Err(Error::InvalidParameter(
                "box must respect tau >= 0 and 0 <= q <= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn lower(&self) -> [f64; 3] {
        [self.tau0[0], self.tau[0], self.q[0]]
    }

    pub fn upper(&self) -> [f64; 3] {
        [self.tau0[1], self.tau[1], self.q[1]]
    }

    /// Membership with an absolute slack on every side.
    pub fn contains(&self, p: &PulseParams, slack: f64) -> bool {
        let v = [p.tau0, p.tau, p.q];
        let (lo, hi) = (self.lower(), self.upper());
        (0..3).all(|k| v[k] >= lo[k] - slack && v[k] <= hi[k] + slack)
    }
}

/// Ten-term polynomial response per channel, evaluated in the caller's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub domain: ParamBox,
    #[serde(rename = "channels")]
    pub coeffs: [[f64; N_TERMS]; N_CHANNELS],
}

/// Monomials `1, tau0, tau, q, tau0^2, tau0 tau, tau0 q, tau^2, tau q, tau0 tau q`.
pub fn response_features(tau0: f64, tau: f64, q: f64) -> [f64; N_TERMS] {
    [
        1.0,
        tau0,
        tau,
        q,
        tau0 * tau0,
        tau0 * tau,
        tau0 * q,
        tau * tau,
        tau * q,
        tau0 * tau * q,
    ]
}

/// Slack allowed on the domain boundary when checking membership.
const DOMAIN_SLACK: f64 = 1e-9;

impl ResponseModel {
    pub fn constant(domain: ParamBox, values: [f64; N_CHANNELS]) -> Self {
        let mut coeffs = [[0.0; N_TERMS]; N_CHANNELS];
        for (row, v) in coeffs.iter_mut().zip(values) {
            row[0] = v;
        }
        Self { domain, coeffs }
    }

    /// Polynomial values without the domain check.
    pub(crate) fn eval_raw(&self, tau0: f64, tau: f64, q: f64) -> [f64; N_CHANNELS] {
        let f = response_features(tau0, tau, q);
        self.coeffs
            .map(|row| row.iter().zip(&f).map(|(c, x)| c * x).sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.domain.validate()?;
        Ok(m)
    }
}

/// Evaluates the response model at `p`.
///
/// Out-of-domain parameters are rejected. With `clamp` set, each channel is
/// clipped to `[0, 1]`; otherwise raw polynomial values are returned.
pub fn evaluate_response(m: &ResponseModel, p: &PulseParams, clamp: bool) -> Result<ChannelProbabilities> {
    if !m.domain.contains(p, DOMAIN_SLACK) {
        return Err(Error::OutOfDomain { tau0: p.tau0, tau: p.tau, q: p.q });
    }
    let mut v = m.eval_raw(p.tau0, p.tau, p.q);
    if clamp {
        v = v.map(|x| x.clamp(0.0, 1.0));
    }
    Ok(ChannelProbabilities::from_channels(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projectors_are_orthonormal() {
        let set = canonical_projectors();
        assert!(set.completeness_error() <= 1e-12);
        for p in &set.projectors {
            assert_abs_diff_eq!(p.norm_sqr(), 1.0, epsilon = 1e-12);
        }
        let pi0 = &set.projectors[0];
        let pi1 = &set.projectors[1];
        let ip: Complex64 = pi0.coeffs.iter().zip(&pi1.coeffs).map(|(a, b)| a.conj() * b).sum();
        assert_abs_diff_eq!(ip.norm(), 0.0, epsilon = 1e-15);
        let pi2 = &set.projectors[2];
        assert_abs_diff_eq!(pi2.norm_sqr(), 2.0 / 5.0 + 2.0 / 5.0 + 1.0 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn dark_channels_have_no_ground_mode() {
        let set = canonical_projectors();
        assert_eq!(set.projectors[0].coeffs[0], Complex64::new(0.0, 0.0));
        assert_eq!(set.projectors[1].coeffs[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn coincident_pulses() {
        let set = canonical_projectors();
        for q in [0.0, 0.3, 1.0] {
            let pr = channel_probabilities(&PulseParams::unit(0.0, 0.0, q).unwrap(), &set);
            assert_abs_diff_eq!(pr.p[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(pr.p[1], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(pr.p[2], 0.4, epsilon = 1e-15);
            assert_abs_diff_eq!(pr.p[3], 0.6, epsilon = 1e-15);
            assert_abs_diff_eq!(pr.p_sink, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn balanced_centered_mixture_is_symmetric() {
        let set = canonical_projectors();
        for tau in [0.01, 0.5, 1.7] {
            let pr = channel_probabilities(&PulseParams::unit(0.0, tau, 0.5).unwrap(), &set);
            assert_abs_diff_eq!(pr.p[0], pr.p[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let set = canonical_projectors();
        let p = PulseParams::unit(0.2, 0.9, 0.3).unwrap();
        let (_, jac) = channel_jacobian(&p, &set);
        let h = 1e-6;
        for k in 0..3 {
            let mut up = p.scaled();
            let mut dn = p.scaled();
            up[k] += h;
            dn[k] -= h;
            let fu = channel_probabilities(&PulseParams::from_scaled(up, p.shape), &set).outcomes();
            let fd = channel_probabilities(&PulseParams::from_scaled(dn, p.shape), &set).outcomes();
            for j in 0..5 {
                assert_abs_diff_eq!(jac[j][k], (fu[j] - fd[j]) / (2.0 * h), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn leakage_matches_complement() {
        for x in [0.5, 2.0, 4.0, 7.0, 9.0] {
            let c = overlap_coeffs(x, 4);
            let head: f64 = c.iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(subspace_leakage(x).0, 1.0 - head, epsilon = 1e-14);
        }
        // series branch stays accurate where the complement underflows
        let x: f64 = 1e-3;
        let lam = x * x / 4.0;
        assert_abs_diff_eq!(subspace_leakage(x).0 / (lam.powi(4) / 24.0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn sink_completes_probabilities() {
        let set = canonical_projectors();
        for (t0, t, q) in [(0.0, 0.3, 0.5), (0.4, 1.8, 0.125), (-1.0, 3.0, 0.9)] {
            let pr = channel_probabilities(&PulseParams::unit(t0, t, q).unwrap(), &set);
            assert_abs_diff_eq!(pr.p_sink + pr.p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn response_model_degenerate_cases() {
        let domain = ParamBox::new([-1.0, 1.0], [0.0, 2.0], [0.0, 1.0]).unwrap();
        let m = ResponseModel::constant(domain, [0.1, 0.2, 0.3, 0.15]);
        let p = PulseParams::unit(0.3, 1.2, 0.7).unwrap();
        let r = evaluate_response(&m, &p, false).unwrap();
        assert_eq!(r.p, [0.1, 0.2, 0.3, 0.15]);
        assert_abs_diff_eq!(r.p_sink, 0.25, epsilon = 1e-15);

        let zero = ResponseModel::constant(domain, [0.0; 4]);
        let r = evaluate_response(&zero, &p, false).unwrap();
        assert_eq!(r.p, [0.0; 4]);
        assert_eq!(r.p_sink, 1.0);
    }

    #[test]
    fn response_model_rejects_out_of_domain() {
        let domain = ParamBox::new([-1.0, 1.0], [0.0, 2.0], [0.0, 1.0]).unwrap();
        let m = ResponseModel::constant(domain, [0.1; 4]);
        let p = PulseParams::unit(0.0, 2.5, 0.5).unwrap();
        assert!(matches!(evaluate_response(&m, &p, false), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn clamping_only_on_request() {
        let domain = ParamBox::new([-1.0, 1.0], [0.0, 2.0], [0.0, 1.0]).unwrap();
        let m = ResponseModel::constant(domain, [-0.01, 0.2, 1.02, 0.0]);
        let p = PulseParams::unit(0.0, 1.0, 0.5).unwrap();
        assert_eq!(evaluate_response(&m, &p, false).unwrap().p[0], -0.01);
        let c = evaluate_response(&m, &p, true).unwrap();
        assert_eq!(c.p[0], 0.0);
        assert_eq!(c.p[2], 1.0);
    }

    #[test]
    fn json_layout() {
        let domain = ParamBox::new([-0.25, 0.25], [0.0, 2.0], [0.125, 0.75]).unwrap();
        let mut m = ResponseModel::constant(domain, [0.0; 4]);
        m.coeffs[2][9] = 3.5;
        let s = m.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["channels"][2][9], 3.5);
        assert_eq!(v["domain"]["tau"][1], 2.0);
        assert_eq!(ResponseModel::from_json(&s).unwrap(), m);
    }
}
