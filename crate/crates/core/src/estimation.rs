//! Calibration of the polynomial response model, constrained GLS inversion
//! and maximum-likelihood estimation.
//!
//! Both estimators minimize over the box of their forward model with the
//! deterministic multi-start search of the crate's optimizer: a 5x5x5 start
//! grid spanning the box (endpoints included), Nelder-Mead from the three
//! best nodes with a budget of 500 iterations each, then projected Newton
//! steps on a finite-difference quadratic model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::information::{symmetric_pinv, CountingMode, SINGULAR_CONDITION};
use crate::measurement::{
    canonical_projectors, channel_probabilities, response_features, ParamBox, ProjectorSet,
    ResponseModel, N_CHANNELS, N_TERMS,
};
use crate::optimize::{fd_gradient_hessian, minimize, Bounds, Solution};
use crate::pulse::{PulseParams, PulseShape};
use crate::{Error, Result};

/// Number of outcomes including the sink.
pub const N_OUTCOMES: usize = N_CHANNELS + 1;

/// Slack on the frequency sum of a calibration point.
const FREQUENCY_SUM_SLACK: f64 = 1e-9;

/// Relative singular-value cutoff for the calibration design matrix.
const RANK_TOL: f64 = 1e-10;

/// Iteration cap for iterated GLS.
const GLS_MAX_REWEIGHTS: usize = 10;

/// Photon counts per outcome. In sequential mode `sink` also holds the
/// `N mod 4` photons not assigned to any channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub channels: [u64; N_CHANNELS],
    pub sink: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.channels.iter().sum::<u64>() + self.sink
    }

    pub fn clicks(&self) -> u64 {
        self.channels.iter().sum()
    }

    pub fn outcomes(&self) -> [u64; N_OUTCOMES] {
        [self.channels[0], self.channels[1], self.channels[2], self.channels[3], self.sink]
    }

    /// Channel counts divided by the total.
    pub fn frequencies(&self) -> [f64; N_CHANNELS] {
        let n = self.total().max(1) as f64;
        self.channels.map(|k| k as f64 / n)
    }
}

/// Which bounds are active at an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintFlags {
    pub tau_zero: bool,
    pub q_zero: bool,
    pub q_one: bool,
    /// Some coordinate sits on a bound of the search box that is not one of
    /// the physical constraints above.
    pub box_edge: bool,
}

impl ConstraintFlags {
    pub fn any(&self) -> bool {
        self.tau_zero || self.q_zero || self.q_one || self.box_edge
    }

    fn at(x: [f64; 3], b: &ParamBox) -> Self {
        let (lo, hi) = (b.lower(), b.upper());
        Self {
            tau_zero: x[1] == 0.0,
            q_zero: x[2] == 0.0,
            q_one: x[2] == 1.0,
            box_edge: x[0] == lo[0] || x[0] == hi[0] || (x[1] == lo[1] && lo[1] > 0.0) || x[1] == hi[1]
                || (x[2] == lo[2] && lo[2] > 0.0)
                || (x[2] == hi[2] && hi[2] < 1.0),
        }
    }
}

/// A constrained point estimate of `(tau0, tau, q)` in the caller's units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub tau0_hat: f64,
    pub tau_hat: f64,
    pub q_hat: f64,
    pub constraint_active: ConstraintFlags,
    pub covariance_hat: [[f64; 3]; 3],
    /// Objective at the optimum: deviance for ML, the GLS form for GLS.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when the data cannot pin down all three parameters.
    pub identifiable: bool,
}

impl Estimate {
    pub fn theta(&self) -> [f64; 3] {
        [self.tau0_hat, self.tau_hat, self.q_hat]
    }

    /// Estimates that did not converge or are not identifiable.
    pub fn flagged(&self) -> bool {
        !self.converged || !self.identifiable
    }

    fn from_solution(sol: &Solution, b: &ParamBox, cov: [[f64; 3]; 3], identifiable: bool) -> Self {
        Self {
            tau0_hat: sol.x[0],
            tau_hat: sol.x[1],
            q_hat: sol.x[2],
            constraint_active: ConstraintFlags::at(sol.x, b),
            covariance_hat: cov,
            objective: sol.f,
            iterations: sol.iterations,
            converged: sol.converged,
            identifiable,
        }
    }
}

fn bounds_of(b: &ParamBox) -> Bounds {
    Bounds { lo: b.lower(), hi: b.upper() }
}

/// Inverse of a symmetric information matrix and whether it was singular.
fn invert_information(h: &nalgebra::Matrix3<f64>) -> ([[f64; 3]; 3], bool) {
    let m = DMatrix::from_fn(3, 3, |r, c| 0.5 * (h[(r, c)] + h[(c, r)]));
    let (inv, condition, _) = symmetric_pinv(&m);
    (std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)])), !(condition <= SINGULAR_CONDITION))
}

/// A probability model over the five outcomes, parameterized by
/// `(tau0, tau, q)` in the caller's units.
pub trait ForwardModel: Sync {
    fn outcome_probabilities(&self, theta: [f64; 3]) -> [f64; N_OUTCOMES];
    fn search_box(&self) -> ParamBox;
}

/// The exact projector-measurement forward model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactForward {
    pub set: ProjectorSet,
    pub shape: PulseShape,
    pub efficiency: f64,
    pub search_box: ParamBox,
}

impl ExactForward {
    /// Canonical projectors, unit efficiency, and the search box
    /// `tau0 in [-2, 2] sigma`, `tau in [0, 4] sigma`, `q in [0, 1]`.
    pub fn new(shape: PulseShape) -> Self {
        let s = shape.sigma();
        Self {
            set: canonical_projectors(),
            shape,
            efficiency: 1.0,
            search_box: ParamBox { tau0: [-2.0 * s, 2.0 * s], tau: [0.0, 4.0 * s], q: [0.0, 1.0] },
        }
    }

    pub fn with_efficiency(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("detection efficiency {eta} outside (0, 1]")));
        }
        self.efficiency = eta;
        Ok(self)
    }

    pub fn with_box(mut self, b: ParamBox) -> Result<Self> {
        b.validate()?;
        self.search_box = b;
        Ok(self)
    }
}

impl ForwardModel for ExactForward {
    fn outcome_probabilities(&self, theta: [f64; 3]) -> [f64; N_OUTCOMES] {
        let p = PulseParams { tau0: theta[0], tau: theta[1], q: theta[2], shape: self.shape };
        let mut probs = channel_probabilities(&p, &self.set);
        if self.efficiency != 1.0 {
            probs = probs.with_efficiency(self.efficiency);
        }
        probs.outcomes()
    }

    fn search_box(&self) -> ParamBox {
        self.search_box
    }
}

/// The polynomial response model, clipped to valid probabilities.
impl ForwardModel for ResponseModel {
    fn outcome_probabilities(&self, theta: [f64; 3]) -> [f64; N_OUTCOMES] {
        let v = self.eval_raw(theta[0], theta[1], theta[2]).map(|x| x.clamp(0.0, 1.0));
        let sink = (1.0 - v.iter().sum::<f64>()).max(0.0);
        [v[0], v[1], v[2], v[3], sink]
    }

    fn search_box(&self) -> ParamBox {
        self.domain
    }
}

/// `k ln(k / m) - k + m` for observed `k` and expected `m`, with
/// `0 ln 0 = 0`.
///
/// Summed over outcomes this is the multinomial deviance whenever the
/// probabilities sum to one. Written as `k (x - ln(1 + x))` with
/// `x = (m - k) / k`, rounding in `m` enters only at second order, so the
/// objective stays resolvable close to its minimum.
fn deviance_term(k: f64, m: f64) -> f64 {
    if k == 0.0 {
        m.max(0.0)
    } else if m <= 0.0 {
        f64::INFINITY
    } else {
        let x = (m - k) / k;
        k * (x - x.ln_1p())
    }
}

/// Deviance of the counts from the model: the negative log-likelihood
/// shifted so that the saturated model scores zero.
fn deviance(counts: &Counts, probs: &[f64; N_OUTCOMES], mode: CountingMode) -> f64 {
    match mode {
        CountingMode::Multinomial => {
            let n = counts.total() as f64;
            counts.outcomes().iter().zip(probs).map(|(&k, &p)| deviance_term(k as f64, n * p)).sum()
        }
        CountingMode::Sequential => {
            let trials = (counts.total() / N_CHANNELS as u64) as f64;
            (0..N_CHANNELS)
                .map(|j| {
                    let k = counts.channels[j] as f64;
                    deviance_term(k, trials * probs[j]) + deviance_term(trials - k, trials * (1.0 - probs[j]))
                })
                .sum()
        }
    }
}

/// Maximum-likelihood estimate from photon counts.
///
/// The covariance is the (pseudo-)inverse of the observed information at the
/// optimum. All counts in the sink, or a singular observed information,
/// give a result flagged as not identifiable.
pub fn ml_estimate<M: ForwardModel + ?Sized>(forward: &M, counts: &Counts, mode: CountingMode) -> Result<Estimate> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::InvalidCounts("total count is zero".into()));
    }
    if mode == CountingMode::Sequential {
        let trials = n / N_CHANNELS as u64;
        if let Some(j) = (0..N_CHANNELS).find(|&j| counts.channels[j] > trials) {
            return Err(Error::InvalidCounts(format!(
                "channel {j} has {} counts from {trials} trials",
                counts.channels[j]
            )));
        }
    }
    let b = forward.search_box();
    b.validate()?;
    let bounds = bounds_of(&b);
    let objective = |x: &[f64; 3]| deviance(counts, &forward.outcome_probabilities(*x), mode);
    let sol = minimize(&objective, &bounds);
    let (_, hess) = fd_gradient_hessian(&objective, &bounds, sol.x);
    let (cov, singular) = invert_information(&hess);
    let identifiable = counts.clicks() > 0 && !singular && sol.f.is_finite();
    Ok(Estimate::from_solution(&sol, &b, cov, identifiable))
}

/// Weighting of the GLS objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlsWeights {
    /// Multinomial covariance at the observed frequencies.
    #[default]
    Observed,
    /// Covariance re-evaluated at the model prediction until the estimate
    /// stops moving.
    Iterated,
}

/// Inverse multinomial covariance of four channel frequencies from `n`
/// photons. Frequencies are regularized as `(n f + 1/2) / (n + 5/2)` so
/// empty channels keep a finite weight.
fn multinomial_precision(freqs: &[f64; N_CHANNELS], n: f64) -> DMatrix<f64> {
    let reg = |f: f64| (n * f + 0.5) / (n + 2.5);
    let f: [f64; N_CHANNELS] = freqs.map(|x| reg(x.clamp(0.0, 1.0)));
    let sink = (1.0 - f.iter().sum::<f64>()).max(0.5 / (n + 2.5));
    DMatrix::from_fn(N_CHANNELS, N_CHANNELS, |r, c| {
        let diag = if r == c { 1.0 / f[r] } else { 0.0 };
        n * (diag + 1.0 / sink)
    })
}

fn response_jacobian(m: &ResponseModel, theta: [f64; 3]) -> DMatrix<f64> {
    let [a, t, q] = theta;
    // derivatives of the ten monomials in response_features
    let d: [[f64; N_TERMS]; 3] = [
        [0.0, 1.0, 0.0, 0.0, 2.0 * a, t, q, 0.0, 0.0, t * q],
        [0.0, 0.0, 1.0, 0.0, 0.0, a, 0.0, 2.0 * t, q, a * q],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, a, 0.0, t, a * t],
    ];
    DMatrix::from_fn(N_CHANNELS, 3, |j, k| m.coeffs[j].iter().zip(&d[k]).map(|(c, x)| c * x).sum())
}

/// Constrained GLS inversion of the response model.
///
/// Minimizes `(f - m(theta))^T W (f - m(theta))` over `m.domain`, where `W`
/// is the inverse multinomial covariance of the four channel frequencies
/// for `n` photons. The covariance of the estimate is propagated through the
/// model jacobian.
pub fn invert_gls(m: &ResponseModel, observed: &[f64; N_CHANNELS], n: f64, weights: GlsWeights) -> Result<Estimate> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidCounts(format!("photon number must be positive, got {n}")));
    }
    if observed.iter().any(|f| !(f.is_finite() && *f >= 0.0))
        || observed.iter().sum::<f64>() > 1.0 + FREQUENCY_SUM_SLACK
    {
        return Err(Error::InvalidCounts(format!("invalid channel frequencies {observed:?}")));
    }
    m.domain.validate()?;
    let bounds = bounds_of(&m.domain);
    let obs = DVector::from_row_slice(observed);
    let solve = |w: &DMatrix<f64>| {
        let objective = |x: &[f64; 3]| {
            let r = &obs - DVector::from_row_slice(&m.eval_raw(x[0], x[1], x[2]));
            (r.transpose() * w * &r)[(0, 0)]
        };
        minimize(&objective, &bounds)
    };

    let mut w = multinomial_precision(observed, n);
    let mut sol = solve(&w);
    if weights == GlsWeights::Iterated {
        let mut total_iterations = sol.iterations;
        for _ in 0..GLS_MAX_REWEIGHTS {
            let pred = m.eval_raw(sol.x[0], sol.x[1], sol.x[2]);
            w = multinomial_precision(&pred, n);
            let next = solve(&w);
            total_iterations += next.iterations;
            let moved = (0..3)
                .map(|k| (next.x[k] - sol.x[k]).abs() / (bounds.hi[k] - bounds.lo[k]).max(1e-12))
                .fold(0.0, f64::max);
            sol = next;
            if moved < 1e-10 {
                break;
            }
        }
        sol.iterations = total_iterations;
    }

    let j = response_jacobian(m, sol.x);
    let info = j.transpose() * &w * &j;
    let info3 = nalgebra::Matrix3::from_fn(|r, c| info[(r, c)]);
    let (cov, singular) = invert_information(&info3);
    Ok(Estimate::from_solution(&sol, &m.domain, cov, !singular && sol.f.is_finite()))
}

/// One calibration measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub params: PulseParams,
    /// Averaged click frequencies of the four channels.
    pub frequencies: [f64; N_CHANNELS],
    /// Total photons behind the frequencies.
    pub counts: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub grid: Vec<CalibrationPoint>,
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        for (i, pt) in self.grid.iter().enumerate() {
            pt.params.validate()?;
            if !(pt.counts > 0.0 && pt.counts.is_finite()) {
                return Err(Error::InvalidCounts(format!("calibration point {i} has counts {}", pt.counts)));
            }
            if pt.frequencies.iter().any(|f| !(f.is_finite() && *f >= 0.0))
                || pt.frequencies.iter().sum::<f64>() > 1.0 + FREQUENCY_SUM_SLACK
            {
                return Err(Error::InvalidCounts(format!(
                    "calibration point {i} has invalid frequencies {:?}",
                    pt.frequencies
                )));
            }
        }
        Ok(())
    }

    /// Smallest box containing every grid point.
    pub fn bounding_box(&self) -> Result<ParamBox> {
        let first = self.grid.first().ok_or_else(|| Error::InvalidGrid("empty calibration set".into()))?;
        let mut lo = [first.params.tau0, first.params.tau, first.params.q];
        let mut hi = lo;
        for pt in &self.grid {
            let v = [pt.params.tau0, pt.params.tau, pt.params.q];
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        ParamBox::new([lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]])
    }
}

/// Per-channel quality of a calibration fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub r_squared: f64,
    pub max_abs_residual: f64,
    /// Weighted residual sum of squares.
    pub chi_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub channels: [ChannelFit; N_CHANNELS],
    pub n_points: usize,
}

/// Fits the ten-term response model to calibration data.
///
/// Each channel is fitted separately by weighted least squares with weights
/// `n_i / (f (1 - f))`, the inverse multinomial variance of the averaged
/// frequency (regularized as `(n f + 1/2) / (n + 1)`). Without an explicit
/// `domain` the model domain is the bounding box of the grid; with one, every
/// grid point must lie inside it.
pub fn fit_response_model(cal: &CalibrationSet, domain: Option<ParamBox>) -> Result<(ResponseModel, FitDiagnostics)> {
    cal.validate()?;
    let domain = match domain {
        Some(d) => {
            d.validate()?;
            if let Some(pt) = cal.grid.iter().find(|pt| !d.contains(&pt.params, 1e-12)) {
                return Err(Error::OutOfDomain { tau0: pt.params.tau0, tau: pt.params.tau, q: pt.params.q });
            }
            d
        }
        None => cal.bounding_box()?,
    };
    let rows = cal.grid.len();
    let x = DMatrix::from_fn(rows, N_TERMS, |i, k| {
        let p = &cal.grid[i].params;
        response_features(p.tau0, p.tau, p.q)[k]
    });
    let rank = design_rank(&x);
    if rank < N_TERMS {
        return Err(Error::RankDeficient { rank, needed: N_TERMS });
    }

    let mut coeffs = [[0.0; N_TERMS]; N_CHANNELS];
    let mut channels = [ChannelFit { r_squared: 0.0, max_abs_residual: 0.0, chi_squared: 0.0 }; N_CHANNELS];
    for j in 0..N_CHANNELS {
        let y = DVector::from_fn(rows, |i, _| cal.grid[i].frequencies[j]);
        let w = DVector::from_fn(rows, |i, _| {
            let pt = &cal.grid[i];
            let f = (pt.counts * pt.frequencies[j] + 0.5) / (pt.counts + 1.0);
            pt.counts / (f * (1.0 - f))
        });
        let sw = w.map(f64::sqrt);
        let xw = DMatrix::from_fn(rows, N_TERMS, |i, k| sw[i] * x[(i, k)]);
        let yw = y.component_mul(&sw);
        let beta = xw
            .svd(true, true)
            .solve(&yw, RANK_TOL)
            .map_err(|e| Error::InvalidGrid(format!("least-squares solve failed: {e}")))?;
        let fitted = &x * &beta;
        let resid = &y - &fitted;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = resid.iter().map(|r| r * r).sum();
        channels[j] = ChannelFit {
            r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 },
            max_abs_residual: resid.iter().fold(0.0, |a, r| a.max(r.abs())),
            chi_squared: resid.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum(),
        };
        for k in 0..N_TERMS {
            coeffs[j][k] = beta[k];
        }
    }
    Ok((ResponseModel { domain, coeffs }, FitDiagnostics { channels, n_points: rows }))
}

/// Numerical rank of the design matrix with columns scaled to unit norm.
fn design_rank(x: &DMatrix<f64>) -> usize {
    if x.nrows() < x.ncols() {
        return x.nrows().min(
            x.clone().svd(false, false).singular_values.iter().filter(|&&s| s > 0.0).count(),
        );
    }
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = xs.svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Sample statistics of one parameter over repeated estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Standard error of the sample variance under normality.
    pub se_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub n_estimates: usize,
    pub n_flagged: usize,
    /// Summaries in the order `(tau0, tau, q)`.
    pub params: [ParamSummary; 3],
}

/// Neumaier-compensated sum, so long sums are insensitive to magnitude order.
pub(crate) fn stable_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Per-parameter sample mean, bias, variance (with `n - 1`) and their
/// standard errors. Flagged estimates are included and counted.
pub fn bias_variance_report(estimates: &[Estimate], truth: &PulseParams) -> Result<BiasVarianceReport> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least two estimates, got {n}")));
    }
    let nf = n as f64;
    let truth = [truth.tau0, truth.tau, truth.q];
    let params = std::array::from_fn(|k| {
        let mean = stable_sum(estimates.iter().map(|e| e.theta()[k])) / nf;
        let variance = stable_sum(estimates.iter().map(|e| (e.theta()[k] - mean).powi(2))) / (nf - 1.0);
        ParamSummary {
            mean,
            bias: mean - truth[k],
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: variance * (2.0 / (nf - 1.0)).sqrt(),
        }
    });
    Ok(BiasVarianceReport { n_estimates: n, n_flagged: estimates.iter().filter(|e| e.flagged()).count(), params })
}
