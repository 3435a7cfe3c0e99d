//! Fisher information and Cramér-Rao bounds for three detection strategies.
//!
//! - direct detection: a detector with perfect time resolution records the
//!   arrival time of every photon;
//! - the four-projector measurement, with a sink outcome for photons outside
//!   the projected subspace;
//! - the quantum limit, from symmetric logarithmic derivatives of the
//!   two-pulse density matrix.
//!
//! All matrices use the parameter order `(tau0, tau, q)` and the caller's
//! time units, so time-time entries carry `1/sigma^2`.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::measurement::{channel_jacobian, ProjectorSet, N_CHANNELS};
use crate::pulse::{gaussian_density, overlap_coeff_derivs, overlap_coeffs, PulseParams};
use crate::quadrature::{CompositeRule, PANEL_WIDTH, WINDOW_HALF_WIDTH};
use crate::{Error, Result};

/// Separation used in place of `tau = 0` by [`povm_fisher`], in units of sigma.
pub const POVM_TAU_FLOOR: f64 = 1e-6;

/// Separation used in place of smaller separations by [`qfi_matrix`], in units
/// of sigma. Below it the second eigenvalue of the density matrix, which
/// scales as `tau^2`, approaches the eigen-solver's absolute resolution.
pub const QFI_TAU_FLOOR: f64 = 1e-4;

/// SLD cutoff on `lambda_i + lambda_j`, relative to the largest eigenvalue.
pub const SLD_EPSILON: f64 = 1e-12;

/// Relative change tolerated between `n_modes` and `2 n_modes` in [`qfi_matrix`].
pub const QFI_TRUNCATION_TOL: f64 = 1e-6;

/// Condition number above which a matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// How photons are distributed over the four projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountingMode {
    /// One multinomial draw over the four channels and the sink.
    #[default]
    Multinomial,
    /// Each projection measured separately with `floor(N/4)` photons.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FisherFlags {
    /// Condition number above [`SINGULAR_CONDITION`] or a non-positive eigenvalue.
    pub near_singular: bool,
    /// The separation was raised to the documented floor.
    pub tau_floor_applied: bool,
    /// An outcome had zero probability with a non-zero gradient.
    pub unresolved_zero_outcome: bool,
}

/// A 3x3 Fisher information matrix for `n_photons` detected photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub entries: [[f64; 3]; 3],
    pub n_photons: f64,
    pub flags: FisherFlags,
}

impl FisherMatrix {
    fn from_scaled(entries: [[f64; 3]; 3], sigma: f64, n_photons: f64) -> Self {
        let unit = [1.0 / sigma, 1.0 / sigma, 1.0];
        let mut e = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                e[k][l] = n_photons * entries[k][l] * unit[k] * unit[l];
            }
        }
        let mut f = Self { entries: e, n_photons, flags: FisherFlags::default() };
        f.flags.near_singular = condition_number(&f.matrix()) > SINGULAR_CONDITION;
        f
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.entries[r][c])
    }

    /// The same information for `n` photons instead of `n_photons`.
    pub fn rescaled(&self, n: f64) -> Self {
        let s = n / self.n_photons;
        let mut out = *self;
        out.entries = self.entries.map(|row| row.map(|x| x * s));
        out.n_photons = n;
        out
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let e = self.matrix().symmetric_eigenvalues();
        let mut v = [e[0], e[1], e[2]];
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FisherJson::from(self))?)
    }
}

#[derive(Serialize)]
struct FisherJson<'a> {
    order: [&'static str; 3],
    n_photons: f64,
    entries: &'a [[f64; 3]; 3],
    flags: &'a FisherFlags,
}

impl<'a> From<&'a FisherMatrix> for FisherJson<'a> {
    fn from(f: &'a FisherMatrix) -> Self {
        Self { order: crate::PARAM_ORDER, n_photons: f.n_photons, entries: &f.entries, flags: &f.flags }
    }
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let e = m.symmetric_eigenvalues();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Fisher information of time-resolved intensity detection.
///
/// `F_kl = N integral (d_k I)(d_l I) / I dt` with analytic derivatives of the
/// two-Gaussian intensity, integrated with the composite Gauss-Legendre rule
/// on `[a - 12 sigma - tau, b + 12 sigma + tau]`.
pub fn direct_fisher(p: &PulseParams, n_photons: f64) -> FisherMatrix {
    let [_, tau, q] = p.scaled();
    let sigma = p.shape.sigma();
    let (a, b) = p.centers();
    let (a, b) = (a / sigma, b / sigma);
    let rule = CompositeRule::new(
        a - WINDOW_HALF_WIDTH - tau,
        b + WINDOW_HALF_WIDTH + tau,
        PANEL_WIDTH,
    );
    let mut f = [[0.0; 3]; 3];
    for &(x, w) in rule.points() {
        let ga = gaussian_density(x - a);
        let gb = gaussian_density(x - b);
        let i = q * ga + (1.0 - q) * gb;
        if i <= 0.0 {
            continue;
        }
        let sa = q * ga * (x - a);
        let sb = (1.0 - q) * gb * (x - b);
        let d = [sa + sb, 0.5 * (sb - sa), ga - gb];
        for k in 0..3 {
            for l in k..3 {
                f[k][l] += w * d[k] * d[l] / i;
            }
        }
    }
    symmetrize(&mut f);
    FisherMatrix::from_scaled(f, sigma, n_photons)
}

fn symmetrize(f: &mut [[f64; 3]; 3]) {
    for k in 0..3 {
        for l in 0..k {
            f[k][l] = f[l][k];
        }
    }
}

/// Carries an information matrix evaluated at a separation floor down to a
/// separation `ratio` times smaller.
///
/// `d rho / d q = |A><A| - |B><B|` vanishes linearly as the pulses merge, so
/// the `q` cross terms scale as `tau` and the `(q, q)` entry as `tau^2`; the
/// remaining entries are already at their limit. At coincidence the `q` row
/// is exactly zero.
fn taper_q(f: &mut [[f64; 3]; 3], ratio: f64) {
    for k in 0..2 {
        f[2][k] *= ratio;
        f[k][2] *= ratio;
    }
    f[2][2] *= ratio * ratio;
}

/// Fisher information of the projector measurement.
pub fn povm_fisher(p: &PulseParams, set: &ProjectorSet, n_photons: f64, mode: CountingMode) -> FisherMatrix {
    povm_fisher_with_efficiency(p, set, n_photons, mode, 1.0)
}

/// [`povm_fisher`] with every channel scaled by a detection efficiency `eta`.
///
/// Separations below [`POVM_TAU_FLOOR`] are evaluated at the floor, where the
/// dark-channel terms `(dp)^2/p` have already reached their finite limit;
/// the `q` row and column follow their leading order (see [`taper_q`]).
pub fn povm_fisher_with_efficiency(
    p: &PulseParams,
    set: &ProjectorSet,
    n_photons: f64,
    mode: CountingMode,
    eta: f64,
) -> FisherMatrix {
    let sigma = p.shape.sigma();
    let mut eval = *p;
    let floored = p.tau < POVM_TAU_FLOOR * sigma;
    if floored {
        eval.tau = POVM_TAU_FLOOR * sigma;
    }
    let (probs, jac) = channel_jacobian(&eval, set);
    let tau_ratio = p.tau / eval.tau;
    let outcomes = probs.outcomes();
    let mut unresolved = false;
    let mut f = [[0.0; 3]; 3];
    let mut add = |weight: f64, grad: [f64; 3], denom: f64| {
        if denom <= 0.0 {
            if grad.iter().any(|g| *g != 0.0) {
                unresolved = true;
            }
            return;
        }
        for k in 0..3 {
            for l in k..3 {
                f[k][l] += weight * grad[k] * grad[l] / denom;
            }
        }
    };
    match mode {
        CountingMode::Multinomial => {
            // Outcome probabilities eta p_j and 1 - eta sum p_j.
            for j in 0..N_CHANNELS {
                add(1.0, jac[j].map(|g| eta * g), eta * outcomes[j]);
            }
            let sink = 1.0 - eta * (1.0 - outcomes[N_CHANNELS]);
            add(1.0, jac[N_CHANNELS].map(|g| eta * g), sink);
        }
        CountingMode::Sequential => {
            let per_channel = (n_photons / N_CHANNELS as f64).floor() / n_photons;
            for j in 0..N_CHANNELS {
                let pj = eta * outcomes[j];
                add(per_channel, jac[j].map(|g| eta * g), pj * (1.0 - pj));
            }
        }
    }
    symmetrize(&mut f);
    if floored {
        taper_q(&mut f, tau_ratio);
    }
    let mut out = FisherMatrix::from_scaled(f, sigma, n_photons);
    out.flags.tau_floor_applied = floored;
    out.flags.unresolved_zero_outcome = unresolved;
    out
}

/// Quantum Fisher information per photon from symmetric logarithmic derivatives.
///
/// The density matrix `q |A><A| + (1-q) |B><B|` is built from the first
/// `n_modes` Hermite-Gauss amplitudes of each pulse. With eigenpairs
/// `(lambda_i, |i>)` the SLD components are
/// `(L_k)_ij = 2 <i|d_k rho|j> / (lambda_i + lambda_j)` for
/// `lambda_i + lambda_j > SLD_EPSILON * lambda_max` and zero otherwise, and
/// `Q_kl = Re tr(rho L_k L_l)`.
///
/// Separations below [`QFI_TAU_FLOOR`] are evaluated at the floor, with the
/// `q` row and column scaled down to the actual separation (see [`taper_q`]).
///
/// The result is cross-checked against `2 n_modes` modes and rejected when
/// any entry moves by more than [`QFI_TRUNCATION_TOL`] relative to the
/// largest entry.
pub fn qfi_matrix(p: &PulseParams, n_modes: usize) -> Result<FisherMatrix> {
    if n_modes < 8 {
        return Err(Error::InvalidParameter(format!(
            "at least 8 modes are required, got {n_modes}"
        )));
    }
    let sigma = p.shape.sigma();
    let mut theta = p.scaled();
    let tau_ratio = theta[1] / QFI_TAU_FLOOR;
    let floored = theta[1] < QFI_TAU_FLOOR;
    if floored {
        theta[1] = QFI_TAU_FLOOR;
    }
    let q_n = qfi_scaled(theta, n_modes);
    let q_2n = qfi_scaled(theta, 2 * n_modes);
    let scale = q_2n.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let change = q_n
        .iter()
        .flatten()
        .zip(q_2n.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let rel = if scale > 0.0 { change / scale } else { change };
    if rel > QFI_TRUNCATION_TOL {
        return Err(Error::TruncationNotConverged(rel));
    }
    let mut q_n = q_n;
    if floored {
        taper_q(&mut q_n, tau_ratio);
    }
    let mut out = FisherMatrix::from_scaled(q_n, sigma, 1.0);
    out.flags.tau_floor_applied = floored;
    Ok(out)
}

/// Dimensionless QFI for `theta = (tau0, tau, q)` in units of sigma.
pub(crate) fn qfi_scaled(theta: [f64; 3], n_modes: usize) -> [[f64; 3]; 3] {
    let [tau0, tau, q] = theta;
    // Coefficients far below rounding of the leading ones are flushed to
    // zero; subnormal entries derail the eigensolver.
    let flush = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| if x.abs() < 1e-40 { 0.0 } else { x }).collect() };
    let ca = flush(overlap_coeffs(tau0 - 0.5 * tau, n_modes + 1));
    let cb = flush(overlap_coeffs(tau0 + 0.5 * tau, n_modes + 1));
    let da = flush(overlap_coeff_derivs(&ca, n_modes));
    let db = flush(overlap_coeff_derivs(&cb, n_modes));
    let ca = &ca[..n_modes];
    let cb = &cb[..n_modes];

    let rho = DMatrix::from_fn(n_modes, n_modes, |i, j| {
        q * ca[i] * ca[j] + (1.0 - q) * cb[i] * cb[j]
    });
    let eig = SymmetricEigen::new(rho);
    let lambda = eig.eigenvalues;
    let v = eig.eigenvectors;
    let lam_max = lambda.iter().copied().fold(0.0f64, f64::max);
    let cutoff = SLD_EPSILON * lam_max;

    let rotate = |x: &[f64]| -> Vec<f64> {
        (0..n_modes)
            .map(|i| (0..n_modes).map(|r| v[(r, i)] * x[r]).sum())
            .collect()
    };
    let (a, b, a_d, b_d) = (rotate(ca), rotate(cb), rotate(&da), rotate(&db));

    // Components of d_k rho in the eigenbasis.
    let drho = |i: usize, j: usize| -> [f64; 3] {
        let sym_a = a_d[i] * a[j] + a[i] * a_d[j];
        let sym_b = b_d[i] * b[j] + b[i] * b_d[j];
        [
            q * sym_a + (1.0 - q) * sym_b,
            0.5 * (-q * sym_a + (1.0 - q) * sym_b),
            a[i] * a[j] - b[i] * b[j],
        ]
    };

    let mut out = [[0.0; 3]; 3];
    for i in 0..n_modes {
        for j in 0..n_modes {
            let s = lambda[i] + lambda[j];
            if s <= cutoff {
                continue;
            }
            let d = drho(i, j);
            for k in 0..3 {
                for l in k..3 {
                    out[k][l] += 2.0 * d[k] * d[l] / s;
                }
            }
        }
    }
    symmetrize(&mut out);
    out
}

/// Which parameters a bound is reported for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask(pub [bool; 3]);

impl ParamMask {
    pub const ALL: Self = Self([true, true, true]);
    pub const TAU0: Self = Self([true, false, false]);
    pub const TAU: Self = Self([false, true, false]);
    pub const Q: Self = Self([false, false, true]);

    fn indices(&self) -> Vec<usize> {
        (0..3).filter(|&k| self.0[k]).collect()
    }
}

/// Treatment of the parameters outside the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nuisance {
    /// Unmasked parameters are known: invert the masked sub-block of `F`.
    Fixed,
    /// All three parameters are estimated: take the masked block of `F^-1`.
    #[default]
    Joint,
}

/// A Cramér-Rao bound. Entries outside the mask are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbMatrix {
    pub entries: [[f64; 3]; 3],
    pub mask: ParamMask,
    pub nuisance: Nuisance,
    pub condition: f64,
    /// The inverted matrix was singular; entries come from a pseudo-inverse.
    pub singular: bool,
}

impl CrlbMatrix {
    /// Variance bound for parameter `k` (`0 = tau0, 1 = tau, 2 = q`).
    pub fn variance(&self, k: usize) -> f64 {
        self.entries[k][k]
    }
}

/// Inverts the Fisher information for the parameters selected by `mask`.
///
/// Singular input (condition number above [`SINGULAR_CONDITION`]) yields a
/// pseudo-inverse with the `singular` flag set; parameters with a component
/// along the null space get an infinite variance on the diagonal.
pub fn crlb(f: &FisherMatrix, mask: ParamMask, nuisance: Nuisance) -> CrlbMatrix {
    let idx_all: Vec<usize> = (0..3).collect();
    let sel = mask.indices();
    let inv_idx = match nuisance {
        Nuisance::Fixed => sel.clone(),
        Nuisance::Joint => idx_all,
    };
    let m = DMatrix::from_fn(inv_idx.len(), inv_idx.len(), |r, c| f.entries[inv_idx[r]][inv_idx[c]]);
    let (inv, condition, null_hits) = symmetric_pinv(&m);
    let singular = condition > SINGULAR_CONDITION;
    let mut entries = [[0.0; 3]; 3];
    for (r, &kr) in inv_idx.iter().enumerate() {
        for (c, &kc) in inv_idx.iter().enumerate() {
            if mask.0[kr] && mask.0[kc] {
                entries[kr][kc] = inv[(r, c)];
            }
        }
        if singular && null_hits[r] && mask.0[kr] {
            entries[kr][kr] = f64::INFINITY;
        }
    }
    CrlbMatrix { entries, mask, nuisance, condition, singular }
}

/// Pseudo-inverse of a symmetric matrix, its condition number, and for each
/// coordinate whether it overlaps an eigenvector below the cutoff.
pub(crate) fn symmetric_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, f64, Vec<bool>) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 1.0, Vec::new());
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0f64, |a, b| a.max(b.abs()));
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if lmin <= 0.0 || lmax == 0.0 { f64::INFINITY } else { lmax / lmin };
    let cut = lmax / SINGULAR_CONDITION;
    let mut inv = DMatrix::zeros(n, n);
    let mut null_hits = vec![false; n];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lam > cut && lam > 0.0 {
            inv += (&v * v.transpose()) / lam;
        } else {
            for r in 0..n {
                if v[r].abs() > 1e-8 {
                    null_hits[r] = true;
                }
            }
        }
    }
    (inv, condition, null_hits)
}
