//! SHG-FROG spectrograms of coherent and incoherent Gaussian pulse pairs.
//!
//! Spectrograms use the transform `S(omega) = dt * sum_n s(t_n) e^{-i omega t_n}`
//! evaluated by FFT, so `sum_omega |S|^2 d_omega = 2 pi dt sum_n |s_n|^2`
//! holds exactly. Delays are whole multiples of the sample spacing and the
//! gate `E(t - T)` is zero outside the sampled window.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::pulse::PulseShape;
use crate::{Error, Result};

/// Default number of time samples.
pub const DEFAULT_SAMPLES: usize = 1024;

/// Default half-width of the time window in units of sigma.
pub const DEFAULT_HALF_WIDTH: f64 = 16.0;

/// Default largest delay, in samples (8 sigma on the default grid).
pub const DEFAULT_MAX_DELAY_STEPS: usize = 256;

/// Largest boundary magnitude of the field relative to its peak.
pub const PADDING_TOL: f64 = 1e-8;

/// Smallest phase count that averages the incoherent pair exactly.
pub const MIN_PHASES: usize = 5;

/// Probe points whose signal is below this fraction of the spectrogram peak
/// are rejected by [`rayleigh_scan`].
pub const PROBE_FLOOR: f64 = 1e-12;

/// Relative step of the central difference in [`rayleigh_scan`]:
/// `h = min(DERIVATIVE_STEP * sigma, tau / 10)`.
pub const DERIVATIVE_STEP: f64 = 1e-3;

/// Magic bytes of the binary spectrogram format.
pub const BINARY_MAGIC: &[u8; 8] = b"QTFROG01";

/// A uniform axis `start + i * step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformAxis {
    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.value(i)).collect()
    }
}

/// Sampling grid of a spectrogram computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrogGrid {
    pub shape: PulseShape,
    pub n_samples: usize,
    /// Half-width of the time window in units of sigma.
    pub half_width: f64,
    pub max_delay_steps: usize,
}

impl FrogGrid {
    pub fn new(shape: PulseShape) -> Self {
        Self {
            shape,
            n_samples: DEFAULT_SAMPLES,
            half_width: DEFAULT_HALF_WIDTH,
            max_delay_steps: DEFAULT_MAX_DELAY_STEPS,
        }
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.half_width * self.shape.sigma() / self.n_samples as f64
    }

    /// Sample times `-W, -W + dt, ..., W - dt`; `t = 0` is sample `n/2`.
    pub fn time_axis(&self) -> UniformAxis {
        UniformAxis { start: -self.half_width * self.shape.sigma(), step: self.dt(), len: self.n_samples }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 8 || self.n_samples % 2 != 0 {
            return Err(Error::InvalidGrid(format!("need an even sample count >= 8, got {}", self.n_samples)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!("bad half width {}", self.half_width)));
        }
        if self.max_delay_steps >= self.n_samples {
            return Err(Error::InvalidGrid("delay range exceeds the time window".into()));
        }
        Ok(())
    }
}

/// Spectrogram values over `(T, omega)`, stored row-major by delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub omega_axis: UniformAxis,
    pub delay_axis: UniformAxis,
}

impl Spectrogram {
    pub fn at(&self, delay: usize, omega: usize) -> f64 {
        self.values[delay * self.omega_axis.len + omega]
    }

    pub fn row(&self, delay: usize) -> &[f64] {
        let n = self.omega_axis.len;
        &self.values[delay * n..(delay + 1) * n]
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Long-format CSV with header `omega,T,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "T", "value"])?;
        for d in 0..self.delay_axis.len {
            for o in 0..self.omega_axis.len {
                w.write_record([
                    self.omega_axis.value(o).to_string(),
                    self.delay_axis.value(d).to_string(),
                    self.at(d, o).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Binary grid: a 64-byte little-endian header followed by the values as
    /// `f64` LE, row-major by delay.
    ///
    /// Header layout: magic `QTFROG01` (8 bytes), `u32` format version 1,
    /// `u32` reserved zero, `u64` omega count, `u64` delay count, `f64`
    /// omega start, `f64` omega step, `f64` delay start, `f64` delay step.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + 8 * self.values.len());
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&(self.omega_axis.len as u64).to_le_bytes());
        buf.extend_from_slice(&(self.delay_axis.len as u64).to_le_bytes());
        for v in [self.omega_axis.start, self.omega_axis.step, self.delay_axis.start, self.delay_axis.step] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(buf.len(), 64);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidGrid(format!("binary spectrogram: {m}"));
        if bytes.len() < 64 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        if u32_at(8) != 1 {
            return Err(bad("unsupported version"));
        }
        let (n_omega, n_delay) = (u64_at(16) as usize, u64_at(24) as usize);
        let count = n_omega.checked_mul(n_delay).ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != 64 + 8 * count {
            return Err(bad("length does not match header"));
        }
        let values = (0..count).map(|i| f64_at(64 + 8 * i)).collect();
        Ok(Self {
            values,
            omega_axis: UniformAxis { start: f64_at(32), step: f64_at(40), len: n_omega },
            delay_axis: UniformAxis { start: f64_at(48), step: f64_at(56), len: n_delay },
        })
    }
}

fn check_uniform(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::InvalidGrid("need at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid("time axis must be increasing".into()));
    }
    for (i, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidGrid(format!("non-uniform spacing at sample {i}")));
        }
    }
    Ok(dt)
}

fn check_padding(e: &[Complex64]) -> Result<()> {
    let peak = e.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = e[0].norm().max(e[e.len() - 1].norm());
    if peak == 0.0 || edge > PADDING_TOL * peak {
        return Err(Error::InvalidGrid(format!(
            "field at the window edge is {:.3e} of its peak; widen the window",
            if peak == 0.0 { f64::NAN } else { edge / peak }
        )));
    }
    Ok(())
}

/// SHG-FROG spectrogram `|int E(t) E(t - T) e^{-i omega t} dt|^2`.
///
/// `t` must be uniform and `e` must have decayed to [`PADDING_TOL`] of its
/// peak at both ends. Delays run over `-max_delay_steps..=max_delay_steps`
/// samples; the frequency axis is the FFT grid in increasing order.
pub fn shg_frog(e: &[Complex64], t: &[f64], max_delay_steps: usize) -> Result<Spectrogram> {
    if e.len() != t.len() {
        return Err(Error::InvalidGrid(format!("{} field samples for {} times", e.len(), t.len())));
    }
    let dt = check_uniform(t)?;
    check_padding(e)?;
    let n = e.len();
    if max_delay_steps >= n {
        return Err(Error::InvalidGrid("delay range exceeds the time window".into()));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let half = n / 2;
    let n_delays = 2 * max_delay_steps + 1;
    let mut values = vec![0.0; n_delays * n];
    values.par_chunks_mut(n).enumerate().for_each(|(d, row)| {
        let shift = d as isize - max_delay_steps as isize;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                let j = i as isize - shift;
                if (0..n as isize).contains(&j) {
                    e[i] * e[j as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        fft.process(&mut buf);
        // reorder to increasing frequency: bins half.., then 0..half
        for (k, v) in row.iter_mut().enumerate() {
            let bin = (k + n - half) % n;
            *v = (dt * buf[bin]).norm_sqr();
        }
    });
    let d_omega = 2.0 * PI / (n as f64 * dt);
    Ok(Spectrogram {
        values,
        omega_axis: UniformAxis { start: -(half as f64) * d_omega, step: d_omega, len: n },
        delay_axis: UniformAxis { start: -(max_delay_steps as f64) * dt, step: dt, len: n_delays },
    })
}

/// The pulse envelope `u_0(t - center)` sampled on the grid.
pub fn gaussian_field(grid: &FrogGrid, center: f64) -> Vec<Complex64> {
    let s = grid.shape.sigma();
    let norm = (2.0 * PI * s * s).powf(-0.25);
    grid.time_axis()
        .values()
        .into_iter()
        .map(|t| Complex64::new(norm * (-(t - center).powi(2) / (4.0 * s * s)).exp(), 0.0))
        .collect()
}

/// `E(t - tau/2) + e^{i phi} E(t + tau/2)`.
fn pair_field(grid: &FrogGrid, tau: f64, phi: f64) -> Vec<Complex64> {
    let a = gaussian_field(grid, 0.5 * tau);
    let b = gaussian_field(grid, -0.5 * tau);
    let ph = Complex64::from_polar(1.0, phi);
    a.iter().zip(&b).map(|(x, y)| x + ph * y).collect()
}

fn check_phases(n_phases: usize) -> Result<()> {
    if n_phases < MIN_PHASES {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_PHASES} phases are needed, got {n_phases}"
        )));
    }
    Ok(())
}

/// Spectrogram of the incoherent pair, averaged over `n_phases` equally
/// spaced relative phases `2 pi k / n_phases`.
pub fn incoherent_spectrogram(tau: f64, grid: &FrogGrid, n_phases: usize) -> Result<Spectrogram> {
    check_phases(n_phases)?;
    grid.validate()?;
    let t = grid.time_axis().values();
    let mut acc: Option<Spectrogram> = None;
    for k in 0..n_phases {
        let phi = 2.0 * PI * k as f64 / n_phases as f64;
        let s = shg_frog(&pair_field(grid, tau, phi), &t, grid.max_delay_steps)?;
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) => a.values.iter_mut().zip(&s.values).for_each(|(x, y)| *x += y),
        }
    }
    let mut out = acc.expect("at least one phase");
    let inv = 1.0 / n_phases as f64;
    out.values.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// `dt * sum_n s_n e^{-i omega t_n}` for `s_n = E(t_n) E(t_n - T)`.
fn signal_transform(e: &[Complex64], t: &UniformAxis, shift: isize, omega: f64) -> Complex64 {
    let n = e.len() as isize;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let j = i - shift;
        if (0..n).contains(&j) {
            acc += e[i as usize] * e[j as usize] * Complex64::from_polar(1.0, -omega * t.value(i as usize));
        }
    }
    t.step * acc
}

/// Phase-averaged incoherent signal at one point `(omega, T)`, `T` given in
/// samples. Equal to the corresponding [`incoherent_spectrogram`] entry when
/// `omega` lies on the FFT grid.
pub fn incoherent_point(tau: f64, grid: &FrogGrid, omega: f64, delay_steps: isize, n_phases: usize) -> Result<f64> {
    check_phases(n_phases)?;
    grid.validate()?;
    let t = grid.time_axis();
    let mut sum = 0.0;
    for k in 0..n_phases {
        let phi = 2.0 * PI * k as f64 / n_phases as f64;
        let e = pair_field(grid, tau, phi);
        check_padding(&e)?;
        sum += signal_transform(&e, &t, delay_steps, omega).norm_sqr();
    }
    Ok(sum / n_phases as f64)
}

/// The two-term expression `2 cos(tau T) I(omega, T) + A(tau) A(-tau)`
/// evaluated exactly as written, with
/// `A(tau) = int E(t - tau/2) E(t + tau/2 - T) e^{-i omega t} dt` and `I` the
/// single-pulse spectrogram. Provided for comparison with the phase average,
/// which it does not reproduce in general.
pub fn printed_closed_form(tau: f64, grid: &FrogGrid, omega: f64, delay_steps: isize) -> Complex64 {
    let t = grid.time_axis();
    let big_t = delay_steps as f64 * t.step;
    let e0 = gaussian_field(grid, 0.0);
    let single = signal_transform(&e0, &t, delay_steps, omega).norm_sqr();
    let a = |tau: f64| {
        let ea = gaussian_field(grid, 0.5 * tau);
        let eb: Vec<Complex64> = gaussian_field(grid, -0.5 * tau + big_t);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..t.len {
            acc += ea[i] * eb[i] * Complex64::from_polar(1.0, -omega * t.value(i));
        }
        t.step * acc
    };
    2.0 * (tau * big_t).cos() * single + a(tau) * a(-tau)
}

/// One row of a Rayleigh scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub tau: f64,
    pub intensity: f64,
    pub d_intensity: f64,
    pub var_tau: f64,
}

/// Where the spectrogram is read in a Rayleigh scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub omega: f64,
    /// Requested delay; rounded to the nearest sample multiple.
    pub delay: f64,
}

impl Probe {
    pub fn delay_steps(&self, grid: &FrogGrid) -> isize {
        (self.delay / grid.dt()).round() as isize
    }
}

/// Signal, slope and linear error propagation `var_I / (dI/dtau)^2` at a
/// fixed probe for each `tau`.
///
/// The slope is a central difference with step
/// `h = min(DERIVATIVE_STEP * sigma, tau / 10)`. Probes where the signal at
/// the smallest `tau` is below [`PROBE_FLOOR`] of the spectrogram peak are
/// rejected.
pub fn rayleigh_scan(taus: &[f64], probe: Probe, noise_var: f64, grid: &FrogGrid, n_phases: usize) -> Result<Vec<ScanRow>> {
    if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter("separations must be positive".into()));
    }
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("separations must be sorted".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance {noise_var} must be non-negative")));
    }
    let steps = probe.delay_steps(grid);
    if steps.unsigned_abs() > grid.max_delay_steps.max(grid.n_samples / 2) {
        return Err(Error::ProbeRejected(format!("delay {} outside the window", probe.delay)));
    }
    if let Some(&t_min) = taus.first() {
        // the peak of the incoherent spectrogram sits at omega = 0, T = 0
        let peak = incoherent_point(t_min, grid, 0.0, 0, n_phases)?;
        let at_probe = incoherent_point(t_min, grid, probe.omega, steps, n_phases)?;
        if at_probe < PROBE_FLOOR * peak {
            return Err(Error::ProbeRejected(format!(
                "signal {at_probe:.3e} below {PROBE_FLOOR:.0e} of the peak {peak:.3e}"
            )));
        }
    }
    let sigma = grid.shape.sigma();
    taus.par_iter()
        .map(|&tau| {
            let h = (DERIVATIVE_STEP * sigma).min(0.1 * tau);
            let at = |x: f64| incoherent_point(x, grid, probe.omega, steps, n_phases);
            let intensity = at(tau)?;
            let d_intensity = (at(tau + h)? - at(tau - h)?) / (2.0 * h);
            Ok(ScanRow { tau, intensity, d_intensity, var_tau: noise_var / (d_intensity * d_intensity) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(max_delay_steps: usize) -> FrogGrid {
        FrogGrid { max_delay_steps, ..FrogGrid::new(PulseShape::unit()) }
    }

    #[test]
    fn gaussian_spectrogram_is_separable_gaussian() {
        let grid = unit_grid(64);
        let e = gaussian_field(&grid, 0.0);
        let s = shg_frog(&e, &grid.time_axis().values(), 64).unwrap();
        for d in (0..s.delay_axis.len).step_by(7) {
            for o in (0..s.omega_axis.len).step_by(13) {
                let (w, t) = (s.omega_axis.value(o), s.delay_axis.value(d));
                let expect = (-t * t / 4.0 - w * w).exp();
                assert!((s.at(d, o) - expect).abs() < 1e-12, "{w} {t}");
            }
        }
        assert_eq!(s.delay_axis.value(64), 0.0);
        assert_eq!(s.omega_axis.value(512), 0.0);
    }

    #[test]
    fn parseval_holds_per_delay() {
        let grid = unit_grid(32);
        let e = pair_field(&grid, 1.3, 0.7);
        let t = grid.time_axis();
        let s = shg_frog(&e, &t.values(), 32).unwrap();
        for d in 0..s.delay_axis.len {
            let shift = d as isize - 32;
            let energy: f64 = (0..e.len() as isize)
                .filter(|i| (0..e.len() as isize).contains(&(i - shift)))
                .map(|i| (e[i as usize] * e[(i - shift) as usize]).norm_sqr())
                .sum::<f64>()
                * t.step
                * 2.0
                * PI;
            let spec: f64 = s.row(d).iter().sum::<f64>() * s.omega_axis.step;
            assert!((spec - energy).abs() <= 1e-10 * energy.max(1e-300), "{d}: {spec} vs {energy}");
        }
    }

    #[test]
    fn delayed_field_gives_same_spectrogram() {
        let grid = unit_grid(32);
        let t = grid.time_axis();
        let s0 = shg_frog(&gaussian_field(&grid, 0.0), &t.values(), 32).unwrap();
        let s1 = shg_frog(&gaussian_field(&grid, 10.0 * t.step), &t.values(), 32).unwrap();
        for (a, b) in s0.values.iter().zip(&s1.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let grid = unit_grid(8);
        let e = gaussian_field(&grid, 0.0);
        let mut t = grid.time_axis().values();
        t[100] += 1e-3;
        assert!(matches!(shg_frog(&e, &t, 8), Err(Error::InvalidGrid(_))));
        let narrow = FrogGrid { half_width: 3.0, ..grid };
        let e = gaussian_field(&narrow, 0.0);
        assert!(matches!(shg_frog(&e, &narrow.time_axis().values(), 8), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn coincident_pair_is_six_single_spectrograms() {
        let grid = unit_grid(16);
        let single = shg_frog(&gaussian_field(&grid, 0.0), &grid.time_axis().values(), 16).unwrap();
        let pair = incoherent_spectrogram(0.0, &grid, 64).unwrap();
        for (a, b) in pair.values.iter().zip(&single.values) {
            assert!((a - 6.0 * b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn incoherent_spectrogram_is_even_in_tau_and_nonnegative() {
        let grid = unit_grid(16);
        let a = incoherent_spectrogram(0.7, &grid, 5).unwrap();
        let b = incoherent_spectrogram(-0.7, &grid, 5).unwrap();
        let peak = a.peak();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(*x >= 0.0);
            assert!((x - y).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn too_few_phases_rejected() {
        assert!(incoherent_spectrogram(0.5, &unit_grid(4), 4).is_err());
    }

    #[test]
    fn point_evaluation_matches_fft() {
        let grid = unit_grid(16);
        let s = incoherent_spectrogram(0.9, &grid, 5).unwrap();
        let (d, o) = (20, 515);
        let v = incoherent_point(0.9, &grid, s.omega_axis.value(o), d as isize - 16, 5).unwrap();
        assert!((v - s.at(d, o)).abs() <= 1e-12 * s.peak());
    }

    #[test]
    fn binary_round_trip() {
        let grid = unit_grid(4);
        let s = incoherent_spectrogram(0.3, &grid, 5).unwrap();
        let bytes = s.to_binary();
        assert_eq!(bytes.len(), 64 + 8 * s.values.len());
        assert_eq!(Spectrogram::from_binary(&bytes).unwrap(), s);
        assert!(Spectrogram::from_binary(&bytes[..100]).is_err());
    }

    #[test]
    fn scan_rejects_dark_probe_and_unsorted_input() {
        let grid = FrogGrid::new(PulseShape::unit());
        let far = Probe { omega: 40.0, delay: 0.0 };
        assert!(matches!(rayleigh_scan(&[0.1], far, 1.0, &grid, 5), Err(Error::ProbeRejected(_))));
        let probe = Probe { omega: 0.5, delay: 1.0 };
        assert!(rayleigh_scan(&[0.2, 0.1], probe, 1.0, &grid, 5).is_err());
        assert!(rayleigh_scan(&[0.0], probe, 1.0, &grid, 5).is_err());
    }
}
