//! JSON configurations of the subcommands.
//!
//! Every field has a default, so `{}` is a valid configuration for every
//! command. Unknown fields are rejected. Times are in the units of `sigma`.

use serde::{Deserialize, Serialize};
use timing_core::estimation::GlsWeights;
use timing_core::frog::{DEFAULT_HALF_WIDTH, DEFAULT_MAX_DELAY_STEPS, DEFAULT_SAMPLES, MIN_PHASES};
use timing_core::{CountingMode, Nuisance, PulseParams, PulseShape};

/// Cartesian product of value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub tau0: Vec<f64>,
    pub tau: Vec<f64>,
    pub q: Vec<f64>,
}

impl GridSpec {
    /// Points ordered with `q` outermost, then `tau0`, then `tau`.
    pub fn points(&self, shape: PulseShape) -> timing_core::Result<Vec<PulseParams>> {
        let mut out = Vec::with_capacity(self.tau0.len() * self.tau.len() * self.q.len());
        for &q in &self.q {
            for &tau0 in &self.tau0 {
                for &tau in &self.tau {
                    out.push(PulseParams::new(tau0, tau, q, shape)?);
                }
            }
        }
        Ok(out)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn default_sigma() -> f64 {
    1.0
}

fn default_photons() -> f64 {
    69000.0
}

fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbabilitiesConfig {
    pub sigma: f64,
    pub grid: GridSpec,
}

impl Default for ProbabilitiesConfig {
    /// Response curves for `q in {0.125, 0.25, 0.5}`, `tau0 = 0`,
    /// `tau in [0, 3] sigma`.
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            grid: GridSpec { tau0: vec![0.0], tau: linspace(0.0, 3.0, 31), q: vec![0.125, 0.25, 0.5] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub sigma: f64,
    pub n_photons: f64,
    pub grid: GridSpec,
    pub counting_mode: CountingMode,
    pub detection_efficiency: f64,
    pub bound_kind: Nuisance,
}

impl Default for BoundsConfig {
    /// `q = 0.125`, `tau0 = 0`, 41 separations in `[0, 2] sigma`, 69000 photons.
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            n_photons: default_photons(),
            grid: GridSpec { tau0: vec![0.0], tau: linspace(0.0, 2.0, 41), q: vec![0.125] },
            counting_mode: CountingMode::Multinomial,
            detection_efficiency: default_efficiency(),
            bound_kind: Nuisance::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub sigma: f64,
    pub grid: GridSpec,
    /// Photons per grid point; `null` uses the exact probabilities.
    pub photons_per_point: Option<u64>,
    pub seed: u64,
    pub detection_efficiency: f64,
    /// Fit an existing calibration table instead of simulating one.
    pub calibration_csv: Option<String>,
}

impl Default for CalibrateConfig {
    /// Ten separations in `[0, 2] sigma`, six imbalances, three midpoints,
    /// about 23 million photons in total.
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            grid: GridSpec {
                tau0: vec![-0.25, 0.0, 0.25],
                tau: linspace(0.0, 2.0, 10),
                q: vec![0.125, 0.2, 0.3, 0.45, 0.6, 0.75],
            },
            photons_per_point: Some(23_000_000 / 180),
            seed: 0,
            detection_efficiency: default_efficiency(),
            calibration_csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Ml,
    Gls,
}

/// One set of observed counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub channels: [u64; 4],
    pub sink: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub sigma: f64,
    pub estimator: EstimatorKind,
    /// Response model JSON, required for GLS.
    pub model: Option<String>,
    pub gls_weights: GlsWeights,
    pub counting_mode: CountingMode,
    pub detection_efficiency: f64,
    pub observations: Vec<Observation>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            estimator: EstimatorKind::Ml,
            model: None,
            gls_weights: GlsWeights::Observed,
            counting_mode: CountingMode::Multinomial,
            detection_efficiency: default_efficiency(),
            observations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub sigma: f64,
    pub grid: GridSpec,
    pub photons_per_run: u64,
    pub repetitions: usize,
    pub seed: u64,
    pub counting_mode: CountingMode,
    pub detection_efficiency: f64,
    pub bound_kind: Nuisance,
    pub estimator: EstimatorKind,
    pub model: Option<String>,
    pub gls_weights: GlsWeights,
    /// Also write every run to `runs.csv`.
    pub write_runs: bool,
}

impl Default for MonteCarloConfig {
    /// `q in {0.125, 0.25, 0.5}`, ten separations in `[0, 2] sigma`,
    /// `tau0 = 0`, 69000 photons, 100 repetitions.
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            grid: GridSpec { tau0: vec![0.0], tau: linspace(0.0, 2.0, 10), q: vec![0.125, 0.25, 0.5] },
            photons_per_run: 69000,
            repetitions: 100,
            seed: 69000,
            counting_mode: CountingMode::Multinomial,
            detection_efficiency: default_efficiency(),
            bound_kind: Nuisance::Joint,
            estimator: EstimatorKind::Ml,
            model: None,
            gls_weights: GlsWeights::Observed,
            write_runs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub omega: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrogConfig {
    pub sigma: f64,
    pub n_samples: usize,
    /// Half-width of the time window in units of `sigma`.
    pub half_width: f64,
    pub max_delay_steps: usize,
    pub n_phases: usize,
    pub taus: Vec<f64>,
    pub probe: ProbeSpec,
    pub noise_var: f64,
    /// Also export the incoherent spectrogram at this separation.
    pub spectrogram_tau: Option<f64>,
}

impl Default for FrogConfig {
    /// Nine log-spaced separations in `[0.01, 0.1]` followed by `0.2 .. 3`,
    /// probe at `omega = 1`, `T = 1`, all for `sigma = 1`.
    fn default() -> Self {
        let mut taus: Vec<f64> = (0..9).map(|i| 10f64.powf(-2.0 + i as f64 / 8.0)).collect();
        taus.extend([0.2, 0.5, 1.0, 2.0, 3.0]);
        Self {
            sigma: default_sigma(),
            n_samples: DEFAULT_SAMPLES,
            half_width: DEFAULT_HALF_WIDTH,
            max_delay_steps: DEFAULT_MAX_DELAY_STEPS,
            n_phases: MIN_PHASES,
            taus,
            probe: ProbeSpec { omega: 1.0, delay: 1.0 },
            noise_var: 1.0,
            spectrogram_tau: None,
        }
    }
}
