//! Seeded photon-counting Monte Carlo.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`). Each
//! repetition owns one stream: the generator is seeded from the 64-bit
//! experiment seed with `seed_from_u64` and its stream id is set to
//! `(truth_index << 32) | repetition`. Results therefore do not depend on
//! the thread schedule or on the order in which runs execute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, HyperGeoError, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimation::{
    bias_variance_report, invert_gls, ml_estimate, BiasVarianceReport, Counts, Estimate, ExactForward,
    GlsWeights, N_OUTCOMES,
};
use crate::information::{
    crlb, direct_fisher, povm_fisher_with_efficiency, qfi_matrix, CountingMode, Nuisance, ParamMask,
};
use crate::measurement::{canonical_projectors, channel_probabilities, ChannelProbabilities, ResponseModel, N_CHANNELS};
use crate::pulse::{PulseParams, PulseShape, DEFAULT_TRUNCATION};
use crate::{Error, Result, PARAM_ORDER};

/// The generator behind every random draw.
pub type SimRng = ChaCha20Rng;

/// Generator for repetition `rep` of truth point `point`.
pub fn stream_rng(seed: u64, point: u32, rep: u32) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | rep as u64);
    rng
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability checked above").sample(rng)
}

/// Draws photon counts for `n` photons.
///
/// Multinomial mode draws all five outcomes jointly (as a chain of
/// conditional binomials). Sequential mode gives each channel `floor(n/4)`
/// trials and an independent binomial; the sink then holds everything not
/// counted, including the `n mod 4` unassigned photons.
pub fn sample_counts<R: Rng + ?Sized>(probs: &ChannelProbabilities, n: u64, mode: CountingMode, rng: &mut R) -> Counts {
    let p = probs.outcomes().map(|x| x.max(0.0));
    let mut channels = [0u64; N_CHANNELS];
    match mode {
        CountingMode::Multinomial => {
            let mut remaining = n;
            let mut mass: f64 = p.iter().sum();
            for j in 0..N_CHANNELS {
                let cond = if mass > 0.0 { (p[j] / mass).min(1.0) } else { 0.0 };
                channels[j] = binomial(remaining, cond, rng);
                remaining -= channels[j];
                mass -= p[j];
            }
            Counts { channels, sink: remaining }
        }
        CountingMode::Sequential => {
            let trials = n / N_CHANNELS as u64;
            for j in 0..N_CHANNELS {
                channels[j] = binomial(trials, p[j].min(1.0), rng);
            }
            let clicks: u64 = channels.iter().sum();
            Counts { channels, sink: n - clicks }
        }
    }
}

/// Draws `k` photons without replacement from a record, outcome by outcome.
fn thin<R: Rng + ?Sized>(record: &Counts, k: u64, rng: &mut R) -> Result<Counts> {
    let total = record.total();
    if k > total {
        return Err(Error::InsufficientCounts { requested: k, available: total });
    }
    let outcomes = record.outcomes();
    let mut out = [0u64; N_OUTCOMES];
    let mut pop = total;
    let mut left = k;
    for j in 0..N_OUTCOMES - 1 {
        out[j] = if left == 0 || outcomes[j] == 0 {
            0
        } else if outcomes[j] == pop {
            left
        } else {
            match Hypergeometric::new(pop, outcomes[j], left) {
                Ok(h) => h.sample(rng),
                // the sampler's start probability underflows for very large
                // records; there the draw is binomial to within 1/pop
                Err(HyperGeoError::PopulationTooLarge) => {
                    binomial(left, outcomes[j] as f64 / pop as f64, rng).min(outcomes[j])
                }
                Err(e) => unreachable!("sizes checked above: {e}"),
            }
        };
        pop -= outcomes[j];
        left -= out[j];
    }
    out[N_OUTCOMES - 1] = left;
    Ok(Counts { channels: [out[0], out[1], out[2], out[3]], sink: out[4] })
}

/// Post-processed incoherent mixture of two single-pulse records.
///
/// `round(n q)` photons are drawn without replacement from `counts_a` and the
/// remaining `n - round(n q)` from `counts_b`.
pub fn mix_incoherently<R: Rng + ?Sized>(
    counts_a: &Counts,
    counts_b: &Counts,
    q: f64,
    n: u64,
    rng: &mut R,
) -> Result<Counts> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("mixing weight {q} outside [0, 1]")));
    }
    let na = (n as f64 * q).round() as u64;
    let a = thin(counts_a, na, rng)?;
    let b = thin(counts_b, n - na, rng)?;
    Ok(Counts {
        channels: std::array::from_fn(|j| a.channels[j] + b.channels[j]),
        sink: a.sink + b.sink,
    })
}

/// Estimator applied to every simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorChoice {
    /// Maximum likelihood on the exact forward model.
    #[default]
    Ml,
    /// GLS inversion of a calibrated response model. In sequential mode the
    /// channel frequencies are taken per channel trial.
    Gls { model: ResponseModel, #[serde(default)] weights: GlsWeights },
}

fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub truth_grid: Vec<PulseParams>,
    pub photons_per_run: u64,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default)]
    pub counting_mode: CountingMode,
    #[serde(default = "default_efficiency")]
    pub detection_efficiency: f64,
    /// Nuisance treatment of the reported bounds.
    #[serde(default)]
    pub bound_kind: Nuisance,
}

impl ExperimentConfig {
    /// `q in {0.125, 0.25, 0.5}` times ten separations evenly spaced in
    /// `[0, 2 sigma]`, `tau0 = 0`, 69000 photons, 100 repetitions.
    pub fn paper_default(shape: PulseShape, seed: u64) -> Self {
        let s = shape.sigma();
        let mut truth_grid = Vec::new();
        for q in [0.125, 0.25, 0.5] {
            for i in 0..10 {
                let tau = 2.0 * s * i as f64 / 9.0;
                truth_grid.push(PulseParams { tau0: 0.0, tau, q, shape });
            }
        }
        Self {
            truth_grid,
            photons_per_run: 69000,
            repetitions: 100,
            seed,
            counting_mode: CountingMode::Multinomial,
            detection_efficiency: 1.0,
            bound_kind: Nuisance::Joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 repetitions, got {}", self.repetitions)));
        }
        if self.photons_per_run < 1 {
            return Err(Error::InvalidParameter("photons_per_run must be at least 1".into()));
        }
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "detection efficiency {} outside (0, 1]",
                self.detection_efficiency
            )));
        }
        if self.truth_grid.len() > u32::MAX as usize || self.repetitions > u32::MAX as usize {
            return Err(Error::InvalidParameter("grid or repetition count too large".into()));
        }
        for p in &self.truth_grid {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub truth_index: usize,
    pub repetition: usize,
    pub truth: PulseParams,
    pub counts: Counts,
    pub estimate: Estimate,
}

/// Diagonal Cramér-Rao bounds at one truth point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointBounds {
    pub direct: [f64; 3],
    pub povm: [f64; 3],
    pub quantum: [f64; 3],
}

/// Bounds for `n` incident photons at detection efficiency `eta`.
///
/// The projector bound uses the lossy outcome model; direct detection and
/// the quantum limit are evaluated for the `eta n` detected photons.
pub fn point_bounds(
    p: &PulseParams,
    n: f64,
    eta: f64,
    mode: CountingMode,
    nuisance: Nuisance,
) -> Result<PointBounds> {
    let diag = |f: &crate::information::FisherMatrix| {
        let c = crlb(f, ParamMask::ALL, nuisance);
        if nuisance == Nuisance::Fixed {
            std::array::from_fn(|k| crlb(f, ParamMask(std::array::from_fn(|l| l == k)), nuisance).variance(k))
        } else {
            std::array::from_fn(|k| c.variance(k))
        }
    };
    let set = canonical_projectors();
    Ok(PointBounds {
        direct: diag(&direct_fisher(p, eta * n)),
        povm: diag(&povm_fisher_with_efficiency(p, &set, n, mode, eta)),
        quantum: diag(&qfi_matrix(p, DEFAULT_TRUNCATION)?.rescaled(eta * n)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub truth: PulseParams,
    pub report: BiasVarianceReport,
    pub bounds: PointBounds,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub tau0_true: f64,
    pub tau_true: f64,
    pub q_true: f64,
    pub param: String,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub crlb_direct: f64,
    pub crlb_povm: f64,
    pub crlb_quantum: f64,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub points: Vec<PointSummary>,
}

impl ExperimentOutput {
    /// Three rows per truth point, parameters in the fixed order.
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::with_capacity(3 * self.points.len());
        for pt in &self.points {
            for (k, name) in PARAM_ORDER.iter().enumerate() {
                let s = pt.report.params[k];
                rows.push(SummaryRow {
                    tau0_true: pt.truth.tau0,
                    tau_true: pt.truth.tau,
                    q_true: pt.truth.q,
                    param: (*name).to_string(),
                    mean: s.mean,
                    bias: s.bias,
                    variance: s.variance,
                    crlb_direct: pt.bounds.direct[k],
                    crlb_povm: pt.bounds.povm[k],
                    crlb_quantum: pt.bounds.quantum[k],
                    n_flagged: pt.report.n_flagged,
                });
            }
        }
        rows
    }
}

fn estimate_run(cfg: &ExperimentConfig, estimator: &EstimatorChoice, truth: &PulseParams, counts: &Counts) -> Result<Estimate> {
    match estimator {
        EstimatorChoice::Ml => {
            let forward = ExactForward::new(truth.shape).with_efficiency(cfg.detection_efficiency)?;
            ml_estimate(&forward, counts, cfg.counting_mode)
        }
        EstimatorChoice::Gls { model, weights } => {
            let (freqs, n) = match cfg.counting_mode {
                CountingMode::Multinomial => (counts.frequencies(), counts.total() as f64),
                CountingMode::Sequential => {
                    let trials = (counts.total() / N_CHANNELS as u64).max(1) as f64;
                    (counts.channels.map(|k| k as f64 / trials), trials)
                }
            };
            invert_gls(model, &freqs, n, *weights)
        }
    }
}

/// Runs every repetition at every truth point and summarizes them.
///
/// Runs execute in parallel; each draws from its own stream (see the module
/// docs), so the output is identical for any thread count.
pub fn run_experiment(cfg: &ExperimentConfig, estimator: &EstimatorChoice) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let set = canonical_projectors();
    let reps = cfg.repetitions;
    let runs: Vec<RunResult> = (0..cfg.truth_grid.len() * reps)
        .into_par_iter()
        .map(|idx| {
            let (point, rep) = (idx / reps, idx % reps);
            let truth = cfg.truth_grid[point];
            let mut rng = stream_rng(cfg.seed, point as u32, rep as u32);
            let probs = channel_probabilities(&truth, &set).with_efficiency(cfg.detection_efficiency);
            let counts = sample_counts(&probs, cfg.photons_per_run, cfg.counting_mode, &mut rng);
            let estimate = estimate_run(cfg, estimator, &truth, &counts)?;
            Ok(RunResult { truth_index: point, repetition: rep, truth, counts, estimate })
        })
        .collect::<Result<_>>()?;

    let points = cfg
        .truth_grid
        .par_iter()
        .enumerate()
        .map(|(i, truth)| {
            let estimates: Vec<Estimate> = runs[i * reps..(i + 1) * reps].iter().map(|r| r.estimate).collect();
            Ok(PointSummary {
                truth: *truth,
                report: bias_variance_report(&estimates, truth)?,
                bounds: point_bounds(
                    truth,
                    cfg.photons_per_run as f64,
                    cfg.detection_efficiency,
                    cfg.counting_mode,
                    cfg.bound_kind,
                )?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput { runs, points })
}
