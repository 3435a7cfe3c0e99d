//! Quantum-limited timing estimation for an incoherent mixture of two
//! time-shifted Gaussian pulses.
//!
//! The crate covers the whole chain from the signal model to estimates:
//!
//! - [`pulse`]: Gaussian pulses, Hermite-Gauss temporal modes, displaced-mode
//!   overlaps and a quadrature oracle.
//! - [`measurement`]: the four temporal-mode projectors, the exact channel
//!   probabilities and the 10-term polynomial response model.
//! - [`information`]: Fisher information for direct detection, for the
//!   projector measurement, and the SLD quantum Fisher information, plus
//!   Cramér-Rao bounds.
//! - [`estimation`]: GLS calibration, constrained GLS inversion and maximum
//!   likelihood.
//! - [`simulation`]: seeded photon-counting Monte Carlo.
//! - [`frog`]: SHG-FROG spectrograms of incoherent pulse pairs.
//!
//! Parameters are always ordered `(tau0, tau, q)`. Public functions take
//! times in the caller's units; internally everything is computed in units
//! of the pulse RMS width.

pub mod error;
pub mod estimation;
pub mod frog;
pub mod information;
pub mod io;
pub mod measurement;
mod optimize;
pub mod pulse;
pub mod quadrature;
pub mod simulation;

pub use error::{Error, Result};
pub use estimation::{
    bias_variance_report, fit_response_model, invert_gls, ml_estimate, BiasVarianceReport,
    CalibrationPoint, CalibrationSet, ConstraintFlags, Counts, Estimate, ExactForward,
    FitDiagnostics, ForwardModel, GlsWeights,
};
pub use frog::{incoherent_spectrogram, rayleigh_scan, shg_frog, FrogGrid, Probe, Spectrogram};
pub use information::{
    crlb, direct_fisher, povm_fisher, qfi_matrix, CountingMode, CrlbMatrix, FisherMatrix,
    Nuisance, ParamMask,
};
pub use measurement::{
    canonical_projectors, channel_probabilities, evaluate_response, ChannelProbabilities,
    ParamBox, Projector, ProjectorSet, ResponseModel,
};
pub use pulse::{displaced_overlap, hg_mode_value, intensity, OverlapVector, PulseParams, PulseShape};
pub use simulation::{
    mix_incoherently, run_experiment, sample_counts, EstimatorChoice, ExperimentConfig, RunResult,
};

/// Parameter names in the fixed order used by every matrix and table.
pub const PARAM_ORDER: [&str; 3] = ["tau0", "tau", "q"];
