//! The subcommands. Each one reads a resolved configuration, writes its
//! tables into the output directory and reports nonfatal conditions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use timing_core::frog::incoherent_point;
use timing_core::information::QFI_TAU_FLOOR;
use timing_core::measurement::N_CHANNELS;
use timing_core::simulation::{point_bounds, stream_rng};
use timing_core::{
    canonical_projectors, channel_probabilities, fit_response_model, incoherent_spectrogram, invert_gls, io,
    ml_estimate, rayleigh_scan, run_experiment, sample_counts, CalibrationPoint, CalibrationSet, CountingMode,
    Counts, EstimatorChoice, ExactForward, ExperimentConfig, FrogGrid, Probe, PulseShape,
    ResponseModel, PARAM_ORDER,
};

use crate::config::{
    BoundsConfig, CalibrateConfig, EstimateConfig, EstimatorKind, FrogConfig, MonteCarloConfig, ProbabilitiesConfig,
};

/// Weight given to noiseless calibration points, which have no photon count.
const NOISELESS_COUNTS: f64 = 1e12;

/// R² below which a calibration channel is reported.
const R_SQUARED_WARN: f64 = 0.999;

/// A command together with its resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
pub enum Job {
    Probabilities(ProbabilitiesConfig),
    Bounds(BoundsConfig),
    Calibrate(CalibrateConfig),
    Estimate(EstimateConfig),
    MonteCarlo(MonteCarloConfig),
    Frog(FrogConfig),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Probabilities(_) => "probabilities",
            Job::Bounds(_) => "bounds",
            Job::Calibrate(_) => "calibrate",
            Job::Estimate(_) => "estimate",
            Job::MonteCarlo(_) => "montecarlo",
            Job::Frog(_) => "frog",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Calibrate(c) => Some(c.seed),
            Job::MonteCarlo(c) => Some(c.seed),
            _ => None,
        }
    }

    /// Applies a `--seed` override. Returns false for commands without
    /// randomness.
    pub fn set_seed(&mut self, seed: u64) -> bool {
        match self {
            Job::Calibrate(c) => c.seed = seed,
            Job::MonteCarlo(c) => c.seed = seed,
            _ => return false,
        }
        true
    }

    /// Makes file references absolute so a replay works from any directory.
    pub fn resolve_paths(&mut self) -> Result<()> {
        let paths = match self {
            Job::Calibrate(c) => vec![&mut c.calibration_csv],
            Job::Estimate(c) => vec![&mut c.model],
            Job::MonteCarlo(c) => vec![&mut c.model],
            _ => Vec::new(),
        };
        for p in paths.into_iter().flatten() {
            let abs = std::fs::canonicalize(&*p).with_context(|| format!("resolving {p}"))?;
            *p = abs.to_string_lossy().into_owned();
        }
        Ok(())
    }

    pub fn config_value(&self) -> Result<serde_json::Value> {
        let v = serde_json::to_value(self)?;
        Ok(v["config"].clone())
    }

    pub fn from_parts(command: &str, config: serde_json::Value) -> Result<Self> {
        let tagged = serde_json::json!({ "command": command, "config": config });
        serde_json::from_value(tagged).with_context(|| format!("configuration of `{command}`"))
    }

    pub fn run(&self, ctx: &mut RunContext) -> Result<()> {
        match self {
            Job::Probabilities(c) => probabilities(c, ctx),
            Job::Bounds(c) => bounds(c, ctx),
            Job::Calibrate(c) => calibrate(c, ctx),
            Job::Estimate(c) => estimate(c, ctx),
            Job::MonteCarlo(c) => montecarlo(c, ctx),
            Job::Frog(c) => frog(c, ctx),
        }
    }
}

/// Output directory plus the bookkeeping that ends up in the manifest.
pub struct RunContext {
    pub dir: PathBuf,
    pub outputs: Vec<String>,
    pub flags: Vec<String>,
}

impl RunContext {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), flags: Vec::new() })
    }

    fn output<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush()?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn flag(&mut self, msg: String) {
        self.flags.push(msg);
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn shape(sigma: f64) -> Result<PulseShape> {
    Ok(PulseShape::new(sigma)?)
}

fn check_efficiency(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        bail!("detection_efficiency {eta} outside (0, 1]");
    }
    Ok(())
}

fn load_model(path: &Option<String>) -> Result<ResponseModel> {
    let path = path.as_ref().ok_or_else(|| anyhow!("the gls estimator needs a `model` file"))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    ResponseModel::from_json(&text).with_context(|| format!("model {path}"))
}

fn probabilities(cfg: &ProbabilitiesConfig, ctx: &mut RunContext) -> Result<()> {
    let points = cfg.grid.points(shape(cfg.sigma)?)?;
    let set = canonical_projectors();
    ctx.output("probabilities.csv", |out| {
        let mut w = csv_writer(out);
        w.write_record(["tau0", "tau", "q", "p0", "p1", "p2", "p3", "p_sink"])?;
        for p in &points {
            let probs = channel_probabilities(p, &set);
            let mut rec = vec![p.tau0.to_string(), p.tau.to_string(), p.q.to_string()];
            rec.extend(probs.outcomes().iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn bounds(cfg: &BoundsConfig, ctx: &mut RunContext) -> Result<()> {
    if !(cfg.n_photons > 0.0 && cfg.n_photons.is_finite()) {
        bail!("n_photons must be positive, got {}", cfg.n_photons);
    }
    check_efficiency(cfg.detection_efficiency)?;
    let shape = shape(cfg.sigma)?;
    let points = cfg.grid.points(shape)?;
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        let b = point_bounds(p, cfg.n_photons, cfg.detection_efficiency, cfg.counting_mode, cfg.bound_kind)?;
        if p.tau < QFI_TAU_FLOOR * shape.sigma() {
            ctx.flag(format!("quantum bound at tau = {} evaluated at the separation floor", p.tau));
        }
        rows.push((p, b));
    }
    ctx.output("bounds.csv", |out| {
        let mut w = csv_writer(out);
        let mut header = vec!["tau0".to_string(), "tau".into(), "q".into(), "n_photons".into()];
        for kind in ["direct", "povm", "quantum"] {
            header.extend(PARAM_ORDER.iter().map(|p| format!("crlb_{kind}_{p}")));
        }
        w.write_record(&header)?;
        for (p, b) in &rows {
            let mut rec = vec![p.tau0.to_string(), p.tau.to_string(), p.q.to_string(), cfg.n_photons.to_string()];
            for v in [b.direct, b.povm, b.quantum] {
                rec.extend(v.iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn calibrate(cfg: &CalibrateConfig, ctx: &mut RunContext) -> Result<()> {
    check_efficiency(cfg.detection_efficiency)?;
    let set = match &cfg.calibration_csv {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {path}"))?;
            io::read_calibration(f).with_context(|| format!("calibration table {path}"))?
        }
        None => simulate_calibration(cfg)?,
    };
    let (model, diag) = fit_response_model(&set, None)?;
    for (j, ch) in diag.channels.iter().enumerate() {
        if ch.r_squared < R_SQUARED_WARN {
            ctx.flag(format!("channel {j} fit has R^2 = {:.6}", ch.r_squared));
        }
    }
    ctx.output("calibration.csv", |out| Ok(io::write_calibration(&set, out)?))?;
    ctx.output("model.json", |out| Ok(writeln!(out, "{}", model.to_json()?)?))?;
    ctx.output("fit.json", |out| Ok(writeln!(out, "{}", serde_json::to_string_pretty(&diag)?)?))
}

/// Exact probabilities, or one multinomial draw per grid point from its own
/// random stream.
fn simulate_calibration(cfg: &CalibrateConfig) -> Result<CalibrationSet> {
    let points = cfg.grid.points(shape(cfg.sigma)?)?;
    if points.len() > u32::MAX as usize {
        bail!("calibration grid too large");
    }
    let set = canonical_projectors();
    let mut grid = Vec::with_capacity(points.len());
    for (i, params) in points.into_iter().enumerate() {
        let probs = channel_probabilities(&params, &set).with_efficiency(cfg.detection_efficiency);
        let (frequencies, counts) = match cfg.photons_per_point {
            None => (probs.p, NOISELESS_COUNTS),
            Some(0) => bail!("photons_per_point must be positive"),
            Some(n) => {
                let mut rng = stream_rng(cfg.seed, i as u32, 0);
                let c = sample_counts(&probs, n, CountingMode::Multinomial, &mut rng);
                (c.frequencies(), n as f64)
            }
        };
        grid.push(CalibrationPoint { params, frequencies, counts });
    }
    Ok(CalibrationSet { grid })
}

fn estimate(cfg: &EstimateConfig, ctx: &mut RunContext) -> Result<()> {
    check_efficiency(cfg.detection_efficiency)?;
    let shape = shape(cfg.sigma)?;
    let mut estimates = Vec::with_capacity(cfg.observations.len());
    match cfg.estimator {
        EstimatorKind::Ml => {
            let forward = ExactForward::new(shape).with_efficiency(cfg.detection_efficiency)?;
            for obs in &cfg.observations {
                let counts = Counts { channels: obs.channels, sink: obs.sink };
                estimates.push(ml_estimate(&forward, &counts, cfg.counting_mode)?);
            }
        }
        EstimatorKind::Gls => {
            let model = load_model(&cfg.model)?;
            for obs in &cfg.observations {
                let counts = Counts { channels: obs.channels, sink: obs.sink };
                let (freqs, n) = gls_frequencies(&counts, cfg.counting_mode)?;
                estimates.push(invert_gls(&model, &freqs, n, cfg.gls_weights)?);
            }
        }
    }
    for (i, e) in estimates.iter().enumerate() {
        if e.flagged() {
            ctx.flag(format!("observation {i}: estimate flagged (constraints {:?})", e.constraint_active));
        }
    }
    ctx.output("estimates.csv", |out| Ok(io::write_estimates(&estimates, out)?))
}

/// Channel frequencies and the photon number they are relative to. In
/// sequential mode each channel is a fraction of its own trials.
fn gls_frequencies(counts: &Counts, mode: CountingMode) -> Result<([f64; N_CHANNELS], f64)> {
    if counts.total() == 0 {
        bail!("observation without photons");
    }
    Ok(match mode {
        CountingMode::Multinomial => (counts.frequencies(), counts.total() as f64),
        CountingMode::Sequential => {
            let trials = (counts.total() / N_CHANNELS as u64).max(1) as f64;
            (counts.channels.map(|k| k as f64 / trials), trials)
        }
    })
}

fn montecarlo(cfg: &MonteCarloConfig, ctx: &mut RunContext) -> Result<()> {
    let shape = shape(cfg.sigma)?;
    let experiment = ExperimentConfig {
        truth_grid: cfg.grid.points(shape)?,
        photons_per_run: cfg.photons_per_run,
        repetitions: cfg.repetitions,
        seed: cfg.seed,
        counting_mode: cfg.counting_mode,
        detection_efficiency: cfg.detection_efficiency,
        bound_kind: cfg.bound_kind,
    };
    let estimator = match cfg.estimator {
        EstimatorKind::Ml => EstimatorChoice::Ml,
        EstimatorKind::Gls => EstimatorChoice::Gls { model: load_model(&cfg.model)?, weights: cfg.gls_weights },
    };
    let result = run_experiment(&experiment, &estimator)?;
    for pt in &result.points {
        if pt.report.n_flagged > 0 {
            let t = pt.truth;
            ctx.flag(format!(
                "{} of {} estimates flagged at tau0 = {}, tau = {}, q = {}",
                pt.report.n_flagged, pt.report.n_estimates, t.tau0, t.tau, t.q
            ));
        }
    }
    let rows = result.summary_rows();
    ctx.output("summary.csv", |out| Ok(io::write_summary(&rows, out)?))?;
    ctx.output("means.csv", |out| {
        let mut w = csv_writer(out);
        w.write_record(["tau0_true", "tau_true", "q_true", "param", "truth", "mean", "std", "se_mean", "n_flagged"])?;
        for pt in &result.points {
            let t = pt.truth;
            let truth = [t.tau0, t.tau, t.q];
            for (k, name) in PARAM_ORDER.iter().enumerate() {
                let s = pt.report.params[k];
                w.write_record([
                    t.tau0.to_string(),
                    t.tau.to_string(),
                    t.q.to_string(),
                    (*name).to_string(),
                    truth[k].to_string(),
                    s.mean.to_string(),
                    s.variance.sqrt().to_string(),
                    s.se_mean.to_string(),
                    pt.report.n_flagged.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    if cfg.write_runs {
        ctx.output("runs.csv", |out| Ok(io::write_runs(&result.runs, out)?))?;
    }
    Ok(())
}

fn frog(cfg: &FrogConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = FrogGrid {
        shape: shape(cfg.sigma)?,
        n_samples: cfg.n_samples,
        half_width: cfg.half_width,
        max_delay_steps: cfg.max_delay_steps,
    };
    let probe = Probe { omega: cfg.probe.omega, delay: cfg.probe.delay };
    let rows = rayleigh_scan(&cfg.taus, probe, cfg.noise_var, &grid, cfg.n_phases)?;
    let baseline = incoherent_point(0.0, &grid, probe.omega, probe.delay_steps(&grid), cfg.n_phases)?;
    ctx.output("rayleigh_scan.csv", |out| {
        let mut w = csv_writer(out);
        w.write_record(["tau", "intensity", "delta_intensity", "d_intensity", "var_tau"])?;
        for r in &rows {
            w.write_record([
                r.tau.to_string(),
                r.intensity.to_string(),
                (r.intensity - baseline).to_string(),
                r.d_intensity.to_string(),
                r.var_tau.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    if let Some(tau) = cfg.spectrogram_tau {
        let s = incoherent_spectrogram(tau, &grid, cfg.n_phases)?;
        ctx.output("spectrogram.csv", |out| Ok(s.write_csv(out)?))?;
        ctx.output("spectrogram.bin", |out| Ok(out.write_all(&s.to_binary())?))?;
    }
    Ok(())
}
