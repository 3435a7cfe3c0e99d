//! CSV formats.
//!
//! All tables have a header row, use `,` as separator and LF line endings,
//! and print floats in shortest round-trip form so reading back is exact.
//!
//! | table | header |
//! |---|---|
//! | calibration set | `tau0,tau,q,sigma,f0,f1,f2,f3,counts` |
//! | estimates | `run,tau0_hat,tau_hat,q_hat,tau_zero,q_zero,q_one,box_edge,converged,identifiable,objective,iterations,cov_00,cov_01,cov_02,cov_11,cov_12,cov_22` |
//! | Monte Carlo runs | `truth_index,repetition,tau0_true,tau_true,q_true,k0,k1,k2,k3,k_sink,tau0_hat,tau_hat,q_hat,converged,identifiable` |
//! | summary | `tau0_true,tau_true,q_true,param,mean,bias,variance,crlb_direct,crlb_povm,crlb_quantum,n_flagged` |

use std::io::{Read, Write};

use crate::estimation::{CalibrationPoint, CalibrationSet, ConstraintFlags, Estimate};
use crate::pulse::{PulseParams, PulseShape};
use crate::simulation::{RunResult, SummaryRow};
use crate::{Error, Result};

pub const CALIBRATION_HEADER: [&str; 9] = ["tau0", "tau", "q", "sigma", "f0", "f1", "f2", "f3", "counts"];

pub const ESTIMATE_HEADER: [&str; 18] = [
    "run",
    "tau0_hat",
    "tau_hat",
    "q_hat",
    "tau_zero",
    "q_zero",
    "q_one",
    "box_edge",
    "converged",
    "identifiable",
    "objective",
    "iterations",
    "cov_00",
    "cov_01",
    "cov_02",
    "cov_11",
    "cov_12",
    "cov_22",
];

pub const RUN_HEADER: [&str; 15] = [
    "truth_index",
    "repetition",
    "tau0_true",
    "tau_true",
    "q_true",
    "k0",
    "k1",
    "k2",
    "k3",
    "k_sink",
    "tau0_hat",
    "tau_hat",
    "q_hat",
    "converged",
    "identifiable",
];

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let h = r.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(Error::InvalidGrid(format!("unexpected header {:?}, want {:?}", h, expected)));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::InvalidGrid(format!("line {line}: bad value for {name}")))
}

pub fn write_calibration<W: Write>(set: &CalibrationSet, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(CALIBRATION_HEADER)?;
    for pt in &set.grid {
        let p = &pt.params;
        let mut rec = vec![p.tau0.to_string(), p.tau.to_string(), p.q.to_string(), p.shape.sigma().to_string()];
        rec.extend(pt.frequencies.iter().map(f64::to_string));
        rec.push(pt.counts.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calibration<R: Read>(input: R) -> Result<CalibrationSet> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &CALIBRATION_HEADER)?;
    let mut grid = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n = CALIBRATION_HEADER;
        let shape = PulseShape::new(field(&rec, 3, n[3])?)?;
        let params = PulseParams::new(field(&rec, 0, n[0])?, field(&rec, 1, n[1])?, field(&rec, 2, n[2])?, shape)?;
        let mut frequencies = [0.0; 4];
        for (j, f) in frequencies.iter_mut().enumerate() {
            *f = field(&rec, 4 + j, n[4 + j])?;
        }
        grid.push(CalibrationPoint { params, frequencies, counts: field(&rec, 8, n[8])? });
    }
    let set = CalibrationSet { grid };
    set.validate()?;
    Ok(set)
}

fn estimate_fields(e: &Estimate) -> Vec<String> {
    let c = &e.covariance_hat;
    let f = &e.constraint_active;
    vec![
        e.tau0_hat.to_string(),
        e.tau_hat.to_string(),
        e.q_hat.to_string(),
        f.tau_zero.to_string(),
        f.q_zero.to_string(),
        f.q_one.to_string(),
        f.box_edge.to_string(),
        e.converged.to_string(),
        e.identifiable.to_string(),
        e.objective.to_string(),
        e.iterations.to_string(),
        c[0][0].to_string(),
        c[0][1].to_string(),
        c[0][2].to_string(),
        c[1][1].to_string(),
        c[1][2].to_string(),
        c[2][2].to_string(),
    ]
}

pub fn write_estimates<W: Write>(estimates: &[Estimate], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ESTIMATE_HEADER)?;
    for (i, e) in estimates.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(estimate_fields(e));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates<R: Read>(input: R) -> Result<Vec<Estimate>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &ESTIMATE_HEADER)?;
    let n = ESTIMATE_HEADER;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let g = |i: usize| field::<f64>(&rec, i, n[i]);
        let b = |i: usize| field::<bool>(&rec, i, n[i]);
        let (c00, c01, c02, c11, c12, c22) = (g(12)?, g(13)?, g(14)?, g(15)?, g(16)?, g(17)?);
        out.push(Estimate {
            tau0_hat: g(1)?,
            tau_hat: g(2)?,
            q_hat: g(3)?,
            constraint_active: ConstraintFlags { tau_zero: b(4)?, q_zero: b(5)?, q_one: b(6)?, box_edge: b(7)? },
            converged: b(8)?,
            identifiable: b(9)?,
            objective: g(10)?,
            iterations: field(&rec, 11, n[11])?,
            covariance_hat: [[c00, c01, c02], [c01, c11, c12], [c02, c12, c22]],
        });
    }
    Ok(out)
}

pub fn write_runs<W: Write>(runs: &[RunResult], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(RUN_HEADER)?;
    for r in runs {
        let mut rec = vec![
            r.truth_index.to_string(),
            r.repetition.to_string(),
            r.truth.tau0.to_string(),
            r.truth.tau.to_string(),
            r.truth.q.to_string(),
        ];
        rec.extend(r.counts.outcomes().iter().map(u64::to_string));
        rec.extend([
            r.estimate.tau0_hat.to_string(),
            r.estimate.tau_hat.to_string(),
            r.estimate.q_hat.to_string(),
            r.estimate.converged.to_string(),
            r.estimate.identifiable.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "tau0_true",
        "tau_true",
        "q_true",
        "param",
        "mean",
        "bias",
        "variance",
        "crlb_direct",
        "crlb_povm",
        "crlb_quantum",
        "n_flagged",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
