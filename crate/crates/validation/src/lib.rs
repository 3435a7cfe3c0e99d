//! Bookkeeping for the acceptance suite: each criterion runs in isolation,
//! reports one PASS or FAIL line with its measured values, and a failure
//! (including a panic) never stops the criteria after it.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

/// Outcome of one criterion with the numbers behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check` and prints `PASS <id> <title>: <detail> [<secs>s]`.
    pub fn check(&mut self, id: &str, title: &str, check: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let tag = if verdict.passed { "PASS" } else { "FAIL" };
        println!("{tag} {id} {title}: {} [{:.1}s]", verdict.detail, start.elapsed().as_secs_f64());
        self.results.push((id.to_string(), verdict.passed));
    }

    pub fn failed(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect()
    }

    /// Prints the tally; the exit code is nonzero when any criterion failed.
    pub fn finish(self) -> ExitCode {
        let failed = self.failed();
        println!("{} of {} criteria passed", self.results.len() - failed.len(), self.results.len());
        if failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            println!("failed: {}", failed.join(", "));
            ExitCode::FAILURE
        }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `n` points from `lo` to `hi`, evenly spaced in `ln`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs = logspace(1e-3, 1e-1, 7);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
        assert_eq!(xs[0], 1e-3);
        assert!((xs[6] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn panicking_check_is_recorded_as_failure() {
        let mut suite = Suite::new();
        suite.check("x", "passes", || Verdict::new(true, "ok"));
        suite.check("y", "panics", || panic!("boom"));
        suite.check("z", "fails", || Verdict::new(false, "no"));
        assert_eq!(suite.failed(), vec!["y", "z"]);
    }
}
