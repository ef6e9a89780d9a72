//! Selection with guaranteed risk.
//!
//! Binary search over the calibration set sorted by confidence. Each probe
//! picks a threshold `theta = kappa(x_z)`, computes the empirical selective
//! risk of the accepted set and its exact binomial bound at confidence
//! `delta / ceil(log2 m)`, and moves toward higher coverage when the bound is
//! below the target. Because every probe is certified at `delta / ceil(log2 m)`,
//! a union bound covers all of them simultaneously: with probability at least
//! `1 - delta` over the calibration sample, every probe's true selective risk
//! is at most its bound. Returning any probe from the trace is therefore safe.

use serde::{Deserialize, Serialize};

use crate::bounds::{solve_b_star, BoundQuery};
use crate::selective::{selective_metrics, ScoredDataset, SelectiveMetrics, Threshold};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SgrRequest {
    data: ScoredDataset,
    r_star: f64,
    delta: f64,
}

impl SgrRequest {
    pub fn new(data: ScoredDataset, r_star: f64, delta: f64) -> Result<Self> {
        data.require_nonempty()?;
        if !(r_star > 0.0 && r_star < 1.0) {
            return Err(Error::domain(format!(
                "target risk {r_star} must lie in (0, 1)"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(Self {
            data,
            r_star,
            delta,
        })
    }

    pub fn data(&self) -> &ScoredDataset {
        &self.data
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// One probe of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgrIteration {
    /// 1-based iteration number.
    pub iteration: usize,
    /// 1-based probe index into the ascending-sorted calibration set.
    pub z: usize,
    pub theta: f64,
    pub train_risk: f64,
    pub train_coverage: f64,
    pub accepted: usize,
    pub errors: usize,
    pub bound: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub theta: f64,
    pub bound: f64,
    pub train_risk: f64,
    pub train_coverage: f64,
    pub feasible: bool,
    pub delta: f64,
    pub r_star: f64,
    pub k_iterations: usize,
    pub trace: Vec<SgrIteration>,
}

impl CalibrationReport {
    /// The iterate the search itself ends on (its final probe).
    pub fn last_iterate(&self) -> &SgrIteration {
        self.trace.last().expect("trace is never empty")
    }

    /// Confidence parameter used for every probe's bound.
    pub fn per_probe_delta(&self) -> f64 {
        self.delta / self.k_iterations as f64
    }

    /// Number of calibration examples accepted at the chosen threshold.
    pub fn accepted_count(&self) -> usize {
        self.trace
            .iter()
            .find(|it| it.theta == self.theta)
            .map_or(0, |it| it.accepted)
    }

    pub fn threshold(&self) -> Threshold {
        Threshold::new(self.theta).expect("theta is a finite calibration score")
    }
}

/// `ceil(log2 m)`, with a floor of one so that a single example still gets
/// one probe.
pub fn iteration_count(m: usize) -> usize {
    if m <= 1 {
        1
    } else {
        (usize::BITS - (m - 1).leading_zeros()) as usize
    }
}

/// Runs the search and returns the feasible probe with the largest coverage.
///
/// When no probe is feasible the report is flagged infeasible and carries the
/// probe with the highest threshold.
pub fn sgr_calibrate(req: &SgrRequest) -> Result<CalibrationReport> {
    let mut sorted = req.data.clone();
    sorted.sort_by_kappa();
    let examples = sorted.examples();
    let m = examples.len();

    let kappas: Vec<f64> = examples.iter().map(|e| e.kappa()).collect();
    // errors_from[i] = number of errors among sorted positions i..m
    let mut errors_from = vec![0usize; m + 1];
    for i in (0..m).rev() {
        errors_from[i] = errors_from[i + 1] + examples[i].loss() as usize;
    }

    let k_iterations = iteration_count(m);
    let probe_delta = req.delta / k_iterations as f64;

    let (mut z_min, mut z_max) = (1usize, m);
    let mut trace = Vec::with_capacity(k_iterations);
    for iteration in 1..=k_iterations {
        let z = (z_min + z_max).div_ceil(2);
        let theta = kappas[z - 1];
        // first sorted position with kappa >= theta; ties below z are included
        let first = kappas.partition_point(|&k| k < theta);
        let accepted = m - first;
        let errors = errors_from[first];
        let metrics = SelectiveMetrics::from_counts(accepted, errors, m);
        let query = BoundQuery::new(accepted as u64, errors as u64, probe_delta)?;
        let bound = solve_b_star(&query).b_star;
        let feasible = bound < req.r_star;
        trace.push(SgrIteration {
            iteration,
            z,
            theta,
            train_risk: metrics.risk,
            train_coverage: metrics.coverage,
            accepted,
            errors,
            bound,
            feasible,
        });
        if feasible {
            z_max = z;
        } else {
            z_min = z;
        }
    }

    let best_feasible =
        trace
            .iter()
            .filter(|it| it.feasible)
            .fold(None::<&SgrIteration>, |best, it| match best {
                Some(b) if b.accepted >= it.accepted => Some(b),
                _ => Some(it),
            });
    let (chosen, feasible) = match best_feasible {
        Some(it) => (it, true),
        None => {
            let most_conservative =
                trace.iter().fold(
                    &trace[0],
                    |best, it| if it.theta > best.theta { it } else { best },
                );
            (most_conservative, false)
        }
    };

    Ok(CalibrationReport {
        theta: chosen.theta,
        bound: chosen.bound,
        train_risk: chosen.train_risk,
        train_coverage: chosen.train_coverage,
        feasible,
        delta: req.delta,
        r_star: req.r_star,
        k_iterations,
        trace,
    })
}

/// Selective risk and coverage of the calibrated threshold on a test set.
pub fn evaluate(report: &CalibrationReport, test: &ScoredDataset) -> Result<SelectiveMetrics> {
    selective_metrics(test, Threshold::new(report.theta)?)
}
