//! Synthetic calibration data with known selective risk, and a Monte-Carlo
//! check of the calibration guarantee.
//!
//! Every synthetic family draws `kappa ~ Uniform[0, 1)` and then
//! `loss ~ Bernoulli(e(kappa))` for a nonincreasing error-probability
//! function `e`. The true selective risk at threshold `theta` is
//! `E[e(kappa) | kappa >= theta]`, available in closed form (linear,
//! constant) or by quadrature (logistic).
//!
//! Randomness comes from ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Trial `i` of [`validate_guarantee`] uses the seed `seed ^ i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::selective::{ScoredDataset, ScoredExample};
use crate::sgr::{sgr_calibrate, CalibrationReport, SgrRequest};
use crate::{Error, Result};

const QUADRATURE_TOLERANCE: f64 = 1e-10;

/// Error probability as a function of confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    /// `e(kappa) = slope * (1 - kappa)`, `0 <= slope <= 1`.
    Linear { slope: f64 },
    /// `e(kappa) = amplitude / (1 + exp(steepness * (kappa - midpoint)))`.
    Logistic {
        amplitude: f64,
        steepness: f64,
        midpoint: f64,
    },
    /// `e(kappa) = rate`.
    Constant { rate: f64 },
}

impl ErrorModel {
    fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        match *self {
            ErrorModel::Linear { slope } => unit("slope", slope),
            ErrorModel::Constant { rate } => unit("rate", rate),
            ErrorModel::Logistic {
                amplitude,
                steepness,
                midpoint,
            } => {
                unit("amplitude", amplitude)?;
                if !(steepness >= 0.0 && steepness.is_finite()) {
                    return Err(Error::domain(format!(
                        "steepness = {steepness} must be finite and nonnegative"
                    )));
                }
                if !midpoint.is_finite() {
                    return Err(Error::domain("midpoint must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn error_probability(&self, kappa: f64) -> f64 {
        match *self {
            ErrorModel::Linear { slope } => slope * (1.0 - kappa),
            ErrorModel::Constant { rate } => rate,
            ErrorModel::Logistic {
                amplitude,
                steepness,
                midpoint,
            } => amplitude / (1.0 + (steepness * (kappa - midpoint)).exp()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDistribution {
    pub model: ErrorModel,
    pub seed: u64,
}

impl SyntheticDistribution {
    pub fn new(model: ErrorModel, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Draws `m` i.i.d. examples; identical seeds give identical datasets.
pub fn sample_dataset(dist: &SyntheticDistribution, m: usize) -> Result<ScoredDataset> {
    dist.model.validate()?;
    if m == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    (0..m)
        .map(|_| {
            let kappa: f64 = rng.gen();
            let u: f64 = rng.gen();
            ScoredExample::new(kappa, u8::from(u < dist.model.error_probability(kappa)))
        })
        .collect()
}

/// `E[e(kappa) | kappa >= theta]` for `kappa ~ Uniform[0, 1)`.
pub fn true_selective_risk(dist: &SyntheticDistribution, theta: f64) -> Result<f64> {
    dist.model.validate()?;
    if !theta.is_finite() {
        return Err(Error::domain(format!("threshold {theta} is not finite")));
    }
    let lo = theta.max(0.0);
    if lo >= 1.0 {
        return Err(Error::domain(format!(
            "threshold {theta} accepts a set of probability zero"
        )));
    }
    Ok(match dist.model {
        ErrorModel::Linear { slope } => slope * (1.0 - lo) / 2.0,
        ErrorModel::Constant { rate } => rate,
        model @ ErrorModel::Logistic { .. } => {
            let mass = adaptive_simpson(
                &|k| model.error_probability(k),
                lo,
                1.0,
                QUADRATURE_TOLERANCE,
            );
            mass / (1.0 - lo)
        }
    })
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeTrial {
    pub trial: u64,
    pub seed: u64,
    pub report: CalibrationReport,
    pub true_selective_risk: f64,
    /// `true_selective_risk > report.bound`.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeSummary {
    /// Violations among feasible trials divided by the number of feasible
    /// trials; zero when no trial was feasible.
    pub violation_rate: f64,
    pub violations: usize,
    pub feasible_trials: usize,
    pub infeasible_trials: usize,
    pub delta: f64,
    pub r_star: f64,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub log: Vec<GuaranteeTrial>,
}

/// Repeats calibration on fresh samples and counts how often the certified
/// bound falls below the true selective risk.
pub fn validate_guarantee(
    dist: &SyntheticDistribution,
    m: usize,
    r_star: f64,
    delta: f64,
    trials: usize,
) -> Result<GuaranteeSummary> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    let log = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let trial_dist = dist.with_seed(dist.seed ^ trial);
            let data = sample_dataset(&trial_dist, m)?;
            let report = sgr_calibrate(&SgrRequest::new(data, r_star, delta)?)?;
            let true_risk = true_selective_risk(dist, report.theta)?;
            Ok(GuaranteeTrial {
                trial,
                seed: trial_dist.seed,
                violated: true_risk > report.bound,
                true_selective_risk: true_risk,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let feasible_trials = log.iter().filter(|t| t.report.feasible).count();
    let violations = log
        .iter()
        .filter(|t| t.report.feasible && t.violated)
        .count();
    Ok(GuaranteeSummary {
        violation_rate: if feasible_trials == 0 {
            0.0
        } else {
            violations as f64 / feasible_trials as f64
        },
        violations,
        feasible_trials,
        infeasible_trials: trials - feasible_trials,
        delta,
        r_star,
        m,
        trials,
        seed: dist.seed,
        log,
    })
}
