//! Exact binomial tail bound on the true risk of a fixed classifier.
//!
//! For `m` i.i.d. test points with `k` observed errors, the bound `b*` is the
//! solution of
//!
//! ```text
//!     sum_{j=0}^{k} C(m, j) b^j (1 - b)^(m - j) = delta
//! ```
//!
//! and satisfies `Pr{ R > b* } < delta`. This is the one-sided upper
//! Clopper-Pearson limit. The tail is evaluated directly in log space and
//! inverted by bisection.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stopping tolerance for [`solve_b_star`], both on the bracket width and on
/// the residual `|tail(b*) - delta|`.
pub const SOLVER_TOLERANCE: f64 = 1e-12;

/// Sample size, error count and confidence parameter of a bound computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    m: u64,
    k: u64,
    delta: f64,
}

impl BoundQuery {
    pub fn new(m: u64, k: u64, delta: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("sample count m must be at least 1"));
        }
        if k > m {
            return Err(Error::domain(format!(
                "error count k = {k} exceeds m = {m}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(Self { m, k, delta })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// Upper confidence limit on the true risk, in `[0, 1]`.
    pub b_star: f64,
    /// `|tail(m, k, b_star) - delta|` at the returned point.
    pub residual: f64,
    pub iterations: u32,
}

/// `P(X <= k)` for `X ~ Binomial(m, b)`.
pub fn binomial_tail(m: u64, k: u64, b: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("sample count m must be at least 1"));
    }
    if k > m {
        return Err(Error::domain(format!(
            "error count k = {k} exceeds m = {m}"
        )));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::domain(format!("probability b = {b} outside [0, 1]")));
    }
    Ok(tail(m, k, b))
}

/// Unchecked tail. Below the mean the lower tail is summed directly; at or
/// above it the upper tail is summed and subtracted from one, so the sum that
/// is actually formed never needs more than f64 relative precision.
fn tail(m: u64, k: u64, b: f64) -> f64 {
    if k >= m || b <= 0.0 {
        return 1.0;
    }
    if b >= 1.0 {
        return 0.0;
    }
    let terms = BinomialTerms::new(m, b);
    if (k as f64) < m as f64 * b {
        terms.ln_sum(0..=k).exp().clamp(0.0, 1.0)
    } else {
        (-terms.ln_sum((k + 1..=m).rev()).exp_m1()).clamp(0.0, 1.0)
    }
}

/// Log-space evaluation of `C(m, j) b^j (1 - b)^(m - j)` over a contiguous
/// run of `j`.
struct BinomialTerms {
    m: u64,
    ln_b: f64,
    ln_q: f64,
}

impl BinomialTerms {
    fn new(m: u64, b: f64) -> Self {
        Self {
            m,
            ln_b: b.ln(),
            ln_q: (-b).ln_1p(),
        }
    }

    /// `ln sum_j term_j` for `js` running upward from 0 or downward from `m`.
    /// `ln C(m, j)` is streamed from the end point, where it is exactly 0,
    /// with a compensated sum of log ratios; the terms themselves are
    /// accumulated as a running log-sum-exp.
    fn ln_sum(&self, js: impl Iterator<Item = u64>) -> f64 {
        let mf = self.m as f64;
        let mut ln_binom = KahanSum::default();
        let mut prev: Option<u64> = None;
        let mut max = f64::NEG_INFINITY;
        let mut scaled = 0.0_f64;
        for j in js {
            let jf = j as f64;
            if let Some(p) = prev {
                let ratio = if j > p {
                    (mf - jf + 1.0) / jf
                } else {
                    (jf + 1.0) / (mf - jf)
                };
                ln_binom.add(ratio.ln());
            }
            prev = Some(j);
            let ln_term = ln_binom.value() + jf * self.ln_b + (mf - jf) * self.ln_q;
            if ln_term > max {
                scaled = scaled * (max - ln_term).exp() + 1.0;
                max = ln_term;
            } else {
                scaled += (ln_term - max).exp();
            }
        }
        max + scaled.ln()
    }
}

#[derive(Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Inverts the binomial tail at `delta`.
///
/// For `k < m` the tail is continuous and strictly decreasing in `b`, so
/// bisection on `[0, 1]` always converges. The upper end of the final bracket
/// is returned, which keeps `tail(b*) <= delta` and the bound sound. For
/// `k == m` the tail is identically one and the vacuous bound `1` is returned.
pub fn solve_b_star(q: &BoundQuery) -> BoundResult {
    let BoundQuery { m, k, delta } = *q;
    if k == m {
        return BoundResult {
            b_star: 1.0,
            residual: 1.0 - delta,
            iterations: 0,
        };
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut tail_hi = 0.0_f64;
    let mut iterations = 0;
    loop {
        if hi - lo <= SOLVER_TOLERANCE && (tail_hi - delta).abs() <= SOLVER_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let t = tail(m, k, mid);
        if t > delta {
            lo = mid;
        } else {
            hi = mid;
            tail_hi = t;
        }
    }

    BoundResult {
        b_star: hi,
        residual: (tail_hi - delta).abs(),
        iterations,
    }
}

/// Hoeffding upper bound `k/m + sqrt(ln(1/delta) / (2m))`.
///
/// Only used to report how much slack the exact bound removes; it is never
/// used to certify. The value is not clamped and may exceed one.
pub fn hoeffding_b(q: &BoundQuery) -> f64 {
    let m = q.m as f64;
    q.k as f64 / m + ((1.0 / q.delta).ln() / (2.0 * m)).sqrt()
}
