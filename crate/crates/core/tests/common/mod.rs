//! Arbitrary-precision reference computations shared by the integration
//! tests. Nothing here calls into the crate's bound solver.

#![allow(dead_code)]

use rug::ops::Pow;
use rug::Float;

pub const PREC: u32 = 256;

fn f(v: impl Into<f64>) -> Float {
    Float::with_val(PREC, v.into())
}

/// `sum_{j=0}^{k} C(m, j) b^j (1 - b)^(m - j)` by direct summation, every term
/// carried at 256 bits.
pub fn tail_direct(m: u64, k: u64, b: &Float) -> Float {
    let q = Float::with_val(PREC, 1 - b.clone());
    let mut term = Float::with_val(PREC, q.clone().pow(m));
    let mut sum = term.clone();
    for j in 0..k {
        term = term * f((m - j) as f64) / f((j + 1) as f64) * b / &q;
        sum += &term;
    }
    sum
}

/// Same sum, started at `j = k` with `C(m, k)` from MPFR's log-gamma and
/// walked down until the remaining terms are below `2^-200` of the total.
/// Agrees with [`tail_direct`] to far beyond f64 precision and only touches
/// the terms that matter, so it stays cheap for `m` near `1e5`.
pub fn tail_fast(m: u64, k: u64, b: &Float) -> Float {
    if k >= m || b.is_zero() {
        return f(1.0);
    }
    if *b >= 1.0 {
        return f(0.0);
    }
    let q = Float::with_val(PREC, 1 - b.clone());
    let lg = |n: u64| Float::with_val(PREC, n).ln_gamma();
    let ln_term = lg(m + 1) - lg(k + 1) - lg(m - k + 1)
        + Float::with_val(PREC, b.ln_ref()) * f(k as f64)
        + Float::with_val(PREC, q.ln_ref()) * f((m - k) as f64);
    let mut term = ln_term.exp();
    let mut sum = term.clone();
    let ratio = Float::with_val(PREC, &q / b);
    let cutoff = f(2.0).pow(-200i32);
    let mut j = k;
    while j > 0 {
        let next = Float::with_val(PREC, &term * f(j as f64) / f((m - j + 1) as f64) * &ratio);
        let decreasing = next < term;
        sum += &next;
        term = next;
        j -= 1;
        if decreasing && term < Float::with_val(PREC, &sum * &cutoff) {
            break;
        }
    }
    sum
}

/// Grid inversion of the tail at `delta`: locate the 1e-8 grid cell on `[0, 1]`
/// where `tail - delta` changes sign and return its upper end. The cell is
/// found by scanning with steps 1e-1, 1e-2, ..., 1e-8, each level scanning
/// only inside the cell found by the previous one; since the tail is
/// monotone this is the same cell a flat 1e-8 scan finds.
pub fn grid_invert(m: u64, k: u64, delta: f64) -> f64 {
    const UNITS: u64 = 100_000_000;
    if k >= m {
        return 1.0;
    }
    let d = f(delta);
    let mut lo: u64 = 0;
    let mut step: u64 = UNITS / 10;
    while step >= 1 {
        while lo + step < UNITS {
            let b = Float::with_val(PREC, lo + step) / f(UNITS as f64);
            if tail_fast(m, k, &b) <= d {
                break;
            }
            lo += step;
        }
        step /= 10;
    }
    (lo + 1) as f64 / UNITS as f64
}

/// `1 - delta^(1/m)` at 256 bits.
pub fn zero_error_bound(m: u64, delta: f64) -> f64 {
    let root = f(delta).pow(Float::with_val(PREC, 1) / f(m as f64));
    Float::with_val(PREC, 1 - root).to_f64()
}
