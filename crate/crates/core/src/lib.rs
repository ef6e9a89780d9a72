//! Selective classification with a certified risk guarantee.
//!
//! Given confidence scores and 0/1 losses for a held-out calibration set, this
//! crate learns a rejection threshold `theta` such that, with probability at
//! least `1 - delta` over the calibration sample, the selective risk of the
//! classifier restricted to inputs with `kappa >= theta` is below a target
//! `r_star`.
//!
//! - [`bounds`]: exact binomial tail and its inversion (the risk bound).
//! - [`selective`]: scored datasets, empirical selective risk and coverage,
//!   risk-coverage curves.
//! - [`confidence`]: confidence-rate functions from raw prediction dumps.
//! - [`sgr`]: the threshold search with guaranteed risk.
//! - [`simulate`]: synthetic distributions with known selective risk and a
//!   Monte-Carlo check of the guarantee.

pub mod bounds;
pub mod confidence;
mod error;
pub mod selective;
pub mod sgr;
pub mod simulate;

pub use error::{Error, Result};
