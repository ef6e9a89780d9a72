//! Scored examples, threshold selection and empirical selective metrics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One calibration or test point: a confidence score and its 0/1 loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    kappa: f64,
    loss: u8,
    id: Option<String>,
}

impl ScoredExample {
    pub fn new(kappa: f64, loss: u8) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::domain(format!("kappa = {kappa} is not finite")));
        }
        if loss > 1 {
            return Err(Error::domain(format!("loss = {loss} is not 0 or 1")));
        }
        Ok(Self {
            kappa,
            loss,
            id: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn loss(&self) -> u8 {
        self.loss
    }

    pub fn is_error(&self) -> bool {
        self.loss == 1
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub(crate) fn set_id(&mut self, id: Option<String>) {
        self.id = id;
    }
}

/// Ordered collection of scored examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredDataset {
    examples: Vec<ScoredExample>,
    sorted: bool,
}

impl ScoredDataset {
    pub fn new(examples: Vec<ScoredExample>) -> Self {
        let sorted = examples.windows(2).all(|w| w[0].kappa <= w[1].kappa);
        Self { examples, sorted }
    }

    pub fn examples(&self) -> &[ScoredExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// True when kappa values are nondecreasing in storage order.
    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    /// Stable sort by kappa, ascending. Equal scores keep their input order.
    pub fn sort_by_kappa(&mut self) {
        if !self.sorted {
            self.examples.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
            self.sorted = true;
        }
    }

    pub fn into_examples(self) -> Vec<ScoredExample> {
        self.examples
    }

    pub fn mean_loss(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(self.error_count() as f64 / self.len() as f64)
    }

    pub fn error_count(&self) -> usize {
        self.examples.iter().filter(|e| e.is_error()).count()
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }
}

impl FromIterator<ScoredExample> for ScoredDataset {
    fn from_iter<I: IntoIterator<Item = ScoredExample>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Selection threshold: inputs with `kappa >= theta` are accepted.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() {
            Ok(Self(theta))
        } else {
            Err(Error::domain(format!("threshold {theta} is not finite")))
        }
    }

    /// The most permissive threshold for `data`: its minimum kappa.
    pub fn accept_all(data: &ScoredDataset) -> Result<Self> {
        data.examples
            .iter()
            .map(|e| e.kappa)
            .min_by(f64::total_cmp)
            .map(Self)
            .ok_or(Error::EmptyDataset)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Selection function `g_theta`: accept iff `kappa >= theta`.
pub fn select(theta: Threshold, kappa: f64) -> bool {
    kappa >= theta.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveMetrics {
    /// `errors_accepted / accepted`, or 0 when nothing is accepted.
    pub risk: f64,
    pub coverage: f64,
    pub accepted: usize,
    pub errors_accepted: usize,
    pub total: usize,
    /// Set when no example was accepted; `risk` is then meaningless.
    pub degenerate: bool,
}

impl SelectiveMetrics {
    pub(crate) fn from_counts(accepted: usize, errors_accepted: usize, total: usize) -> Self {
        let degenerate = accepted == 0;
        Self {
            risk: if degenerate {
                0.0
            } else {
                errors_accepted as f64 / accepted as f64
            },
            coverage: accepted as f64 / total as f64,
            accepted,
            errors_accepted,
            total,
            degenerate,
        }
    }
}

/// Empirical selective risk and coverage of `g_theta` on `data`.
pub fn selective_metrics(data: &ScoredDataset, theta: Threshold) -> Result<SelectiveMetrics> {
    data.require_nonempty()?;
    let (accepted, errors) = data
        .examples
        .iter()
        .filter(|e| select(theta, e.kappa))
        .fold((0, 0), |(n, k), e| (n + 1, k + e.loss as usize));
    Ok(SelectiveMetrics::from_counts(accepted, errors, data.len()))
}

/// The accepted subset of `data` under `g_theta`, in input order.
pub fn g_projection(data: &ScoredDataset, theta: Threshold) -> ScoredDataset {
    data.examples
        .iter()
        .filter(|e| select(theta, e.kappa))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub theta: f64,
    pub coverage: f64,
    pub risk: f64,
}

/// Risk-coverage curve with one point per distinct kappa value.
///
/// Points are ordered by descending threshold, so coverage is strictly
/// increasing along the output and the last point has full coverage.
pub fn risk_coverage_curve(data: &ScoredDataset) -> Result<Vec<RiskCoveragePoint>> {
    data.require_nonempty()?;
    let mut order: Vec<&ScoredExample> = data.examples.iter().collect();
    order.sort_by(|a, b| b.kappa.total_cmp(&a.kappa));

    let total = order.len();
    let mut points = Vec::new();
    let (mut accepted, mut errors) = (0usize, 0usize);
    let mut i = 0;
    while i < total {
        let theta = order[i].kappa;
        // a tie group is accepted as a whole
        while i < total && order[i].kappa == theta {
            accepted += 1;
            errors += order[i].loss as usize;
            i += 1;
        }
        let m = SelectiveMetrics::from_counts(accepted, errors, total);
        points.push(RiskCoveragePoint {
            theta,
            coverage: m.coverage,
            risk: m.risk,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(kappa: f64, loss: u8) -> ScoredExample {
        ScoredExample::new(kappa, loss).unwrap()
    }

    fn four() -> ScoredDataset {
        ScoredDataset::new(vec![ex(0.1, 1), ex(0.4, 0), ex(0.6, 1), ex(0.9, 0)])
    }

    fn th(t: f64) -> Threshold {
        Threshold::new(t).unwrap()
    }

    #[test]
    fn select_boundary() {
        assert!(select(th(0.5), 0.5));
        assert!(!select(th(0.5), 0.49));
    }

    #[test]
    fn accept_all_threshold_covers_everything() {
        let d = four();
        let t = Threshold::accept_all(&d).unwrap();
        assert!(d.examples().iter().all(|e| select(t, e.kappa())));
        assert!(Threshold::accept_all(&ScoredDataset::default()).is_err());
    }

    #[test]
    fn example_validation() {
        assert!(ScoredExample::new(f64::NAN, 0).is_err());
        assert!(ScoredExample::new(f64::INFINITY, 0).is_err());
        assert!(ScoredExample::new(0.3, 2).is_err());
        assert!(Threshold::new(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn metrics_four_examples() {
        let m = selective_metrics(&four(), th(0.5)).unwrap();
        assert_eq!(m.coverage, 0.5);
        assert_eq!(m.risk, 0.5);
        assert_eq!((m.accepted, m.errors_accepted), (2, 1));
        assert!(!m.degenerate);
    }

    #[test]
    fn metrics_full_coverage_is_mean_loss() {
        let d = four();
        let m = selective_metrics(&d, th(0.0)).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.risk, d.mean_loss().unwrap());
    }

    #[test]
    fn metrics_no_errors() {
        let d = ScoredDataset::new(vec![ex(0.2, 0), ex(0.7, 0)]);
        assert_eq!(selective_metrics(&d, th(0.7)).unwrap().risk, 0.0);
    }

    #[test]
    fn metrics_degenerate_and_empty() {
        let m = selective_metrics(&four(), th(2.0)).unwrap();
        assert!(m.degenerate);
        assert_eq!((m.accepted, m.risk, m.coverage), (0, 0.0, 0.0));
        assert_eq!(
            selective_metrics(&ScoredDataset::default(), th(0.0)),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn projection() {
        let d = four();
        assert!(g_projection(&d, th(1.0)).is_empty());
        assert_eq!(g_projection(&d, th(-1.0)), d);
        let p = g_projection(&d, th(0.5));
        let kappas: Vec<f64> = p.examples().iter().map(|e| e.kappa()).collect();
        assert_eq!(kappas, vec![0.6, 0.9]);
    }

    #[test]
    fn curve_four_examples() {
        let c = risk_coverage_curve(&four()).unwrap();
        let got: Vec<(f64, f64)> = c.iter().map(|p| (p.coverage, p.risk)).collect();
        assert_eq!(
            got,
            vec![(0.25, 0.0), (0.5, 0.5), (0.75, 1.0 / 3.0), (1.0, 0.5)]
        );
        assert_eq!(c[0].theta, 0.9);
    }

    #[test]
    fn curve_groups_ties() {
        let d = ScoredDataset::new(vec![ex(0.5, 1), ex(0.5, 0), ex(0.8, 0)]);
        let c = risk_coverage_curve(&d).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].coverage, 1.0);
        assert!((c[1].risk - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sort_is_stable_and_sets_flag() {
        let mut d = ScoredDataset::new(vec![
            ex(0.5, 0).with_id("a"),
            ex(0.1, 0),
            ex(0.5, 1).with_id("b"),
        ]);
        assert!(!d.is_sorted());
        d.sort_by_kappa();
        assert!(d.is_sorted());
        let ids: Vec<Option<&str>> = d.examples().iter().map(|e| e.id()).collect();
        assert_eq!(ids, vec![None, Some("a"), Some("b")]);
    }
}
