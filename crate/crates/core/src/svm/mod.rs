//! Soft-margin linear SVM for small two-class sets.
//!
//! The solver is dual coordinate descent over `alpha_i in [0, C]`. The bias is
//! learned as the weight of a constant-1 feature appended to every point, after
//! the points have been centered on their mean; centering makes the implied
//! `½ b_c²` penalty independent of where the data sits, so translating every
//! point by `t` leaves `w` unchanged and shifts `b` by `-w·t`.
//!
//! The objective minimized is therefore
//!
//! ```text
//! ½‖w‖² + ½(b + w·x̄)² + C·Σ max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! where `x̄` is the mean training point; see [`objective`].

mod oracle;

pub use oracle::{oracle_fit, ORACLE_MAX_ITERATIONS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::{normalize, Direction, LatentError, SpaceTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("training set contains only one label")]
    SingleClass,
    #[error("training set is empty")]
    EmptySet,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature vector {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("KKT violation {max_violation:e} above tolerance after {sweeps} sweeps")]
    IterationLimit { partial: Hyperplane, max_violation: f64, sweeps: usize },
    #[error("hyperplane has a zero weight vector")]
    DegenerateHyperplane,
    #[error("invalid solver config: {0}")]
    InvalidConfig(&'static str),
}

impl SvmError {
    /// Machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            SvmError::SingleClass => "SingleClass",
            SvmError::EmptySet => "EmptySet",
            SvmError::DimensionMismatch { .. } => "DimensionMismatch",
            SvmError::NonFinite(_) => "NonFinite",
            SvmError::IterationLimit { .. } => "IterationLimit",
            SvmError::DegenerateHyperplane => "DegenerateHyperplane",
            SvmError::InvalidConfig(_) => "InvalidSolverConfig",
        }
    }
}

/// Class label of a training point. The positive class is the one the
/// recovered direction points towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

/// Feature vectors with ±1 labels, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    dimension: usize,
    points: Vec<(Vec<f64>, Label)>,
}

impl LabeledSet {
    pub fn new(dimension: usize, points: Vec<(Vec<f64>, Label)>) -> Result<Self, SvmError> {
        if dimension == 0 {
            return Err(SvmError::DimensionMismatch { expected: 1, actual: 0 });
        }
        for (i, (x, _)) in points.iter().enumerate() {
            if x.len() != dimension {
                return Err(SvmError::DimensionMismatch { expected: dimension, actual: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SvmError::NonFinite(i));
            }
        }
        Ok(Self { dimension, points })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn points(&self) -> &[(Vec<f64>, Label)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of (negative, positive) points.
    pub fn class_counts(&self) -> (usize, usize) {
        let positive = self.points.iter().filter(|(_, y)| *y == Label::Positive).count();
        (self.points.len() - positive, positive)
    }

    pub(crate) fn check_fittable(&self) -> Result<(), SvmError> {
        if self.points.is_empty() {
            return Err(SvmError::EmptySet);
        }
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(SvmError::SingleClass);
        }
        Ok(())
    }

    /// Mean of all feature vectors.
    pub fn centroid(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dimension];
        for (x, _) in &self.points {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        let n = self.points.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// The same points with every label negated.
    pub fn with_flipped_labels(&self) -> Self {
        Self { dimension: self.dimension, points: self.points.iter().map(|(x, y)| (x.clone(), y.flipped())).collect() }
    }

    /// The same points shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Result<Self, SvmError> {
        if offset.len() != self.dimension {
            return Err(SvmError::DimensionMismatch { expected: self.dimension, actual: offset.len() });
        }
        let points =
            self.points.iter().map(|(x, y)| (x.iter().zip(offset).map(|(a, b)| a + b).collect(), *y)).collect();
        Ok(Self { dimension: self.dimension, points })
    }
}

/// Separating hyperplane `w·x + b = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Soft-margin penalty.
    pub c: f64,
    /// Bound on the maximum projected-gradient (KKT) violation of the dual.
    pub tolerance: f64,
    /// Maximum number of full sweeps.
    pub max_iterations: usize,
    /// Reserved; the solver is deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { c: 1.0, tolerance: 1e-6, max_iterations: 10_000, seed: 0 }
    }
}

impl SolverConfig {
    pub fn with_c(c: f64) -> Self {
        Self { c, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(SvmError::InvalidConfig("c must be positive"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(SvmError::InvalidConfig("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(SvmError::InvalidConfig("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Everything the coordinate-descent solve produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub hyperplane: Hyperplane,
    /// Dual variables, in input order.
    pub alphas: Vec<f64>,
    pub sweeps: usize,
    /// Largest projected-gradient magnitude at the returned solution.
    pub max_violation: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient of the box-constrained dual at one coordinate.
fn projected_gradient(gradient: f64, alpha: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        gradient.min(0.0)
    } else if alpha >= c {
        gradient.max(0.0)
    } else {
        gradient
    }
}

/// Fits the hyperplane minimizing [`objective`].
pub fn fit(set: &LabeledSet, config: &SolverConfig) -> Result<Hyperplane, SvmError> {
    fit_with_report(set, config).map(|report| report.hyperplane)
}

/// [`fit`], also returning the dual solution and convergence data.
pub fn fit_with_report(set: &LabeledSet, config: &SolverConfig) -> Result<FitReport, SvmError> {
    config.validate()?;
    set.check_fittable()?;

    let dim = set.dimension();
    let centroid = set.centroid();
    // centered features with the constant-1 bias coordinate appended
    let features: Vec<Vec<f64>> = set
        .points()
        .iter()
        .map(|(x, _)| x.iter().zip(&centroid).map(|(v, m)| v - m).chain(std::iter::once(1.0)).collect())
        .collect();
    let labels: Vec<f64> = set.points().iter().map(|(_, y)| y.sign()).collect();
    let diag: Vec<f64> = features.iter().map(|x| dot(x, x)).collect();

    let c = config.c;
    let mut alphas = vec![0.0; features.len()];
    let mut w = vec![0.0; dim + 1];

    let max_violation = |w: &[f64], alphas: &[f64]| -> f64 {
        features
            .iter()
            .zip(&labels)
            .zip(alphas)
            .map(|((x, y), a)| projected_gradient(y * dot(w, x) - 1.0, *a, c).abs())
            .fold(0.0, f64::max)
    };

    let mut violation = max_violation(&w, &alphas);
    let mut sweeps = 0;
    while violation > config.tolerance && sweeps < config.max_iterations {
        for i in 0..features.len() {
            let gradient = labels[i] * dot(&w, &features[i]) - 1.0;
            if projected_gradient(gradient, alphas[i], c) == 0.0 {
                continue;
            }
            let old = alphas[i];
            alphas[i] = (old - gradient / diag[i]).clamp(0.0, c);
            let step = (alphas[i] - old) * labels[i];
            if step != 0.0 {
                for (wj, xj) in w.iter_mut().zip(&features[i]) {
                    *wj += step * xj;
                }
            }
        }
        sweeps += 1;
        violation = max_violation(&w, &alphas);
    }

    let bias_centered = w[dim];
    w.truncate(dim);
    let b = bias_centered - dot(&w, &centroid);
    let hyperplane = Hyperplane { w, b };

    if violation > config.tolerance {
        return Err(SvmError::IterationLimit { partial: hyperplane, max_violation: violation, sweeps });
    }
    Ok(FitReport { hyperplane, alphas, sweeps, max_violation: violation })
}

/// Signed decision value `w·x + b`.
pub fn margin(h: &Hyperplane, x: &[f64]) -> Result<f64, SvmError> {
    if x.len() != h.w.len() {
        return Err(SvmError::DimensionMismatch { expected: h.w.len(), actual: x.len() });
    }
    Ok(dot(&h.w, x) + h.b)
}

/// Unit normal of the hyperplane, pointing towards the positive class.
pub fn direction_of(h: &Hyperplane, space: SpaceTag) -> Result<Direction, SvmError> {
    normalize(&h.w, space).map_err(|e| match e {
        LatentError::ZeroVector => SvmError::DegenerateHyperplane,
        LatentError::NonFinite(i) => SvmError::NonFinite(i),
        _ => SvmError::DegenerateHyperplane,
    })
}

/// Primal objective `½‖w‖² + ½(b + w·x̄)² + C·Σ hinge` over `set`.
pub fn objective(set: &LabeledSet, c: f64, h: &Hyperplane) -> Result<f64, SvmError> {
    if h.w.len() != set.dimension() {
        return Err(SvmError::DimensionMismatch { expected: set.dimension(), actual: h.w.len() });
    }
    let centroid = set.centroid();
    let centered_bias = h.b + dot(&h.w, &centroid);
    let hinge: f64 = set.points().iter().map(|(x, y)| (1.0 - y.sign() * (dot(&h.w, x) + h.b)).max(0.0)).sum();
    Ok(0.5 * dot(&h.w, &h.w) + 0.5 * centered_bias * centered_bias + c * hinge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[(&[f64], Label)]) -> LabeledSet {
        let dim = points[0].0.len();
        LabeledSet::new(dim, points.iter().map(|(x, y)| (x.to_vec(), *y)).collect()).unwrap()
    }

    use Label::{Negative as N, Positive as P};

    #[test]
    fn symmetric_two_point_max_margin() {
        let h = fit(&set(&[(&[1.0], P), (&[-1.0], N)]), &SolverConfig::with_c(10.0)).unwrap();
        assert!((h.w[0] - 1.0).abs() < 1e-6);
        assert!(h.b.abs() < 1e-6);
    }

    #[test]
    fn symmetric_four_point_is_axis_aligned() {
        let s = set(&[(&[1.0, 1.0], P), (&[1.0, -1.0], P), (&[-1.0, 1.0], N), (&[-1.0, -1.0], N)]);
        let h = fit(&s, &SolverConfig::with_c(10.0)).unwrap();
        assert!((h.w[0] - 1.0).abs() < 1e-6, "{h:?}");
        assert!(h.w[1].abs() < 1e-6);
        assert!(h.b.abs() < 1e-6);
    }

    #[test]
    fn inverted_pair_matches_hand_solution() {
        // With b = 0 by symmetry, ½w² + 2·max(0, 1 + w/2) is minimized at w = -1
        // (both points inside the margin at 0.5), objective 1.5.
        let s = set(&[(&[-0.5], P), (&[0.5], N)]);
        let h = fit(&s, &SolverConfig::with_c(1.0)).unwrap();
        assert!((h.w[0] + 1.0).abs() < 1e-6);
        assert!(h.b.abs() < 1e-6);
        assert!((objective(&s, 1.0, &h).unwrap() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_rejected() {
        let s = set(&[(&[1.0], P), (&[2.0], P)]);
        assert_eq!(fit(&s, &SolverConfig::default()), Err(SvmError::SingleClass));
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let err = LabeledSet::new(2, vec![(vec![1.0, 2.0], P), (vec![1.0], N)]).unwrap_err();
        assert_eq!(err, SvmError::DimensionMismatch { expected: 2, actual: 1 });
    }

    #[test]
    fn iteration_limit_carries_partial_solution() {
        let s = set(&[(&[1.0, 0.2], P), (&[0.9, -0.3], P), (&[-1.0, 0.1], N), (&[0.2, 0.0], N)]);
        let config = SolverConfig { c: 100.0, tolerance: 1e-12, max_iterations: 1, seed: 0 };
        match fit(&s, &config) {
            Err(SvmError::IterationLimit { partial, sweeps, max_violation }) => {
                assert_eq!(sweeps, 1);
                assert_eq!(partial.w.len(), 2);
                assert!(max_violation > 1e-12);
            }
            other => panic!("expected IterationLimit, got {other:?}"),
        }
    }

    #[test]
    fn margin_examples() {
        let h = Hyperplane { w: vec![1.0, 0.0], b: 0.0 };
        assert_eq!(margin(&h, &[2.0, 5.0]).unwrap(), 2.0);
        let h = Hyperplane { w: vec![1.0, 0.0], b: 1.0 };
        assert_eq!(margin(&h, &[0.0, 0.0]).unwrap(), 1.0);
        let h = Hyperplane { w: vec![0.6, 0.8], b: 0.0 };
        assert!(margin(&h, &[-0.8, 0.6]).unwrap().abs() < 1e-15);
        assert!(margin(&h, &[1.0]).is_err());
    }

    #[test]
    fn direction_of_examples() {
        let d = direction_of(&Hyperplane { w: vec![3.0, 4.0], b: 2.0 }, SpaceTag::Z).unwrap();
        assert_eq!(d.values(), &[0.6, 0.8]);
        let d = direction_of(&Hyperplane { w: vec![0.0, 0.0, 7.0], b: 0.0 }, SpaceTag::Layer(1)).unwrap();
        assert_eq!(d.values(), &[0.0, 0.0, 1.0]);
        assert_eq!(d.space(), SpaceTag::Layer(1));
        assert_eq!(
            direction_of(&Hyperplane { w: vec![0.0, 0.0], b: 0.0 }, SpaceTag::Z),
            Err(SvmError::DegenerateHyperplane)
        );
    }

    fn labeled_points(max_dim: usize, max_points: usize) -> impl Strategy<Value = LabeledSet> {
        (1..=max_dim, 2..=max_points).prop_flat_map(|(dim, n)| {
            prop::collection::vec((prop::collection::vec(-3.0f64..3.0, dim), any::<bool>()), n).prop_map(
                move |mut pts| {
                    pts[0].1 = true;
                    pts[1].1 = false;
                    let points = pts
                        .into_iter()
                        .map(|(x, pos)| (x, if pos { Label::Positive } else { Label::Negative }))
                        .collect();
                    LabeledSet::new(dim, points).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn dual_feasibility_and_kkt(s in labeled_points(6, 12), c in prop::sample::select(vec![0.1, 1.0, 10.0])) {
            let config = SolverConfig { max_iterations: 1_000_000, ..SolverConfig::with_c(c) };
            let report = fit_with_report(&s, &config).unwrap();
            prop_assert!(report.alphas.iter().all(|a| (0.0..=c).contains(a)));
            prop_assert!(report.max_violation <= config.tolerance);
        }

        #[test]
        fn deterministic(s in labeled_points(4, 10)) {
            // compares failures too: a flat dual face may exhaust the sweep budget
            let a = fit(&s, &SolverConfig::default());
            let b = fit(&s, &SolverConfig::default());
            prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }

        #[test]
        fn hard_margin_on_separable_sets(s in labeled_points(4, 10), c in prop::sample::select(vec![100.0, 1000.0])) {
            // shift the positive class far enough along every axis to separate
            let points = s.points().iter().map(|(x, y)| {
                let offset = if *y == Label::Positive { 7.0 } else { 0.0 };
                (x.iter().map(|v| v + offset).collect(), *y)
            }).collect();
            let s = LabeledSet::new(s.dimension(), points).unwrap();
            let h = fit(&s, &SolverConfig::with_c(c)).unwrap();
            for (x, y) in s.points() {
                prop_assert!(y.sign() * margin(&h, x).unwrap() >= 1.0 - 1e-6);
            }
        }

        #[test]
        fn label_flip_negates(s in labeled_points(5, 12)) {
            let config = SolverConfig { max_iterations: 1_000_000, ..SolverConfig::default() };
            let h = fit(&s, &config).unwrap();
            let flipped = fit(&s.with_flipped_labels(), &config).unwrap();
            prop_assert!((h.b + flipped.b).abs() <= 1e-9);
            for (a, b) in h.w.iter().zip(&flipped.w) {
                prop_assert!((a + b).abs() <= 1e-9);
            }
        }

        #[test]
        fn translation_covariance(s in labeled_points(4, 10), shift in prop::collection::vec(-5.0f64..5.0, 4)) {
            let offset = &shift[..s.dimension()];
            let config = SolverConfig { tolerance: 1e-9, max_iterations: 1_000_000, ..SolverConfig::default() };
            let h = fit(&s, &config).unwrap();
            let moved = fit(&s.translated(offset).unwrap(), &config).unwrap();
            for (a, b) in h.w.iter().zip(&moved.w) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            let expected_b = h.b - dot(&h.w, offset);
            prop_assert!((moved.b - expected_b).abs() <= 1e-6);
        }
    }
}
