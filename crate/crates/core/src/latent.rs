//! Latent vectors, unit directions and the arithmetic used by discovery and traversal.
//!
//! Every vector carries a [`SpaceTag`] so that a direction learned in one space
//! (the generator input `Z`, or the flattened activations of a layer) cannot be
//! applied silently in the other.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the Euclidean norm of a [`Direction`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Norms below this are treated as zero by [`normalize`].
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("vector has (near-)zero norm")]
    ZeroVector,
    #[error("vector contains a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("vector is empty")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("space mismatch: {left} vs {right}")]
    SpaceMismatch { left: SpaceTag, right: SpaceTag },
    #[error("direction norm {0} is not 1")]
    NotUnit(f64),
    #[error("invalid space tag {0:?}")]
    InvalidSpaceTag(String),
    #[error("truncation bound must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
}

impl LatentError {
    /// Machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            LatentError::ZeroVector => "ZeroVector",
            LatentError::NonFinite(_) => "NonFinite",
            LatentError::Empty => "EmptyVector",
            LatentError::DimensionMismatch { .. } => "DimensionMismatch",
            LatentError::SpaceMismatch { .. } => "SpaceMismatch",
            LatentError::NotUnit(_) => "NotUnit",
            LatentError::InvalidSpaceTag(_) => "InvalidSpaceTag",
            LatentError::InvalidTheta(_) => "InvalidTheta",
            LatentError::InvalidStepSize(_) => "InvalidStepSize",
        }
    }
}

/// Which space a vector lives in. Serialized as `"z"` or `"layer:<index>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpaceTag {
    Z,
    Layer(u32),
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTag::Z => f.write_str("z"),
            SpaceTag::Layer(index) => write!(f, "layer:{index}"),
        }
    }
}

impl FromStr for SpaceTag {
    type Err = LatentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "z" {
            return Ok(SpaceTag::Z);
        }
        s.strip_prefix("layer:")
            .and_then(|index| index.parse().ok())
            .map(SpaceTag::Layer)
            .ok_or_else(|| LatentError::InvalidSpaceTag(s.to_string()))
    }
}

impl Serialize for SpaceTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpaceTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

fn check_finite(values: &[f64]) -> Result<(), LatentError> {
    if values.is_empty() {
        return Err(LatentError::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LatentError::NonFinite(index)),
        None => Ok(()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(values: &[f64]) -> f64 {
    dot(values, values).sqrt()
}

/// A point in latent (`Z`) or flattened activation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector", into = "RawVector")]
pub struct LatentVector {
    values: Vec<f64>,
    space: SpaceTag,
}

/// A unit-norm direction in latent or activation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector", into = "RawVector")]
pub struct Direction {
    values: Vec<f64>,
    space: SpaceTag,
}

#[derive(Serialize, Deserialize)]
struct RawVector {
    space: SpaceTag,
    values: Vec<f64>,
}

impl TryFrom<RawVector> for LatentVector {
    type Error = LatentError;
    fn try_from(raw: RawVector) -> Result<Self, Self::Error> {
        LatentVector::new(raw.values, raw.space)
    }
}

impl From<LatentVector> for RawVector {
    fn from(v: LatentVector) -> Self {
        RawVector { space: v.space, values: v.values }
    }
}

impl TryFrom<RawVector> for Direction {
    type Error = LatentError;
    fn try_from(raw: RawVector) -> Result<Self, Self::Error> {
        Direction::from_unit(raw.values, raw.space)
    }
}

impl From<Direction> for RawVector {
    fn from(d: Direction) -> Self {
        RawVector { space: d.space, values: d.values }
    }
}

impl LatentVector {
    pub fn new(values: Vec<f64>, space: SpaceTag) -> Result<Self, LatentError> {
        check_finite(&values)?;
        Ok(Self { values, space })
    }

    /// The all-zero vector of the given dimension.
    pub fn zeros(dim: usize, space: SpaceTag) -> Result<Self, LatentError> {
        Self::new(vec![0.0; dim], space)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Checks the vector against a declared dimensionality and space.
    pub fn check_shape(&self, space: SpaceTag, dim: usize) -> Result<(), LatentError> {
        if self.space != space {
            return Err(LatentError::SpaceMismatch { left: self.space, right: space });
        }
        if self.values.len() != dim {
            return Err(LatentError::DimensionMismatch { expected: dim, actual: self.values.len() });
        }
        Ok(())
    }
}

impl Direction {
    /// Wraps values that are already unit-norm (within [`UNIT_NORM_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>, space: SpaceTag) -> Result<Self, LatentError> {
        check_finite(&values)?;
        let n = norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(LatentError::NotUnit(n));
        }
        Ok(Self { values, space })
    }

    /// Axis-aligned unit vector `e_axis` (zero-based axis).
    pub fn axis(dim: usize, axis: usize, space: SpaceTag) -> Result<Self, LatentError> {
        if axis >= dim {
            return Err(LatentError::DimensionMismatch { expected: dim, actual: axis + 1 });
        }
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Ok(Self { values, space })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Errors unless the direction lives in `space` with `dim` entries.
    pub fn check_shape(&self, space: SpaceTag, dim: usize) -> Result<(), LatentError> {
        same_shape(space, dim, self.space, self.dim())
    }

    /// Cosine similarity with another direction of the same space.
    pub fn cosine(&self, other: &Direction) -> Result<f64, LatentError> {
        same_shape(self.space, self.dim(), other.space, other.dim())?;
        Ok(dot(&self.values, &other.values) / (self.norm() * other.norm()))
    }
}

/// Per-step travel distance along a direction; the full displacement at step `k`
/// is `k * magnitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TraversalStepSize(f64);

impl TraversalStepSize {
    pub fn new(magnitude: f64) -> Result<Self, LatentError> {
        if magnitude.is_finite() && magnitude > 0.0 {
            Ok(Self(magnitude))
        } else {
            Err(LatentError::InvalidStepSize(magnitude))
        }
    }

    pub fn magnitude(self) -> f64 {
        self.0
    }

    /// Signed travel amount for a step index.
    pub fn lambda(self, step_index: i32) -> f64 {
        f64::from(step_index) * self.0
    }
}

impl TryFrom<f64> for TraversalStepSize {
    type Error = LatentError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TraversalStepSize> for f64 {
    fn from(step: TraversalStepSize) -> f64 {
        step.0
    }
}

fn same_shape(a: SpaceTag, a_dim: usize, b: SpaceTag, b_dim: usize) -> Result<(), LatentError> {
    if a != b {
        return Err(LatentError::SpaceMismatch { left: a, right: b });
    }
    if a_dim != b_dim {
        return Err(LatentError::DimensionMismatch { expected: a_dim, actual: b_dim });
    }
    Ok(())
}

/// Scales a raw vector to unit length.
pub fn normalize(values: &[f64], space: SpaceTag) -> Result<Direction, LatentError> {
    check_finite(values)?;
    let n = norm(values);
    if n < ZERO_NORM_THRESHOLD {
        return Err(LatentError::ZeroVector);
    }
    Ok(Direction { values: values.iter().map(|v| v / n).collect(), space })
}

/// `z + lambda * d`, component-wise.
pub fn traverse(z: &LatentVector, d: &Direction, lambda: f64) -> Result<LatentVector, LatentError> {
    same_shape(z.space, z.dim(), d.space, d.dim())?;
    if !lambda.is_finite() {
        return Err(LatentError::NonFinite(0));
    }
    let values: Vec<f64> = z.values.iter().zip(&d.values).map(|(zi, di)| zi + lambda * di).collect();
    LatentVector::new(values, z.space)
}

/// Dot product of a vector with a direction.
pub fn project(v: &LatentVector, d: &Direction) -> Result<f64, LatentError> {
    same_shape(v.space, v.dim(), d.space, d.dim())?;
    Ok(dot(&v.values, &d.values))
}

/// Clamps every coordinate into `[-theta, theta]`.
pub fn truncate(z: &LatentVector, theta: f64) -> Result<LatentVector, LatentError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(LatentError::InvalidTheta(theta));
    }
    Ok(LatentVector { values: z.values.iter().map(|v| v.clamp(-theta, theta)).collect(), space: z.space })
}

/// Truncation that never moves a coordinate back past an anchor point: each
/// entry is clamped into `[min(-theta, anchor_i), max(theta, anchor_i)]`.
///
/// Equal to [`truncate`] whenever the anchor lies inside the `theta` box, and
/// leaves the anchor itself unchanged otherwise.
pub fn truncate_anchored(z: &LatentVector, anchor: &LatentVector, theta: f64) -> Result<LatentVector, LatentError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(LatentError::InvalidTheta(theta));
    }
    same_shape(z.space, z.dim(), anchor.space, anchor.dim())?;
    let values = z.values.iter().zip(&anchor.values).map(|(v, a)| v.clamp((-theta).min(*a), theta.max(*a))).collect();
    Ok(LatentVector { values, space: z.space })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z(values: &[f64]) -> LatentVector {
        LatentVector::new(values.to_vec(), SpaceTag::Z).unwrap()
    }

    fn dir(values: &[f64]) -> Direction {
        normalize(values, SpaceTag::Z).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(dir(&[3.0, 4.0]).values(), &[0.6, 0.8]);
        assert_eq!(dir(&[1.0, 0.0, 0.0]).values(), &[1.0, 0.0, 0.0]);
        assert_eq!(normalize(&[0.0, 0.0], SpaceTag::Z), Err(LatentError::ZeroVector));
        assert_eq!(normalize(&[1.0, f64::NAN], SpaceTag::Z), Err(LatentError::NonFinite(1)));
    }

    #[test]
    fn traverse_examples() {
        let e1 = dir(&[1.0, 0.0]);
        assert_eq!(traverse(&z(&[1.0, 2.0]), &e1, 0.0).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(traverse(&z(&[1.0, 2.0]), &e1, 2.0).unwrap().values(), &[3.0, 2.0]);
        let e2 = dir(&[0.0, 1.0]);
        assert_eq!(traverse(&z(&[0.0, 0.0]), &e2, -1.5).unwrap().values(), &[0.0, -1.5]);
    }

    #[test]
    fn traverse_rejects_mismatches() {
        let layer = LatentVector::new(vec![1.0, 2.0], SpaceTag::Layer(1)).unwrap();
        let e1 = dir(&[1.0, 0.0]);
        assert!(matches!(traverse(&layer, &e1, 1.0), Err(LatentError::SpaceMismatch { .. })));
        let e3 = dir(&[1.0, 0.0, 0.0]);
        assert!(matches!(traverse(&z(&[1.0, 2.0]), &e3, 1.0), Err(LatentError::DimensionMismatch { .. })));
    }

    #[test]
    fn project_examples() {
        let e1 = dir(&[1.0, 0.0]);
        assert_eq!(project(&z(&[3.0, 4.0]), &e1).unwrap(), 3.0);
        assert_eq!(project(&z(&[0.0, 5.0]), &e1).unwrap(), 0.0);
        let d = dir(&[0.6, 0.8]);
        assert!((project(&z(&[0.6, 0.8]), &d).unwrap() - 1.0).abs() < 1e-12);
        assert!(project(&z(&[1.0]), &e1).is_err());
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&z(&[3.1, 0.5]), 2.0).unwrap().values(), &[2.0, 0.5]);
        assert_eq!(truncate(&z(&[-5.0, 1.0]), 2.0).unwrap().values(), &[-2.0, 1.0]);
        assert_eq!(truncate(&z(&[0.1, -0.2]), 2.0).unwrap().values(), &[0.1, -0.2]);
        assert!(truncate(&z(&[0.1]), 0.0).is_err());
    }

    #[test]
    fn anchored_truncation_keeps_anchor() {
        let anchor = z(&[2.5, 0.0]);
        let moved = z(&[3.0, 3.0]);
        assert_eq!(truncate_anchored(&moved, &anchor, 2.0).unwrap().values(), &[2.5, 2.0]);
        assert_eq!(truncate_anchored(&anchor, &anchor, 2.0).unwrap(), anchor);
    }

    #[test]
    fn space_tag_text_form() {
        assert_eq!(SpaceTag::Z.to_string(), "z");
        assert_eq!(SpaceTag::Layer(1).to_string(), "layer:1");
        assert_eq!("layer:7".parse::<SpaceTag>().unwrap(), SpaceTag::Layer(7));
        assert!("layer:x".parse::<SpaceTag>().is_err());
        assert!("Z".parse::<SpaceTag>().is_err());
        let json = serde_json::to_string(&dir(&[3.0, 4.0])).unwrap();
        assert_eq!(json, r#"{"space":"z","values":[0.6,0.8]}"#);
        assert!(serde_json::from_str::<Direction>(r#"{"space":"z","values":[1.0,1.0]}"#).is_err());
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn traverse_zero_is_identity(values in finite_vec(6), raw in finite_vec(6)) {
            prop_assume!(norm(&raw) > 1e-3);
            let v = z(&values);
            let d = dir(&raw);
            let moved = traverse(&v, &d, 0.0).unwrap();
            for (a, b) in moved.values().iter().zip(v.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn traverse_composes(values in finite_vec(5), raw in finite_vec(5), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            prop_assume!(norm(&raw) > 1e-3);
            let v = z(&values);
            let d = dir(&raw);
            let twice = traverse(&traverse(&v, &d, a).unwrap(), &d, b).unwrap();
            let once = traverse(&v, &d, a + b).unwrap();
            for (x, y) in twice.values().iter().zip(once.values()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn projection_moves_by_lambda(values in finite_vec(4), raw in finite_vec(4), lambda in -5.0f64..5.0) {
            prop_assume!(norm(&raw) > 1e-3);
            let v = z(&values);
            let d = dir(&raw);
            let delta = project(&traverse(&v, &d, lambda).unwrap(), &d).unwrap() - project(&v, &d).unwrap();
            prop_assert!((delta - lambda).abs() <= 1e-9);
        }

        #[test]
        fn normalize_is_idempotent(raw in finite_vec(7)) {
            prop_assume!(norm(&raw) > 1e-3);
            let once = dir(&raw);
            prop_assert!((once.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE);
            let twice = normalize(once.values(), SpaceTag::Z).unwrap();
            for (x, y) in once.values().iter().zip(twice.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn truncate_is_idempotent(values in finite_vec(6), theta in 0.1f64..4.0) {
            let once = truncate(&z(&values), theta).unwrap();
            let twice = truncate(&once, theta).unwrap();
            prop_assert_eq!(&once, &twice);
            for (i, v) in values.iter().enumerate() {
                // per-component: independent of the other entries
                let single = truncate(&z(&[*v]), theta).unwrap();
                prop_assert_eq!(single.values()[0], once.values()[i]);
            }
        }
    }
}
