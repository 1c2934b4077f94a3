//! The calibrate/navigate loop: sort a pool into two sides, fit a compass,
//! then walk images along it.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{ActivationTensor, BackendError, CategoryId, Generator, GeneratorInfo, ImageSample};
use crate::ids::{CompassId, ImageId, SessionId, TrajectoryId};
use crate::image::RgbImage;
use crate::latent::{self, Direction, LatentError, LatentVector, SpaceTag, TraversalStepSize};
use crate::svm::{self, Hyperplane, Label, LabeledSet, SolverConfig, SvmError};

/// Steps generated on each side of the center by a fresh trajectory.
pub const INITIAL_STEPS: i32 = 3;
/// Smallest admissible gap between the two class means along the direction.
pub const MIN_CLASS_SEPARATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("image {0} is not in the session pool")]
    UnknownImage(ImageId),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{total} images assigned, calibration needs at least {min_total}")]
    CalibrationUnderfilled { total: usize, min_total: usize },
    #[error("{n_left} left / {n_right} right, each side needs at least {min_per_class}")]
    ClassTooSmall { n_left: usize, n_right: usize, min_per_class: usize },
    #[error("{n_left} left / {n_right} right exceeds the allowed ratio {max_ratio}")]
    ClassImbalance { n_left: usize, n_right: usize, max_ratio: f64 },
    #[error("class means along the direction differ by {0:e}, too little to set a step size")]
    DegenerateStep(f64),
    #[error("pool activations are all zero, no feature scale can be derived")]
    DegenerateFeatureScale,
    #[error("trajectory {trajectory} belongs to compass {expected}, not {actual}")]
    CompassMismatch { trajectory: TrajectoryId, expected: CompassId, actual: CompassId },
}

impl EngineError {
    /// Machine-readable name of the error; wrapped errors keep their own.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Backend(e) => e.code(),
            EngineError::Svm(e) => e.code(),
            EngineError::Latent(e) => e.code(),
            EngineError::UnknownImage(_) => "UnknownImage",
            EngineError::InvalidArgument(_) => "InvalidRequest",
            EngineError::CalibrationUnderfilled { .. } => "CalibrationUnderfilled",
            EngineError::ClassTooSmall { .. } => "ClassTooSmall",
            EngineError::ClassImbalance { .. } => "ClassImbalance",
            EngineError::DegenerateStep(_) => "DegenerateStep",
            EngineError::DegenerateFeatureScale => "DegenerateFeatureScale",
            EngineError::CompassMismatch { .. } => "CompassMismatch",
        }
    }
}

/// Which side of the sorting board an image sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Unassigned,
}

/// Trajectory end to grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Forward,
    Backward,
}

/// Thresholds a sorting must meet before calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancePolicy {
    pub min_total: usize,
    pub min_per_class: usize,
    pub max_imbalance_ratio: f64,
}

impl Default for BalancePolicy {
    fn default() -> Self {
        Self { min_total: 14, min_per_class: 5, max_imbalance_ratio: 2.0 }
    }
}

impl BalancePolicy {
    /// Checks per-side minimums first, then the total, then the ratio.
    pub fn check(&self, n_left: usize, n_right: usize) -> Result<(), EngineError> {
        if n_left < self.min_per_class || n_right < self.min_per_class {
            return Err(EngineError::ClassTooSmall { n_left, n_right, min_per_class: self.min_per_class });
        }
        let total = n_left + n_right;
        if total < self.min_total {
            return Err(EngineError::CalibrationUnderfilled { total, min_total: self.min_total });
        }
        let (small, large) = (n_left.min(n_right) as f64, n_left.max(n_right) as f64);
        if large > self.max_imbalance_ratio * small {
            return Err(EngineError::ClassImbalance { n_left, n_right, max_ratio: self.max_imbalance_ratio });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub solver: SolverConfig,
    pub policy: BalancePolicy,
    /// Scales the derived step size.
    pub step_multiplier: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), policy: BalancePolicy::default(), step_multiplier: 1.0 }
    }
}

/// An in-progress sorting of generated images.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: SessionId,
    pub category: CategoryId,
    /// `z` for scene level, `layer:<i>` for detail level.
    pub space: SpaceTag,
    pub pool: Vec<ImageSample>,
    assignments: HashMap<ImageId, Side>,
    pub created_at: DateTime<Utc>,
    next_seed: u64,
}

impl Session {
    pub fn assignments(&self) -> &HashMap<ImageId, Side> {
        &self.assignments
    }

    pub fn image(&self, id: &ImageId) -> Option<&ImageSample> {
        self.pool.iter().find(|s| &s.id == id)
    }

    pub fn side_of(&self, id: &ImageId) -> Side {
        self.assignments.get(id).copied().unwrap_or(Side::Unassigned)
    }

    /// Seed following the last one used to fill the pool.
    pub fn next_seed(&self) -> u64 {
        self.next_seed
    }

    /// Puts an image on a side; [`Side::Unassigned`] takes it off the board.
    pub fn assign(&mut self, id: &ImageId, side: Side) -> Result<(), EngineError> {
        if self.image(id).is_none() {
            return Err(EngineError::UnknownImage(id.clone()));
        }
        match side {
            Side::Unassigned => {
                self.assignments.remove(id);
            }
            side => {
                self.assignments.insert(id.clone(), side);
            }
        }
        Ok(())
    }

    /// `(n_left, n_right)`.
    pub fn counts(&self) -> (usize, usize) {
        let left = self.assignments.values().filter(|s| **s == Side::Left).count();
        (left, self.assignments.len() - left)
    }
}

/// Class sizes and separability of the sorting a compass was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub n_left: usize,
    pub n_right: usize,
    pub separable: bool,
}

/// A fitted direction with everything needed to navigate along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCompass {
    pub id: CompassId,
    pub direction: Direction,
    pub bias: f64,
    /// `‖w‖` of the fitted hyperplane, so margins can be recomputed from
    /// the unit direction.
    pub weight_norm: f64,
    pub step_unit: TraversalStepSize,
    pub space: SpaceTag,
    /// Divisor applied to activations before fitting (1.0 in `z`).
    pub feature_scale: f64,
    /// Category the sorting was done in.
    pub category: CategoryId,
    pub source_session: Option<SessionId>,
    pub training_stats: Option<TrainingStats>,
}

impl CalibratedCompass {
    pub fn hyperplane(&self) -> Hyperplane {
        Hyperplane { w: self.direction.values().iter().map(|d| d * self.weight_norm).collect(), b: self.bias }
    }

    /// Decision value of a feature vector.
    pub fn margin(&self, feature: &[f64]) -> Result<f64, EngineError> {
        Ok(svm::margin(&self.hyperplane(), feature)?)
    }

    pub fn lambda(&self, step_index: i32) -> f64 {
        self.step_unit.lambda(step_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step_index: i32,
    pub image_id: ImageId,
    pub image: RgbImage,
    pub lambda: f64,
    pub margin_value: f64,
    /// Whether truncation changed the traversed latent before rendering.
    pub clipped: bool,
}

/// A center image and renders at integer multiples of the step along a
/// compass, ordered by step index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: TrajectoryId,
    pub compass: CompassId,
    pub category: CategoryId,
    pub center: ImageSample,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn min_index(&self) -> i32 {
        self.steps.first().map_or(0, |s| s.step_index)
    }

    pub fn max_index(&self) -> i32 {
        self.steps.last().map_or(0, |s| s.step_index)
    }

    pub fn step(&self, index: i32) -> Option<&TrajectoryStep> {
        self.steps.iter().find(|s| s.step_index == index)
    }
}

/// Calibrates and navigates against one generator.
#[derive(Clone)]
pub struct Engine {
    generator: Arc<dyn Generator>,
    info: GeneratorInfo,
    theta: f64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("info", &self.info).field("theta", &self.theta).finish()
    }
}

impl Engine {
    /// Reads the generator descriptor once; `theta` bounds scene-level
    /// latents at render time.
    pub fn new(generator: Arc<dyn Generator>, theta: f64) -> Result<Self, EngineError> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(LatentError::InvalidTheta(theta).into());
        }
        let info = generator.info()?;
        Ok(Self { generator, info, theta })
    }

    pub fn info(&self) -> &GeneratorInfo {
        &self.info
    }

    pub fn generator(&self) -> &Arc<dyn Generator> {
        &self.generator
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn create_session(&self, category: CategoryId, space: SpaceTag) -> Result<Session, EngineError> {
        self.info.check_category(category)?;
        self.info.dim_of(space)?;
        Ok(Session {
            id: SessionId::generate(),
            category,
            space,
            pool: Vec::new(),
            assignments: HashMap::new(),
            created_at: Utc::now(),
            next_seed: 0,
        })
    }

    /// Appends `count` samples drawn with seeds `seed, seed + 1, …`.
    pub fn fill_pool(&self, session: &mut Session, count: usize, seed: u64) -> Result<Vec<ImageSample>, EngineError> {
        if count == 0 {
            return Err(EngineError::InvalidArgument("count must be at least 1".into()));
        }
        let seeds: Vec<u64> = (0..count as u64).map(|i| seed.wrapping_add(i)).collect();
        let samples =
            seeds.par_iter().map(|s| self.generator.sample(*s, session.category)).collect::<Result<Vec<_>, _>>()?;
        session.pool.extend(samples.iter().cloned());
        session.next_seed = seed.wrapping_add(count as u64);
        Ok(samples)
    }

    fn layer_activations(
        &self,
        samples: &[&ImageSample],
        category: CategoryId,
        layer: u32,
    ) -> Result<Vec<ActivationTensor>, EngineError> {
        Ok(samples
            .par_iter()
            .map(|s| self.generator.activations(&s.z, category, layer))
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// Fits a compass to the session's current sorting.
    pub fn calibrate(&self, session: &Session, config: &CalibrationConfig) -> Result<CalibratedCompass, EngineError> {
        if !(config.step_multiplier.is_finite() && config.step_multiplier > 0.0) {
            return Err(EngineError::InvalidArgument("step_multiplier must be positive".into()));
        }
        let (n_left, n_right) = session.counts();
        config.policy.check(n_left, n_right)?;

        let assigned: Vec<(&ImageSample, Label)> = session
            .pool
            .iter()
            .filter_map(|s| match session.side_of(&s.id) {
                Side::Left => Some((s, Label::Negative)),
                Side::Right => Some((s, Label::Positive)),
                Side::Unassigned => None,
            })
            .collect();

        let (features, feature_scale) = match session.space {
            SpaceTag::Z => (assigned.iter().map(|(s, _)| s.z.values().to_vec()).collect::<Vec<_>>(), 1.0),
            SpaceTag::Layer(layer) => {
                let pool: Vec<&ImageSample> = session.pool.iter().collect();
                let activations = self.layer_activations(&pool, session.category, layer)?;
                let entries: usize = activations.iter().map(|a| a.data().len()).sum();
                let sum_sq: f64 = activations.iter().flat_map(|a| a.data()).map(|v| v * v).sum();
                let scale = (sum_sq / entries as f64).sqrt();
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(EngineError::DegenerateFeatureScale);
                }
                let by_id: HashMap<&ImageId, &ActivationTensor> =
                    session.pool.iter().map(|s| &s.id).zip(&activations).collect();
                let features =
                    assigned.iter().map(|(s, _)| by_id[&s.id].data().iter().map(|v| v / scale).collect()).collect();
                (features, scale)
            }
        };

        let dimension = self.info.dim_of(session.space)?;
        let points = features.into_iter().zip(assigned.iter().map(|(_, y)| *y)).collect();
        let set = LabeledSet::new(dimension, points)?;
        let hyperplane = svm::fit(&set, &config.solver)?;
        let direction = svm::direction_of(&hyperplane, session.space)?;
        let weight_norm = hyperplane.w.iter().map(|w| w * w).sum::<f64>().sqrt();

        let mut sums = [0.0f64; 2];
        let mut separable = true;
        for (x, y) in set.points() {
            let p: f64 = x.iter().zip(direction.values()).map(|(a, b)| a * b).sum();
            sums[usize::from(*y == Label::Positive)] += p;
            separable &= y.sign() * svm::margin(&hyperplane, x)? > 0.0;
        }
        let gap = sums[1] / n_right as f64 - sums[0] / n_left as f64;
        if gap <= MIN_CLASS_SEPARATION {
            return Err(EngineError::DegenerateStep(gap));
        }
        let step_unit = TraversalStepSize::new(config.step_multiplier * gap / 6.0)?;

        Ok(CalibratedCompass {
            id: CompassId::generate(),
            direction,
            bias: hyperplane.b,
            weight_norm,
            step_unit,
            space: session.space,
            feature_scale,
            category: session.category,
            source_session: Some(session.id.clone()),
            training_stats: Some(TrainingStats { n_left, n_right, separable }),
        })
    }

    fn check_start(&self, compass: &CalibratedCompass, start: &LatentVector) -> Result<(), EngineError> {
        start.check_shape(SpaceTag::Z, self.info.latent_dim)?;
        compass.direction.check_shape(compass.space, self.info.dim_of(compass.space)?)?;
        Ok(())
    }

    /// Renders the given step indices from a start latent, in order.
    fn render_steps(
        &self,
        compass: &CalibratedCompass,
        start: &LatentVector,
        category: CategoryId,
        indices: &[i32],
    ) -> Result<Vec<TrajectoryStep>, EngineError> {
        let base = match compass.space {
            SpaceTag::Z => None,
            SpaceTag::Layer(layer) => Some(self.generator.activations(start, category, layer)?),
        };
        indices
            .par_iter()
            .map(|k| {
                let lambda = compass.lambda(*k);
                let (image, margin_value, clipped) = match &base {
                    None => {
                        let moved = latent::traverse(start, &compass.direction, lambda)?;
                        let rendered = latent::truncate_anchored(&moved, start, self.theta)?;
                        let clipped = rendered != moved;
                        let margin = compass.margin(moved.values())?;
                        let image = if *k == 0 {
                            self.generator.render(start, category)?
                        } else {
                            self.generator.render(&rendered, category)?
                        };
                        (image, margin, clipped)
                    }
                    Some(act) => {
                        let shift = lambda * compass.feature_scale;
                        let edited = if *k == 0 {
                            act.clone()
                        } else {
                            let data =
                                act.data().iter().zip(compass.direction.values()).map(|(a, d)| a + shift * d).collect();
                            ActivationTensor::new(act.layer(), act.shape(), data)?
                        };
                        let feature: Vec<f64> = edited.data().iter().map(|v| v / compass.feature_scale).collect();
                        let margin = compass.margin(&feature)?;
                        (self.generator.render_from_activations(&edited, category)?, margin, false)
                    }
                };
                Ok(TrajectoryStep {
                    step_index: *k,
                    image_id: ImageId::generate(),
                    image,
                    lambda,
                    margin_value,
                    clipped,
                })
            })
            .collect()
    }

    /// Center plus three steps each way along the compass. The category may
    /// differ from the one the compass was calibrated in.
    pub fn navigate(
        &self,
        compass: &CalibratedCompass,
        start: &LatentVector,
        category: CategoryId,
    ) -> Result<Trajectory, EngineError> {
        self.info.check_category(category)?;
        self.check_start(compass, start)?;
        let center = ImageSample {
            id: ImageId::generate(),
            z: start.clone(),
            category,
            pixels: self.generator.render(start, category)?,
        };
        let indices: Vec<i32> = (-INITIAL_STEPS..=INITIAL_STEPS).collect();
        let steps = self.render_steps(compass, start, category, &indices)?;
        Ok(Trajectory { id: TrajectoryId::generate(), compass: compass.id.clone(), category, center, steps })
    }

    /// Appends one step beyond the current forward or backward end.
    pub fn extend(
        &self,
        compass: &CalibratedCompass,
        trajectory: &mut Trajectory,
        end: End,
    ) -> Result<TrajectoryStep, EngineError> {
        if trajectory.compass != compass.id {
            return Err(EngineError::CompassMismatch {
                trajectory: trajectory.id.clone(),
                expected: trajectory.compass.clone(),
                actual: compass.id.clone(),
            });
        }
        let index = match end {
            End::Forward => trajectory.max_index() + 1,
            End::Backward => trajectory.min_index() - 1,
        };
        let step = self
            .render_steps(compass, &trajectory.center.z, trajectory.category, &[index])?
            .pop()
            .expect("one index requested");
        match end {
            End::Forward => trajectory.steps.push(step.clone()),
            End::Backward => trajectory.steps.insert(0, step.clone()),
        }
        Ok(step)
    }
}

/// A compass together with every trajectory navigated along it.
#[derive(Debug, Clone)]
pub struct CompassMap {
    pub compass: CalibratedCompass,
    pub trajectories: Vec<Trajectory>,
}

impl CompassMap {
    pub fn new(compass: CalibratedCompass) -> Self {
        Self { compass, trajectories: Vec::new() }
    }

    /// Navigates from `start` and keeps the trajectory for side-by-side
    /// comparison with the others.
    pub fn add_trajectory(
        &mut self,
        engine: &Engine,
        start: &LatentVector,
        category: CategoryId,
    ) -> Result<&Trajectory, EngineError> {
        let trajectory = engine.navigate(&self.compass, start, category)?;
        self.trajectories.push(trajectory);
        Ok(self.trajectories.last().expect("just pushed"))
    }

    pub fn extend(&mut self, engine: &Engine, id: &TrajectoryId, end: End) -> Result<TrajectoryStep, EngineError> {
        let trajectory = self
            .trajectories
            .iter_mut()
            .find(|t| &t.id == id)
            .ok_or_else(|| EngineError::InvalidArgument(format!("no trajectory {id} on this compass")))?;
        engine.extend(&self.compass, trajectory, end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::BuiltinGenerator;

    fn engine() -> Engine {
        Engine::new(Arc::new(BuiltinGenerator::new()), 2.0).unwrap()
    }

    /// Pool of 40 with the 7 largest and 7 smallest `z₁` sorted right/left.
    fn sorted_session(engine: &Engine, space: SpaceTag, seed: u64) -> Session {
        let mut session = engine.create_session(0, space).unwrap();
        engine.fill_pool(&mut session, 40, seed).unwrap();
        let mut order: Vec<(f64, ImageId)> = session.pool.iter().map(|s| (s.z.values()[0], s.id.clone())).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, id) in &order[..7] {
            session.assign(id, Side::Left).unwrap();
        }
        for (_, id) in &order[order.len() - 7..] {
            session.assign(id, Side::Right).unwrap();
        }
        session
    }

    fn axis_compass(step: f64) -> CalibratedCompass {
        CalibratedCompass {
            id: CompassId::generate(),
            direction: Direction::axis(8, 0, SpaceTag::Z).unwrap(),
            bias: 0.0,
            weight_norm: 1.0,
            step_unit: TraversalStepSize::new(step).unwrap(),
            space: SpaceTag::Z,
            feature_scale: 1.0,
            category: 0,
            source_session: None,
            training_stats: None,
        }
    }

    #[test]
    fn create_session_checks_category_and_layer() {
        let e = engine();
        assert!(e.create_session(0, SpaceTag::Z).unwrap().pool.is_empty());
        assert!(e.create_session(2, SpaceTag::Layer(1)).is_ok());
        assert_eq!(
            e.create_session(0, SpaceTag::Layer(9)).unwrap_err(),
            EngineError::Backend(BackendError::UnknownLayer(9))
        );
        assert_eq!(
            e.create_session(7, SpaceTag::Z).unwrap_err(),
            EngineError::Backend(BackendError::UnknownCategory(7))
        );
    }

    #[test]
    fn fill_pool_is_seeded_and_unique() {
        let e = engine();
        let mut a = e.create_session(0, SpaceTag::Z).unwrap();
        let samples = e.fill_pool(&mut a, 20, 5).unwrap();
        assert_eq!(a.pool.len(), 20);
        let ids: std::collections::HashSet<_> = samples.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 20);

        let mut b = e.create_session(0, SpaceTag::Z).unwrap();
        e.fill_pool(&mut b, 20, 5).unwrap();
        for (x, y) in a.pool.iter().zip(&b.pool) {
            assert_eq!(x.z, y.z);
        }
        assert!(matches!(e.fill_pool(&mut a, 0, 0), Err(EngineError::InvalidArgument(_))));
        assert_eq!(a.next_seed(), 25);
    }

    #[test]
    fn assignment_rules() {
        let e = engine();
        let mut s = e.create_session(0, SpaceTag::Z).unwrap();
        e.fill_pool(&mut s, 3, 0).unwrap();
        let id = s.pool[0].id.clone();
        s.assign(&id, Side::Right).unwrap();
        s.assign(&id, Side::Left).unwrap();
        assert_eq!(s.side_of(&id), Side::Left);
        assert_eq!(s.counts(), (1, 0));

        let other = s.pool[1].id.clone();
        s.assign(&other, Side::Unassigned).unwrap();
        assert_eq!(s.side_of(&other), Side::Unassigned);
        assert_eq!(s.assignments().len(), 1);

        let missing = ImageId::from("nope");
        assert_eq!(s.assign(&missing, Side::Left).unwrap_err(), EngineError::UnknownImage(missing));
    }

    #[test]
    fn policy_boundaries() {
        let p = BalancePolicy::default();
        assert!(matches!(p.check(7, 6), Err(EngineError::CalibrationUnderfilled { total: 13, .. })));
        assert!(matches!(p.check(4, 4), Err(EngineError::ClassTooSmall { .. })));
        assert!(matches!(p.check(5, 12), Err(EngineError::ClassImbalance { .. })));
        assert!(p.check(7, 7).is_ok());
        assert!(p.check(5, 10).is_ok());
        assert!(matches!(p.check(0, 20), Err(EngineError::ClassTooSmall { .. })));
    }

    #[test]
    fn calibrate_recovers_brightness_axis() {
        let e = engine();
        let session = sorted_session(&e, SpaceTag::Z, 100);
        let compass = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
        assert!(compass.direction.values()[0] > 0.8, "{:?}", compass.direction);
        let stats = compass.training_stats.unwrap();
        assert_eq!((stats.n_left, stats.n_right), (7, 7));
        assert!(stats.separable);
        assert_eq!(compass.feature_scale, 1.0);
        assert!(compass.step_unit.magnitude() > 0.0);
    }

    #[test]
    fn calibration_is_deterministic() {
        let e = engine();
        for space in [SpaceTag::Z, SpaceTag::Layer(1)] {
            let session = sorted_session(&e, space, 3);
            let a = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
            let b = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
            let bits = |c: &CalibratedCompass| {
                (
                    c.direction.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    c.bias.to_bits(),
                    c.step_unit.magnitude().to_bits(),
                    c.feature_scale.to_bits(),
                )
            };
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn separable_sorting_has_sign_correct_margins() {
        let e = engine();
        let session = sorted_session(&e, SpaceTag::Z, 11);
        let compass = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
        assert!(compass.training_stats.unwrap().separable);
        for s in &session.pool {
            let m = compass.margin(s.z.values()).unwrap();
            match session.side_of(&s.id) {
                Side::Left => assert!(m < 0.0),
                Side::Right => assert!(m > 0.0),
                Side::Unassigned => {}
            }
        }
    }

    #[test]
    fn detail_level_calibration_scales_features() {
        let e = engine();
        let session = sorted_session(&e, SpaceTag::Layer(1), 21);
        let compass = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
        assert_eq!(compass.space, SpaceTag::Layer(1));
        assert_eq!(compass.direction.dim(), 64);
        assert!(compass.feature_scale > 0.0);
        let mass: f64 = compass.direction.values()[..16].iter().map(|v| v * v).sum();
        assert!(mass > 0.5, "{mass}");
    }

    #[test]
    fn axis_trajectory_arithmetic() {
        let e = engine();
        let compass = axis_compass(1.0);
        let z = LatentVector::zeros(8, SpaceTag::Z).unwrap();
        let t = e.navigate(&compass, &z, 0).unwrap();
        let indices: Vec<i32> = t.steps.iter().map(|s| s.step_index).collect();
        assert_eq!(indices, vec![-3, -2, -1, 0, 1, 2, 3]);
        for s in &t.steps {
            assert_eq!(s.lambda, f64::from(s.step_index));
            assert_eq!(s.margin_value, f64::from(s.step_index));
            assert_eq!(s.clipped, s.step_index.abs() == 3);
            let mut expected = vec![0.0; 8];
            expected[0] = f64::from(s.step_index).clamp(-2.0, 2.0);
            let direct = e.generator().render(&LatentVector::new(expected, SpaceTag::Z).unwrap(), 0).unwrap();
            assert_eq!(s.image, direct);
        }
        assert_eq!(t.step(0).unwrap().image, t.center.pixels);
    }

    #[test]
    fn extend_both_ends() {
        let e = engine();
        let compass = axis_compass(0.25);
        let z = LatentVector::zeros(8, SpaceTag::Z).unwrap();
        let mut t = e.navigate(&compass, &z, 1).unwrap();
        let step = e.extend(&compass, &mut t, End::Forward).unwrap();
        assert_eq!(step.step_index, 4);
        assert_eq!(step.lambda, 4.0 * 0.25);
        assert_eq!((t.min_index(), t.max_index(), t.steps.len()), (-3, 4, 8));
        e.extend(&compass, &mut t, End::Backward).unwrap();
        e.extend(&compass, &mut t, End::Backward).unwrap();
        assert_eq!(t.min_index(), -5);
        assert!(t.steps.windows(2).all(|w| w[1].step_index == w[0].step_index + 1));

        let other = axis_compass(0.25);
        assert!(matches!(e.extend(&other, &mut t, End::Forward), Err(EngineError::CompassMismatch { .. })));
    }

    #[test]
    fn map_trajectories_are_independent() {
        let e = engine();
        let mut map = CompassMap::new(axis_compass(0.3));
        let a = LatentVector::zeros(8, SpaceTag::Z).unwrap();
        let b = LatentVector::new(vec![0.5; 8], SpaceTag::Z).unwrap();
        let first = map.add_trajectory(&e, &a, 0).unwrap().id.clone();
        let second = map.add_trajectory(&e, &b, 1).unwrap().id.clone();
        assert!(map.trajectories.iter().all(|t| t.compass == map.compass.id));
        let before = map.trajectories[0].clone();
        map.extend(&e, &second, End::Forward).unwrap();
        assert_eq!(map.trajectories[0], before);
        assert_eq!(map.trajectories[1].steps.len(), 8);
        assert_ne!(first, second);
    }

    #[test]
    fn detail_trajectory_step_zero_matches_render() {
        let e = engine();
        let session = sorted_session(&e, SpaceTag::Layer(1), 8);
        let compass = e.calibrate(&session, &CalibrationConfig::default()).unwrap();
        let start = e.generator().sample(999, 2).unwrap();
        let t = e.navigate(&compass, &start.z, 2).unwrap();
        assert_eq!(t.step(0).unwrap().image, start.pixels);
        assert!(t.steps.windows(2).all(|w| w[1].margin_value > w[0].margin_value));
    }

    #[test]
    fn navigate_rejects_wrong_start() {
        let e = engine();
        let compass = axis_compass(1.0);
        let short = LatentVector::zeros(3, SpaceTag::Z).unwrap();
        assert!(matches!(
            e.navigate(&compass, &short, 0),
            Err(EngineError::Latent(LatentError::DimensionMismatch { .. }))
        ));
        let z = LatentVector::zeros(8, SpaceTag::Z).unwrap();
        assert!(matches!(e.navigate(&compass, &z, 9), Err(EngineError::Backend(BackendError::UnknownCategory(9)))));
    }
}
