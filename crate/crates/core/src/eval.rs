//! Recovery of the builtin generator's planted axes by the full
//! sort/calibrate/navigate loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{CalibratedCompass, CalibrationConfig, Engine, EngineError, Session, Side};
use crate::generator::readout::{is_monotone, Attribute};
use crate::generator::{CategoryId, ImageSample};
use crate::latent::SpaceTag;

/// Pool size as a multiple of the number of images sorted.
pub const POOL_FACTOR: usize = 3;
/// Fresh starts navigated per seed to score monotonicity.
pub const STARTS_PER_SEED: usize = 5;
/// Category recovery experiments calibrate in.
pub const EVAL_CATEGORY: CategoryId = 0;
/// Seed stride between experiments, so pools and starts never overlap.
const SEED_STRIDE: u64 = 1 << 20;
const START_OFFSET: u64 = 1 << 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSpace {
    Scene,
    Detail,
}

impl std::str::FromStr for EvalSpace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scene" => Ok(Self::Scene),
            "detail" => Ok(Self::Detail),
            other => Err(format!("unknown space {other:?} (expected scene or detail)")),
        }
    }
}

/// Result of one recovery experiment; serializes to the metrics-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Planted axis, 1-based.
    pub attribute: usize,
    pub space: EvalSpace,
    pub n_train: usize,
    pub seeds: Vec<u64>,
    /// Scene: `|cos(d, e_attr)|`. Detail: the fraction of `‖d‖²` carried by
    /// the planted channel's entries.
    pub cosines: Vec<f64>,
    pub median_cosine: f64,
    /// Fraction of navigated trajectories whose attribute readout rises
    /// monotonically.
    pub monotonic_fraction: f64,
    /// SHA-256 over the generator fingerprint and every setting that shapes
    /// the result.
    pub config_digest: String,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn space_tag(engine: &Engine, space: EvalSpace) -> Result<SpaceTag, EngineError> {
    match space {
        EvalSpace::Scene => Ok(SpaceTag::Z),
        EvalSpace::Detail => engine
            .info()
            .layers
            .first()
            .map(|l| SpaceTag::Layer(l.index))
            .ok_or_else(|| EngineError::InvalidArgument("generator exposes no layer".into())),
    }
}

/// How strongly a recovered direction points along the planted attribute.
pub fn recovery_score(compass: &CalibratedCompass, attribute: Attribute) -> f64 {
    let d = compass.direction.values();
    match compass.space {
        SpaceTag::Z => d[attribute.axis() - 1].abs(),
        SpaceTag::Layer(_) => {
            let plane = d.len() / 4;
            let channel = attribute.channel();
            d[channel * plane..(channel + 1) * plane].iter().map(|v| v * v).sum()
        }
    }
}

/// Whether the attribute readout rises along a trajectory from `start`.
fn trajectory_monotone(
    engine: &Engine,
    compass: &CalibratedCompass,
    attribute: Attribute,
    start: &ImageSample,
    category: CategoryId,
) -> Result<bool, EngineError> {
    let trajectory = engine.navigate(compass, &start.z, category)?;
    let readouts: Vec<f64> = trajectory.steps.iter().map(|s| attribute.measure(&s.image)).collect();
    let clipped: Vec<bool> = trajectory.steps.iter().map(|s| s.clipped).collect();
    Ok(is_monotone(&readouts, &clipped, attribute.slack()))
}

fn config_digest(engine: &Engine, config: &CalibrationConfig, space: SpaceTag) -> String {
    let settings = serde_json::json!({
        "generator": engine.info().fingerprint(),
        "calibration": config,
        "theta": engine.theta(),
        "space": space,
        "category": EVAL_CATEGORY,
        "pool_factor": POOL_FACTOR,
        "starts_per_seed": STARTS_PER_SEED,
    });
    Sha256::digest(settings.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// A session in the evaluation category whose pool is sorted by the sign
/// of the planted quantity: `z_attr` in scene space, the planted channel's
/// mean activation in detail space.
fn planted_session(
    engine: &Engine,
    attribute: Attribute,
    n_train: usize,
    base_seed: u64,
    space: SpaceTag,
) -> Result<Session, EngineError> {
    let mut session = engine.create_session(EVAL_CATEGORY, space)?;
    engine.fill_pool(&mut session, POOL_FACTOR * n_train, base_seed)?;

    let keys: Vec<f64> = match space {
        SpaceTag::Z => session.pool.iter().map(|s| s.z.values()[attribute.axis() - 1]).collect(),
        SpaceTag::Layer(layer) => session
            .pool
            .iter()
            .map(|s| Ok(engine.generator().activations(&s.z, EVAL_CATEGORY, layer)?.channel_mean(attribute.channel())))
            .collect::<Result<_, EngineError>>()?,
    };
    // the clearest examples of each side get sorted, as a user would pick them
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|a, b| keys[*a].total_cmp(&keys[*b]).then(a.cmp(b)));
    let lefts = order.iter().take(n_train / 2).filter(|i| keys[**i] < 0.0);
    let rights = order.iter().rev().take(n_train.div_ceil(2)).filter(|i| keys[**i] > 0.0);
    let picks: Vec<(usize, Side)> = lefts.map(|i| (*i, Side::Left)).chain(rights.map(|i| (*i, Side::Right))).collect();
    for (i, side) in picks {
        let id = session.pool[i].id.clone();
        session.assign(&id, side)?;
    }
    Ok(session)
}

/// One seed of a recovery experiment: `(score, monotone trajectories)`.
fn recover_once(
    engine: &Engine,
    attribute: Attribute,
    n_train: usize,
    seed: u64,
    space: SpaceTag,
    config: &CalibrationConfig,
) -> Result<(f64, usize), EngineError> {
    let base = seed.wrapping_mul(SEED_STRIDE);
    let session = planted_session(engine, attribute, n_train, base, space)?;
    let compass = engine.calibrate(&session, config)?;
    let score = recovery_score(&compass, attribute);
    let mut monotone = 0;
    for j in 0..STARTS_PER_SEED as u64 {
        let start = engine.generator().sample(base + START_OFFSET + j, EVAL_CATEGORY)?;
        monotone += usize::from(trajectory_monotone(engine, &compass, attribute, &start, EVAL_CATEGORY)?);
    }
    Ok((score, monotone))
}

/// Sorts pools by the sign of a planted quantity, calibrates, and scores
/// how well each compass recovers the planted direction.
pub fn recovery_experiment(
    engine: &Engine,
    attribute: Attribute,
    n_train: usize,
    seeds: &[u64],
    space: EvalSpace,
    config: &CalibrationConfig,
) -> Result<RecoveryReport, EngineError> {
    if seeds.is_empty() {
        return Err(EngineError::InvalidArgument("at least one seed is required".into()));
    }
    let tag = space_tag(engine, space)?;
    let runs = seeds
        .par_iter()
        .map(|seed| recover_once(engine, attribute, n_train, *seed, tag, config))
        .collect::<Result<Vec<_>, _>>()?;
    let cosines: Vec<f64> = runs.iter().map(|(c, _)| *c).collect();
    let monotone: usize = runs.iter().map(|(_, m)| m).sum();
    Ok(RecoveryReport {
        attribute: attribute.axis(),
        space,
        n_train,
        seeds: seeds.to_vec(),
        median_cosine: median(&cosines),
        cosines,
        monotonic_fraction: monotone as f64 / (seeds.len() * STARTS_PER_SEED) as f64,
        config_digest: config_digest(engine, config, tag),
    })
}

/// Navigates the compass from every start seed in every category and
/// returns the fraction of trajectories with a monotone readout.
pub fn cross_category_check(
    engine: &Engine,
    compass: &CalibratedCompass,
    attribute: Attribute,
    categories: &[CategoryId],
    start_seeds: &[u64],
) -> Result<f64, EngineError> {
    if categories.is_empty() || start_seeds.is_empty() {
        return Err(EngineError::InvalidArgument("categories and start seeds must be non-empty".into()));
    }
    let jobs: Vec<(CategoryId, u64)> =
        categories.iter().flat_map(|c| start_seeds.iter().map(move |s| (*c, *s))).collect();
    let results = jobs
        .par_iter()
        .map(|(category, seed)| {
            let start = engine.generator().sample(*seed, *category)?;
            trajectory_monotone(engine, compass, attribute, &start, *category)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(results.iter().filter(|m| **m).count() as f64 / results.len() as f64)
}

/// Calibrates a single compass on `attribute` in the evaluation category,
/// exactly as one seed of [`recovery_experiment`] does.
pub fn calibrate_planted(
    engine: &Engine,
    attribute: Attribute,
    n_train: usize,
    seed: u64,
    space: EvalSpace,
    config: &CalibrationConfig,
) -> Result<CalibratedCompass, EngineError> {
    let tag = space_tag(engine, space)?;
    let session = planted_session(engine, attribute, n_train, seed.wrapping_mul(SEED_STRIDE), tag)?;
    engine.calibrate(&session, config)
}
