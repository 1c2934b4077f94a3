//! Python bindings: generators, sorting sessions, calibration, navigation,
//! the direction store and the recovery evaluation.

use std::sync::Arc;
use std::time::Duration;

use latcompass_core::engine::{self, CalibratedCompass, CalibrationConfig, End, Side};
use latcompass_core::eval::{self, EvalSpace};
use latcompass_core::generator::readout::Attribute;
use latcompass_core::generator::{self as backend, BuiltinGenerator, ExternalGenerator, ImageSample};
use latcompass_core::image::RgbImage;
use latcompass_core::latent::{LatentVector, SpaceTag};
use latcompass_core::store::{self, ModerationStatus};
use latcompass_core::svm::{self, Hyperplane, Label, LabeledSet, SolverConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use serde::Serialize;

create_exception!(
    latcompass,
    LatcompassError,
    PyException,
    "Raised by every failing operation; `code` names the failure."
);

fn raise(code: &str, message: String) -> PyErr {
    Python::attach(|py| {
        let err = LatcompassError::new_err(message);
        if let Err(e) = err.value(py).setattr("code", code) {
            return e;
        }
        err
    })
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

macro_rules! coded_errors {
    ($($ty:ty),*) => {$(
        impl<T> IntoPyResult<T> for Result<T, $ty> {
            fn py(self) -> PyResult<T> {
                self.map_err(|e| raise(e.code(), e.to_string()))
            }
        }
    )*};
}

coded_errors!(
    engine::EngineError,
    backend::BackendError,
    latcompass_core::latent::LatentError,
    svm::SvmError,
    store::StoreError
);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value into plain Python objects.
fn to_python<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn png<'py>(py: Python<'py>, image: &RgbImage) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = image.to_png().map_err(value_error)?;
    Ok(PyBytes::new(py, &bytes))
}

fn sample_dict<'py>(py: Python<'py>, sample: &ImageSample) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("image_id", sample.id.as_str())?;
    dict.set_item("z", sample.z.values().to_vec())?;
    dict.set_item("category", sample.category)?;
    dict.set_item("png", png(py, &sample.pixels)?)?;
    Ok(dict)
}

fn space_tag(space: &str) -> PyResult<SpaceTag> {
    space.parse::<SpaceTag>().py()
}

fn side(name: &str) -> PyResult<Side> {
    match name {
        "left" => Ok(Side::Left),
        "right" => Ok(Side::Right),
        "unassigned" => Ok(Side::Unassigned),
        other => Err(PyValueError::new_err(format!("side must be left, right or unassigned, got {other:?}"))),
    }
}

/// An image generator: the deterministic builtin one or a remote backend.
#[pyclass(module = "latcompass", frozen, from_py_object)]
#[derive(Clone)]
struct Generator {
    inner: Arc<dyn backend::Generator>,
}

#[pymethods]
impl Generator {
    #[staticmethod]
    fn builtin() -> Self {
        Self { inner: Arc::new(BuiltinGenerator::new()) }
    }

    /// Connects to a backend speaking the generator wire protocol.
    #[staticmethod]
    #[pyo3(signature = (url, timeout=10.0))]
    fn external(py: Python<'_>, url: &str, timeout: f64) -> PyResult<Self> {
        let timeout = Duration::try_from_secs_f64(timeout).map_err(value_error)?;
        let generator = py.detach(|| ExternalGenerator::connect(url, timeout)).py()?;
        Ok(Self { inner: Arc::new(generator) })
    }

    fn info<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let info = py.detach(|| self.inner.info()).py()?;
        to_python(py, &info)
    }

    fn fingerprint(&self, py: Python<'_>) -> PyResult<String> {
        Ok(py.detach(|| self.inner.info()).py()?.fingerprint())
    }

    /// `{"image_id", "z", "category", "png"}` for a seeded draw.
    fn sample<'py>(&self, py: Python<'py>, seed: u64, category: u32) -> PyResult<Bound<'py, PyDict>> {
        let sample = py.detach(|| self.inner.sample(seed, category)).py()?;
        sample_dict(py, &sample)
    }

    /// PNG bytes of `G(z)`.
    fn render<'py>(&self, py: Python<'py>, z: Vec<f64>, category: u32) -> PyResult<Bound<'py, PyBytes>> {
        let z = LatentVector::new(z, SpaceTag::Z).py()?;
        let image = py.detach(|| self.inner.render(&z, category)).py()?;
        png(py, &image)
    }

    /// `(shape, values)` of one layer's activations, channel-major.
    fn activations(&self, py: Python<'_>, z: Vec<f64>, category: u32, layer: u32) -> PyResult<([usize; 3], Vec<f64>)> {
        let z = LatentVector::new(z, SpaceTag::Z).py()?;
        let act = py.detach(|| self.inner.activations(&z, category, layer)).py()?;
        Ok((act.shape(), act.into_data()))
    }

    /// PNG bytes rendered from (possibly edited) activations.
    fn render_from_activations<'py>(
        &self,
        py: Python<'py>,
        layer: u32,
        shape: [usize; 3],
        values: Vec<f64>,
        category: u32,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let act = backend::ActivationTensor::new(layer, shape, values).py()?;
        let image = py.detach(|| self.inner.render_from_activations(&act, category)).py()?;
        png(py, &image)
    }
}

/// A sorting board: a pool of generated images split into left and right.
#[pyclass(module = "latcompass")]
struct Session {
    inner: engine::Session,
}

#[pymethods]
impl Session {
    #[getter]
    fn id(&self) -> &str {
        self.inner.id.as_str()
    }

    #[getter]
    fn category(&self) -> u32 {
        self.inner.category
    }

    #[getter]
    fn space(&self) -> String {
        self.inner.space.to_string()
    }

    #[getter]
    fn next_seed(&self) -> u64 {
        self.inner.next_seed()
    }

    /// Pool images as dicts, in pool order.
    #[getter]
    fn pool<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.pool.iter().map(|s| sample_dict(py, s)).collect()
    }

    /// Puts an image on `"left"`, `"right"` or back to `"unassigned"`.
    fn assign(&mut self, image_id: &str, side_name: &str) -> PyResult<()> {
        self.inner.assign(&image_id.into(), side(side_name)?).py()
    }

    fn side_of(&self, image_id: &str) -> &'static str {
        match self.inner.side_of(&image_id.into()) {
            Side::Left => "left",
            Side::Right => "right",
            Side::Unassigned => "unassigned",
        }
    }

    /// `(n_left, n_right)`.
    fn counts(&self) -> (usize, usize) {
        self.inner.counts()
    }

    fn __len__(&self) -> usize {
        self.inner.pool.len()
    }

    fn __repr__(&self) -> String {
        let (left, right) = self.inner.counts();
        format!(
            "Session(id={:?}, space={:?}, pool={}, left={left}, right={right})",
            self.id(),
            self.space(),
            self.inner.pool.len()
        )
    }
}

/// A calibrated direction with its step size and hyperplane.
#[pyclass(module = "latcompass", frozen)]
struct Compass {
    inner: CalibratedCompass,
}

#[pymethods]
impl Compass {
    #[getter]
    fn id(&self) -> &str {
        self.inner.id.as_str()
    }

    #[getter]
    fn direction(&self) -> Vec<f64> {
        self.inner.direction.values().to_vec()
    }

    #[getter]
    fn space(&self) -> String {
        self.inner.space.to_string()
    }

    #[getter]
    fn category(&self) -> u32 {
        self.inner.category
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn weight_norm(&self) -> f64 {
        self.inner.weight_norm
    }

    #[getter]
    fn step_unit(&self) -> f64 {
        self.inner.step_unit.magnitude()
    }

    #[getter]
    fn feature_scale(&self) -> f64 {
        self.inner.feature_scale
    }

    /// `λ` of a step index.
    fn step_lambda(&self, step_index: i32) -> f64 {
        self.inner.lambda(step_index)
    }

    /// Decision value of a feature vector.
    fn margin(&self, feature: Vec<f64>) -> PyResult<f64> {
        self.inner.margin(&feature).py()
    }

    /// Cosine with another compass in the same space.
    fn cosine(&self, other: &Compass) -> PyResult<f64> {
        self.inner.direction.cosine(&other.inner.direction).py()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CalibratedCompass = serde_json::from_str(text).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("Compass(id={:?}, space={:?}, step_unit={})", self.id(), self.space(), self.step_unit())
    }
}

/// Renders along a compass from one start image, ordered by step index.
#[pyclass(module = "latcompass")]
struct Trajectory {
    inner: engine::Trajectory,
}

fn step_dict<'py>(py: Python<'py>, step: &engine::TrajectoryStep) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("step_index", step.step_index)?;
    dict.set_item("image_id", step.image_id.as_str())?;
    dict.set_item("lambda", step.lambda)?;
    dict.set_item("margin_value", step.margin_value)?;
    dict.set_item("clipped", step.clipped)?;
    dict.set_item("png", png(py, &step.image)?)?;
    Ok(dict)
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn id(&self) -> &str {
        self.inner.id.as_str()
    }

    #[getter]
    fn compass_id(&self) -> &str {
        self.inner.compass.as_str()
    }

    #[getter]
    fn category(&self) -> u32 {
        self.inner.category
    }

    #[getter]
    fn center<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        sample_dict(py, &self.inner.center)
    }

    #[getter]
    fn steps<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.steps.iter().map(|s| step_dict(py, s)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }
}

/// Calibrates and navigates against one generator.
#[pyclass(module = "latcompass", frozen)]
struct Engine {
    inner: engine::Engine,
}

#[pymethods]
impl Engine {
    /// `generator` defaults to the builtin one; `theta` bounds scene-level
    /// latents at render time.
    #[new]
    #[pyo3(signature = (generator=None, theta=2.0))]
    fn new(py: Python<'_>, generator: Option<Generator>, theta: f64) -> PyResult<Self> {
        let generator = generator.unwrap_or_else(Generator::builtin).inner;
        let inner = py.detach(|| engine::Engine::new(generator, theta)).py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    #[getter]
    fn generator(&self) -> Generator {
        Generator { inner: self.inner.generator().clone() }
    }

    fn info<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, self.inner.info())
    }

    fn fingerprint(&self) -> String {
        self.inner.info().fingerprint()
    }

    /// `space` is `"z"` for scene level or `"layer:<i>"` for detail level.
    #[pyo3(signature = (category=0, space="z"))]
    fn create_session(&self, category: u32, space: &str) -> PyResult<Session> {
        let inner = self.inner.create_session(category, space_tag(space)?).py()?;
        Ok(Session { inner })
    }

    /// Adds `count` images drawn from consecutive seeds; returns their ids.
    fn fill_pool(&self, py: Python<'_>, session: &mut Session, count: usize, seed: u64) -> PyResult<Vec<String>> {
        let added = py.detach(|| self.inner.fill_pool(&mut session.inner, count, seed)).py()?;
        Ok(added.into_iter().map(|s| s.id.to_string()).collect())
    }

    #[pyo3(signature = (session, c=1.0, step_multiplier=1.0))]
    fn calibrate(&self, py: Python<'_>, session: &Session, c: f64, step_multiplier: f64) -> PyResult<Compass> {
        let config = CalibrationConfig { solver: SolverConfig::with_c(c), step_multiplier, ..Default::default() };
        let inner = py.detach(|| self.inner.calibrate(&session.inner, &config)).py()?;
        Ok(Compass { inner })
    }

    /// Center plus three steps each way from the latent `z`.
    fn navigate(&self, py: Python<'_>, compass: &Compass, z: Vec<f64>, category: u32) -> PyResult<Trajectory> {
        let z = LatentVector::new(z, SpaceTag::Z).py()?;
        let inner = py.detach(|| self.inner.navigate(&compass.inner, &z, category)).py()?;
        Ok(Trajectory { inner })
    }

    /// Appends one step at the `"forward"` or `"backward"` end.
    fn extend<'py>(
        &self,
        py: Python<'py>,
        compass: &Compass,
        trajectory: &mut Trajectory,
        end: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let end = match end {
            "forward" => End::Forward,
            "backward" => End::Backward,
            other => return Err(PyValueError::new_err(format!("end must be forward or backward, got {other:?}"))),
        };
        let step = py.detach(|| self.inner.extend(&compass.inner, &mut trajectory.inner, end)).py()?;
        step_dict(py, &step)
    }
}

/// Directory of labeled directions awaiting or past moderation.
#[pyclass(module = "latcompass", frozen)]
struct DirectionStore {
    inner: store::DirectionStore,
}

#[pymethods]
impl DirectionStore {
    #[new]
    fn new(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: store::DirectionStore::open(path).py()? })
    }

    /// Saves a compass as a pending record and returns the record.
    fn save<'py>(
        &self,
        py: Python<'py>,
        compass: &Compass,
        label: &str,
        fingerprint: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let record = self.inner.save(&compass.inner, label, compass.inner.category, fingerprint).py()?;
        to_python(py, &record)
    }

    fn get<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.get(&id.into()).py()?)
    }

    /// Records newest first, optionally filtered by status and space.
    #[pyo3(signature = (status=None, space=None))]
    fn list<'py>(&self, py: Python<'py>, status: Option<&str>, space: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        self.inner.refresh_if_changed().py()?;
        let status = status.map(|s| s.parse::<ModerationStatus>().map_err(value_error)).transpose()?;
        let space = space.map(space_tag).transpose()?;
        to_python(py, &self.inner.list(status, space))
    }

    fn set_moderation_status<'py>(&self, py: Python<'py>, id: &str, status: &str) -> PyResult<Bound<'py, PyAny>> {
        let status = status.parse::<ModerationStatus>().map_err(value_error)?;
        to_python(py, &self.inner.set_moderation_status(&id.into(), status).py()?)
    }

    /// `(compass, record, fingerprint_mismatch)`.
    fn load<'py>(&self, py: Python<'py>, id: &str, fingerprint: &str) -> PyResult<(Compass, Bound<'py, PyAny>, bool)> {
        let loaded = self.inner.load(&id.into(), fingerprint).py()?;
        Ok((Compass { inner: loaded.compass }, to_python(py, &loaded.record)?, loaded.fingerprint_mismatch))
    }
}

fn labeled_set(points: Vec<Vec<f64>>, labels: Vec<i32>) -> PyResult<LabeledSet> {
    if points.len() != labels.len() {
        return Err(PyValueError::new_err("points and labels differ in length"));
    }
    let dimension = points.first().map_or(0, Vec::len);
    let pairs = points
        .into_iter()
        .zip(labels)
        .map(|(x, y)| match y {
            1 => Ok((x, Label::Positive)),
            -1 => Ok((x, Label::Negative)),
            other => Err(PyValueError::new_err(format!("labels must be +1 or -1, got {other}"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    LabeledSet::new(dimension, pairs).py()
}

fn solve(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    labels: Vec<i32>,
    c: f64,
    tolerance: f64,
    solver: fn(&LabeledSet, &SolverConfig) -> Result<Hyperplane, svm::SvmError>,
) -> PyResult<(Vec<f64>, f64)> {
    let set = labeled_set(points, labels)?;
    let config = SolverConfig { c, tolerance, ..Default::default() };
    let h = py.detach(|| solver(&set, &config)).py()?;
    Ok((h.w, h.b))
}

/// Soft-margin linear SVM; returns `(w, b)`.
#[pyfunction]
#[pyo3(signature = (points, labels, c=1.0, tolerance=1e-6))]
fn fit_svm(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    labels: Vec<i32>,
    c: f64,
    tolerance: f64,
) -> PyResult<(Vec<f64>, f64)> {
    solve(py, points, labels, c, tolerance, svm::fit)
}

/// Reference solver for the same problem, for cross-checking `fit_svm`.
#[pyfunction]
#[pyo3(signature = (points, labels, c=1.0, tolerance=1e-6))]
fn oracle_fit(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    labels: Vec<i32>,
    c: f64,
    tolerance: f64,
) -> PyResult<(Vec<f64>, f64)> {
    solve(py, points, labels, c, tolerance, svm::oracle_fit)
}

/// Recovery of a planted axis (1..=4) in `"scene"` or `"detail"` space.
#[pyfunction]
#[pyo3(signature = (engine, attribute, seeds, space="scene", n_train=14))]
fn recovery_experiment<'py>(
    py: Python<'py>,
    engine: &Engine,
    attribute: usize,
    seeds: Vec<u64>,
    space: &str,
    n_train: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let attribute = Attribute::from_axis(attribute)
        .ok_or_else(|| PyValueError::new_err(format!("attribute must be 1..=4, got {attribute}")))?;
    let space: EvalSpace = space.parse().map_err(PyValueError::new_err)?;
    let config = CalibrationConfig::default();
    let report =
        py.detach(|| eval::recovery_experiment(&engine.inner, attribute, n_train, &seeds, space, &config)).py()?;
    to_python(py, &report)
}

#[pymodule]
fn latcompass(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LatcompassError", m.py().get_type::<LatcompassError>())?;
    m.add_class::<Generator>()?;
    m.add_class::<Engine>()?;
    m.add_class::<Session>()?;
    m.add_class::<Compass>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<DirectionStore>()?;
    m.add_function(wrap_pyfunction!(fit_svm, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_fit, m)?)?;
    m.add_function(wrap_pyfunction!(recovery_experiment, m)?)?;
    Ok(())
}
