//! Image generators: the `G` that turns a latent vector into a picture.
//!
//! [`Generator`] is the uniform interface. [`BuiltinGenerator`] is a small
//! two-stage procedural generator with known attribute axes, and
//! [`ExternalGenerator`] talks to a neural generator over HTTP.

mod builtin;
mod external;
pub mod readout;
pub mod wire;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::ImageId;
use crate::image::RgbImage;
use crate::latent::{LatentError, LatentVector, SpaceTag};

pub use builtin::{BuiltinGenerator, BUILTIN_IMAGE_SIZE, BUILTIN_LATENT_DIM, BUILTIN_LAYER};
pub use external::{ExternalGenerator, DEFAULT_TIMEOUT};

pub type CategoryId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("unknown layer {0}")]
    UnknownLayer(u32),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector lives in space {actual}, expected {expected}")]
    SpaceMismatch { expected: SpaceTag, actual: SpaceTag },
    #[error("activation shape {actual:?} does not match layer shape {expected:?}")]
    ShapeMismatch { expected: [usize; 3], actual: [usize; 3] },
    #[error("activation data contains non-finite values")]
    NonFinite,
}

impl BackendError {
    /// Machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Unavailable(_) => "BackendUnavailable",
            BackendError::UnknownCategory(_) => "UnknownCategory",
            BackendError::UnknownLayer(_) => "UnknownLayer",
            BackendError::DimensionMismatch { .. } => "DimensionMismatch",
            BackendError::SpaceMismatch { .. } => "SpaceMismatch",
            BackendError::ShapeMismatch { .. } => "ShapeMismatch",
            BackendError::NonFinite => "NonFinite",
        }
    }
}

impl From<LatentError> for BackendError {
    fn from(e: LatentError) -> Self {
        match e {
            LatentError::DimensionMismatch { expected, actual } => BackendError::DimensionMismatch { expected, actual },
            LatentError::SpaceMismatch { left, right } => BackendError::SpaceMismatch { expected: right, actual: left },
            LatentError::NonFinite(_) => BackendError::NonFinite,
            other => BackendError::Unavailable(format!("malformed vector: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub index: u32,
    /// channels × height × width
    pub shape: [usize; 3],
}

impl LayerInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Static description of a generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub latent_dim: usize,
    pub categories: Vec<Category>,
    pub layers: Vec<LayerInfo>,
    /// width × height in pixels
    pub image_size: [u32; 2],
}

impl GeneratorInfo {
    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim == 0 {
            return Err("latent_dim must be at least 1".into());
        }
        if self.categories.is_empty() {
            return Err("at least one category is required".into());
        }
        if self.layers.iter().any(|l| l.shape.contains(&0)) {
            return Err("layer shapes must be positive".into());
        }
        if self.image_size.contains(&0) {
            return Err("image size must be positive".into());
        }
        Ok(())
    }

    pub fn has_category(&self, category: CategoryId) -> bool {
        self.categories.iter().any(|c| c.id == category)
    }

    pub fn check_category(&self, category: CategoryId) -> Result<(), BackendError> {
        if self.has_category(category) {
            Ok(())
        } else {
            Err(BackendError::UnknownCategory(category))
        }
    }

    pub fn layer(&self, index: u32) -> Result<&LayerInfo, BackendError> {
        self.layers.iter().find(|l| l.index == index).ok_or(BackendError::UnknownLayer(index))
    }

    /// Dimensionality of vectors in the given space.
    pub fn dim_of(&self, space: SpaceTag) -> Result<usize, BackendError> {
        match space {
            SpaceTag::Z => Ok(self.latent_dim),
            SpaceTag::Layer(index) => self.layer(index).map(LayerInfo::len),
        }
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the generator a
    /// direction was learned against.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("info serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A generated pool image with the latent it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: ImageId,
    pub z: LatentVector,
    pub category: CategoryId,
    pub pixels: RgbImage,
}

/// Intermediate feature block of one layer, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    layer: u32,
    shape: [usize; 3],
    data: Vec<f64>,
}

impl ActivationTensor {
    pub fn new(layer: u32, shape: [usize; 3], data: Vec<f64>) -> Result<Self, BackendError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(BackendError::DimensionMismatch { expected, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::NonFinite);
        }
        Ok(Self { layer, shape, data })
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entries of one channel.
    pub fn channel(&self, channel: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn channel_mean(&self, channel: usize) -> f64 {
        let values = self.channel(channel);
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// The flattened tensor as a vector in `layer:<index>` space.
    pub fn to_latent(&self) -> LatentVector {
        LatentVector::new(self.data.clone(), SpaceTag::Layer(self.layer)).expect("finite by construction")
    }
}

/// The `G` of `G(z + λd)`, plus access to one or more intermediate layers.
pub trait Generator: Send + Sync {
    fn info(&self) -> Result<GeneratorInfo, BackendError>;

    /// Draws `z` from a seeded standard normal and renders it.
    fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError>;

    fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError>;

    fn activations(&self, z: &LatentVector, category: CategoryId, layer: u32)
        -> Result<ActivationTensor, BackendError>;

    /// Continues the forward pass from (possibly edited) activations.
    fn render_from_activations(&self, act: &ActivationTensor, category: CategoryId) -> Result<RgbImage, BackendError>;
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn info(&self) -> Result<GeneratorInfo, BackendError> {
        (**self).info()
    }
    fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError> {
        (**self).sample(seed, category)
    }
    fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError> {
        (**self).render(z, category)
    }
    fn activations(
        &self,
        z: &LatentVector,
        category: CategoryId,
        layer: u32,
    ) -> Result<ActivationTensor, BackendError> {
        (**self).activations(z, category, layer)
    }
    fn render_from_activations(&self, act: &ActivationTensor, category: CategoryId) -> Result<RgbImage, BackendError> {
        (**self).render_from_activations(act, category)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { available: Mutex::new(permits.max(1)), released: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.released.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

/// Caps the number of in-flight calls into the wrapped generator.
pub struct BoundedGenerator<G> {
    inner: G,
    permits: Semaphore,
}

impl<G: Generator> BoundedGenerator<G> {
    pub fn new(inner: G, max_inflight: usize) -> Self {
        Self { inner, permits: Semaphore::new(max_inflight) }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: Generator> Generator for BoundedGenerator<G> {
    fn info(&self) -> Result<GeneratorInfo, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.info()
    }
    fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.sample(seed, category)
    }
    fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.render(z, category)
    }
    fn activations(
        &self,
        z: &LatentVector,
        category: CategoryId,
        layer: u32,
    ) -> Result<ActivationTensor, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.activations(z, category, layer)
    }
    fn render_from_activations(&self, act: &ActivationTensor, category: CategoryId) -> Result<RgbImage, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.render_from_activations(act, category)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Probe {
        inner: BuiltinGenerator,
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Generator for Probe {
        fn info(&self) -> Result<GeneratorInfo, BackendError> {
            self.inner.info()
        }
        fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError> {
            self.inner.sample(seed, category)
        }
        fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            let out = self.inner.render(z, category);
            self.current.fetch_sub(1, Ordering::SeqCst);
            out
        }
        fn activations(
            &self,
            z: &LatentVector,
            category: CategoryId,
            layer: u32,
        ) -> Result<ActivationTensor, BackendError> {
            self.inner.activations(z, category, layer)
        }
        fn render_from_activations(
            &self,
            act: &ActivationTensor,
            category: CategoryId,
        ) -> Result<RgbImage, BackendError> {
            self.inner.render_from_activations(act, category)
        }
    }

    #[test]
    fn bounded_generator_caps_concurrency() {
        let probe = Probe { inner: BuiltinGenerator::new(), current: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
        let bounded = Arc::new(BoundedGenerator::new(probe, 2));
        let z = LatentVector::zeros(BUILTIN_LATENT_DIM, SpaceTag::Z).unwrap();
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let bounded = bounded.clone();
                let z = z.clone();
                scope.spawn(move || bounded.render(&z, 0).unwrap());
            }
        });
        let peak = bounded.inner().peak.load(Ordering::SeqCst);
        assert!((1..=2).contains(&peak), "peak {peak}");
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let info = BuiltinGenerator::new().info().unwrap();
        assert_eq!(info.fingerprint(), info.fingerprint());
        assert_eq!(info.fingerprint().len(), 64);
        let mut other = info.clone();
        other.latent_dim = 9;
        assert_ne!(info.fingerprint(), other.fingerprint());
    }

    #[test]
    fn dim_of_spaces() {
        let info = BuiltinGenerator::new().info().unwrap();
        assert_eq!(info.dim_of(SpaceTag::Z).unwrap(), 8);
        assert_eq!(info.dim_of(SpaceTag::Layer(1)).unwrap(), 64);
        assert_eq!(info.dim_of(SpaceTag::Layer(5)), Err(BackendError::UnknownLayer(5)));
    }
}
