//! Shared service state: the engine, the direction store and in-memory
//! registries of sessions, compasses, trajectories and rendered images.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::Context;
use latcompass_core::engine::{CalibrationConfig, CompassMap, Engine, Session};
use latcompass_core::generator::{BoundedGenerator, BuiltinGenerator, CategoryId, ExternalGenerator, Generator};
use latcompass_core::ids::{CompassId, ImageId, SessionId, TrajectoryId};
use latcompass_core::image::RgbImage;
use latcompass_core::latent::LatentVector;
use latcompass_core::store::DirectionStore;

use crate::config::{BackendChoice, ServiceConfig};

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Entry<V> {
    value: Arc<tokio::sync::Mutex<V>>,
    last_used: Instant,
}

/// Objects addressed by id, each behind its own async mutex so operations on
/// one object are serialized while different objects proceed in parallel.
pub struct Registry<K, V> {
    entries: Mutex<HashMap<K, Entry<V>>>,
}

impl<K: Eq + Hash + Clone, V> Default for Registry<K, V> {
    fn default() -> Self {
        Self { entries: Mutex::new(HashMap::new()) }
    }
}

impl<K: Eq + Hash + Clone, V> Registry<K, V> {
    pub fn insert(&self, key: K, value: V) -> Arc<tokio::sync::Mutex<V>> {
        let value = Arc::new(tokio::sync::Mutex::new(value));
        lock(&self.entries).insert(key, Entry { value: value.clone(), last_used: Instant::now() });
        value
    }

    /// Looks an object up and marks it as used.
    pub fn get(&self, key: &K) -> Option<Arc<tokio::sync::Mutex<V>>> {
        let mut entries = lock(&self.entries);
        let entry = entries.get_mut(key)?;
        entry.last_used = Instant::now();
        Some(entry.value.clone())
    }

    pub fn contains(&self, key: &K) -> bool {
        lock(&self.entries).contains_key(key)
    }

    pub fn len(&self) -> usize {
        lock(&self.entries).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops objects idle for longer than `ttl`; returns how many went.
    pub fn expire(&self, ttl: Duration) -> usize {
        let mut entries = lock(&self.entries);
        let before = entries.len();
        entries.retain(|_, e| e.last_used.elapsed() <= ttl);
        before - entries.len()
    }
}

/// What keeps an image alive: it is dropped together with its owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Owner {
    Session(SessionId),
    Compass(CompassId),
}

#[derive(Clone)]
pub struct StoredImage {
    pub png: Arc<[u8]>,
    /// Scene-level latent the image was rendered from, when it has one that
    /// can seed a trajectory (pool images and trajectory centers).
    pub z: Option<LatentVector>,
    pub category: CategoryId,
    pub owner: Owner,
}

pub struct AppState {
    pub engine: Engine,
    pub store: DirectionStore,
    pub calibration: CalibrationConfig,
    pub fingerprint: String,
    pub ttl: Duration,
    pub sessions: Registry<SessionId, Session>,
    pub compasses: Registry<CompassId, CompassMap>,
    trajectories: Mutex<HashMap<TrajectoryId, CompassId>>,
    images: Mutex<HashMap<ImageId, StoredImage>>,
}

impl AppState {
    pub fn new(engine: Engine, store: DirectionStore, calibration: CalibrationConfig, ttl: Duration) -> Self {
        let fingerprint = engine.info().fingerprint();
        Self {
            engine,
            store,
            calibration,
            fingerprint,
            ttl,
            sessions: Registry::default(),
            compasses: Registry::default(),
            trajectories: Mutex::new(HashMap::new()),
            images: Mutex::new(HashMap::new()),
        }
    }

    /// Connects the configured backend and opens the store. Blocks while an
    /// external backend is contacted.
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        let generator: Arc<dyn Generator> = match &config.backend {
            BackendChoice::Builtin => {
                Arc::new(BoundedGenerator::new(BuiltinGenerator::new(), config.max_inflight_backend_calls))
            }
            BackendChoice::External(url) => {
                let external = ExternalGenerator::connect(url, config.backend_timeout())
                    .with_context(|| format!("cannot use generator backend at {url}"))?;
                Arc::new(BoundedGenerator::new(external, config.max_inflight_backend_calls))
            }
        };
        let engine = Engine::new(generator, config.engine.truncation_theta).context("cannot start the engine")?;
        let store = DirectionStore::open(&config.store.data_dir)
            .with_context(|| format!("cannot open data directory {}", config.store.data_dir.display()))?;
        for path in store.skipped() {
            tracing::warn!(path = %path.display(), "skipping unreadable direction record");
        }
        Ok(Self::new(engine, store, config.engine.calibration(), config.session_ttl()))
    }

    pub fn add_image(
        &self,
        id: ImageId,
        pixels: &RgbImage,
        z: Option<LatentVector>,
        category: CategoryId,
        owner: Owner,
    ) -> anyhow::Result<()> {
        let png = pixels.to_png().context("cannot encode image")?;
        lock(&self.images).insert(id, StoredImage { png: png.into(), z, category, owner });
        Ok(())
    }

    pub fn image(&self, id: &ImageId) -> Option<StoredImage> {
        lock(&self.images).get(id).cloned()
    }

    pub fn image_count(&self) -> usize {
        lock(&self.images).len()
    }

    pub fn add_trajectory(&self, id: TrajectoryId, compass: CompassId) {
        lock(&self.trajectories).insert(id, compass);
    }

    pub fn compass_of(&self, trajectory: &TrajectoryId) -> Option<CompassId> {
        lock(&self.trajectories).get(trajectory).cloned()
    }

    /// Expires idle sessions and compasses along with their images and
    /// trajectory index entries.
    pub fn sweep(&self) -> usize {
        let expired = self.sessions.expire(self.ttl) + self.compasses.expire(self.ttl);
        if expired > 0 {
            lock(&self.trajectories).retain(|_, compass| self.compasses.contains(compass));
            lock(&self.images).retain(|_, image| match &image.owner {
                Owner::Session(id) => self.sessions.contains(id),
                Owner::Compass(id) => self.compasses.contains(id),
            });
        }
        expired
    }
}
