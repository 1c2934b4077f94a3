//! Durable, moderated storage of labeled compasses: one JSON file per record
//! in a single directory.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::SystemTime;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::CalibratedCompass;
use crate::generator::CategoryId;
use crate::ids::{CompassId, RecordId};
use crate::latent::{Direction, LatentError, SpaceTag, TraversalStepSize};

pub const MAX_LABEL_CHARS: usize = 200;
const RECORD_EXTENSION: &str = "json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("label is empty")]
    EmptyLabel,
    #[error("label has {0} characters, at most {MAX_LABEL_CHARS} allowed")]
    LabelTooLong(usize),
    #[error("no direction record {0}")]
    UnknownRecord(RecordId),
    #[error("direction record {0} already exists")]
    DuplicateRecord(RecordId),
    #[error("invalid direction record: {0}")]
    InvalidRecord(String),
    #[error("storage failure at {path}: {source}")]
    StorageFailure { path: PathBuf, source: std::io::Error },
}

impl StoreError {
    /// Machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::EmptyLabel => "EmptyLabel",
            StoreError::LabelTooLong(_) => "LabelTooLong",
            StoreError::UnknownRecord(_) => "UnknownRecord",
            StoreError::DuplicateRecord(_) => "DuplicateRecord",
            StoreError::InvalidRecord(_) => "InvalidRecord",
            StoreError::StorageFailure { .. } => "StorageFailure",
        }
    }
}

impl From<LatentError> for StoreError {
    fn from(e: LatentError) -> Self {
        StoreError::InvalidRecord(e.to_string())
    }
}

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageFailure { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationStatus {
    Pending,
    Approved,
    Rejected,
}

impl std::str::FromStr for ModerationStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(Self::Pending),
            "approved" => Ok(Self::Approved),
            "rejected" => Ok(Self::Rejected),
            other => Err(format!("unknown moderation status {other:?} (expected pending, approved or rejected)")),
        }
    }
}

impl std::fmt::Display for ModerationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Approved => "approved",
            Self::Rejected => "rejected",
        })
    }
}

/// A saved compass with its label and moderation state; also the on-disk
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub id: RecordId,
    pub label: String,
    pub space: SpaceTag,
    pub direction: Vec<f64>,
    pub bias: f64,
    pub step_unit: f64,
    pub feature_scale: f64,
    /// `‖w‖` of the fitted hyperplane. Older files without it load as 1.0.
    #[serde(default = "unit_weight_norm")]
    pub weight_norm: f64,
    pub origin_category: CategoryId,
    pub generator_fingerprint: String,
    pub moderation_status: ModerationStatus,
    pub created_at: DateTime<Utc>,
}

fn unit_weight_norm() -> f64 {
    1.0
}

fn check_label(label: &str) -> Result<String, StoreError> {
    let label = label.trim();
    if label.is_empty() {
        return Err(StoreError::EmptyLabel);
    }
    let chars = label.chars().count();
    if chars > MAX_LABEL_CHARS {
        return Err(StoreError::LabelTooLong(chars));
    }
    Ok(label.to_string())
}

impl DirectionRecord {
    /// Checks the label and re-validates the stored compass.
    pub fn validate(&self) -> Result<(), StoreError> {
        check_label(&self.label)?;
        self.to_compass().map(|_| ())
    }

    /// A navigable compass with a fresh id; the direction must still be
    /// unit-norm.
    pub fn to_compass(&self) -> Result<CalibratedCompass, StoreError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(StoreError::InvalidRecord(format!("{name} must be positive, got {v}")))
            }
        };
        if !self.bias.is_finite() {
            return Err(StoreError::InvalidRecord("bias is not finite".into()));
        }
        Ok(CalibratedCompass {
            id: CompassId::generate(),
            direction: Direction::from_unit(self.direction.clone(), self.space)?,
            bias: self.bias,
            weight_norm: positive("weight_norm", self.weight_norm)?,
            step_unit: TraversalStepSize::new(self.step_unit)?,
            space: self.space,
            feature_scale: positive("feature_scale", self.feature_scale)?,
            category: self.origin_category,
            source_session: None,
            training_stats: None,
        })
    }
}

/// A stored record as handed out for use against the active generator.
#[derive(Debug, Clone)]
pub struct LoadedDirection {
    pub record: DirectionRecord,
    pub compass: CalibratedCompass,
    /// Whether the record was saved against a different generator.
    pub fingerprint_mismatch: bool,
}

/// Record directory with an in-memory index rebuilt on open.
///
/// Writes go through one lock and land via write-to-temp-then-rename, so a
/// crash leaves each record file either old or new.
#[derive(Debug)]
pub struct DirectionStore {
    dir: PathBuf,
    index: RwLock<HashMap<RecordId, DirectionRecord>>,
    writer: Mutex<Option<DateTime<Utc>>>,
    skipped: RwLock<Vec<PathBuf>>,
    scanned_at: Mutex<Option<SystemTime>>,
}

struct Scan {
    index: HashMap<RecordId, DirectionRecord>,
    skipped: Vec<PathBuf>,
    latest: Option<DateTime<Utc>>,
}

impl DirectionStore {
    /// Opens (creating if needed) a record directory and indexes every
    /// `*.json` file in it. Unreadable or invalid files are skipped and
    /// reported by [`DirectionStore::skipped`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        tempfile::NamedTempFile::new_in(&dir).map_err(storage(&dir))?;
        let modified = Self::modified(&dir)?;
        let scan = Self::scan(&dir)?;
        Ok(Self {
            dir,
            index: RwLock::new(scan.index),
            writer: Mutex::new(scan.latest),
            skipped: RwLock::new(scan.skipped),
            scanned_at: Mutex::new(Some(modified)),
        })
    }

    fn modified(dir: &Path) -> Result<SystemTime, StoreError> {
        fs::metadata(dir).and_then(|m| m.modified()).map_err(storage(dir))
    }

    fn scan(dir: &Path) -> Result<Scan, StoreError> {
        let mut index = HashMap::new();
        let mut skipped = Vec::new();
        let mut latest = None;
        for entry in fs::read_dir(dir).map_err(storage(dir))? {
            let path = entry.map_err(storage(dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(RECORD_EXTENSION) {
                continue;
            }
            match Self::read_record(&path) {
                Some(record) if path.file_stem().and_then(|s| s.to_str()) == Some(record.id.as_str()) => {
                    latest = latest.max(Some(record.created_at));
                    index.insert(record.id.clone(), record);
                }
                _ => skipped.push(path),
            }
        }
        skipped.sort();
        Ok(Scan { index, skipped, latest })
    }

    /// Re-indexes the directory if it changed since the last scan, picking up
    /// records written by another process (for example offline moderation).
    pub fn refresh_if_changed(&self) -> Result<bool, StoreError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let modified = Self::modified(&self.dir)?;
        let mut scanned_at = self.scanned_at.lock().unwrap_or_else(|e| e.into_inner());
        if *scanned_at == Some(modified) {
            return Ok(false);
        }
        let scan = Self::scan(&self.dir)?;
        *self.write_index() = scan.index;
        *self.skipped.write().unwrap_or_else(|e| e.into_inner()) = scan.skipped;
        *writer = (*writer).max(scan.latest);
        *scanned_at = Some(modified);
        Ok(true)
    }

    fn read_record(path: &Path) -> Option<DirectionRecord> {
        let bytes = fs::read(path).ok()?;
        let record: DirectionRecord = serde_json::from_slice(&bytes).ok()?;
        record.validate().ok()?;
        Some(record)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Files found by the last scan that could not be loaded.
    pub fn skipped(&self) -> Vec<PathBuf> {
        self.skipped.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn path_of(&self, id: &RecordId) -> PathBuf {
        self.dir.join(format!("{id}.{RECORD_EXTENSION}"))
    }

    fn write_atomic(&self, record: &DirectionRecord) -> Result<(), StoreError> {
        let target = self.path_of(&record.id);
        let json = serde_json::to_vec_pretty(record).expect("record serializes");
        let mut tmp = tempfile::Builder::new()
            .prefix(".record-")
            .suffix(".tmp")
            .tempfile_in(&self.dir)
            .map_err(storage(&self.dir))?;
        tmp.write_all(&json).map_err(storage(tmp.path()))?;
        tmp.as_file().sync_all().map_err(storage(tmp.path()))?;
        tmp.persist(&target).map_err(|e| StoreError::StorageFailure { path: target.clone(), source: e.error })?;
        if let Ok(dir) = fs::File::open(&self.dir) {
            let _ = dir.sync_all();
        }
        Ok(())
    }

    fn read_index(&self) -> std::sync::RwLockReadGuard<'_, HashMap<RecordId, DirectionRecord>> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write_index(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<RecordId, DirectionRecord>> {
        self.index.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Timestamps handed out are strictly increasing, so listing order
    /// matches save order.
    fn next_timestamp(last: &mut Option<DateTime<Utc>>) -> DateTime<Utc> {
        let now = Utc::now();
        let stamp = match *last {
            Some(prev) if now <= prev => prev + TimeDelta::microseconds(1),
            _ => now,
        };
        *last = Some(stamp);
        stamp
    }

    /// Persists a labeled compass as a new pending record.
    pub fn save(
        &self,
        compass: &CalibratedCompass,
        label: &str,
        origin_category: CategoryId,
        generator_fingerprint: &str,
    ) -> Result<DirectionRecord, StoreError> {
        let label = check_label(label)?;
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let record = DirectionRecord {
            id: RecordId::generate(),
            label,
            space: compass.space,
            direction: compass.direction.values().to_vec(),
            bias: compass.bias,
            step_unit: compass.step_unit.magnitude(),
            feature_scale: compass.feature_scale,
            weight_norm: compass.weight_norm,
            origin_category,
            generator_fingerprint: generator_fingerprint.to_string(),
            moderation_status: ModerationStatus::Pending,
            created_at: Self::next_timestamp(&mut writer),
        };
        self.write_atomic(&record)?;
        self.write_index().insert(record.id.clone(), record.clone());
        Ok(record)
    }

    /// Adds a record produced elsewhere (for example by an export). It keeps
    /// its id and timestamp and re-enters moderation as pending.
    pub fn import(&self, mut record: DirectionRecord) -> Result<DirectionRecord, StoreError> {
        record.label = check_label(&record.label)?;
        record.validate()?;
        if record.id.as_str().is_empty()
            || !record.id.as_str().chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(StoreError::InvalidRecord(format!("record id {:?} is not a plain token", record.id.as_str())));
        }
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self.read_index().contains_key(&record.id) {
            return Err(StoreError::DuplicateRecord(record.id));
        }
        record.moderation_status = ModerationStatus::Pending;
        *writer = (*writer).max(Some(record.created_at));
        self.write_atomic(&record)?;
        self.write_index().insert(record.id.clone(), record.clone());
        Ok(record)
    }

    pub fn get(&self, id: &RecordId) -> Result<DirectionRecord, StoreError> {
        self.read_index().get(id).cloned().ok_or_else(|| StoreError::UnknownRecord(id.clone()))
    }

    /// Loads a record as a usable compass, flagging a generator mismatch.
    pub fn load(&self, id: &RecordId, active_fingerprint: &str) -> Result<LoadedDirection, StoreError> {
        let record = self.get(id)?;
        let compass = record.to_compass()?;
        let fingerprint_mismatch = record.generator_fingerprint != active_fingerprint;
        Ok(LoadedDirection { record, compass, fingerprint_mismatch })
    }

    /// Records matching the optional filters, newest first (ties by id).
    pub fn list(&self, status: Option<ModerationStatus>, space: Option<SpaceTag>) -> Vec<DirectionRecord> {
        let mut records: Vec<DirectionRecord> = self
            .read_index()
            .values()
            .filter(|r| status.is_none_or(|s| r.moderation_status == s))
            .filter(|r| space.is_none_or(|s| r.space == s))
            .cloned()
            .collect();
        records.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        records
    }

    pub fn set_moderation_status(
        &self,
        id: &RecordId,
        status: ModerationStatus,
    ) -> Result<DirectionRecord, StoreError> {
        let _writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut record = self.get(id)?;
        record.moderation_status = status;
        self.write_atomic(&record)?;
        self.write_index().insert(record.id.clone(), record.clone());
        Ok(record)
    }
}
