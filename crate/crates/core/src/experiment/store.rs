use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{line, RecordLine};
use super::{RecordHeader, RunRecord, RunStatus, StepRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("integrity violation: run {0} already stored with different content")]
    Integrity(String),
    #[error("run {0} was never begun")]
    NotBegun(String),
    #[error("corrupt record {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Append-only persistence of run records.
pub trait RunStore: Send + Sync {
    fn begin(&self, header: &RecordHeader) -> Result<(), StoreError>;
    fn append(&self, run_id: &str, step: &StepRecord) -> Result<(), StoreError>;
    /// Stores a finished record. An identical existing record (timestamps
    /// aside) is left untouched; a different one is an integrity error.
    fn commit(&self, record: &RunRecord) -> Result<(), StoreError>;
    fn load(&self, run_id: &str) -> Result<Option<RunRecord>, StoreError>;
}

#[derive(Default)]
pub struct MemoryStore {
    partial: Mutex<BTreeMap<String, Vec<String>>>,
    records: Mutex<BTreeMap<String, RunRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.records.lock().expect("store lock").values().cloned().collect()
    }

    /// Lines appended so far for a run in progress.
    pub fn partial_len(&self, run_id: &str) -> usize {
        self.partial.lock().expect("store lock").get(run_id).map_or(0, |v| v.len())
    }
}

impl RunStore for MemoryStore {
    fn begin(&self, header: &RecordHeader) -> Result<(), StoreError> {
        let line = line(&RecordLine::Header(header.clone()));
        self.partial.lock().expect("store lock").insert(header.descriptor.run_id.clone(), vec![line]);
        Ok(())
    }

    fn append(&self, run_id: &str, step: &StepRecord) -> Result<(), StoreError> {
        let mut p = self.partial.lock().expect("store lock");
        let lines = p.get_mut(run_id).ok_or_else(|| StoreError::NotBegun(run_id.into()))?;
        lines.push(line(&RecordLine::Step(step.clone())));
        Ok(())
    }

    fn commit(&self, record: &RunRecord) -> Result<(), StoreError> {
        let mut records = self.records.lock().expect("store lock");
        if let Some(existing) = records.get(record.run_id()) {
            if existing.status() != RunStatus::Failed {
                if existing.replay_bytes() != record.replay_bytes() {
                    return Err(StoreError::Integrity(record.run_id().into()));
                }
                return Ok(());
            }
        }
        records.insert(record.run_id().into(), record.clone());
        self.partial.lock().expect("store lock").remove(record.run_id());
        Ok(())
    }

    fn load(&self, run_id: &str) -> Result<Option<RunRecord>, StoreError> {
        Ok(self.records.lock().expect("store lock").get(run_id).cloned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    status: RunStatus,
    file: String,
    seed: u64,
    point: BTreeMap<String, serde_json::Value>,
}

/// Directory store: `<root>/<plan>/runs/<run id>.ndjson` per completed run,
/// `<run id>.failed.ndjson` for failures, `.partial.ndjson` while running,
/// and `<root>/<plan>/index.json`.
pub struct DirStore {
    root: PathBuf,
    plans: Mutex<BTreeMap<String, String>>,
    index_lock: Mutex<()>,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, plans: Mutex::default(), index_lock: Mutex::default() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn plan_dir(&self, plan: &str) -> PathBuf {
        self.root.join(plan)
    }

    fn runs_dir(&self, plan: &str) -> PathBuf {
        self.plan_dir(plan).join("runs")
    }

    fn plan_of(&self, run_id: &str) -> Option<String> {
        self.plans.lock().expect("store lock").get(run_id).cloned()
    }

    fn update_index(&self, record: &RunRecord, file: &str) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().expect("index lock");
        let path = self.plan_dir(&record.header.descriptor.plan).join("index.json");
        let mut index: BTreeMap<String, IndexEntry> = match fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t)
                .map_err(|e| StoreError::Corrupt { path: path.display().to_string(), message: e.to_string() })?,
            Err(_) => BTreeMap::new(),
        };
        let d = &record.header.descriptor;
        index.insert(
            d.run_id.clone(),
            IndexEntry { status: record.status(), file: file.into(), seed: d.seed, point: d.point.clone() },
        );
        let text = serde_json::to_string_pretty(&serde_json::to_value(&index).expect("index serializes"))
            .expect("value serializes");
        write_atomic(&path, &(text + "\n"))
    }

    /// Every stored record of a plan, completed and failed.
    pub fn load_plan(&self, plan: &str) -> Result<Vec<RunRecord>, StoreError> {
        let dir = self.runs_dir(plan);
        let mut out = Vec::new();
        let Ok(entries) = fs::read_dir(&dir) else { return Ok(out) };
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.ends_with(".ndjson") && !name.ends_with(".partial.ndjson") {
                out.push(read_record(&p)?);
            }
        }
        Ok(out)
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_record(path: &Path) -> Result<RunRecord, StoreError> {
    let text = fs::read_to_string(path)?;
    RunRecord::from_ndjson(&text).map_err(|message| StoreError::Corrupt { path: path.display().to_string(), message })
}

impl RunStore for DirStore {
    fn begin(&self, header: &RecordHeader) -> Result<(), StoreError> {
        let d = &header.descriptor;
        let dir = self.runs_dir(&d.plan);
        fs::create_dir_all(&dir)?;
        self.plans.lock().expect("store lock").insert(d.run_id.clone(), d.plan.clone());
        let mut text = line(&RecordLine::Header(header.clone()));
        text.push('\n');
        fs::write(dir.join(format!("{}.partial.ndjson", d.run_id)), text)?;
        Ok(())
    }

    fn append(&self, run_id: &str, step: &StepRecord) -> Result<(), StoreError> {
        let plan = self.plan_of(run_id).ok_or_else(|| StoreError::NotBegun(run_id.into()))?;
        let path = self.runs_dir(&plan).join(format!("{run_id}.partial.ndjson"));
        let mut f = OpenOptions::new().append(true).open(path)?;
        let mut text = line(&RecordLine::Step(step.clone()));
        text.push('\n');
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    fn commit(&self, record: &RunRecord) -> Result<(), StoreError> {
        let d = &record.header.descriptor;
        let dir = self.runs_dir(&d.plan);
        fs::create_dir_all(&dir)?;
        let partial = dir.join(format!("{}.partial.ndjson", d.run_id));
        let (file, failed) = match record.status() {
            RunStatus::Failed => (format!("{}.failed.ndjson", d.run_id), true),
            _ => (format!("{}.ndjson", d.run_id), false),
        };
        let path = dir.join(&file);
        if !failed && path.exists() {
            let existing = read_record(&path)?;
            if existing.replay_bytes() != record.replay_bytes() {
                return Err(StoreError::Integrity(d.run_id.clone()));
            }
            let _ = fs::remove_file(partial);
            return Ok(());
        }
        write_atomic(&path, &record.to_ndjson())?;
        let _ = fs::remove_file(partial);
        self.update_index(record, &file)
    }

    fn load(&self, run_id: &str) -> Result<Option<RunRecord>, StoreError> {
        let plans: Vec<String> = match self.plan_of(run_id) {
            Some(p) => vec![p],
            None => fs::read_dir(&self.root)?
                .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
                .collect(),
        };
        for plan in plans {
            for name in [format!("{run_id}.ndjson"), format!("{run_id}.failed.ndjson")] {
                let p = self.runs_dir(&plan).join(name);
                if p.exists() {
                    return read_record(&p).map(Some);
                }
            }
        }
        Ok(None)
    }
}
