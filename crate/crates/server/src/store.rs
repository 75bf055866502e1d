//! Flat-file session persistence.
//!
//! ```text
//! <sessions_dir>/<session_id>/session.json              immutable session record
//! <sessions_dir>/<session_id>/events.jsonl              append-only event log
//! <sessions_dir>/<session_id>/annotations/<image>.json  latest snapshot
//! <sessions_dir>/<session_id>/annotations/<image>.json.bak  previous snapshot
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use c3det_core::dataset::write_bytes_atomic;
use c3det_core::BBox;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    Assisted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub dataset: String,
    pub mode: Mode,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    ClickHint,
    DrawBox,
    DeleteBox,
    ClassChange,
    Submit,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::ClickHint,
        EventType::DrawBox,
        EventType::DeleteBox,
        EventType::ClassChange,
        EventType::Submit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::ClickHint => "click_hint",
            EventType::DrawBox => "draw_box",
            EventType::DeleteBox => "delete_box",
            EventType::ClassChange => "class_change",
            EventType::Submit => "submit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "type")]
    pub kind: EventType,
    /// Milliseconds since the session started, non-decreasing.
    pub t_ms: u64,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub bbox: BBox,
    pub class_id: usize,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Filesystem layout of one session.
#[derive(Clone, Debug)]
pub struct SessionFiles {
    dir: PathBuf,
}

impl SessionFiles {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn record(&self) -> PathBuf {
        self.dir.join("session.json")
    }

    pub fn events(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }

    pub fn annotations_dir(&self) -> PathBuf {
        self.dir.join("annotations")
    }

    pub fn annotation(&self, image_id: &str) -> PathBuf {
        self.annotations_dir().join(format!("{image_id}.json"))
    }

    pub fn backup(&self, image_id: &str) -> PathBuf {
        self.annotations_dir().join(format!("{image_id}.json.bak"))
    }

    /// Create the directory exclusively (fails if the id is taken), then the
    /// record and an empty log.
    pub fn create(&self, record: &SessionRecord) -> std::io::Result<()> {
        fs::create_dir(&self.dir)?;
        fs::create_dir(self.annotations_dir())?;
        let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        write_bytes_atomic(&self.record(), &bytes).map_err(std::io::Error::other)?;
        let log = fs::File::create(self.events())?;
        log.sync_all()
    }

    pub fn load_record(&self) -> std::io::Result<SessionRecord> {
        let bytes = fs::read(self.record())?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    /// Append one line and fsync it before returning.
    pub fn append_event(&self, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).create(true).open(self.events())?;
        f.write_all(&line)?;
        f.sync_data()
    }

    /// Every complete line of the log; a torn final line (from a crash
    /// mid-append) is ignored.
    pub fn read_events(&self) -> std::io::Result<Vec<Event>> {
        let f = match fs::File::open(self.events()) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(e) => out.push(e),
                Err(e) => log::warn!("skipping unreadable event line in {}: {e}", self.events().display()),
            }
        }
        Ok(out)
    }

    /// Keep the current snapshot as the backup generation, then replace it
    /// atomically (write to a temporary file, then rename).
    pub fn write_annotations(&self, image_id: &str, boxes: &[AnnotatedBox]) -> std::io::Result<()> {
        let current = self.annotation(image_id);
        if let Ok(previous) = fs::read(&current) {
            write_bytes_atomic(&self.backup(image_id), &previous).map_err(std::io::Error::other)?;
        }
        let bytes = serde_json::to_vec_pretty(boxes).expect("boxes serialize");
        write_bytes_atomic(&current, &bytes).map_err(std::io::Error::other)
    }

    pub fn read_annotations(&self, image_id: &str) -> std::io::Result<Vec<AnnotatedBox>> {
        match fs::read(self.annotation(image_id)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(std::io::Error::other),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    /// All saved snapshots keyed by image id.
    pub fn all_annotations(&self) -> std::io::Result<BTreeMap<String, Vec<AnnotatedBox>>> {
        let mut out = BTreeMap::new();
        let dir = self.annotations_dir();
        if !dir.exists() {
            return Ok(out);
        }
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(image_id) = name.strip_suffix(".json") {
                out.insert(image_id.to_string(), self.read_annotations(image_id)?);
            }
        }
        Ok(out)
    }
}

/// Session directories found under `root`.
pub fn existing_sessions(root: &Path) -> std::io::Result<Vec<(SessionRecord, SessionFiles)>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let files = SessionFiles::new(path.clone());
        match files.load_record() {
            Ok(r) => out.push((r, files)),
            Err(e) => log::warn!("ignoring {}: {e}", path.display()),
        }
    }
    Ok(out)
}
