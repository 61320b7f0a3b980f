//! Conversation sessions, persisted as one append-only JSON-lines file each.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::unirep::ConversationTurn;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<ConversationTurn>,
}

impl Session {
    pub fn new() -> Self {
        Self {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: Utc::now(),
            turns: Vec::new(),
        }
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    session_id: String,
    created_at: DateTime<Utc>,
}

/// Directory of `<session_id>.jsonl` files: a header line, then one line per turn.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Session(format!("{}: {e}", path.display()))
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn create(&self) -> Result<Session, PipelineError> {
        let session = Session::new();
        let path = self.path(&session.session_id);
        let header = Header { session_id: session.session_id.clone(), created_at: session.created_at };
        let mut line = serde_json::to_vec(&header).expect("header serializes");
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        file.write_all(&line).map_err(|e| io_err(&path, e))?;
        Ok(session)
    }

    pub fn append(&self, session_id: &str, turn: &ConversationTurn) -> Result<(), PipelineError> {
        if !valid_id(session_id) {
            return Err(PipelineError::UnknownSession(session_id.to_string()));
        }
        let path = self.path(session_id);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|_| PipelineError::UnknownSession(session_id.to_string()))?;
        let mut line = Vec::new();
        if !ends_with_newline(&mut file).map_err(|e| io_err(&path, e))? {
            line.push(b'\n');
        }
        serde_json::to_writer(&mut line, turn).expect("turn serializes");
        line.push(b'\n');
        file.write_all(&line).map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))
    }

    pub fn load(&self, session_id: &str) -> Result<Option<Session>, PipelineError> {
        if !valid_id(session_id) {
            return Ok(None);
        }
        let path = self.path(session_id);
        if !path.exists() {
            return Ok(None);
        }
        read_session(&path).map(Some)
    }

    /// Every stored session, ordered by creation time then id.
    pub fn load_all(&self) -> Result<Vec<Session>, PipelineError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| io_err(&self.dir, e))? {
            let path = entry.map_err(|e| io_err(&self.dir, e))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                out.push(read_session(&path)?);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.session_id.cmp(&b.session_id)));
        Ok(out)
    }
}

fn ends_with_newline(file: &mut fs::File) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    if file.metadata()?.len() == 0 {
        return Ok(true);
    }
    file.seek(SeekFrom::End(-1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] == b'\n')
}

fn read_session(path: &Path) -> Result<Session, PipelineError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| io_err(path, e))?).map_err(|e| io_err(path, e))?,
        None => return Err(io_err(path, "empty session file")),
    };
    let mut turns = Vec::new();
    for line in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        // a torn write leaves one unparsable line; skip it
        if let Ok(turn) = serde_json::from_str(&line) {
            turns.push(turn);
        }
    }
    Ok(Session { session_id: header.session_id, created_at: header.created_at, turns })
}
