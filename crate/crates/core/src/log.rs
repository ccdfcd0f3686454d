//! Line-delimited event log and state snapshots.
//!
//! The log is authoritative. A snapshot only shortens startup: restoring it
//! and replaying the remaining tail must give the same state as replaying
//! the whole log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Envelope;
use crate::ids::Seq;
use crate::state::State;

pub const SNAPSHOT_FORMAT: u32 = 1;

#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<Envelope>,
}

/// What [`EventLog::open`] found at the end of the file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpenReport {
    /// Bytes dropped from a torn final record (only with `recover`).
    pub truncated_bytes: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { path: None, file: None, events: Vec::new() }
    }

    /// Opens or creates a log file. A torn or unparsable final line is a
    /// [`Error::CorruptLog`] unless `recover` is set, in which case it is cut off.
    pub fn open(path: impl AsRef<Path>, recover: bool) -> Result<(Self, OpenReport)> {
        let path = path.as_ref().to_path_buf();
        let raw = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut events: Vec<Envelope> = Vec::new();
        let mut good_end = 0usize;
        let mut report = OpenReport::default();
        let mut pos = 0usize;
        let mut needs_newline = false;
        while pos < raw.len() {
            let (line, next, terminated) = match raw[pos..].iter().position(|b| *b == b'\n') {
                Some(i) => (&raw[pos..pos + i], pos + i + 1, true),
                None => (&raw[pos..], raw.len(), false),
            };
            let expected = events.last().map_or(0, |e| e.seq) + 1;
            let is_last = next >= raw.len();
            if line.iter().all(u8::is_ascii_whitespace) {
                pos = next;
                good_end = next;
                continue;
            }
            let parsed: std::result::Result<Envelope, String> =
                serde_json::from_slice(line).map_err(|e| e.to_string());
            match parsed {
                Ok(env) if events.is_empty() || env.seq == expected => {
                    events.push(env);
                    good_end = next;
                    needs_newline = !terminated;
                }
                Ok(env) => {
                    return Err(Error::CorruptLog {
                        seq: expected,
                        reason: format!("found seq {} where {} was expected", env.seq, expected),
                    })
                }
                Err(_) if is_last && recover => {
                    report.truncated_bytes = (raw.len() - good_end) as u64;
                    break;
                }
                Err(reason) => {
                    let reason = if !terminated { format!("truncated record: {reason}") } else { reason };
                    return Err(Error::CorruptLog { seq: expected, reason });
                }
            }
            pos = next;
        }
        if report.truncated_bytes > 0 {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(good_end as u64)?;
            f.sync_all()?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok((Self { path: Some(path), file: Some(file), events }, report))
    }

    /// Writes one record and flushes it before returning.
    pub fn append(&mut self, env: &Envelope) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_vec(env)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        self.events.push(env.clone());
        Ok(())
    }

    pub fn events(&self) -> &[Envelope] {
        &self.events
    }

    /// Seq of the first record, if any.
    pub fn start(&self) -> Option<Seq> {
        self.events.first().map(|e| e.seq)
    }

    pub fn last_seq(&self) -> Option<Seq> {
        self.events.last().map(|e| e.seq)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Moves the current file aside to `archive` and starts an empty log.
    pub(crate) fn rotate(&mut self, archive: Option<&Path>) -> Result<()> {
        if let Some(path) = self.path.clone() {
            self.file = None;
            if let Some(archive) = archive {
                fs::rename(&path, archive)?;
            } else {
                fs::remove_file(&path)?;
            }
            self.file = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        }
        self.events.clear();
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: u32,
    pub seq: Seq,
    pub state: State,
}

impl Snapshot {
    pub fn of(state: &State) -> Self {
        Self { format: SNAPSHOT_FORMAT, seq: state.seq, state: state.clone() }
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// half-written snapshot behind.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, self)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let snap: Snapshot = serde_json::from_slice(&fs::read(path)?)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Parse(format!("unsupported snapshot format {}", snap.format)));
        }
        if snap.state.seq != snap.seq {
            return Err(Error::Parse("snapshot seq does not match its state".into()));
        }
        Ok(snap)
    }
}
