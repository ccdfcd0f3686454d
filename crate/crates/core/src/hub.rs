//! The single writer: validates operations, appends events, folds them into state.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::channels::{Intervention, Warning};
use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::event::{Envelope, Event};
use crate::graph::{EntityKind, GoldenRecord};
use crate::ids::{check_attr_name, EntityId, InstanceId, Seq};
use crate::log::{EventLog, OpenReport, Snapshot};
use crate::state::State;
use crate::value::Value;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Clone, Debug, Default)]
pub struct OpenOptions {
    /// Cut a torn final record instead of refusing to start.
    pub recover: bool,
    /// Restore from this snapshot and replay only the log tail.
    pub snapshot: Option<PathBuf>,
}

pub struct Hub {
    instance: InstanceId,
    pub(crate) state: State,
    log: EventLog,
    clock: Clock,
}

impl fmt::Debug for Hub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hub").field("instance", &self.instance).field("seq", &self.state.seq).finish()
    }
}

/// Interventions, warnings and golden versions of one datum, each in seq order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatumHistory {
    pub datum: DatumRef,
    pub interventions: Vec<Intervention>,
    pub warnings: Vec<Warning>,
    pub versions: Vec<GoldenRecord>,
}

impl Hub {
    pub fn in_memory(instance: InstanceId) -> Self {
        Self { instance, state: State::default(), log: EventLog::in_memory(), clock: Arc::new(system_clock) }
    }

    /// Opens a file-backed hub, replaying the log (after the snapshot, if given).
    pub fn open(instance: InstanceId, log_path: impl AsRef<Path>, opts: &OpenOptions) -> Result<(Self, OpenReport)> {
        let (log, report) = EventLog::open(log_path, opts.recover)?;
        let state = match &opts.snapshot {
            Some(p) => {
                let snap = Snapshot::read(p)?;
                restore_tail(snap, &log)?
            }
            None => {
                if let Some(start) = log.start().filter(|s| *s != 1) {
                    return Err(Error::SnapshotRequired(start));
                }
                State::replay(log.events())?
            }
        };
        Ok((Self { instance, state, log, clock: Arc::new(system_clock) }, report))
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn instance(&self) -> &InstanceId {
        &self.instance
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn events(&self) -> &[Envelope] {
        self.log.events()
    }

    pub fn seq(&self) -> Seq {
        self.state.seq
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<Seq> {
        Snapshot::of(&self.state).write(path)?;
        Ok(self.state.seq)
    }

    /// Writes a snapshot, moves the log aside and starts a fresh one whose
    /// first record is a checkpoint pointing at the snapshot.
    pub fn rotate(&mut self, snapshot: impl AsRef<Path>, archive: Option<&Path>) -> Result<Seq> {
        let at = self.snapshot(snapshot)?;
        self.log.rotate(archive)?;
        self.commit(Event::Checkpoint { snapshot_seq: at })
    }

    pub(crate) fn commit(&mut self, event: Event) -> Result<Seq> {
        let env = Envelope { seq: self.state.seq + 1, at: (self.clock)(), event };
        self.log.append(&env)?;
        // every caller validated the event first; failing here is a bug
        self.state.apply(&env).expect("validated event must apply");
        Ok(env.seq)
    }

    pub fn create_entity(&mut self, kind: EntityKind, id: &str, attrs: BTreeMap<String, Value>) -> Result<Seq> {
        let id = EntityId::new(id)?;
        if self.state.graph.entity(&id).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
        for a in attrs.keys() {
            check_attr_name(a)?;
        }
        self.commit(Event::EntityCreated { id, kind, attrs })
    }

    pub fn connect(
        &mut self,
        parent: &EntityId,
        child: &EntityId,
        attrs: BTreeMap<String, Value>,
        relevant: bool,
    ) -> Result<Seq> {
        self.state.graph.require_entity(parent)?;
        self.state.graph.require_entity(child)?;
        if parent == child {
            return Err(Error::SelfLoop(parent.clone()));
        }
        let edge = EdgeKey::new(parent.clone(), child.clone());
        if self.state.graph.connection(&edge).is_some() {
            return Err(Error::DuplicateEdge(edge.to_string()));
        }
        for a in attrs.keys() {
            check_attr_name(a)?;
        }
        self.commit(Event::Connected { parent: parent.clone(), child: child.clone(), attrs, relevant })
    }

    pub fn datum_history(&self, d: &DatumRef) -> Result<DatumHistory> {
        self.state.datum_history(d)
    }

    pub fn read_golden(&self, d: &DatumRef) -> Result<GoldenRecord> {
        self.state.read_golden(d)
    }
}

impl State {
    /// Current golden record with its live reliability.
    pub fn read_golden(&self, d: &DatumRef) -> Result<GoldenRecord> {
        let mut rec = self.graph.require_datum(d)?.current().clone();
        rec.reliability = self.reliability(d);
        Ok(rec)
    }

    pub fn datum_history(&self, d: &DatumRef) -> Result<DatumHistory> {
        let versions = self.graph.require_datum(d)?.versions.clone();
        Ok(DatumHistory {
            datum: d.clone(),
            interventions: self.interventions.values().filter(|i| i.datum == *d).cloned().collect(),
            warnings: self.warnings.values().filter(|w| w.datum == *d).cloned().collect(),
            versions,
        })
    }
}

fn restore_tail(snap: Snapshot, log: &EventLog) -> Result<State> {
    let mut state = snap.state;
    if let (Some(start), Some(last)) = (log.start(), log.last_seq()) {
        if start > snap.seq + 1 {
            return Err(Error::SnapshotStale { snapshot: snap.seq, log_start: start });
        }
        if last < snap.seq {
            return Err(Error::CorruptLog {
                seq: last + 1,
                reason: format!("log ends before snapshot seq {}", snap.seq),
            });
        }
    }
    for env in log.events().iter().filter(|e| e.seq > snap.seq) {
        state.apply(env)?;
    }
    Ok(state)
}
