//! Reference-data governance hub: an entity graph whose attribute values
//! change only through arbitrated proposals, recorded in an append-only log.

pub mod channels;
pub mod datum;
pub mod error;
pub mod event;
pub mod exosource;
pub mod expr;
pub mod federation;
pub mod fixtures;
pub mod graph;
pub mod hub;
pub mod ids;
pub mod log;
pub mod propagation;
pub mod rights;
pub mod state;
pub mod value;
pub mod visibility;

pub use channels::{Decision, ProposalStatus, Verdict};
pub use datum::{DatumPattern, DatumRef, EdgeKey};
pub use error::{Error, Result};
pub use event::{Envelope, Event};
pub use graph::{EntityKind, GoldenRecord, Reliability};
pub use hub::{Hub, OpenOptions};
pub use ids::{eid, Author, EntityId, InstanceId, Seq};
pub use rights::Right;
pub use state::State;
pub use value::{Value, ValueType};
