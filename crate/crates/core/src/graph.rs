//! The entity-connection graph and the golden-record store.
//!
//! Every mutation here is driven by [`crate::state::State::apply`]; nothing
//! outside the event path writes to the graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::ids::{EntityId, InstanceId, Seq};
use crate::value::{Value, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Individual,
    Resource,
    Structure,
    Product,
    ExternalSource,
    Authority,
}

impl EntityKind {
    pub const ALL: [EntityKind; 6] = [
        EntityKind::Individual,
        EntityKind::Resource,
        EntityKind::Structure,
        EntityKind::Product,
        EntityKind::ExternalSource,
        EntityKind::Authority,
    ];

    /// Kinds that can act as principals (author interventions, hold rights).
    pub fn is_principal(self) -> bool {
        matches!(self, EntityKind::Individual | EntityKind::ExternalSource)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for EntityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| *c != '_' && *c != '-').collect();
        EntityKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    /// Names of the entity's specific attributes; values live in the datum store.
    pub attrs: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub edge: EdgeKey,
    pub attrs: BTreeSet<String>,
    /// Whether this edge's attributes join the collections of the child's
    /// other parents.
    pub relevant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reliability {
    Unverified,
    Proposed,
    Contested,
    Golden,
}

/// What committed a golden version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "by")]
pub enum CommitSource {
    /// Initial value supplied when the entity or connection was created.
    Creation,
    Arbitration { intervention: Seq },
    Rule { rule: String, seed: Seq },
    Federation { contract: String, origin: InstanceId, owner_version: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub datum: DatumRef,
    pub value: Value,
    pub version: u64,
    pub reliability: Reliability,
    pub committed_by: CommitSource,
    pub committed_at: Seq,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatumRecord {
    pub ty: ValueType,
    /// Every golden version, oldest first. Never empty.
    pub versions: Vec<GoldenRecord>,
}

impl DatumRecord {
    pub fn current(&self) -> &GoldenRecord {
        self.versions.last().expect("datum has at least one version")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    entities: BTreeMap<EntityId, Entity>,
    edges: BTreeMap<EdgeKey, Connection>,
    children: BTreeMap<EntityId, BTreeSet<EntityId>>,
    parents: BTreeMap<EntityId, BTreeSet<EntityId>>,
    datums: BTreeMap<DatumRef, DatumRecord>,
}

static EMPTY: BTreeSet<EntityId> = BTreeSet::new();

impl Graph {
    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn require_entity(&self, id: &EntityId) -> Result<&Entity> {
        self.entities.get(id).ok_or_else(|| Error::UnknownEntity(id.clone()))
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn connection(&self, edge: &EdgeKey) -> Option<&Connection> {
        self.edges.get(edge)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.edges.values()
    }

    /// Connection between `a` and `b` in either direction.
    pub fn link(&self, a: &EntityId, b: &EntityId) -> Option<&Connection> {
        self.edges
            .get(&EdgeKey::new(a.clone(), b.clone()))
            .or_else(|| self.edges.get(&EdgeKey::new(b.clone(), a.clone())))
    }

    pub fn children(&self, id: &EntityId) -> &BTreeSet<EntityId> {
        self.children.get(id).unwrap_or(&EMPTY)
    }

    pub fn parents(&self, id: &EntityId) -> &BTreeSet<EntityId> {
        self.parents.get(id).unwrap_or(&EMPTY)
    }

    /// Entities adjacent to `id` in either direction.
    pub fn neighbors(&self, id: &EntityId) -> BTreeSet<EntityId> {
        self.children(id).union(self.parents(id)).cloned().collect()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_kind(&self, id: &EntityId, kind: EntityKind) -> bool {
        self.entities.get(id).is_some_and(|e| e.kind == kind)
    }

    pub fn datum(&self, d: &DatumRef) -> Option<&DatumRecord> {
        self.datums.get(d)
    }

    pub fn require_datum(&self, d: &DatumRef) -> Result<&DatumRecord> {
        self.datums.get(d).ok_or_else(|| Error::UnknownDatum(d.clone()))
    }

    pub fn datums(&self) -> impl Iterator<Item = (&DatumRef, &DatumRecord)> {
        self.datums.iter()
    }

    /// Current golden value without reliability adjustment.
    pub fn value(&self, d: &DatumRef) -> Option<&Value> {
        self.datums.get(d).map(|r| &r.current().value)
    }

    /// Whether some datum with this attribute name exists on an entity
    /// (`on_edge == false`) or on a connection.
    pub fn has_attr_name(&self, name: &str, on_edge: bool) -> bool {
        self.datums
            .keys()
            .any(|d| d.attr_name() == name && d.edge().is_some() == on_edge)
    }

    /// Specific-attribute datums of an entity.
    pub fn entity_datums(&self, id: &EntityId) -> impl Iterator<Item = DatumRef> + '_ {
        let attrs = self.entities.get(id).map(|e| &e.attrs);
        let id = id.clone();
        attrs
            .into_iter()
            .flatten()
            .map(move |a| DatumRef::Attr { entity: id.clone(), attr: a.clone() })
    }

    /// Attribute datums of one connection.
    pub fn edge_datums(&self, edge: &EdgeKey) -> impl Iterator<Item = DatumRef> + '_ {
        let attrs = self.edges.get(edge).map(|c| &c.attrs);
        let edge = edge.clone();
        attrs
            .into_iter()
            .flatten()
            .map(move |a| DatumRef::Conn { edge: edge.clone(), attr: a.clone() })
    }

    pub(crate) fn insert_entity(&mut self, entity: Entity) {
        self.entities.insert(entity.id.clone(), entity);
    }

    pub(crate) fn insert_connection(&mut self, conn: Connection) {
        let e = &conn.edge;
        self.children.entry(e.parent.clone()).or_default().insert(e.child.clone());
        self.parents.entry(e.child.clone()).or_default().insert(e.parent.clone());
        self.edges.insert(e.clone(), conn);
    }

    pub(crate) fn push_version(&mut self, record: GoldenRecord) {
        match self.datums.get_mut(&record.datum) {
            Some(r) => r.versions.push(record),
            None => {
                let ty = record.value.ty();
                self.datums.insert(record.datum.clone(), DatumRecord { ty, versions: vec![record] });
            }
        }
    }
}
