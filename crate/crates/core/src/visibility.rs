//! Communities, datum collections, fields of action and areas of visibility.
//!
//! All derivations are recomputed from the current graph on every call, so
//! they always reflect the latest committed seq.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::graph::{EntityKind, Graph};
use crate::ids::{EntityId, Seq};
use crate::state::State;

/// Individuals connected to an entity, in either direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub entity: EntityId,
    pub members: BTreeSet<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatumCollection {
    pub owner_entity: EntityId,
    pub datums: BTreeSet<DatumRef>,
}

impl Graph {
    pub fn community_of(&self, e: &EntityId) -> Result<Community> {
        self.require_entity(e)?;
        let members = self
            .neighbors(e)
            .into_iter()
            .filter(|n| self.is_kind(n, EntityKind::Individual))
            .collect();
        Ok(Community { entity: e.clone(), members })
    }

    /// Whether `p` belongs to the community of `e`.
    pub fn is_member(&self, p: &EntityId, e: &EntityId) -> bool {
        self.is_kind(p, EntityKind::Individual) && self.link(p, e).is_some()
    }

    /// Specific attributes of `e`, attributes of its parent and child edges,
    /// and attributes of its children's other parent edges flagged relevant.
    pub fn collection_of(&self, e: &EntityId) -> Result<DatumCollection> {
        self.require_entity(e)?;
        let mut datums: BTreeSet<DatumRef> = self.entity_datums(e).collect();
        for p in self.parents(e) {
            datums.extend(self.edge_datums(&EdgeKey::new(p.clone(), e.clone())));
        }
        for c in self.children(e) {
            datums.extend(self.edge_datums(&EdgeKey::new(e.clone(), c.clone())));
            for q in self.parents(c).iter().filter(|q| *q != e) {
                let edge = EdgeKey::new(q.clone(), c.clone());
                if self.connection(&edge).is_some_and(|conn| conn.relevant) {
                    datums.extend(self.edge_datums(&edge));
                }
            }
        }
        Ok(DatumCollection { owner_entity: e.clone(), datums })
    }

    pub fn field_of_action(&self, i: &EntityId) -> Result<BTreeSet<DatumRef>> {
        let ent = self.require_entity(i)?;
        if ent.kind != EntityKind::Individual {
            return Err(Error::NotAnIndividual(i.clone()));
        }
        let mut out = BTreeSet::new();
        for n in self.neighbors(i) {
            out.extend(self.collection_of(&n)?.datums);
        }
        Ok(out)
    }

    /// Entities whose collection contains `d`: the concerned channels.
    pub fn concerned_entities(&self, d: &DatumRef) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        if self.datum(d).is_none() {
            return out;
        }
        match d {
            DatumRef::Attr { entity, .. } => {
                out.insert(entity.clone());
            }
            DatumRef::Conn { edge, .. } => {
                out.insert(edge.parent.clone());
                out.insert(edge.child.clone());
                if self.connection(edge).is_some_and(|c| c.relevant) {
                    out.extend(self.parents(&edge.child).iter().cloned());
                }
            }
        }
        out
    }

    /// Union of the communities of every entity whose collection holds `d`.
    pub fn audience_of(&self, d: &DatumRef) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for e in self.concerned_entities(d) {
            if let Ok(c) = self.community_of(&e) {
                out.extend(c.members);
            }
        }
        out
    }
}

impl State {
    /// Individuals placed in view of an intervention.
    pub fn area_of_visibility(&self, intervention: Seq) -> Result<BTreeSet<EntityId>> {
        let iv = self
            .interventions
            .get(&intervention)
            .ok_or(Error::UnknownIntervention(intervention))?;
        Ok(self.graph.audience_of(&iv.datum))
    }
}
