//! Log records. Each committed event is one line of the append-only log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channels::{Decision, ProposalStatus, Verdict};
use crate::datum::DatumRef;
use crate::exosource::Dictionary;
use crate::federation::{ChangeEntry, ForwardLink, ForwardOrigin, SyncContract};
use crate::graph::EntityKind;
use crate::ids::{Author, EntityId, InstanceId, Seq};
use crate::propagation::{DerivedChange, PropagationRule};
use crate::rights::{ChannelConfig, Delegation, RightAdjustment};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedBody {
    pub author: Author,
    pub channel: EntityId,
    pub datum: DatumRef,
    pub value: Value,
    pub rationale: String,
    /// Mobilized evaluators asked for an opinion, author excluded.
    pub evaluators: BTreeSet<EntityId>,
    /// Earlier rejected proposal of the same value, if this repeats one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat_of: Option<Seq>,
    /// Set when the datum is owned by a peer: the proposal waits to be forwarded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardLink>,
    /// Set when this proposal was forwarded to us by a peer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<ForwardOrigin>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Event {
    EntityCreated {
        id: EntityId,
        kind: EntityKind,
        attrs: BTreeMap<String, Value>,
    },
    Connected {
        parent: EntityId,
        child: EntityId,
        attrs: BTreeMap<String, Value>,
        relevant: bool,
    },
    ChannelConfigured {
        entity: EntityId,
        config: ChannelConfig,
    },
    ArbitersDesignated {
        designations: BTreeMap<DatumRef, EntityId>,
    },
    AdjustmentApplied(RightAdjustment),
    Delegated(Delegation),
    /// Anonymous by construction: there is no author field to fill.
    Warned {
        datum: DatumRef,
        note: String,
    },
    Proposed(ProposedBody),
    Opined {
        author: Author,
        channel: EntityId,
        proposal: Seq,
        verdict: Verdict,
        rationale: String,
    },
    /// On accept, `derived` holds every rule-derived change so the decision
    /// and its consequences land in one atomic line.
    Arbitrated {
        author: Author,
        channel: EntityId,
        proposal: Seq,
        decision: Decision,
        rationale: String,
        #[serde(default)]
        derived: Vec<DerivedChange>,
    },
    RuleRegistered(PropagationRule),
    SourceRegistered(Dictionary),
    ContractEstablished(SyncContract),
    ProposalForwarded {
        proposal: Seq,
        remote_id: Seq,
    },
    ChangesetApplied {
        contract: String,
        origin: InstanceId,
        high_water: Seq,
        entries: Vec<ChangeEntry>,
        superseded: Vec<Seq>,
        proposal_updates: Vec<(Seq, ProposalStatus)>,
        /// New inbound watermark, if it advanced.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inbound_through: Option<Seq>,
    },
    /// First record of a rotated log; state up to `snapshot_seq` lives in a snapshot.
    Checkpoint {
        snapshot_seq: Seq,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::EntityCreated { .. } => "entity_created",
            Event::Connected { .. } => "connected",
            Event::ChannelConfigured { .. } => "channel_configured",
            Event::ArbitersDesignated { .. } => "arbiters_designated",
            Event::AdjustmentApplied(_) => "adjustment_applied",
            Event::Delegated(_) => "delegated",
            Event::Warned { .. } => "warned",
            Event::Proposed(_) => "proposed",
            Event::Opined { .. } => "opined",
            Event::Arbitrated { .. } => "arbitrated",
            Event::RuleRegistered(_) => "rule_registered",
            Event::SourceRegistered(_) => "source_registered",
            Event::ContractEstablished(_) => "contract_established",
            Event::ProposalForwarded { .. } => "proposal_forwarded",
            Event::ChangesetApplied { .. } => "changeset_applied",
            Event::Checkpoint { .. } => "checkpoint",
        }
    }
}

/// One log line: `{"seq":..,"at":..,"kind":..,"body":..}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: Seq,
    /// Wall-clock milliseconds. Recorded for humans, never used for ordering.
    pub at: u64,
    #[serde(flatten)]
    pub event: Event,
}
