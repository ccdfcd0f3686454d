//! The materialized state: a pure fold of the event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{
    Decision, Intervention, Payload, ProposalRecord, ProposalStatus, Warning,
};
use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::event::{Envelope, Event};
use crate::exosource::Dictionary;
use crate::federation::SyncContract;
use crate::graph::{CommitSource, Connection, Entity, GoldenRecord, Graph, Reliability};
use crate::ids::{Author, EntityId, Seq};
use crate::propagation::PropagationRule;
use crate::rights::{ChannelConfig, Delegation, RightAdjustment};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    /// Seq of the last applied event.
    pub seq: Seq,
    pub graph: Graph,
    pub channels: BTreeMap<EntityId, ChannelConfig>,
    /// Explicit arbiter designations; undesignated datums use the default.
    pub arbiters: BTreeMap<DatumRef, EntityId>,
    pub adjustments: BTreeMap<Seq, RightAdjustment>,
    pub delegations: BTreeMap<Seq, Delegation>,
    pub interventions: BTreeMap<Seq, Intervention>,
    pub proposals: BTreeMap<Seq, ProposalRecord>,
    /// The single non-terminal proposal per datum.
    pub open_proposals: BTreeMap<DatumRef, Seq>,
    pub warnings: BTreeMap<Seq, Warning>,
    pub open_warnings: BTreeMap<DatumRef, BTreeSet<Seq>>,
    pub rules: BTreeMap<String, PropagationRule>,
    pub sources: BTreeMap<EntityId, Dictionary>,
    pub contracts: BTreeMap<String, SyncContract>,
}

fn corrupt(seq: Seq, reason: impl Into<String>) -> Error {
    Error::CorruptLog { seq, reason: reason.into() }
}

impl State {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Envelope>) -> Result<State> {
        let mut st = State::default();
        for env in events {
            st.apply(env)?;
        }
        Ok(st)
    }

    /// Hex sha256 over the canonical JSON form. All maps are ordered, so
    /// equal states give equal digests.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Current reliability of a datum: open warnings win, then an open
    /// proposal, then whatever the last commit recorded.
    pub fn reliability(&self, d: &DatumRef) -> Reliability {
        if self.open_warnings.get(d).is_some_and(|w| !w.is_empty()) {
            return Reliability::Contested;
        }
        if self.open_proposals.contains_key(d) {
            return Reliability::Proposed;
        }
        self.graph
            .datum(d)
            .map(|r| r.current().reliability)
            .unwrap_or(Reliability::Unverified)
    }

    fn push(&mut self, env: &Envelope, d: &DatumRef, value: crate::value::Value, version: u64, reliability: Reliability, by: CommitSource) {
        self.graph.push_version(GoldenRecord {
            datum: d.clone(),
            value,
            version,
            reliability,
            committed_by: by,
            committed_at: env.seq,
            wall_ms: env.at,
        });
    }

    fn next_version(&self, d: &DatumRef) -> u64 {
        self.graph.datum(d).map_or(1, |r| r.current().version + 1)
    }

    fn clear_warnings(&mut self, d: &DatumRef, by: Seq) {
        if let Some(open) = self.open_warnings.remove(d) {
            for w in open {
                if let Some(w) = self.warnings.get_mut(&w) {
                    w.resolved_by = Some(by);
                }
            }
        }
    }

    fn set_status(&mut self, id: Seq, status: ProposalStatus, at: Seq) {
        if let Some(p) = self.proposals.get_mut(&id) {
            p.status = status;
            p.updated_at = at;
            if status.is_terminal() && self.open_proposals.get(&p.datum) == Some(&id) {
                self.open_proposals.remove(&p.datum);
            }
        }
    }

    /// Applies one event. Events are validated before they are committed,
    /// so a failure here means the log itself is inconsistent.
    pub fn apply(&mut self, env: &Envelope) -> Result<()> {
        let seq = env.seq;
        if seq != self.seq + 1 {
            return Err(corrupt(seq, format!("expected seq {}", self.seq + 1)));
        }
        match &env.event {
            Event::EntityCreated { id, kind, attrs } => {
                if self.graph.entity(id).is_some() {
                    return Err(corrupt(seq, format!("duplicate entity {id}")));
                }
                self.graph.insert_entity(Entity {
                    id: id.clone(),
                    kind: *kind,
                    attrs: attrs.keys().cloned().collect(),
                });
                for (a, v) in attrs {
                    let d = DatumRef::Attr { entity: id.clone(), attr: a.clone() };
                    self.push(env, &d, v.clone(), 1, Reliability::Unverified, CommitSource::Creation);
                }
            }
            Event::Connected { parent, child, attrs, relevant } => {
                let edge = EdgeKey::new(parent.clone(), child.clone());
                if self.graph.connection(&edge).is_some() {
                    return Err(corrupt(seq, format!("duplicate edge {edge}")));
                }
                self.graph.insert_connection(Connection {
                    edge: edge.clone(),
                    attrs: attrs.keys().cloned().collect(),
                    relevant: *relevant,
                });
                for (a, v) in attrs {
                    let d = DatumRef::Conn { edge: edge.clone(), attr: a.clone() };
                    self.push(env, &d, v.clone(), 1, Reliability::Unverified, CommitSource::Creation);
                }
            }
            Event::ChannelConfigured { entity, config } => {
                self.channels.insert(entity.clone(), config.clone());
            }
            Event::ArbitersDesignated { designations } => {
                self.arbiters.extend(designations.iter().map(|(d, c)| (d.clone(), c.clone())));
            }
            Event::AdjustmentApplied(a) => {
                self.adjustments.insert(seq, a.clone());
            }
            Event::Delegated(g) => {
                self.delegations.insert(seq, g.clone());
            }
            Event::Warned { datum, note } => {
                self.warnings.insert(
                    seq,
                    Warning { id: seq, datum: datum.clone(), note: note.clone(), at: seq, resolved_by: None },
                );
                self.open_warnings.entry(datum.clone()).or_default().insert(seq);
            }
            Event::Proposed(b) => {
                let status = if b.forward.is_some() { ProposalStatus::Open } else { ProposalStatus::UnderReview };
                self.interventions.insert(
                    seq,
                    Intervention {
                        seq,
                        at: env.at,
                        datum: b.datum.clone(),
                        author: b.author.clone(),
                        channel: b.channel.clone(),
                        rationale: b.rationale.clone(),
                        payload: Payload::Proposal {
                            value: b.value.clone(),
                            evaluators: b.evaluators.clone(),
                            repeat_of: b.repeat_of,
                            forward: b.forward.clone(),
                            origin: b.origin.clone(),
                        },
                    },
                );
                self.proposals.insert(
                    seq,
                    ProposalRecord {
                        id: seq,
                        datum: b.datum.clone(),
                        value: b.value.clone(),
                        author: b.author.clone(),
                        channel: b.channel.clone(),
                        rationale: b.rationale.clone(),
                        status,
                        evaluators: b.evaluators.clone(),
                        opinions: BTreeMap::new(),
                        arbitration: None,
                        repeat_of: b.repeat_of,
                        forward: b.forward.clone(),
                        origin: b.origin.clone(),
                        updated_at: seq,
                    },
                );
                self.open_proposals.insert(b.datum.clone(), seq);
            }
            Event::Opined { author, channel, proposal, verdict, rationale } => {
                let p = self
                    .proposals
                    .get_mut(proposal)
                    .ok_or_else(|| corrupt(seq, format!("opinion on unknown proposal {proposal}")))?;
                p.opinions.insert(author.to_string(), seq);
                p.updated_at = seq;
                let datum = p.datum.clone();
                self.interventions.insert(
                    seq,
                    Intervention {
                        seq,
                        at: env.at,
                        datum,
                        author: author.clone(),
                        channel: channel.clone(),
                        rationale: rationale.clone(),
                        payload: Payload::Opinion { proposal: *proposal, verdict: *verdict },
                    },
                );
            }
            Event::Arbitrated { author, channel, proposal, decision, rationale, derived } => {
                let p = self
                    .proposals
                    .get(proposal)
                    .ok_or_else(|| corrupt(seq, format!("arbitration on unknown proposal {proposal}")))?;
                let (datum, value) = (p.datum.clone(), p.value.clone());
                let status = match decision {
                    Decision::Accept => ProposalStatus::Accepted,
                    Decision::Reject => ProposalStatus::Rejected,
                };
                self.set_status(*proposal, status, seq);
                if let Some(p) = self.proposals.get_mut(proposal) {
                    p.arbitration = Some(seq);
                }
                self.clear_warnings(&datum, seq);
                let mut committed = None;
                if *decision == Decision::Accept {
                    let v = self.next_version(&datum);
                    self.push(env, &datum, value, v, Reliability::Golden, CommitSource::Arbitration { intervention: seq });
                    committed = Some(v);
                    for dc in derived {
                        let v = self.next_version(&dc.datum);
                        let by = CommitSource::Rule { rule: dc.rule.clone(), seed: seq };
                        self.push(env, &dc.datum, dc.value.clone(), v, Reliability::Golden, by);
                    }
                }
                self.interventions.insert(
                    seq,
                    Intervention {
                        seq,
                        at: env.at,
                        datum,
                        author: author.clone(),
                        channel: channel.clone(),
                        rationale: rationale.clone(),
                        payload: Payload::Arbitration {
                            proposal: *proposal,
                            decision: *decision,
                            committed_version: committed,
                            derived: derived.clone(),
                        },
                    },
                );
            }
            Event::RuleRegistered(r) => {
                self.rules.insert(r.id.clone(), r.clone());
            }
            Event::SourceRegistered(dict) => {
                self.sources.insert(dict.source.clone(), dict.clone());
            }
            Event::ContractEstablished(c) => {
                self.contracts.insert(c.id.clone(), c.clone());
            }
            Event::ProposalForwarded { proposal, remote_id } => {
                let p = self
                    .proposals
                    .get_mut(proposal)
                    .ok_or_else(|| corrupt(seq, format!("forward of unknown proposal {proposal}")))?;
                if let Some(f) = p.forward.as_mut() {
                    f.remote_id = Some(*remote_id);
                }
                p.status = ProposalStatus::UnderReview;
                p.updated_at = seq;
            }
            Event::ChangesetApplied {
                contract,
                origin,
                entries,
                superseded,
                proposal_updates,
                inbound_through,
                ..
            } => {
                for (id, status) in proposal_updates {
                    self.set_status(*id, *status, seq);
                }
                for e in entries {
                    let by = CommitSource::Federation {
                        contract: contract.clone(),
                        origin: origin.clone(),
                        owner_version: e.version,
                    };
                    self.clear_warnings(&e.datum, seq);
                    self.push(env, &e.datum, e.value.clone(), e.version, e.reliability, by);
                }
                for id in superseded {
                    self.set_status(*id, ProposalStatus::Superseded, seq);
                }
                if let (Some(through), Some(c)) = (inbound_through, self.contracts.get_mut(contract)) {
                    c.inbound_through = *through;
                }
            }
            Event::Checkpoint { .. } => {}
        }
        self.seq = seq;
        Ok(())
    }

    /// Principal behind an author, if it resolves locally.
    pub fn resolve_author(&self, a: &Author) -> Option<&Entity> {
        a.local().and_then(|id| self.graph.entity(id))
    }
}
