//! The control workflow: anonymous warnings, proposals, reasoned opinions,
//! arbitration, and the audit trail.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datum::DatumRef;
use crate::error::{Error, Result};
use crate::event::{Event, ProposedBody};
use crate::federation::{ForwardLink, ForwardOrigin};
use crate::graph::{CommitSource, EntityKind};
use crate::hub::Hub;
use crate::ids::{Author, EntityId, Seq};
use crate::propagation::DerivedChange;
use crate::rights::Right;
use crate::state::State;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProposalStatus {
    Open,
    UnderReview,
    Accepted,
    Rejected,
    Superseded,
}

impl ProposalStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ProposalStatus::Accepted | ProposalStatus::Rejected | ProposalStatus::Superseded)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Support,
    Object,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "support" => Ok(Verdict::Support),
            "object" => Ok(Verdict::Object),
            _ => Err(Error::Parse(format!("verdict must be support or object, not `{s}`"))),
        }
    }
}

impl FromStr for Decision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accept" => Ok(Decision::Accept),
            "reject" => Ok(Decision::Reject),
            _ => Err(Error::Parse(format!("decision must be accept or reject, not `{s}`"))),
        }
    }
}

/// A warning has no author field at all; anonymity is structural.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub id: Seq,
    pub datum: DatumRef,
    pub note: String,
    pub at: Seq,
    /// Arbitration or federated commit that resolved it.
    pub resolved_by: Option<Seq>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Proposal {
        value: Value,
        evaluators: BTreeSet<EntityId>,
        repeat_of: Option<Seq>,
        forward: Option<ForwardLink>,
        origin: Option<ForwardOrigin>,
    },
    Opinion {
        proposal: Seq,
        verdict: Verdict,
    },
    Arbitration {
        proposal: Seq,
        decision: Decision,
        /// Golden version created by an accept.
        committed_version: Option<u64>,
        derived: Vec<DerivedChange>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterventionKind {
    Proposal,
    Opinion,
    Arbitration,
}

/// A traceable, attributed act. Interventions are never anonymous.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub seq: Seq,
    pub at: u64,
    pub datum: DatumRef,
    pub author: Author,
    pub channel: EntityId,
    pub rationale: String,
    pub payload: Payload,
}

impl Intervention {
    pub fn kind(&self) -> InterventionKind {
        match self.payload {
            Payload::Proposal { .. } => InterventionKind::Proposal,
            Payload::Opinion { .. } => InterventionKind::Opinion,
            Payload::Arbitration { .. } => InterventionKind::Arbitration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub id: Seq,
    pub datum: DatumRef,
    pub value: Value,
    pub author: Author,
    pub channel: EntityId,
    pub rationale: String,
    pub status: ProposalStatus,
    pub evaluators: BTreeSet<EntityId>,
    /// Author text form to the opinion's seq.
    pub opinions: BTreeMap<String, Seq>,
    pub arbitration: Option<Seq>,
    pub repeat_of: Option<Seq>,
    pub forward: Option<ForwardLink>,
    pub origin: Option<ForwardOrigin>,
    pub updated_at: Seq,
}

/// One line of a datum's audit trail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub seq: Seq,
    pub kind: TrailKind,
    /// Absent for warnings, creation and system commits.
    pub author: Option<String>,
    pub channel: Option<EntityId>,
    pub rationale: Option<String>,
    pub value: Option<Value>,
    /// Golden version this line committed, if any.
    pub version: Option<u64>,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailKind {
    Creation,
    Warning,
    Proposal,
    Opinion,
    Arbitration,
    Derived,
    Federated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Awaiting {
    Opinion,
    Arbitration,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub proposal: Seq,
    pub datum: DatumRef,
    pub value: Value,
    pub author: String,
    pub awaiting: Awaiting,
    pub evaluators: BTreeSet<EntityId>,
    pub opinions: usize,
}

/// Kind-specific part of a raw intervention request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterventionRequest {
    Proposal { value: Value },
    Opinion { proposal: Seq, verdict: Verdict },
    Arbitration { proposal: Seq, decision: Decision },
}

impl State {
    /// Members of concerned channels asked for an opinion: role level at or
    /// above the channel's mobilized level, author excluded.
    pub fn mobilized_evaluators(&self, d: &DatumRef, author: Option<&EntityId>) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for c in self.graph.concerned_entities(d) {
            let floor = self.channel_config(&c).mobilized_level.max(Right::Evaluate);
            let Ok(community) = self.graph.community_of(&c) else { continue };
            for m in community.members {
                if Some(&m) != author && self.resolve_in(&m, d, &c) >= Some(floor) {
                    out.insert(m);
                }
            }
        }
        out
    }

    /// The channel a proposal is filed in: the concerned channel where the
    /// author stands highest, else the arbiter channel.
    fn filing_channel(&self, author: &EntityId, d: &DatumRef) -> Result<EntityId> {
        let best = self
            .graph
            .concerned_entities(d)
            .into_iter()
            .filter_map(|c| self.resolve_in(author, d, &c).map(|r| (r, c)))
            .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
        match best {
            Some((_, c)) => Ok(c),
            None => self.arbiter_channel(d),
        }
    }

    fn last_rejected_with(&self, d: &DatumRef, v: &Value) -> Option<Seq> {
        self.proposals
            .values()
            .rev()
            .find(|p| p.datum == *d && p.status == ProposalStatus::Rejected && p.value == *v)
            .map(|p| p.id)
    }

    pub fn proposal(&self, id: Seq) -> Result<&ProposalRecord> {
        self.proposals.get(&id).ok_or(Error::UnknownProposal(id))
    }

    pub fn audit_trail(&self, d: &DatumRef) -> Result<Vec<TrailEntry>> {
        let rec = self.graph.require_datum(d)?;
        let mut out = Vec::new();
        for v in &rec.versions {
            let (kind, detail) = match &v.committed_by {
                CommitSource::Creation => (TrailKind::Creation, "initial value".to_string()),
                CommitSource::Rule { rule, seed } => {
                    (TrailKind::Derived, format!("rule {rule} after arbitration {seed}"))
                }
                CommitSource::Federation { contract, origin, owner_version } => (
                    TrailKind::Federated,
                    format!("owner {origin} version {owner_version} via contract {contract}"),
                ),
                // shown on the arbitration line itself
                CommitSource::Arbitration { .. } => continue,
            };
            out.push(TrailEntry {
                seq: v.committed_at,
                kind,
                author: None,
                channel: None,
                rationale: None,
                value: Some(v.value.clone()),
                version: Some(v.version),
                detail,
            });
        }
        for w in self.warnings.values().filter(|w| w.datum == *d) {
            out.push(TrailEntry {
                seq: w.id,
                kind: TrailKind::Warning,
                author: None,
                channel: None,
                rationale: Some(w.note.clone()),
                value: None,
                version: None,
                detail: match w.resolved_by {
                    Some(s) => format!("resolved at {s}"),
                    None => "open".into(),
                },
            });
        }
        for i in self.interventions.values().filter(|i| i.datum == *d) {
            let (kind, value, version, detail) = match &i.payload {
                Payload::Proposal { value, repeat_of, forward, origin, .. } => {
                    let mut detail = String::new();
                    if let Some(r) = repeat_of {
                        detail.push_str(&format!("repeats rejected proposal {r}"));
                    }
                    if let Some(f) = forward {
                        detail.push_str(&format!("forwarded under contract {}", f.contract));
                    }
                    if let Some(o) = origin {
                        detail.push_str(&format!("from {} proposal {}", o.instance, o.proposal));
                    }
                    (TrailKind::Proposal, Some(value.clone()), None, detail)
                }
                Payload::Opinion { proposal, verdict } => {
                    (TrailKind::Opinion, None, None, format!("{verdict:?} on proposal {proposal}"))
                }
                Payload::Arbitration { proposal, decision, committed_version, derived } => {
                    let value = match decision {
                        Decision::Accept => self.proposals.get(proposal).map(|p| p.value.clone()),
                        Decision::Reject => None,
                    };
                    let mut detail = format!("{decision:?} proposal {proposal}");
                    if !derived.is_empty() {
                        detail.push_str(&format!(", {} derived", derived.len()));
                    }
                    (TrailKind::Arbitration, value, *committed_version, detail)
                }
            };
            out.push(TrailEntry {
                seq: i.seq,
                kind,
                author: Some(i.author.to_string()),
                channel: Some(i.channel.clone()),
                rationale: Some(i.rationale.clone()),
                value,
                version,
                detail,
            });
        }
        out.sort_by_key(|e| e.seq);
        Ok(out)
    }

    /// Proposals waiting on this principal's opinion or arbitration.
    pub fn review_queue(&self, p: &EntityId) -> Result<Vec<QueueItem>> {
        self.graph.require_entity(p)?;
        let me = Author::Local(p.clone());
        let mut out = Vec::new();
        for pr in self.proposals.values() {
            if pr.status != ProposalStatus::UnderReview || pr.forward.is_some() || pr.author == me {
                continue;
            }
            let awaiting = if self.can_arbitrate(p, &pr.datum) {
                Awaiting::Arbitration
            } else if pr.evaluators.contains(p) && !pr.opinions.contains_key(&me.to_string()) {
                Awaiting::Opinion
            } else {
                continue;
            };
            out.push(QueueItem {
                proposal: pr.id,
                datum: pr.datum.clone(),
                value: pr.value.clone(),
                author: pr.author.to_string(),
                awaiting,
                evaluators: pr.evaluators.clone(),
                opinions: pr.opinions.len(),
            });
        }
        Ok(out)
    }
}

impl Hub {
    /// Records an anonymous warning. The caller is checked for rights and
    /// then forgotten; nothing about it reaches the log.
    pub fn warn(&mut self, caller: &EntityId, d: &DatumRef, note: &str) -> Result<Seq> {
        let right = self.state.resolve_rights(caller, d)?;
        if right < Some(Right::Warn) {
            return Err(Error::InsufficientRights(format!("warning on `{d}` needs Warn")));
        }
        self.commit(Event::Warned { datum: d.clone(), note: note.to_string() })
    }

    pub fn propose(&mut self, author: &EntityId, d: &DatumRef, value: Value, rationale: &str) -> Result<Seq> {
        let st = &self.state;
        let rec = st.graph.require_datum(d)?;
        let right = st.resolve_rights(author, d)?;
        let value = value.conform(rec.ty)?;
        if right < Some(Right::Propose) {
            return Err(Error::InsufficientRights(format!("`{author}` cannot propose on `{d}`")));
        }
        if let Some(open) = st.open_proposals.get(d) {
            return Err(Error::ProposalInFlight(*open));
        }
        let channel = st.filing_channel(author, d)?;
        let forward = st.peer_owner(d).map(|c| ForwardLink { contract: c.id.clone(), remote_id: None });
        let evaluators = if forward.is_some() { BTreeSet::new() } else { st.mobilized_evaluators(d, Some(author)) };
        let body = ProposedBody {
            author: Author::Local(author.clone()),
            channel,
            datum: d.clone(),
            repeat_of: st.last_rejected_with(d, &value),
            value,
            rationale: rationale.to_string(),
            evaluators,
            forward,
            origin: None,
        };
        self.commit(Event::Proposed(body))
    }

    pub fn opine(&mut self, evaluator: &EntityId, proposal: Seq, verdict: Verdict, rationale: &str) -> Result<Seq> {
        let st = &self.state;
        let p = st.proposal(proposal)?;
        if p.forward.is_some() {
            return Err(Error::RemoteControlled(proposal));
        }
        if p.status != ProposalStatus::UnderReview {
            return Err(Error::NotUnderReview(proposal));
        }
        let me = Author::Local(evaluator.clone());
        if p.author == me {
            return Err(Error::SelfReview);
        }
        if st.resolve_rights(evaluator, &p.datum)? < Some(Right::Evaluate) {
            return Err(Error::InsufficientRights(format!("`{evaluator}` cannot evaluate `{}`", p.datum)));
        }
        if p.opinions.contains_key(&me.to_string()) {
            return Err(Error::DuplicateOpinion(evaluator.to_string()));
        }
        if rationale.trim().is_empty() {
            return Err(Error::EmptyRationale);
        }
        let channel = st.filing_channel(evaluator, &p.datum)?;
        self.commit(Event::Opined { author: me, channel, proposal, verdict, rationale: rationale.to_string() })
    }

    pub fn arbitrate(&mut self, arbiter: &EntityId, proposal: Seq, decision: Decision, rationale: &str) -> Result<Seq> {
        let st = &self.state;
        let p = st.proposal(proposal)?;
        if p.forward.is_some() {
            return Err(Error::RemoteControlled(proposal));
        }
        if p.status != ProposalStatus::UnderReview {
            return Err(Error::NotUnderReview(proposal));
        }
        st.graph.require_entity(arbiter)?;
        if !st.can_arbitrate(arbiter, &p.datum) {
            return Err(Error::NotArbiter(arbiter.to_string()));
        }
        let channel = st.arbiter_channel(&p.datum)?;
        let derived = match decision {
            Decision::Accept => crate::propagation::propagate(st, &p.datum, &p.value)?,
            Decision::Reject => Vec::new(),
        };
        self.commit(Event::Arbitrated {
            author: Author::Local(arbiter.clone()),
            channel,
            proposal,
            decision,
            rationale: rationale.to_string(),
            derived,
        })
    }

    /// Appends a proposal, opinion or arbitration after resolving its author
    /// and datum. Every workflow rule of the specific operation still applies.
    pub fn append_intervention(
        &mut self,
        author: &str,
        d: &DatumRef,
        request: InterventionRequest,
        rationale: &str,
    ) -> Result<Seq> {
        let author = EntityId::new(author).map_err(|_| Error::UnknownAuthor(author.to_string()))?;
        match self.state.graph.entity(&author) {
            Some(e) if e.kind.is_principal() => {}
            _ => return Err(Error::UnknownAuthor(author.to_string())),
        }
        self.state.graph.require_datum(d)?;
        let check_datum = |st: &State, id: Seq| -> Result<()> {
            if st.proposal(id)?.datum != *d {
                return Err(Error::Parse(format!("proposal {id} is not about `{d}`")));
            }
            Ok(())
        };
        match request {
            InterventionRequest::Proposal { value } => self.propose(&author, d, value, rationale),
            InterventionRequest::Opinion { proposal, verdict } => {
                check_datum(&self.state, proposal)?;
                self.opine(&author, proposal, verdict, rationale)
            }
            InterventionRequest::Arbitration { proposal, decision } => {
                check_datum(&self.state, proposal)?;
                self.arbitrate(&author, proposal, decision, rationale)
            }
        }
    }

    pub fn audit_trail(&self, d: &DatumRef) -> Result<Vec<TrailEntry>> {
        self.state.audit_trail(d)
    }

    pub fn is_source(&self, p: &EntityId) -> bool {
        self.state.graph.is_kind(p, EntityKind::ExternalSource)
    }
}
