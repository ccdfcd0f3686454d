//! Contract-scoped replication between hub instances with per-datum owners.
//!
//! Only the owner commits new versions of a datum; replicas take the
//! owner's version number as their own, so "newer" is a plain integer
//! comparison and applying a changeset is idempotent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::ProposalStatus;
use crate::datum::{DatumPattern, DatumRef};
use crate::error::{Error, Result};
use crate::event::{Event, ProposedBody};
use crate::graph::{CommitSource, Reliability};
use crate::hub::Hub;
use crate::ids::{Author, EntityId, InstanceId, Seq};
use crate::state::State;
use crate::value::Value;

pub const WIRE_MAGIC: &str = "REFHUB-CHANGESET";
pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipRule {
    pub pattern: DatumPattern,
    pub owner: InstanceId,
}

/// Contract as declared in a contract file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub id: String,
    pub peer: InstanceId,
    #[serde(default)]
    pub peer_address: Option<String>,
    pub scope: Vec<DatumPattern>,
    pub ownership: Vec<OwnershipRule>,
}

impl ContractSpec {
    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncContract {
    pub id: String,
    pub local: InstanceId,
    pub peer: InstanceId,
    pub peer_address: Option<String>,
    pub scope: Vec<DatumPattern>,
    pub ownership: Vec<OwnershipRule>,
    /// Peer seq through which we hold every owner commit.
    pub inbound_through: Seq,
}

impl SyncContract {
    pub fn in_scope(&self, d: &DatumRef) -> bool {
        self.scope.iter().any(|p| p.matches(d))
    }

    /// Owner of an in-scope datum. Validation guarantees every matching rule agrees.
    pub fn owner_of(&self, d: &DatumRef) -> Option<&InstanceId> {
        if !self.in_scope(d) {
            return None;
        }
        self.ownership.iter().find(|r| r.pattern.matches(d)).map(|r| &r.owner)
    }

    pub fn owned_locally(&self, d: &DatumRef) -> bool {
        self.owner_of(d) == Some(&self.local)
    }
}

/// Local proposal waiting for (or tracking) its copy at the owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardLink {
    pub contract: String,
    pub remote_id: Option<Seq>,
}

/// Marks a proposal that was forwarded to us.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOrigin {
    pub contract: String,
    pub instance: InstanceId,
    pub proposal: Seq,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub datum: DatumRef,
    pub value: Value,
    /// Owner version.
    pub version: u64,
    pub reliability: Reliability,
    /// Owner seq of the committing event.
    pub seq: Seq,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalUpdate {
    /// Proposal id at the instance that forwarded it.
    pub origin_proposal: Seq,
    /// Proposal id at the owner.
    pub remote_id: Seq,
    pub status: ProposalStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub contract: String,
    pub origin: InstanceId,
    pub since: Seq,
    pub high_water: Seq,
    /// Ordered by owner seq, then datum.
    pub entries: Vec<ChangeEntry>,
    pub proposal_updates: Vec<ProposalUpdate>,
}

impl ChangeSet {
    /// `REFHUB-CHANGESET/1 <len>\n<json>`.
    pub fn encode(&self) -> String {
        let body = serde_json::to_string(self).expect("changeset serializes");
        format!("{WIRE_MAGIC}/{WIRE_VERSION} {}\n{body}", body.len())
    }

    pub fn decode(wire: &str) -> Result<Self> {
        let (header, body) = wire.split_once('\n').ok_or_else(|| Error::Wire("missing header line".into()))?;
        let (tag, len) = header.split_once(' ').ok_or_else(|| Error::Wire("malformed header".into()))?;
        let version = tag
            .strip_prefix(WIRE_MAGIC)
            .and_then(|v| v.strip_prefix('/'))
            .ok_or_else(|| Error::Wire(format!("unknown message type `{tag}`")))?;
        if version != WIRE_VERSION.to_string() {
            return Err(Error::Wire(format!("unsupported version {version}")));
        }
        let len: usize = len.trim().parse().map_err(|_| Error::Wire("bad length".into()))?;
        if body.len() != len {
            return Err(Error::Wire(format!("length {} does not match header {len}", body.len())));
        }
        serde_json::from_str(body).map_err(|e| Error::Wire(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub applied: usize,
    pub skipped: usize,
    pub superseded: usize,
    pub proposal_updates: usize,
    /// Seq of the recorded event; `None` when nothing changed.
    pub event: Option<Seq>,
}

/// A proposal re-authored for the owning instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRequest {
    pub contract: String,
    pub origin: InstanceId,
    pub origin_proposal: Seq,
    pub author: EntityId,
    pub datum: DatumRef,
    pub value: Value,
    pub rationale: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub forwarded: Vec<(Seq, Seq)>,
    /// Proposals still parked, with the reason.
    pub parked: Vec<(Seq, String)>,
    pub apply: ApplyReport,
}

/// The other side of a contract, as seen from one instance.
pub trait Peer {
    fn instance_id(&self) -> Result<InstanceId>;
    fn datum_index(&self) -> Result<BTreeSet<DatumRef>>;
    fn changeset(&self, contract: &str, since: Seq) -> Result<ChangeSet>;
    fn forward(&mut self, req: &ForwardRequest) -> Result<Seq>;
}

impl State {
    pub fn contract(&self, id: &str) -> Result<&SyncContract> {
        self.contracts.get(id).ok_or_else(|| Error::UnknownContract(id.to_string()))
    }

    /// The contract under which a peer owns `d`, if any.
    pub fn peer_owner(&self, d: &DatumRef) -> Option<&SyncContract> {
        self.contracts.values().find(|c| c.owner_of(d) == Some(&c.peer))
    }

    pub fn emit_changeset(&self, contract: &str, since: Seq) -> Result<ChangeSet> {
        let c = self.contract(contract)?;
        let mut entries = Vec::new();
        for (d, rec) in self.graph.datums() {
            if !c.owned_locally(d) {
                continue;
            }
            for v in rec.versions.iter().filter(|v| v.committed_at > since) {
                let summary = match &v.committed_by {
                    CommitSource::Creation => "creation".to_string(),
                    CommitSource::Arbitration { intervention } => {
                        let who = self.interventions.get(intervention).map(|i| i.author.to_string());
                        format!("arbitration {intervention} by {}", who.unwrap_or_default())
                    }
                    CommitSource::Rule { rule, seed } => format!("rule {rule} after arbitration {seed}"),
                    CommitSource::Federation { origin, owner_version, .. } => {
                        format!("relayed from {origin} v{owner_version}")
                    }
                };
                entries.push(ChangeEntry {
                    datum: d.clone(),
                    value: v.value.clone(),
                    version: v.version,
                    reliability: v.reliability,
                    seq: v.committed_at,
                    summary,
                });
            }
        }
        entries.sort_by(|a, b| (a.seq, &a.datum).cmp(&(b.seq, &b.datum)));
        let proposal_updates = self
            .proposals
            .values()
            .filter_map(|p| {
                let o = p.origin.as_ref()?;
                (o.contract == contract && p.updated_at > since).then_some(ProposalUpdate {
                    origin_proposal: o.proposal,
                    remote_id: p.id,
                    status: p.status,
                })
            })
            .collect();
        // the watermark is the last seq that touched this contract, not our
        // own seq: otherwise each side's apply event would look new to the
        // other and the two would never go quiet
        let last_relevant = self
            .graph
            .datums()
            .filter(|(d, _)| c.owned_locally(d))
            .flat_map(|(_, r)| r.versions.iter().map(|v| v.committed_at))
            .chain(
                self.proposals
                    .values()
                    .filter(|p| p.origin.as_ref().is_some_and(|o| o.contract == contract))
                    .map(|p| p.updated_at),
            )
            .max()
            .unwrap_or(0);
        Ok(ChangeSet {
            contract: contract.to_string(),
            origin: c.local.clone(),
            since,
            high_water: last_relevant.max(since.min(self.seq)),
            entries,
            proposal_updates,
        })
    }

    /// Order-independent sha256 over (datum, value, version) of the shared scope.
    pub fn scope_digest(&self, contract: &str) -> Result<String> {
        let c = self.contract(contract)?;
        let mut lines: Vec<String> = self
            .graph
            .datums()
            .filter(|(d, _)| c.in_scope(d))
            .map(|(d, r)| {
                let cur = r.current();
                let v = serde_json::to_string(&cur.value).expect("value serializes");
                format!("{d}\t{v}\t{}", cur.version)
            })
            .collect();
        lines.sort();
        let mut h = Sha256::new();
        for l in lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Parked local proposals waiting to reach the owner.
    pub fn parked_forwards(&self, contract: &str) -> Result<Vec<ForwardRequest>> {
        let c = self.contract(contract)?;
        Ok(self
            .proposals
            .values()
            .filter(|p| {
                p.status == ProposalStatus::Open
                    && p.forward.as_ref().is_some_and(|f| f.contract == contract && f.remote_id.is_none())
            })
            .filter_map(|p| {
                Some(ForwardRequest {
                    contract: contract.to_string(),
                    origin: c.local.clone(),
                    origin_proposal: p.id,
                    author: p.author.local()?.clone(),
                    datum: p.datum.clone(),
                    value: p.value.clone(),
                    rationale: p.rationale.clone(),
                })
            })
            .collect())
    }
}

impl Hub {
    /// Activates a contract. `peer_index` is the peer's datum list; when
    /// given, every scope pattern must resolve there too.
    pub fn establish_contract(&mut self, spec: ContractSpec, peer_index: Option<&BTreeSet<DatumRef>>) -> Result<Seq> {
        let local = self.instance().clone();
        let st = &self.state;
        crate::ids::check_attr_name(&spec.id)?;
        if st.contracts.contains_key(&spec.id) {
            return Err(Error::DuplicateId(spec.id));
        }
        if spec.peer == local {
            return Err(Error::WrongPeer(format!("contract peer `{}` is this instance", spec.peer)));
        }
        let locals: Vec<&DatumRef> = st.graph.datums().map(|(d, _)| d).collect();
        for p in &spec.scope {
            if !locals.iter().any(|d| p.matches(d)) {
                return Err(Error::ScopeMismatch(format!("`{p}` matches no datum on {local}")));
            }
            if let Some(idx) = peer_index {
                if !idx.iter().any(|d| p.matches(d)) {
                    return Err(Error::ScopeMismatch(format!("`{p}` matches no datum on {}", spec.peer)));
                }
            }
        }
        for r in &spec.ownership {
            if r.owner != local && r.owner != spec.peer {
                return Err(Error::AmbiguousOwnership(format!("`{}` is not a party to the contract", r.owner)));
            }
        }
        let mut shared: BTreeSet<&DatumRef> = locals.iter().copied().filter(|d| spec.scope.iter().any(|p| p.matches(d))).collect();
        if let Some(idx) = peer_index {
            shared.extend(idx.iter().filter(|d| spec.scope.iter().any(|p| p.matches(d))));
        }
        for d in shared {
            let owners: BTreeSet<&InstanceId> =
                spec.ownership.iter().filter(|r| r.pattern.matches(d)).map(|r| &r.owner).collect();
            match owners.len() {
                1 => {}
                0 => return Err(Error::AmbiguousOwnership(format!("`{d}` has no owner"))),
                _ => return Err(Error::AmbiguousOwnership(format!("`{d}` has more than one owner"))),
            }
        }
        let contract = SyncContract {
            id: spec.id,
            local,
            peer: spec.peer,
            peer_address: spec.peer_address,
            scope: spec.scope,
            ownership: spec.ownership,
            inbound_through: 0,
        };
        self.commit(Event::ContractEstablished(contract))
    }

    pub fn emit_changeset(&self, contract: &str, since: Seq) -> Result<ChangeSet> {
        self.state.emit_changeset(contract, since)
    }

    pub fn scope_digest(&self, contract: &str) -> Result<String> {
        self.state.scope_digest(contract)
    }

    pub fn apply_changeset(&mut self, cs: &ChangeSet) -> Result<ApplyReport> {
        let st = &self.state;
        let c = st.contract(&cs.contract)?;
        if cs.origin != c.peer {
            return Err(Error::WrongPeer(cs.origin.to_string()));
        }
        let mut report = ApplyReport::default();
        let mut versions: BTreeMap<DatumRef, u64> = BTreeMap::new();
        let mut entries = Vec::new();
        for e in &cs.entries {
            if !c.in_scope(&e.datum) {
                return Err(Error::NotInScope(e.datum.clone()));
            }
            if c.owner_of(&e.datum) != Some(&c.peer) {
                return Err(Error::OwnershipViolation(e.datum.clone()));
            }
            let rec = st.graph.require_datum(&e.datum)?;
            let local = *versions.entry(e.datum.clone()).or_insert(rec.current().version);
            if e.version > local {
                let mut e = e.clone();
                e.value = e.value.conform(rec.ty)?;
                versions.insert(e.datum.clone(), e.version);
                entries.push(e);
            } else {
                report.skipped += 1;
            }
        }
        let mut updates = Vec::new();
        for u in &cs.proposal_updates {
            let Some(p) = st.proposals.get(&u.origin_proposal) else { continue };
            let ours = p.forward.as_ref().is_some_and(|f| f.contract == cs.contract);
            if ours && !p.status.is_terminal() && p.status != u.status && u.status != ProposalStatus::Open {
                updates.push((p.id, u.status));
            }
        }
        let touched: BTreeSet<&DatumRef> = entries.iter().map(|e| &e.datum).collect();
        let superseded: Vec<Seq> = st
            .proposals
            .values()
            .filter(|p| {
                p.status == ProposalStatus::Open
                    && touched.contains(&p.datum)
                    && !updates.iter().any(|(id, _)| *id == p.id)
            })
            .map(|p| p.id)
            .collect();
        let inbound =
            (cs.since <= c.inbound_through && cs.high_water > c.inbound_through).then_some(cs.high_water);
        report.applied = entries.len();
        report.superseded = superseded.len();
        report.proposal_updates = updates.len();
        if entries.is_empty() && superseded.is_empty() && updates.is_empty() && inbound.is_none() {
            return Ok(report);
        }
        report.event = Some(self.commit(Event::ChangesetApplied {
            contract: cs.contract.clone(),
            origin: cs.origin.clone(),
            high_water: cs.high_water,
            entries,
            superseded,
            proposal_updates: updates,
            inbound_through: inbound,
        })?);
        Ok(report)
    }

    /// Owner side of forwarding: files the proposal under the remote author.
    /// Retrying the same request returns the proposal already filed.
    pub fn accept_forwarded(&mut self, req: &ForwardRequest) -> Result<Seq> {
        let st = &self.state;
        let c = st.contract(&req.contract)?;
        if req.origin != c.peer {
            return Err(Error::WrongPeer(req.origin.to_string()));
        }
        if !c.in_scope(&req.datum) {
            return Err(Error::NotInScope(req.datum.clone()));
        }
        if !c.owned_locally(&req.datum) {
            return Err(Error::OwnershipViolation(req.datum.clone()));
        }
        let already = st.proposals.values().find(|p| {
            p.origin.as_ref().is_some_and(|o| {
                o.contract == req.contract && o.instance == req.origin && o.proposal == req.origin_proposal
            })
        });
        if let Some(p) = already {
            return Ok(p.id);
        }
        let rec = st.graph.require_datum(&req.datum)?;
        let value = req.value.clone().conform(rec.ty)?;
        if let Some(open) = st.open_proposals.get(&req.datum) {
            return Err(Error::ProposalInFlight(*open));
        }
        let channel = st.arbiter_channel(&req.datum)?;
        let body = ProposedBody {
            author: Author::Remote { instance: req.origin.clone(), principal: req.author.clone() },
            channel,
            datum: req.datum.clone(),
            repeat_of: None,
            evaluators: st.mobilized_evaluators(&req.datum, None),
            value,
            rationale: req.rationale.clone(),
            forward: None,
            origin: Some(ForwardOrigin {
                contract: req.contract.clone(),
                instance: req.origin.clone(),
                proposal: req.origin_proposal,
            }),
        };
        self.commit(Event::Proposed(body))
    }

    /// Records that a parked proposal reached the owner.
    pub fn mark_forwarded(&mut self, proposal: Seq, remote_id: Seq) -> Result<Seq> {
        let p = self.state.proposal(proposal)?;
        match &p.forward {
            Some(f) if f.remote_id.is_none() && p.status == ProposalStatus::Open => {}
            _ => return Err(Error::NotUnderReview(proposal)),
        }
        self.commit(Event::ProposalForwarded { proposal, remote_id })
    }

    /// One exchange with a peer: forward parked proposals, then pull and
    /// apply the peer's changes since our inbound watermark.
    pub fn sync_once(&mut self, contract: &str, peer: &mut dyn Peer) -> Result<SyncReport> {
        let mut report = SyncReport::default();
        for req in self.state.parked_forwards(contract)? {
            match peer.forward(&req) {
                Ok(remote) => {
                    self.mark_forwarded(req.origin_proposal, remote)?;
                    report.forwarded.push((req.origin_proposal, remote));
                }
                Err(e @ Error::PeerUnreachable(_)) => return Err(e),
                Err(e) => report.parked.push((req.origin_proposal, e.to_string())),
            }
        }
        let since = self.state.contract(contract)?.inbound_through;
        let cs = peer.changeset(contract, since)?;
        report.apply = self.apply_changeset(&cs)?;
        Ok(report)
    }
}

impl Peer for Hub {
    fn instance_id(&self) -> Result<InstanceId> {
        Ok(self.instance().clone())
    }

    fn datum_index(&self) -> Result<BTreeSet<DatumRef>> {
        Ok(self.state.graph.datums().map(|(d, _)| d.clone()).collect())
    }

    fn changeset(&self, contract: &str, since: Seq) -> Result<ChangeSet> {
        self.emit_changeset(contract, since)
    }

    fn forward(&mut self, req: &ForwardRequest) -> Result<Seq> {
        self.accept_forwarded(req)
    }
}
