//! Prioritized rights, control-channel configuration, grants, censorships
//! and delegations.
//!
//! Resolution order for a principal on a datum: the best role level over
//! every concerned channel the principal belongs to, then active grants
//! (raise), then active censors (cap), then delegations (raise).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::event::Event;
use crate::graph::{EntityKind, Reliability};
use crate::hub::Hub;
use crate::ids::{EntityId, Seq};
use crate::state::State;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Right {
    Read,
    Warn,
    Propose,
    Evaluate,
    Arbitrate,
}

impl Right {
    pub const ALL: [Right; 5] = [Right::Read, Right::Warn, Right::Propose, Right::Evaluate, Right::Arbitrate];
}

impl fmt::Display for Right {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Right {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Right::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown right `{s}`")))
    }
}

/// Role token assumed when a membership connection carries no `role` attribute.
pub const DEFAULT_ROLE: &str = "member";
/// Connection attribute holding a member's role token.
pub const ROLE_ATTR: &str = "role";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub role_map: BTreeMap<String, Right>,
    /// Members whose role maps at or above this level are asked for opinions.
    pub mobilized_level: Right,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { role_map: BTreeMap::new(), mobilized_level: Right::Evaluate }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentKind {
    Grant,
    Censor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentTarget {
    Principal(EntityId),
    /// Members of a channel, optionally only those holding `role`.
    Channel { entity: EntityId, role: Option<String> },
}

impl AdjustmentTarget {
    fn entity(&self) -> &EntityId {
        match self {
            AdjustmentTarget::Principal(p) => p,
            AdjustmentTarget::Channel { entity, .. } => entity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumScope {
    /// Everything: for a channel target, the channel's current scope.
    All,
    Datums(BTreeSet<DatumRef>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RightAdjustment {
    pub kind: AdjustmentKind,
    pub issuer: EntityId,
    pub target: AdjustmentTarget,
    pub scope: DatumScope,
    /// Raise-to level for grants, cap-at level for censors.
    pub level: Right,
    /// Active while the log's last seq is below this horizon.
    #[serde(default)]
    pub expiry: Option<Seq>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delegation {
    pub from: EntityId,
    pub to: EntityId,
    pub level: Right,
    pub scope: BTreeSet<DatumRef>,
    #[serde(default)]
    pub expiry: Option<Seq>,
}

/// One row of a principal's monitoring view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveRight {
    pub datum: DatumRef,
    pub right: Option<Right>,
    pub reliability: Reliability,
    pub value: Value,
    pub version: u64,
}

fn active(expiry: Option<Seq>, now: Seq) -> bool {
    expiry.is_none_or(|e| e > now)
}

impl State {
    pub fn channel_config(&self, e: &EntityId) -> ChannelConfig {
        self.channels.get(e).cloned().unwrap_or_default()
    }

    /// Role token of `p` in the channel of `channel`, if `p` is a member.
    pub fn role_of(&self, channel: &EntityId, p: &EntityId) -> Option<String> {
        if !self.graph.is_member(p, channel) {
            return None;
        }
        let conn = self.graph.link(p, channel)?;
        let datum = DatumRef::Conn { edge: conn.edge.clone(), attr: ROLE_ATTR.to_string() };
        match self.graph.value(&datum) {
            Some(Value::Text(s)) | Some(Value::Enum(s)) => Some(s.clone()),
            _ => Some(DEFAULT_ROLE.to_string()),
        }
    }

    /// Level conferred by the member's role; unmapped roles read only.
    pub fn role_level(&self, channel: &EntityId, p: &EntityId) -> Option<Right> {
        let role = self.role_of(channel, p)?;
        Some(
            self.channels
                .get(channel)
                .and_then(|c| c.role_map.get(&role).copied())
                .unwrap_or(Right::Read),
        )
    }

    fn require_principal(&self, p: &EntityId) -> Result<EntityKind> {
        match self.graph.entity(p) {
            Some(e) if e.kind.is_principal() => Ok(e.kind),
            _ => Err(Error::UnknownPrincipal(p.to_string())),
        }
    }

    fn adjustment_matches(&self, a: &RightAdjustment, p: &EntityId, d: &DatumRef) -> bool {
        match &a.target {
            AdjustmentTarget::Principal(x) => {
                x == p
                    && match &a.scope {
                        DatumScope::All => true,
                        DatumScope::Datums(s) => s.contains(d),
                    }
            }
            AdjustmentTarget::Channel { entity, role } => {
                let Some(r) = self.role_of(entity, p) else { return false };
                if role.as_ref().is_some_and(|want| *want != r) {
                    return false;
                }
                match &a.scope {
                    DatumScope::All => self.graph.concerned_entities(d).contains(entity),
                    DatumScope::Datums(s) => s.contains(d),
                }
            }
        }
    }

    fn finish(&self, p: &EntityId, d: &DatumRef, base: Option<Right>) -> Option<Right> {
        let now = self.seq;
        let live = self.adjustments.values().filter(|a| active(a.expiry, now));
        let (grants, censors): (Vec<_>, Vec<_>) =
            live.partition(|a| a.kind == AdjustmentKind::Grant);
        let mut level = base;
        for g in grants.iter().filter(|g| self.adjustment_matches(g, p, d)) {
            level = level.max(Some(g.level));
        }
        for c in censors.iter().filter(|c| self.adjustment_matches(c, p, d)) {
            level = level.map(|l| l.min(c.level));
        }
        for del in self.delegations.values() {
            if del.to == *p && active(del.expiry, now) && del.scope.contains(d) {
                level = level.max(Some(del.level));
            }
        }
        level
    }

    /// Resolved right of `p` on `d`; `None` means no rights at all.
    pub fn resolve_rights(&self, p: &EntityId, d: &DatumRef) -> Result<Option<Right>> {
        let kind = self.require_principal(p)?;
        self.graph.require_datum(d)?;
        let mut base = self
            .graph
            .concerned_entities(d)
            .iter()
            .filter_map(|c| self.role_level(c, p))
            .max();
        if kind == EntityKind::ExternalSource
            && self.sources.get(p).is_some_and(|dict| dict.covers(d, &self.graph))
        {
            base = base.max(Some(Right::Propose));
        }
        Ok(self.finish(p, d, base))
    }

    /// Resolution with the base taken from one channel only.
    pub fn resolve_in(&self, p: &EntityId, d: &DatumRef, channel: &EntityId) -> Option<Right> {
        let base = if self.graph.concerned_entities(d).contains(channel) {
            self.role_level(channel, p)
        } else {
            None
        };
        self.finish(p, d, base)
    }

    /// Channel that committed arbitration falls to when none is designated:
    /// the entity itself for specific attributes, the parent for connections.
    pub fn default_arbiter(d: &DatumRef) -> EntityId {
        match d {
            DatumRef::Attr { entity, .. } => entity.clone(),
            DatumRef::Conn { edge, .. } => edge.parent.clone(),
        }
    }

    pub fn arbiter_channel(&self, d: &DatumRef) -> Result<EntityId> {
        self.graph.require_datum(d)?;
        let concerned = self.graph.concerned_entities(d);
        if concerned.is_empty() {
            return Err(Error::NoArbiter(d.clone()));
        }
        let chosen = self.arbiters.get(d).cloned().unwrap_or_else(|| Self::default_arbiter(d));
        if !concerned.contains(&chosen) {
            return Err(Error::NoArbiter(d.clone()));
        }
        Ok(chosen)
    }

    pub fn can_arbitrate(&self, p: &EntityId, d: &DatumRef) -> bool {
        match self.arbiter_channel(d) {
            Ok(ch) => self.resolve_in(p, d, &ch) == Some(Right::Arbitrate),
            Err(_) => false,
        }
    }

    /// Level a channel holds on a datum: arbitration for its arbiter,
    /// evaluation for every other concerned channel.
    pub fn channel_standing(&self, channel: &EntityId, d: &DatumRef) -> Option<Right> {
        if self.arbiter_channel(d).ok().as_ref() == Some(channel) {
            Some(Right::Arbitrate)
        } else if self.graph.concerned_entities(d).contains(channel) {
            Some(Right::Evaluate)
        } else {
            None
        }
    }

    /// Hierarchical data describing an entity's channel: attributes of the
    /// connections from its parents.
    pub fn describing_data(&self, e: &EntityId) -> BTreeSet<DatumRef> {
        self.graph
            .parents(e)
            .iter()
            .flat_map(|p| self.graph.edge_datums(&EdgeKey::new(p.clone(), e.clone())).collect::<Vec<_>>())
            .collect()
    }

    /// The principal's field of action (plus datums reached through sources,
    /// grants and delegations) annotated with resolved levels.
    pub fn effective_rights(&self, p: &EntityId) -> Result<Vec<EffectiveRight>> {
        let kind = self.require_principal(p)?;
        let mut datums = if kind == EntityKind::Individual {
            self.graph.field_of_action(p)?
        } else {
            BTreeSet::new()
        };
        if let Some(dict) = self.sources.get(p) {
            datums.extend(self.graph.datums().map(|(d, _)| d).filter(|d| dict.covers(d, &self.graph)).cloned());
        }
        for del in self.delegations.values().filter(|d| d.to == *p) {
            datums.extend(del.scope.iter().cloned());
        }
        for a in self.adjustments.values() {
            if let (AdjustmentTarget::Principal(x), DatumScope::Datums(s)) = (&a.target, &a.scope) {
                if x == p {
                    datums.extend(s.iter().cloned());
                }
            }
        }
        datums
            .into_iter()
            .filter(|d| self.graph.datum(d).is_some())
            .map(|d| {
                let cur = self.graph.require_datum(&d)?.current();
                Ok(EffectiveRight {
                    right: self.resolve_rights(p, &d)?,
                    reliability: self.reliability(&d),
                    value: cur.value.clone(),
                    version: cur.version,
                    datum: d,
                })
            })
            .collect()
    }
}

impl Hub {
    pub fn configure_channel(&mut self, entity: &EntityId, config: ChannelConfig) -> Result<Seq> {
        self.state.graph.require_entity(entity)?;
        if config.mobilized_level < Right::Evaluate {
            return Err(Error::InsufficientRights(
                "mobilized level must be Evaluate or Arbitrate".into(),
            ));
        }
        self.commit(Event::ChannelConfigured { entity: entity.clone(), config })
    }

    /// Marks channels as arbiters for datums. The whole configuration is
    /// rejected if any datum would end up with two designated arbiters.
    pub fn designate_arbiters(&mut self, designations: &[(EntityId, DatumRef)]) -> Result<Seq> {
        let mut planned: BTreeMap<DatumRef, EntityId> = BTreeMap::new();
        for (channel, d) in designations {
            self.state.graph.require_entity(channel)?;
            self.state.graph.require_datum(d)?;
            if !self.state.graph.concerned_entities(d).contains(channel) {
                return Err(Error::NotConcerned { channel: channel.clone(), datum: d.clone() });
            }
            if let Some(prev) = planned.insert(d.clone(), channel.clone()) {
                if prev != *channel {
                    return Err(Error::MultipleArbiters(d.clone()));
                }
            }
            if let Some(existing) = self.state.arbiters.get(d) {
                if existing != channel {
                    return Err(Error::MultipleArbiters(d.clone()));
                }
            }
        }
        self.commit(Event::ArbitersDesignated { designations: planned })
    }

    pub fn apply_adjustment(&mut self, a: RightAdjustment) -> Result<Seq> {
        let st = &self.state;
        st.graph.require_entity(&a.issuer)?;
        match &a.target {
            AdjustmentTarget::Principal(p) => {
                st.require_principal(p)?;
            }
            AdjustmentTarget::Channel { entity, .. } => {
                st.graph.require_entity(entity)?;
            }
        }
        if let DatumScope::Datums(s) = &a.scope {
            for d in s {
                st.graph.require_datum(d)?;
                if let AdjustmentTarget::Channel { entity, .. } = &a.target {
                    if !st.graph.concerned_entities(d).contains(entity) {
                        return Err(Error::NotConcerned { channel: entity.clone(), datum: d.clone() });
                    }
                }
            }
        }
        if let Some(expiry) = a.expiry {
            if expiry <= st.seq {
                return Err(Error::ExpiredOnArrival { expiry, current: st.seq });
            }
        }
        let target = a.target.entity();
        if a.kind == AdjustmentKind::Grant && *target == a.issuer {
            return Err(Error::InsufficientAuthority(format!(
                "channel `{}` cannot grant to itself",
                a.issuer
            )));
        }
        let describing = st.describing_data(target);
        let authorized = describing
            .iter()
            .any(|d| st.channel_standing(&a.issuer, d) >= Some(Right::Propose));
        if !authorized {
            return Err(Error::InsufficientAuthority(format!(
                "channel `{}` holds no rights on the hierarchical data describing `{}`",
                a.issuer, target
            )));
        }
        self.commit(Event::AdjustmentApplied(a))
    }

    pub fn delegate(&mut self, g: Delegation) -> Result<Seq> {
        let st = &self.state;
        let from = st.graph.require_entity(&g.from)?;
        if from.kind != EntityKind::Individual {
            return Err(Error::NotAnIndividual(g.from.clone()));
        }
        let to_kind = st.require_principal(&g.to)?;
        if g.level == Right::Arbitrate && to_kind == EntityKind::ExternalSource {
            return Err(Error::ArbitrateToSource);
        }
        if g.scope.is_empty() {
            return Err(Error::Parse("delegation scope is empty".into()));
        }
        if let Some(expiry) = g.expiry {
            if expiry <= st.seq {
                return Err(Error::ExpiredOnArrival { expiry, current: st.seq });
            }
        }
        for d in &g.scope {
            let held = st.resolve_rights(&g.from, d)?;
            let ok = if g.level == Right::Arbitrate {
                st.can_arbitrate(&g.from, d)
            } else {
                held >= Some(g.level)
            };
            if !ok {
                return Err(Error::ExceedsDelegator(d.clone()));
            }
        }
        self.commit(Event::Delegated(g))
    }
}
