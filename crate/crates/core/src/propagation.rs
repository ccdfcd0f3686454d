//! Derivation rules carried along graph edges after each golden commit.
//!
//! Each round evaluates every rule, in priority order, against every datum
//! changed so far (seed included). Propagation stops at the first round that
//! changes nothing, or fails once |V|+|E| rounds have all produced changes.
//! Because the last round re-checks every changed datum, re-running on the
//! result is a no-op.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datum::{DatumRef, EdgeKey};
use crate::error::{Error, Result};
use crate::event::Event;
use crate::expr::Expression;
use crate::graph::EntityKind;
use crate::hub::Hub;
use crate::ids::{check_attr_name, EntityId, Seq};
use crate::state::State;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ToChildren,
    ToParents,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum Trigger {
    /// A specific attribute on entities of one kind.
    Entity { kind: EntityKind, attr: String },
    /// A connection attribute, optionally narrowed by endpoint kinds.
    Edge {
        #[serde(default)]
        parent: Option<EntityKind>,
        #[serde(default)]
        child: Option<EntityKind>,
        attr: String,
    },
}

impl Trigger {
    fn attr(&self) -> &str {
        match self {
            Trigger::Entity { attr, .. } | Trigger::Edge { attr, .. } => attr,
        }
    }
}

/// Where a derived value lands on each hop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Specific attribute of the neighbor entity.
    Node(String),
    /// Attribute of the connection crossed.
    Edge(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationRule {
    pub id: String,
    pub trigger: Trigger,
    pub direction: Direction,
    pub target: Target,
    pub derive: Expression,
    pub priority: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedChange {
    pub datum: DatumRef,
    pub value: Value,
    pub rule: String,
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default, rename = "rule")]
    rules: Vec<PropagationRule>,
}

/// Parses a TOML rule file: a list of `[[rule]]` tables.
pub fn parse_rules(text: &str) -> Result<Vec<PropagationRule>> {
    let f: RuleFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(f.rules)
}

impl PropagationRule {
    fn matches(&self, st: &State, d: &DatumRef) -> bool {
        if d.attr_name() != self.trigger.attr() {
            return false;
        }
        let kind_is = |e: &EntityId, k: &Option<EntityKind>| k.is_none_or(|k| st.graph.is_kind(e, k));
        match (&self.trigger, d) {
            (Trigger::Entity { kind, .. }, DatumRef::Attr { entity, .. }) => st.graph.is_kind(entity, *kind),
            (Trigger::Edge { parent, child, .. }, DatumRef::Conn { edge, .. }) => {
                kind_is(&edge.parent, parent) && kind_is(&edge.child, child)
            }
            _ => false,
        }
    }

    /// Hops from a triggering datum: (neighbor, connecting edge). An entity
    /// attribute fans out over its children or parents; a connection
    /// attribute reaches the endpoint in the rule's direction.
    fn hops(&self, st: &State, d: &DatumRef) -> Vec<(EntityId, EdgeKey)> {
        match (d, self.direction) {
            (DatumRef::Conn { edge, .. }, Direction::ToChildren) => vec![(edge.child.clone(), edge.clone())],
            (DatumRef::Conn { edge, .. }, Direction::ToParents) => vec![(edge.parent.clone(), edge.clone())],
            (DatumRef::Attr { entity, .. }, Direction::ToChildren) => st
                .graph
                .children(entity)
                .iter()
                .map(|c| (c.clone(), EdgeKey::new(entity.clone(), c.clone())))
                .collect(),
            (DatumRef::Attr { entity, .. }, Direction::ToParents) => st
                .graph
                .parents(entity)
                .iter()
                .map(|p| (p.clone(), EdgeKey::new(p.clone(), entity.clone())))
                .collect(),
        }
    }
}

struct Overlay<'a> {
    st: &'a State,
    values: BTreeMap<DatumRef, Value>,
}

impl Overlay<'_> {
    fn get(&self, d: &DatumRef) -> Option<Value> {
        self.values.get(d).cloned().or_else(|| self.st.graph.value(d).cloned())
    }

    fn env(&self, neighbor: &EntityId, edge: &EdgeKey, trigger: &DatumRef) -> BTreeMap<String, Value> {
        let mut env = BTreeMap::new();
        let g = &self.st.graph;
        for d in g.entity_datums(neighbor).chain(g.edge_datums(edge)) {
            if let Some(v) = self.get(&d) {
                env.insert(d.attr_name().to_string(), v);
            }
        }
        if let Some(v) = self.get(trigger) {
            env.insert(trigger.attr_name().to_string(), v);
        }
        env
    }
}

/// Derived changes caused by committing `value` to `seed`.
pub fn propagate(st: &State, seed: &DatumRef, value: &Value) -> Result<Vec<DerivedChange>> {
    let overlay = [(seed.clone(), value.clone())].into();
    propagate_from(st, overlay, [seed.clone()].into())
}

/// Propagation over `st` with `overlay` values already in place, starting
/// from the `seeds`. Exposed so callers can check fixpoint idempotence.
pub fn propagate_from(
    st: &State,
    overlay: BTreeMap<DatumRef, Value>,
    seeds: BTreeSet<DatumRef>,
) -> Result<Vec<DerivedChange>> {
    let base = overlay.clone();
    let mut ov = Overlay { st, values: overlay };
    let mut rules: Vec<&PropagationRule> = st.rules.values().collect();
    rules.sort_by_key(|r| r.priority);
    let bound = (st.graph.entity_count() + st.graph.edge_count()).max(1);
    let mut changed = seeds;
    // first rule to touch each datum fixes its position; the last one names it
    let mut order: Vec<DatumRef> = Vec::new();
    let mut by_rule: BTreeMap<DatumRef, String> = BTreeMap::new();
    let mut round = 0;
    loop {
        round += 1;
        let mut fresh = BTreeSet::new();
        for rule in &rules {
            for d in &changed {
                if !rule.matches(st, d) {
                    continue;
                }
                for (n, edge) in rule.hops(st, d) {
                    let target = match &rule.target {
                        Target::Node(a) => DatumRef::Attr { entity: n.clone(), attr: a.clone() },
                        Target::Edge(a) => DatumRef::Conn { edge: edge.clone(), attr: a.clone() },
                    };
                    let Some(rec) = st.graph.datum(&target) else { continue };
                    if st.peer_owner(&target).is_some() {
                        continue;
                    }
                    let env = ov.env(&n, &edge, d);
                    let v = rule
                        .derive
                        .eval_value(&env)?
                        .conform(rec.ty)
                        .map_err(|e| Error::DerivationTypeError(format!("rule {}: {e}", rule.id)))?;
                    if ov.get(&target).as_ref() != Some(&v) {
                        if !by_rule.contains_key(&target) {
                            order.push(target.clone());
                        }
                        by_rule.insert(target.clone(), rule.id.clone());
                        ov.values.insert(target.clone(), v);
                        fresh.insert(target);
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        if round >= bound {
            return Err(Error::NonTerminating(bound));
        }
        changed.extend(fresh);
    }
    Ok(order
        .into_iter()
        .filter_map(|d| {
            let v = ov.values.get(&d)?.clone();
            let before = base.get(&d).or_else(|| st.graph.value(&d));
            (before != Some(&v)).then(|| DerivedChange { rule: by_rule[&d].clone(), datum: d, value: v })
        })
        .collect())
}

impl Hub {
    pub fn register_rule(&mut self, rule: PropagationRule) -> Result<Seq> {
        let st = &self.state;
        check_attr_name(&rule.id)?;
        if st.rules.contains_key(&rule.id) {
            return Err(Error::DuplicateId(rule.id.clone()));
        }
        if st.rules.values().any(|r| r.priority == rule.priority) {
            return Err(Error::DuplicatePriority(rule.priority));
        }
        let g = &st.graph;
        let trig = rule.trigger.attr();
        if !g.has_attr_name(trig, matches!(rule.trigger, Trigger::Edge { .. })) {
            return Err(Error::UnknownAttribute(trig.to_string()));
        }
        let (t, on_edge) = match &rule.target {
            Target::Node(a) => (a, false),
            Target::Edge(a) => (a, true),
        };
        if !g.has_attr_name(t, on_edge) {
            return Err(Error::UnknownAttribute(t.clone()));
        }
        for v in rule.derive.variables() {
            if v != trig && !g.has_attr_name(&v, false) && !g.has_attr_name(&v, true) {
                return Err(Error::UnknownAttribute(v));
            }
        }
        self.commit(Event::RuleRegistered(rule))
    }

    /// Registers every rule of a TOML rule file, stopping at the first failure.
    pub fn load_rules(&mut self, text: &str) -> Result<Vec<Seq>> {
        parse_rules(text)?.into_iter().map(|r| self.register_rule(r)).collect()
    }
}
