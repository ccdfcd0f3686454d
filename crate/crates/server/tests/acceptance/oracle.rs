//! Random graphs and brute-force reference implementations. Nothing here
//! calls into the hub's derivation code; every answer comes from scanning
//! the generated edge list directly.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use refhub_core::{DatumRef, EntityKind, Hub, InstanceId, Right, Value};

pub type Attrs = BTreeMap<String, Value>;

#[derive(Clone, Debug)]
pub struct GenEntity {
    pub id: String,
    pub kind: EntityKind,
    pub attrs: Attrs,
}

#[derive(Clone, Debug)]
pub struct GenEdge {
    pub parent: String,
    pub child: String,
    pub attrs: Attrs,
    pub relevant: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GenGraph {
    pub ents: Vec<GenEntity>,
    pub edges: Vec<GenEdge>,
}

pub fn random_kind(rng: &mut impl Rng) -> EntityKind {
    *EntityKind::ALL.choose(rng).unwrap()
}

/// Up to `max_ents` entities and `max_edges` edges, no self loops and no
/// pair connected in both directions.
pub fn gen_graph<R: Rng>(
    rng: &mut R,
    max_ents: usize,
    max_edges: usize,
    mut ent_attrs: impl FnMut(&mut R, EntityKind) -> Attrs,
    mut edge_attrs: impl FnMut(&mut R) -> Attrs,
) -> GenGraph {
    let n = rng.gen_range(1..=max_ents);
    let mut g = GenGraph::default();
    for i in 0..n {
        let kind = random_kind(rng);
        let attrs = ent_attrs(rng, kind);
        g.ents.push(GenEntity { id: format!("e{i}"), kind, attrs });
    }
    let want = rng.gen_range(0..=max_edges).min(n * (n - 1) / 2);
    let mut linked = BTreeSet::new();
    let mut tries = 0;
    while g.edges.len() < want && tries < 2000 {
        tries += 1;
        let p = rng.gen_range(0..n);
        let c = rng.gen_range(0..n);
        if p == c || linked.contains(&(p.min(c), p.max(c))) {
            continue;
        }
        linked.insert((p.min(c), p.max(c)));
        let attrs = edge_attrs(rng);
        g.edges.push(GenEdge {
            parent: g.ents[p].id.clone(),
            child: g.ents[c].id.clone(),
            attrs,
            relevant: rng.gen_bool(0.4),
        });
    }
    g
}

pub fn int_attrs(rng: &mut impl Rng, names: &[&str], p: f64) -> Attrs {
    let mut out = Attrs::new();
    for n in names {
        if rng.gen_bool(p) {
            out.insert(n.to_string(), Value::Integer(rng.gen_range(0..100)));
        }
    }
    out
}

impl GenGraph {
    pub fn build(&self, instance: &str) -> Hub {
        let mut hub = Hub::in_memory(InstanceId::new(instance).unwrap());
        self.build_into(&mut hub, self.edges.len());
        hub
    }

    /// Creates every entity and the first `edges` connections.
    pub fn build_into(&self, hub: &mut Hub, edges: usize) {
        for e in &self.ents {
            hub.create_entity(e.kind, &e.id, e.attrs.clone()).unwrap();
        }
        self.connect_range(hub, 0, edges);
    }

    pub fn connect_range(&self, hub: &mut Hub, from: usize, to: usize) {
        for e in &self.edges[from..to] {
            hub.connect(&e.parent.parse().unwrap(), &e.child.parse().unwrap(), e.attrs.clone(), e.relevant)
                .unwrap();
        }
    }

    pub fn view(&self, edges: usize) -> View<'_> {
        View { g: self, m: edges }
    }
}

/// The graph restricted to its first `m` edges.
pub struct View<'a> {
    pub g: &'a GenGraph,
    pub m: usize,
}

impl View<'_> {
    pub fn edges(&self) -> &[GenEdge] {
        &self.g.edges[..self.m]
    }

    pub fn kind(&self, e: &str) -> Option<EntityKind> {
        self.g.ents.iter().find(|x| x.id == e).map(|x| x.kind)
    }

    pub fn ids(&self) -> Vec<String> {
        self.g.ents.iter().map(|e| e.id.clone()).collect()
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&GenEdge> {
        self.edges()
            .iter()
            .find(|e| (e.parent == a && e.child == b) || (e.parent == b && e.child == a))
    }

    pub fn all_datums(&self) -> Vec<DatumRef> {
        let mut out = Vec::new();
        for e in &self.g.ents {
            out.extend(e.attrs.keys().map(|a| DatumRef::attr(&e.id, a)));
        }
        for e in self.edges() {
            out.extend(edge_datums(e));
        }
        out
    }

    pub fn value(&self, d: &DatumRef) -> Option<&Value> {
        match d {
            DatumRef::Attr { entity, attr } => {
                self.g.ents.iter().find(|e| e.id == entity.as_str())?.attrs.get(attr)
            }
            DatumRef::Conn { edge, attr } => self
                .edges()
                .iter()
                .find(|e| e.parent == edge.parent.as_str() && e.child == edge.child.as_str())?
                .attrs
                .get(attr),
        }
    }

    pub fn community(&self, e: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for x in self.edges() {
            let other = if x.parent == e {
                &x.child
            } else if x.child == e {
                &x.parent
            } else {
                continue;
            };
            if self.kind(other) == Some(EntityKind::Individual) {
                out.insert(other.clone());
            }
        }
        out
    }

    pub fn collection(&self, e: &str) -> BTreeSet<DatumRef> {
        let mut out = BTreeSet::new();
        if let Some(ent) = self.g.ents.iter().find(|x| x.id == e) {
            out.extend(ent.attrs.keys().map(|a| DatumRef::attr(e, a)));
        }
        for x in self.edges() {
            if x.child == e || x.parent == e {
                out.extend(edge_datums(x));
            }
        }
        for down in self.edges().iter().filter(|x| x.parent == e) {
            for other in self.edges() {
                if other.child == down.child && other.parent != e && other.relevant {
                    out.extend(edge_datums(other));
                }
            }
        }
        out
    }

    pub fn field_of_action(&self, i: &str) -> Result<BTreeSet<DatumRef>, &'static str> {
        match self.kind(i) {
            None => return Err("unknown"),
            Some(EntityKind::Individual) => {}
            Some(_) => return Err("not an individual"),
        }
        let mut out = BTreeSet::new();
        for x in self.edges() {
            if x.parent == i {
                out.extend(self.collection(&x.child));
            } else if x.child == i {
                out.extend(self.collection(&x.parent));
            }
        }
        Ok(out)
    }

    /// Entities whose collection holds `d`, by scanning every collection.
    pub fn concerned(&self, d: &DatumRef) -> BTreeSet<String> {
        self.g.ents.iter().filter(|e| self.collection(&e.id).contains(d)).map(|e| e.id.clone()).collect()
    }

    pub fn audience(&self, d: &DatumRef) -> BTreeSet<String> {
        self.concerned(d).iter().flat_map(|e| self.community(e)).collect()
    }
}

pub fn edge_datums(e: &GenEdge) -> Vec<DatumRef> {
    e.attrs.keys().map(|a| DatumRef::conn(&e.parent, &e.child, a)).collect()
}

pub fn default_arbiter(d: &DatumRef) -> String {
    match d {
        DatumRef::Attr { entity, .. } => entity.to_string(),
        DatumRef::Conn { edge, .. } => edge.parent.to_string(),
    }
}

pub fn names(set: impl IntoIterator<Item = impl ToString>) -> BTreeSet<String> {
    set.into_iter().map(|x| x.to_string()).collect()
}

/// Hand resolution of rights from recorded configuration, adjustments and
/// delegations.
#[derive(Clone, Debug, Default)]
pub struct RightsOracle {
    pub role_maps: BTreeMap<String, BTreeMap<String, Right>>,
    pub adjustments: Vec<OAdj>,
    pub delegations: Vec<ODel>,
    pub now: u64,
}

#[derive(Clone, Debug)]
pub struct OAdj {
    pub grant: bool,
    /// `(entity, None)` for a principal; `(channel, Some(role filter))` for a channel.
    pub principal: Option<String>,
    pub channel: Option<(String, Option<String>)>,
    pub scope: Option<BTreeSet<DatumRef>>,
    pub level: Right,
    pub expiry: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct ODel {
    pub to: String,
    pub level: Right,
    pub scope: BTreeSet<DatumRef>,
    pub expiry: Option<u64>,
}

fn live(expiry: Option<u64>, now: u64) -> bool {
    match expiry {
        None => true,
        Some(e) => e > now,
    }
}

impl RightsOracle {
    pub fn role_of(&self, v: &View<'_>, channel: &str, p: &str) -> Option<String> {
        if v.kind(p) != Some(EntityKind::Individual) {
            return None;
        }
        let e = v.edge_between(p, channel)?;
        match e.attrs.get("role") {
            Some(Value::Text(s)) | Some(Value::Enum(s)) => Some(s.clone()),
            _ => Some("member".to_string()),
        }
    }

    fn role_level(&self, v: &View<'_>, channel: &str, p: &str) -> Option<Right> {
        let role = self.role_of(v, channel, p)?;
        Some(self.role_maps.get(channel).and_then(|m| m.get(&role)).copied().unwrap_or(Right::Read))
    }

    fn adj_matches(&self, v: &View<'_>, a: &OAdj, p: &str, d: &DatumRef) -> bool {
        let in_scope = |s: &Option<BTreeSet<DatumRef>>| s.as_ref().is_none_or(|s| s.contains(d));
        if let Some(x) = &a.principal {
            return x == p && in_scope(&a.scope);
        }
        let (entity, role) = a.channel.as_ref().unwrap();
        let Some(r) = self.role_of(v, entity, p) else { return false };
        if role.as_ref().is_some_and(|want| *want != r) {
            return false;
        }
        match &a.scope {
            None => v.concerned(d).contains(entity),
            Some(s) => s.contains(d),
        }
    }

    fn finish(&self, v: &View<'_>, p: &str, d: &DatumRef, base: Option<Right>) -> Option<Right> {
        let mut level = base;
        let live_adj: Vec<&OAdj> = self.adjustments.iter().filter(|a| live(a.expiry, self.now)).collect();
        for g in live_adj.iter().filter(|a| a.grant && self.adj_matches(v, a, p, d)) {
            level = level.max(Some(g.level));
        }
        for c in live_adj.iter().filter(|a| !a.grant && self.adj_matches(v, a, p, d)) {
            level = level.map(|l| l.min(c.level));
        }
        for del in &self.delegations {
            if del.to == p && live(del.expiry, self.now) && del.scope.contains(d) {
                level = level.max(Some(del.level));
            }
        }
        level
    }

    /// `None` when `p` is not a principal or `d` does not exist.
    pub fn resolve(&self, v: &View<'_>, p: &str, d: &DatumRef) -> Option<Option<Right>> {
        if !v.kind(p)?.is_principal() || v.value(d).is_none() {
            return None;
        }
        let base = v.concerned(d).iter().filter_map(|c| self.role_level(v, c, p)).max();
        Some(self.finish(v, p, d, base))
    }

    pub fn resolve_in(&self, v: &View<'_>, p: &str, d: &DatumRef, channel: &str) -> Option<Right> {
        let base = if v.concerned(d).contains(channel) { self.role_level(v, channel, p) } else { None };
        self.finish(v, p, d, base)
    }

    /// No designations are made in the rights scenarios, so the default
    /// arbiter always applies.
    pub fn can_arbitrate(&self, v: &View<'_>, p: &str, d: &DatumRef) -> bool {
        let arb = default_arbiter(d);
        v.concerned(d).contains(&arb) && self.resolve_in(v, p, d, &arb) == Some(Right::Arbitrate)
    }
}
