use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refhub_core::rights::{AdjustmentKind, AdjustmentTarget, ChannelConfig, DatumScope, Delegation, RightAdjustment};
use refhub_core::{eid, DatumRef, EntityKind, Error, Hub, Right, State, Value};

use crate::ensure;
use crate::oracle::{gen_graph, GenGraph, OAdj, ODel, RightsOracle, View};
use crate::Outcome;

const CONFIGS: u64 = 60;
const QUERIES: usize = 40;
const ROLES: &[&str] = &["member", "manager", "director", "guest"];

pub fn run() -> Outcome {
    let mut stats = Stats::default();
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7197_0005 ^ seed);
        scenario(&mut rng, &mut stats).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    ensure!(stats.queries >= 1000, "only {} oracle queries", stats.queries);
    ensure!(stats.censor_checks > 0 && stats.grant_checks > 0 && stats.delegations > 0, "scenario too thin: {stats:?}");
    Ok(format!(
        "{} resolve queries equal the hand oracle; {} censors never raised, {} grants never lowered ({} skipped on a lapsing expiry); {} delegations within the delegator, {} refused as exceeding; replay resolves identically",
        stats.queries, stats.censor_checks, stats.grant_checks, stats.skipped, stats.delegations, stats.exceeding
    ))
}

#[derive(Debug, Default)]
struct Stats {
    queries: usize,
    censor_checks: usize,
    grant_checks: usize,
    skipped: usize,
    delegations: usize,
    exceeding: usize,
}

fn gen(rng: &mut ChaCha8Rng) -> GenGraph {
    gen_graph(
        rng,
        12,
        24,
        |r, _| [("x".to_string(), Value::Integer(r.gen_range(0..9)))].into(),
        |r| {
            let mut a: BTreeMap<String, Value> = [("w".to_string(), Value::Integer(r.gen_range(0..9)))].into();
            if r.gen_bool(0.8) {
                a.insert("role".into(), Value::token(ROLES.choose(r).unwrap()));
            }
            a
        },
    )
}

fn all_rights(hub: &Hub, pairs: &[(String, DatumRef)]) -> Vec<Option<Right>> {
    pairs.iter().map(|(p, d)| hub.state().resolve_rights(&eid(p), d).ok().flatten()).collect()
}

fn scenario(rng: &mut ChaCha8Rng, stats: &mut Stats) -> Result<(), String> {
    let g = gen(rng);
    let mut hub = g.build("rights");
    let v = g.view(g.edges.len());
    let ids = v.ids();
    let datums = v.all_datums();
    let principals: Vec<String> = g.ents.iter().filter(|e| e.kind.is_principal()).map(|e| e.id.clone()).collect();
    let mut o = RightsOracle { now: hub.seq(), ..Default::default() };
    for id in &ids {
        if rng.gen_bool(0.7) {
            let mut role_map = BTreeMap::new();
            for r in ROLES {
                if rng.gen_bool(0.7) {
                    role_map.insert(r.to_string(), *Right::ALL.choose(rng).unwrap());
                }
            }
            hub.configure_channel(&eid(id), ChannelConfig { role_map: role_map.clone(), ..Default::default() })
                .map_err(|e| e.to_string())?;
            o.role_maps.insert(id.clone(), role_map);
            o.now += 1;
        }
    }
    let pairs: Vec<(String, DatumRef)> = principals
        .iter()
        .flat_map(|p| datums.iter().map(move |d| (p.clone(), d.clone())))
        .collect();

    for _ in 0..30 {
        ensure!(o.now == hub.seq(), "oracle clock drifted");
        let before = all_rights(&hub, &pairs);
        let lapsing = o.adjustments.iter().map(|a| a.expiry).chain(o.delegations.iter().map(|d| d.expiry)).any(|e| e == Some(o.now + 1));
        if rng.gen_bool(0.6) || principals.is_empty() {
            let Some((adj, oadj)) = random_adjustment(rng, &v, &principals, hub.seq()) else { continue };
            let expect = adjustment_ok(&v, &adj, o.now);
            let grant = adj.kind == AdjustmentKind::Grant;
            match (expect, hub.apply_adjustment(adj.clone())) {
                (true, Ok(_)) => {
                    o.adjustments.push(oadj);
                    o.now += 1;
                    if lapsing {
                        stats.skipped += 1;
                        continue;
                    }
                    let after = all_rights(&hub, &pairs);
                    for (i, (b, a)) in before.iter().zip(&after).enumerate() {
                        if grant {
                            ensure!(a >= b, "grant lowered {:?} from {b:?} to {a:?}", pairs[i]);
                        } else {
                            ensure!(a <= b, "censor raised {:?} from {b:?} to {a:?}", pairs[i]);
                        }
                    }
                    if grant {
                        stats.grant_checks += 1;
                    } else {
                        stats.censor_checks += 1;
                    }
                }
                (false, Err(_)) => {}
                (e, got) => return Err(format!("adjustment {adj:?}: oracle says {e}, hub {got:?}")),
            }
        } else {
            let del = random_delegation(rng, &v, &principals, &datums, hub.seq());
            let (expect, exceeds) = delegation_ok(&o, &v, &del);
            match (expect, hub.delegate(del.clone())) {
                (true, Ok(_)) => {
                    o.delegations.push(ODel { to: del.to.to_string(), level: del.level, scope: del.scope.clone(), expiry: del.expiry });
                    o.now += 1;
                    stats.delegations += 1;
                }
                (false, Err(e)) => {
                    if exceeds {
                        ensure!(matches!(e, Error::ExceedsDelegator(_)), "over-delegation refused with {e}");
                        stats.exceeding += 1;
                    }
                }
                (e, got) => return Err(format!("delegation {del:?}: oracle says {e}, hub {got:?}")),
            }
        }
    }

    let replayed = State::replay(hub.events()).map_err(|e| e.to_string())?;
    for _ in 0..QUERIES {
        let p = if rng.gen_bool(0.9) && !principals.is_empty() { principals.choose(rng).unwrap() } else { ids.choose(rng).unwrap() };
        let d = datums.choose(rng).cloned().unwrap_or_else(|| DatumRef::attr(p, "x"));
        let want = o.resolve(&v, p, &d);
        let got = hub.state().resolve_rights(&eid(p), &d);
        match (&want, &got) {
            (Some(w), Ok(g)) => ensure!(w == g, "resolve({p}, {d}) = {g:?}, oracle {w:?}"),
            (None, Err(_)) => {}
            _ => return Err(format!("resolve({p}, {d}) = {got:?}, oracle {want:?}")),
        }
        let again = hub.state().resolve_rights(&eid(p), &d);
        let from_log = replayed.resolve_rights(&eid(p), &d);
        ensure!(
            format!("{got:?}") == format!("{again:?}") && format!("{got:?}") == format!("{from_log:?}"),
            "resolve({p}, {d}) not deterministic"
        );
        stats.queries += 1;
    }
    Ok(())
}

fn random_adjustment(
    rng: &mut ChaCha8Rng,
    v: &View<'_>,
    principals: &[String],
    now: u64,
) -> Option<(RightAdjustment, OAdj)> {
    let edges = v.edges();
    if edges.is_empty() {
        return None;
    }
    // usually a parent adjusting one of its children, sometimes anyone
    let e = edges.choose(rng).unwrap();
    let target = if rng.gen_bool(0.5) && !principals.is_empty() && rng.gen_bool(0.5) {
        principals.choose(rng).unwrap().clone()
    } else {
        e.child.clone()
    };
    let issuer = if rng.gen_bool(0.85) {
        let parents: Vec<&String> = edges.iter().filter(|x| x.child == target).map(|x| &x.parent).collect();
        parents.choose(rng).map(|p| (*p).clone()).unwrap_or_else(|| e.parent.clone())
    } else {
        v.ids().choose(rng).unwrap().clone()
    };
    let grant = rng.gen_bool(0.5);
    let level = *Right::ALL.choose(rng).unwrap();
    let expiry = match rng.gen_range(0..10) {
        0..=5 => None,
        6 => Some(now),
        _ => Some(now + rng.gen_range(1..8)),
    };
    let all = v.all_datums();
    let scope = if rng.gen_bool(0.4) {
        None
    } else {
        Some((0..rng.gen_range(1..=3)).filter_map(|_| all.choose(rng).cloned()).collect::<BTreeSet<_>>())
    };
    let as_channel = rng.gen_bool(0.4);
    let role = (as_channel && rng.gen_bool(0.5)).then(|| ROLES.choose(rng).unwrap().to_string());
    let adj = RightAdjustment {
        kind: if grant { AdjustmentKind::Grant } else { AdjustmentKind::Censor },
        issuer: eid(&issuer),
        target: if as_channel {
            AdjustmentTarget::Channel { entity: eid(&target), role: role.clone() }
        } else {
            AdjustmentTarget::Principal(eid(&target))
        },
        scope: match &scope {
            None => DatumScope::All,
            Some(s) => DatumScope::Datums(s.clone()),
        },
        level,
        expiry,
    };
    let oadj = OAdj {
        grant,
        principal: (!as_channel).then(|| target.clone()),
        channel: as_channel.then(|| (target.clone(), role)),
        scope,
        level,
        expiry,
    };
    Some((adj, oadj))
}

/// Whether the hub should accept the adjustment, judged from the edge list.
fn adjustment_ok(v: &View<'_>, a: &RightAdjustment, now: u64) -> bool {
    let target = match &a.target {
        AdjustmentTarget::Principal(p) => {
            if !v.kind(p.as_str()).is_some_and(EntityKind::is_principal) {
                return false;
            }
            p.to_string()
        }
        AdjustmentTarget::Channel { entity, .. } => entity.to_string(),
    };
    if let (DatumScope::Datums(s), AdjustmentTarget::Channel { entity, .. }) = (&a.scope, &a.target) {
        if s.iter().any(|d| !v.concerned(d).contains(entity.as_str())) {
            return false;
        }
    }
    if a.expiry.is_some_and(|e| e <= now) {
        return false;
    }
    if a.kind == AdjustmentKind::Grant && target == a.issuer.as_str() {
        return false;
    }
    v.edges()
        .iter()
        .filter(|e| e.child == target)
        .flat_map(|e| e.attrs.keys().map(|k| DatumRef::conn(&e.parent, &e.child, k)))
        .any(|d| v.concerned(&d).contains(a.issuer.as_str()))
}

fn random_delegation(rng: &mut ChaCha8Rng, v: &View<'_>, principals: &[String], datums: &[DatumRef], now: u64) -> Delegation {
    let ids = v.ids();
    let from = if rng.gen_bool(0.9) && !principals.is_empty() { principals.choose(rng).unwrap() } else { ids.choose(rng).unwrap() };
    let to = if principals.is_empty() { ids.choose(rng).unwrap() } else { principals.choose(rng).unwrap() };
    let scope: BTreeSet<DatumRef> = (0..rng.gen_range(0..=2)).filter_map(|_| datums.choose(rng).cloned()).collect();
    Delegation {
        from: eid(from),
        to: eid(to),
        level: *Right::ALL.choose(rng).unwrap(),
        scope,
        expiry: match rng.gen_range(0..10) {
            0..=6 => None,
            7 => Some(now),
            _ => Some(now + rng.gen_range(1..8)),
        },
    }
}

/// (accept?, refused only because it exceeds the delegator)
fn delegation_ok(o: &RightsOracle, v: &View<'_>, g: &Delegation) -> (bool, bool) {
    if v.kind(g.from.as_str()) != Some(EntityKind::Individual) {
        return (false, false);
    }
    let Some(to_kind) = v.kind(g.to.as_str()).filter(|k| k.is_principal()) else { return (false, false) };
    if g.level == Right::Arbitrate && to_kind == EntityKind::ExternalSource {
        return (false, false);
    }
    if g.scope.is_empty() || g.expiry.is_some_and(|e| e <= o.now) {
        return (false, false);
    }
    let within = g.scope.iter().all(|d| {
        if g.level == Right::Arbitrate {
            o.can_arbitrate(v, g.from.as_str(), d)
        } else {
            o.resolve(v, g.from.as_str(), d).flatten() >= Some(g.level)
        }
    });
    (within, !within)
}
