use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refhub_core::federation::{ChangeSet, ContractSpec};
use refhub_core::rights::ChannelConfig;
use refhub_core::{eid, fixtures, DatumRef, Decision, Hub, InstanceId, ProposalStatus, Right, Value, ValueType, Verdict};

use crate::ensure;
use crate::Outcome;

pub const TRIALS: u64 = 100;
pub const OPS: usize = 500;
const CONTRACT: &str = "f1";

fn spec(peer: &str) -> ContractSpec {
    ContractSpec::parse_toml(&format!(
        r#"
id = "{CONTRACT}"
peer = "{peer}"
scope = ["lab.*", "lab->*.*", "server.*", "alice->server.*"]

[[ownership]]
pattern = "lab.*"
owner = "a"

[[ownership]]
pattern = "lab->*.*"
owner = "a"

[[ownership]]
pattern = "server.*"
owner = "b"

[[ownership]]
pattern = "alice->server.*"
owner = "b"
"#
    ))
    .unwrap()
}

/// Two governed F1 instances sharing the F1 scope: `a` owns the lab data,
/// `b` the server data. The server channel lets its members arbitrate so
/// both owners can commit.
pub fn pair() -> (Hub, Hub) {
    let make = |id: &str| {
        let mut h = fixtures::load_as("f1-governed", InstanceId::new(id).unwrap()).unwrap();
        let role_map = [("member".to_string(), Right::Arbitrate)].into();
        h.configure_channel(&eid("server"), ChannelConfig { role_map, ..Default::default() }).unwrap();
        h.designate_arbiters(&[(eid("server"), DatumRef::conn("alice", "server", "login"))]).unwrap();
        h
    };
    let (mut a, mut b) = (make("a"), make("b"));
    let ia = refhub_core::federation::Peer::datum_index(&a).unwrap();
    let ib = refhub_core::federation::Peer::datum_index(&b).unwrap();
    a.establish_contract(spec("b"), Some(&ib)).unwrap();
    b.establish_contract(spec("a"), Some(&ia)).unwrap();
    (a, b)
}

fn value_for(rng: &mut impl Rng, ty: ValueType) -> Value {
    match ty {
        ValueType::Integer => Value::Integer(rng.gen_range(0..400)),
        ValueType::Enum => Value::token(["member", "manager", "director"].choose(rng).unwrap()),
        _ => Value::Text(format!("t{}", rng.gen_range(0..50))),
    }
}

#[derive(Debug, Default)]
pub struct TrialStats {
    pub delivered: usize,
    pub duplicated: usize,
    pub partitions: usize,
    pub forwarded: usize,
    pub rounds: usize,
}

/// One trial: random operations on both sides with partitions, duplicated
/// and reordered changesets, then full bidirectional exchange until quiet.
pub fn trial(seed: u64, ops: usize, stats: &mut TrialStats) -> Result<(Hub, Hub), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfed0_0007 ^ seed);
    let (mut a, mut b) = pair();
    let datums: Vec<(DatumRef, ValueType)> = a
        .state()
        .graph
        .datums()
        .map(|(d, r)| (d.clone(), r.ty))
        .collect();
    // (deliver to b?, changeset)
    let mut queue: Vec<(bool, ChangeSet)> = Vec::new();
    let mut partitioned = false;
    for _ in 0..ops {
        let to_b = rng.gen_bool(0.5);
        let (x, y) = if to_b { (&mut a, &mut b) } else { (&mut b, &mut a) };
        let who = eid(["alice", "bob", "carol"].choose(&mut rng).unwrap());
        let under_review: Vec<u64> = x
            .state()
            .proposals
            .values()
            .filter(|p| p.status == ProposalStatus::UnderReview)
            .map(|p| p.id)
            .collect();
        match rng.gen_range(0..100) {
            0..=29 => {
                let (d, ty) = datums.choose(&mut rng).unwrap();
                let _ = x.propose(&who, d, value_for(&mut rng, *ty), "fed");
            }
            30..=44 => {
                if let Some(p) = under_review.choose(&mut rng) {
                    let v = if rng.gen_bool(0.5) { Verdict::Support } else { Verdict::Object };
                    let _ = x.opine(&who, *p, v, "seen");
                }
            }
            45..=64 => {
                if let Some(p) = under_review.choose(&mut rng) {
                    let d = if rng.gen_bool(0.7) { Decision::Accept } else { Decision::Reject };
                    let _ = x.arbitrate(&who, *p, d, "settled");
                }
            }
            65..=69 => {
                let (d, _) = datums.choose(&mut rng).unwrap();
                let _ = x.warn(&who, d, "check");
            }
            70..=79 => {
                if !partitioned {
                    let since = rng.gen_range(0..=x.seq());
                    let cs = x.emit_changeset(CONTRACT, since).map_err(|e| e.to_string())?;
                    if rng.gen_bool(0.2) {
                        queue.push((to_b, cs.clone()));
                        stats.duplicated += 1;
                    }
                    queue.push((to_b, cs));
                }
            }
            80..=91 => {
                if !partitioned && !queue.is_empty() {
                    let i = rng.gen_range(0..queue.len());
                    let (for_b, cs) = if rng.gen_bool(0.2) {
                        stats.duplicated += 1;
                        queue[i].clone()
                    } else {
                        queue.swap_remove(i)
                    };
                    let wire = ChangeSet::decode(&cs.encode()).map_err(|e| e.to_string())?;
                    let target = if for_b { &mut b } else { &mut a };
                    target.apply_changeset(&wire).map_err(|e| format!("apply: {e}"))?;
                    stats.delivered += 1;
                }
            }
            92..=96 => {
                if !partitioned {
                    let r = x.sync_once(CONTRACT, y).map_err(|e| format!("sync: {e}"))?;
                    stats.forwarded += r.forwarded.len();
                }
            }
            _ => {
                partitioned = !partitioned;
                stats.partitions += usize::from(partitioned);
            }
        }
    }
    // heal the partition and exchange until neither side has anything new
    for round in 0.. {
        ensure!(round < 20, "no quiescence after 20 exchange rounds");
        let ra = a.sync_once(CONTRACT, &mut b).map_err(|e| e.to_string())?;
        let rb = b.sync_once(CONTRACT, &mut a).map_err(|e| e.to_string())?;
        stats.rounds += 1;
        stats.forwarded += ra.forwarded.len() + rb.forwarded.len();
        if ra.forwarded.is_empty() && rb.forwarded.is_empty() && ra.apply.event.is_none() && rb.apply.event.is_none() {
            break;
        }
    }
    Ok((a, b))
}

pub fn run() -> Outcome {
    let start = Instant::now();
    let mut stats = TrialStats::default();
    let mut equal = 0;
    let mut mismatch = BTreeMap::new();
    for seed in 0..TRIALS {
        let (a, b) = trial(seed, OPS, &mut stats).map_err(|e| format!("trial {seed}: {e}"))?;
        let (da, db) = (a.scope_digest(CONTRACT).unwrap(), b.scope_digest(CONTRACT).unwrap());
        if da == db {
            equal += 1;
        } else {
            mismatch.insert(seed, (da, db));
        }
    }
    let took = start.elapsed();
    ensure!(equal == TRIALS, "digests equal in {equal}/{TRIALS} trials; first mismatch {:?}", mismatch.iter().next());
    ensure!(took < Duration::from_secs(10), "runtime {took:?} exceeds 10s");
    Ok(format!(
        "scope digests equal in {equal}/{TRIALS} trials of {OPS} ops ({} changesets delivered, {} duplicated, {} partitions, {} proposals forwarded) in {:.2}s",
        stats.delivered,
        stats.duplicated,
        stats.partitions,
        stats.forwarded,
        took.as_secs_f64()
    ))
}
