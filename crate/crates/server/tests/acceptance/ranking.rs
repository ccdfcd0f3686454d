use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refhub_core::exosource::{AgreementScore, Dictionary, Subject};
use refhub_core::{eid, fixtures, DatumRef, Decision, EntityKind, Envelope, Event, Hub, ProposalStatus, State, Value};
use serde_json::json;

use crate::ensure;
use crate::{federation, mutation};
use crate::Outcome;

const MIN_SAMPLE: u64 = 3;

pub fn run() -> Outcome {
    let mut compared = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3007_0003 ^ seed);
        let mut hub = mutation::governed_hub();
        mutation::fuzz(&mut hub, &mut rng, mutation::OPS, |_, _| {})?;
        compared += compare(&hub, &format!("governed/{seed}"))?;
    }
    let mut stats = federation::TrialStats::default();
    for seed in 0..5 {
        let (a, b) = federation::trial(seed, federation::OPS, &mut stats)?;
        compared += compare(&a, &format!("federated/{seed}/a"))?;
        compared += compare(&b, &format!("federated/{seed}/b"))?;
    }

    // 3 accepted of 4 arbitrated on the lab channel
    let mut hub = fixtures::load("f1-governed").unwrap();
    let budget = DatumRef::attr("lab", "budget");
    for (i, d) in [Decision::Accept, Decision::Accept, Decision::Reject, Decision::Accept].into_iter().enumerate() {
        let p = hub.propose(&eid("alice"), &budget, Value::Integer(10 + i as i64), "adjust").map_err(|e| e.to_string())?;
        hub.arbitrate(&eid("carol"), p, d, "decided").map_err(|e| e.to_string())?;
    }
    let r = hub.state().rank(None, MIN_SAMPLE);
    let lab = r.iter().find(|s| s.subject == Subject::Channel(eid("lab"))).ok_or("lab not ranked")?;
    ensure!(lab.score == Some(0.75) && lab.accepted == 3 && lab.arbitrated == 4, "lab scored {lab:?}");
    ensure!(r == oracle(hub.events(), None, MIN_SAMPLE), "0.75 ranking differs from the counting oracle");

    // hrdb reaches 6 of 8 through ingestion on the login datum
    let login = DatumRef::conn("alice", "server", "login");
    hub.designate_arbiters(&[(eid("lab"), login.clone())]).map_err(|e| e.to_string())?;
    hub.register_source(&eid("hrdb"), Dictionary::parse_toml(mutation::HR_DICT).unwrap()).map_err(|e| e.to_string())?;
    let decisions = [true, true, false, true, true, false, true, true];
    for (i, accept) in decisions.into_iter().enumerate() {
        let rec = json!({"person": {"id": "alice", "login": format!("alice-{i}")}});
        let report = hub.ingest(&eid("hrdb"), &[rec]).map_err(|e| e.to_string())?;
        let p = *report.proposals.first().ok_or("ingestion made no proposal")?;
        let d = if accept { Decision::Accept } else { Decision::Reject };
        hub.arbitrate(&eid("carol"), p, d, "checked").map_err(|e| e.to_string())?;
    }
    let r = hub.state().rank(None, MIN_SAMPLE);
    let order: Vec<String> = r.iter().map(|s| s.subject.to_string()).collect();
    ensure!(
        order.first().map(String::as_str) == Some("source:hrdb") && order.get(1).map(String::as_str) == Some("channel:lab"),
        "tie at 0.75 ordered {order:?}"
    );
    ensure!(r == oracle(hub.events(), None, MIN_SAMPLE), "tie-break ranking differs from the counting oracle");
    let scoped: BTreeSet<DatumRef> = [login].into();
    ensure!(
        hub.state().rank(Some(&scoped), MIN_SAMPLE) == oracle(hub.events(), Some(&scoped), MIN_SAMPLE),
        "scoped ranking differs from the counting oracle"
    );
    let unranked = hub.state().rank(None, 100);
    ensure!(unranked.iter().all(|s| s.score.is_none()), "subjects below the sample were ranked");
    Ok(format!(
        "live ranking equals the replayed one on {compared} corpora; lab 3/4 = 0.75; at 0.75 source:hrdb (8) ranks above channel:lab (4) as the counting oracle orders them"
    ))
}

fn compare(hub: &Hub, name: &str) -> Result<usize, String> {
    let replayed = State::replay(hub.events()).map_err(|e| e.to_string())?;
    for min in [1, MIN_SAMPLE] {
        let live = hub.state().rank(None, min);
        ensure!(replayed.rank(None, min) == live, "{name}: replayed ranking differs (min {min})");
        ensure!(oracle(hub.events(), None, min) == live, "{name}: counting oracle differs (min {min})");
    }
    Ok(1)
}

/// Tallies proposal outcomes straight from the log.
fn oracle(events: &[Envelope], scope: Option<&BTreeSet<DatumRef>>, min: u64) -> Vec<AgreementScore> {
    let mut sources = BTreeSet::new();
    let mut subject_of: BTreeMap<u64, Subject> = BTreeMap::new();
    let mut outcome: BTreeMap<u64, ProposalStatus> = BTreeMap::new();
    for env in events {
        match &env.event {
            Event::EntityCreated { id, kind: EntityKind::ExternalSource, .. } => {
                sources.insert(id.clone());
            }
            Event::Proposed(p) => {
                if scope.is_some_and(|s| !s.contains(&p.datum)) {
                    continue;
                }
                let subject = match p.author.local() {
                    Some(a) if sources.contains(a) => Subject::Source(a.clone()),
                    _ => Subject::Channel(p.channel.clone()),
                };
                subject_of.insert(env.seq, subject);
            }
            Event::Arbitrated { proposal, decision, .. } => {
                let s = if *decision == Decision::Accept { ProposalStatus::Accepted } else { ProposalStatus::Rejected };
                outcome.insert(*proposal, s);
            }
            Event::ChangesetApplied { proposal_updates, .. } => {
                for (p, s) in proposal_updates {
                    outcome.insert(*p, *s);
                }
            }
            _ => {}
        }
    }
    let mut tally: BTreeMap<Subject, (u64, u64)> = BTreeMap::new();
    for (p, subject) in subject_of {
        let t = tally.entry(subject).or_default();
        match outcome.get(&p) {
            Some(ProposalStatus::Accepted) => {
                t.0 += 1;
                t.1 += 1;
            }
            Some(ProposalStatus::Rejected) => t.1 += 1,
            _ => {}
        }
    }
    let mut rows: Vec<AgreementScore> = tally
        .into_iter()
        .map(|(subject, (accepted, arbitrated))| AgreementScore {
            subject,
            accepted,
            arbitrated,
            score: (arbitrated >= min.max(1)).then(|| accepted as f64 / arbitrated as f64),
        })
        .collect();
    // ranked first, by ratio, then sample size, then id
    rows.sort_by(|a, b| {
        let key = |s: &AgreementScore| {
            let ratio = if s.score.is_some() { s.accepted as u128 * 1_000_000_000 / s.arbitrated as u128 } else { 0 };
            (s.score.is_none(), std::cmp::Reverse(ratio))
        };
        key(a)
            .cmp(&key(b))
            .then(b.arbitrated.cmp(&a.arbitrated))
            .then_with(|| a.subject.to_string().cmp(&b.subject.to_string()))
    });
    rows
}
