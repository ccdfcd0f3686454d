use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refhub_core::rights::ChannelConfig;
use refhub_core::{eid, EntityKind, Error, Right, Value};

use crate::ensure;
use crate::oracle::{gen_graph, int_attrs, names};
use crate::Outcome;

const GRAPHS: u64 = 200;

pub fn run() -> Outcome {
    let start = Instant::now();
    let (mut queries, mut interventions) = (0usize, 0usize);
    for seed in 0..GRAPHS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001 ^ seed);
        let g = gen_graph(&mut rng, 20, 40, |r, _| int_attrs(r, &["x", "y"], 0.5), |r| int_attrs(r, &["w", "z"], 0.6));
        let mut hub = g.build("vis");
        let v = g.view(g.edges.len());
        let graph = &hub.state().graph;
        for id in v.ids() {
            let e = eid(&id);
            let hub_comm = names(graph.community_of(&e).unwrap().members);
            ensure!(hub_comm == v.community(&id), "seed {seed}: community_of({id}) {hub_comm:?} != {:?}", v.community(&id));
            let hub_coll = graph.collection_of(&e).unwrap().datums;
            ensure!(hub_coll == v.collection(&id), "seed {seed}: collection_of({id}) differs");
            match (graph.field_of_action(&e), v.field_of_action(&id)) {
                (Ok(a), Ok(b)) => ensure!(a == b, "seed {seed}: field_of_action({id}) differs"),
                (Err(Error::NotAnIndividual(_)), Err(_)) => {}
                (a, b) => return Err(format!("seed {seed}: field_of_action({id}) {a:?} vs oracle {b:?}")),
            }
            queries += 3;
        }
        ensure!(
            matches!(graph.community_of(&eid("ghost")), Err(Error::UnknownEntity(_))),
            "seed {seed}: unknown entity accepted"
        );

        // every channel lets its members propose, so each datum with an
        // audience can carry an intervention
        for id in v.ids() {
            let config = ChannelConfig { role_map: [("member".to_string(), Right::Propose)].into(), ..Default::default() };
            hub.configure_channel(&eid(&id), config).unwrap();
        }
        let individuals: Vec<String> =
            g.ents.iter().filter(|e| e.kind == EntityKind::Individual).map(|e| e.id.clone()).collect();
        let mut made = BTreeMap::new();
        for d in v.all_datums() {
            let Some(Value::Integer(cur)) = v.value(&d).cloned() else { continue };
            let start_at = if individuals.is_empty() { 0 } else { rng.gen_range(0..individuals.len()) };
            for k in 0..individuals.len() {
                let who = &individuals[(start_at + k) % individuals.len()];
                if let Ok(seq) = hub.propose(&eid(who), &d, Value::Integer(cur + 1), "check") {
                    made.insert(seq, d.clone());
                    break;
                }
            }
        }
        for (seq, d) in &made {
            let hub_area = names(hub.state().area_of_visibility(*seq).unwrap());
            ensure!(hub_area == v.audience(d), "seed {seed}: area_of_visibility({seq}) on {d} differs");
            interventions += 1;
        }
        ensure!(
            matches!(hub.state().area_of_visibility(u64::MAX), Err(Error::UnknownIntervention(_))),
            "seed {seed}: unknown intervention accepted"
        );
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(5), "runtime {took:?} exceeds 5s");
    Ok(format!("{GRAPHS} graphs, {queries} derivations and {interventions} visibility areas match the edge-scan oracle in {:.2}s", took.as_secs_f64()))
}
