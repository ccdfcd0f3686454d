use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refhub_core::log::Snapshot;
use refhub_core::{Envelope, Hub, InstanceId, OpenOptions, State};

use crate::ensure;
use crate::{federation, mutation};
use crate::Outcome;

const GOVERNED: u64 = 10;
const FEDERATED: u64 = 10;
const FILE_RUNS: u64 = 5;

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut corpora: Vec<(String, Vec<Envelope>, String)> = Vec::new();
    for seed in 0..GOVERNED {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3007_0003 ^ seed);
        let mut hub = mutation::governed_hub();
        mutation::fuzz(&mut hub, &mut rng, mutation::OPS, |_, _| {})?;
        corpora.push((format!("governed/{seed}"), hub.events().to_vec(), hub.state().digest()));
    }
    let mut stats = federation::TrialStats::default();
    for seed in 0..FEDERATED {
        let (a, b) = federation::trial(seed, federation::OPS, &mut stats)?;
        corpora.push((format!("federated/{seed}/a"), a.events().to_vec(), a.state().digest()));
        corpora.push((format!("federated/{seed}/b"), b.events().to_vec(), b.state().digest()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x8e91_0008);
    let mut cuts = 0;
    for (name, events, live) in &corpora {
        let full = State::replay(events).map_err(|e| format!("{name}: {e}"))?;
        ensure!(full.digest() == *live, "{name}: full replay digest differs from live");
        for _ in 0..3 {
            let k = rng.gen_range(0..=events.len());
            let head = State::replay(&events[..k]).map_err(|e| e.to_string())?;
            let path = dir.path().join("cut.snap");
            Snapshot::of(&head).write(&path).map_err(|e| e.to_string())?;
            let mut st = Snapshot::read(&path).map_err(|e| e.to_string())?.state;
            for env in &events[k..] {
                st.apply(env).map_err(|e| e.to_string())?;
            }
            ensure!(st.digest() == *live, "{name}: snapshot at {k} + tail differs from live");
            cuts += 1;
        }
    }

    // file-backed: fuzz with a rotation midway, then reopen from disk
    for seed in 0..FILE_RUNS {
        let base = dir.path().join(format!("run{seed}"));
        std::fs::create_dir_all(&base).unwrap();
        let (log, snap, archive) = (base.join("events.log"), base.join("hub.snap"), base.join("events.log.1"));
        let inst = InstanceId::new("disk").unwrap();
        let (mut hub, _) = Hub::open(inst.clone(), &log, &OpenOptions::default()).map_err(|e| e.to_string())?;
        mutation::governed_setup(&mut hub);
        let mut rng = ChaCha8Rng::seed_from_u64(0xd15c_0008 ^ seed);
        let rotate_at = rng.gen_range(50..mutation::OPS - 50);
        let mut rotated = Ok(());
        mutation::fuzz(&mut hub, &mut rng, mutation::OPS, |h, i| {
            if i == rotate_at {
                rotated = h.rotate(&snap, Some(&archive)).map(drop).map_err(|e| e.to_string());
            }
        })?;
        rotated?;
        let live = hub.state().digest();
        let first = hub.events().first().map(|e| e.seq);
        drop(hub);
        let opts = OpenOptions { recover: false, snapshot: Some(snap.clone()) };
        let (reopened, _) = Hub::open(inst.clone(), &log, &opts).map_err(|e| e.to_string())?;
        ensure!(reopened.state().digest() == live, "file run {seed}: snapshot + tail reopen differs");
        let no_snap = Hub::open(inst.clone(), &log, &OpenOptions::default());
        ensure!(
            matches!(no_snap, Err(refhub_core::Error::SnapshotRequired(_))),
            "file run {seed}: rotated log opened without its snapshot"
        );
        let mut all = read_log(&archive)?;
        all.extend(read_log(&log)?);
        ensure!(all.first().map(|e| e.seq) == Some(1) && first.is_some(), "file run {seed}: archive does not start the history");
        ensure!(State::replay(&all).map_err(|e| e.to_string())?.digest() == live, "file run {seed}: archive + log replay differs");
    }
    Ok(format!(
        "{} corpora replay to their live digest; {cuts} snapshot cuts + tail match; {FILE_RUNS} file-backed runs with rotation reopen identically",
        corpora.len()
    ))
}

fn read_log(path: &std::path::Path) -> Result<Vec<Envelope>, String> {
    std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}
