use std::collections::BTreeSet;
use std::future::IntoFuture;

use refhub_core::InstanceId;
use refhub_server::{app_state, bind, bootstrap, router, InstanceConfig};
use serde_json::{json, Value as Json};

use crate::ensure;
use crate::Outcome;

const WARNINGS: usize = 50;
const PRINCIPALS: &[&str] = &["alice", "bob", "carol", "hrdb"];

/// Datums each principal may warn on in governed F1.
const TARGETS: &[(&str, &str)] = &[
    ("alice", "lab.budget"),
    ("alice", "lab->server.quota"),
    ("bob", "lab->server.quota"),
    ("bob", "dean->lab.mandate"),
    ("carol", "lab.budget"),
    ("carol", "lab->alice.role"),
];

fn enc(d: &str) -> String {
    d.replace('>', "%3E")
}

pub fn run() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(scenario())
}

async fn scenario() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("events.log");
    let mut cfg = InstanceConfig::new(InstanceId::new("anon").unwrap(), log.clone());
    cfg.listen = "127.0.0.1:0".into();
    cfg.warn_per_minute = 10_000;
    let (hub, _) = bootstrap(&cfg, false).map_err(|e| e.to_string())?;
    let listener = bind(&cfg.listen).await.map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().unwrap());
    let server = tokio::spawn(axum::serve(listener, router(app_state(hub, &cfg))).into_future());

    let http = reqwest::Client::new();
    let mut bodies: Vec<(String, Vec<u8>)> = Vec::new();
    let post = async |path: &str, who: Option<&str>, body: Json| -> Result<Vec<u8>, String> {
        let mut req = http.post(format!("{base}{path}")).json(&body);
        if let Some(p) = who {
            req = req.header("x-principal", p);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?.to_vec();
        if !status.is_success() {
            return Err(format!("POST {path}: {status} {}", String::from_utf8_lossy(&bytes)));
        }
        Ok(bytes)
    };

    post("/v1/fixtures/f1-governed", None, json!({})).await?;
    let mut posted = Vec::new();
    for i in 0..WARNINGS {
        let (who, d) = TARGETS[i % TARGETS.len()];
        let bytes = post("/v1/warnings", Some(who), json!({"datum": d, "note": format!("figure looks stale, check #{i}")})).await?;
        posted.push((format!("POST /v1/warnings #{i}"), bytes));
    }
    // attributed activity alongside, so the scan has something to tell apart
    let p: Json = serde_json::from_slice(
        &post("/v1/proposals", Some("alice"), json!({"datum": "lab.budget", "value": 100, "rationale": "new grant"})).await?,
    )
    .map_err(|e| e.to_string())?;
    let pid = p["data"].as_u64().ok_or("proposal id missing")?;
    post("/v1/opinions", Some("bob"), json!({"proposal": pid, "verdict": "support", "rationale": "fine"})).await?;
    post("/v1/arbitrations", Some("carol"), json!({"proposal": pid, "decision": "accept", "rationale": "ok"})).await?;
    let snap = dir.path().join("snap.json");
    posted.push(("POST /v1/snapshot".into(), post("/v1/snapshot", None, json!({"path": snap})).await?));
    bodies.extend(posted);

    let mut gets: Vec<String> = [
        "/v1/health", "/v1/digest", "/v1/events?limit=10000", "/v1/warnings?limit=10000", "/v1/proposals?limit=10000",
        "/v1/golden?limit=10000", "/v1/datums", "/v1/entities", "/v1/connections", "/v1/rank", "/v1/rules", "/v1/contracts",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let datums: BTreeSet<&str> = TARGETS.iter().map(|(_, d)| *d).collect();
    for d in &datums {
        for prefix in ["/v1/trail/", "/v1/history/", "/v1/golden/"] {
            gets.push(format!("{prefix}{}?limit=10000", enc(d)));
        }
    }
    for p in PRINCIPALS {
        for prefix in ["/v1/field-of-action/", "/v1/rights/", "/v1/review-queue/"] {
            gets.push(format!("{prefix}{p}?limit=10000"));
        }
    }
    for iv in 1..=60 {
        gets.push(format!("/v1/visibility/{iv}"));
    }
    for path in gets {
        let resp = http.get(format!("{base}{path}")).header("x-principal", "alice").send().await.map_err(|e| e.to_string())?;
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?.to_vec();
        bodies.push((format!("GET {path}"), bytes));
    }
    server.abort();

    let mut records = 0;
    let mut listed = 0;
    for (what, bytes) in &bodies {
        let v: Json = serde_json::from_slice(bytes).map_err(|e| format!("{what}: not JSON: {e}"))?;
        if what.starts_with("GET /v1/warnings") {
            listed = v["data"]["items"].as_array().map(|a| a.len()).unwrap_or(0);
        }
        records += scan(&v, what)?;
    }
    ensure!(listed == WARNINGS, "warning list holds {listed}, expected {WARNINGS}");
    let mut logged = 0;
    for (n, line) in std::fs::read_to_string(&log).map_err(|e| e.to_string())?.lines().enumerate() {
        let v: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if v["kind"] == "warned" {
            logged += 1;
        }
        records += scan(&v, &format!("log line {}", n + 1))?;
    }
    ensure!(logged == WARNINGS, "log holds {logged} warning events, expected {WARNINGS}");
    let snap: Json = serde_json::from_slice(&std::fs::read(&snap).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    records += scan(&snap, "snapshot file")?;
    Ok(format!(
        "{WARNINGS} warnings from 3 principals; {} responses, the log and a snapshot scanned; {records} warning records carry no principal id",
        bodies.len()
    ))
}

/// Finds warning records anywhere inside `v`, drops their datum field and
/// byte-scans what remains for principal ids. Returns how many it checked.
fn scan(v: &Json, what: &str) -> Result<usize, String> {
    let mut found = 0;
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        match v {
            Json::Array(xs) => stack.extend(xs),
            Json::Object(m) => {
                let record = if m.get("kind") == Some(&json!("warned")) {
                    m.get("body").cloned()
                } else if m.get("kind") == Some(&json!("warning"))
                    || (m.contains_key("note") && m.contains_key("resolved_by"))
                {
                    Some(v.clone())
                } else {
                    None
                };
                if let Some(mut r) = record {
                    if let Some(o) = r.as_object_mut() {
                        o.remove("datum");
                    }
                    let bytes = serde_json::to_string(&r).unwrap();
                    for p in PRINCIPALS {
                        ensure!(!bytes.contains(p), "{what}: warning record {bytes} names `{p}`");
                    }
                    found += 1;
                } else {
                    stack.extend(m.values());
                }
            }
            _ => {}
        }
    }
    Ok(found)
}
