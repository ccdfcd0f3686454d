//! `refhub`: operator CLI. Every command except `init` and `serve` is one
//! call against a running instance.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use refhub_client::{ClientError, HubClient};
use refhub_core::{DatumRef, InstanceId};
use refhub_server::InstanceConfig;
use serde_json::Value as Json;

#[derive(Parser)]
#[command(name = "refhub", version, about = "Reference-data governance hub")]
struct Cli {
    /// Base URL of the instance.
    #[arg(long, global = true, env = "REFHUB_SERVER", default_value = "http://127.0.0.1:7000")]
    server: String,
    /// Principal the request is made for.
    #[arg(long = "as", global = true, env = "REFHUB_PRINCIPAL")]
    principal: Option<String>,
    /// Print the response data as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a configuration file and data directory for a new instance.
    Init {
        dir: PathBuf,
        #[arg(long)]
        instance: String,
        #[arg(long, default_value = "127.0.0.1:7000")]
        listen: String,
    },
    /// Load a named fixture graph (f1, f1-governed).
    LoadFixture { name: String },
    Propose {
        datum: String,
        value: String,
        #[arg(long, short, default_value = "")]
        rationale: String,
    },
    Opine {
        proposal: u64,
        /// support or object
        verdict: String,
        #[arg(long, short)]
        rationale: String,
    },
    Arbitrate {
        proposal: u64,
        /// accept or reject
        decision: String,
        #[arg(long, short, default_value = "")]
        rationale: String,
    },
    /// Anonymous warning: the principal is checked, never recorded.
    Warn {
        datum: String,
        #[arg(long, short, default_value = "")]
        note: String,
    },
    Trail { datum: String },
    /// Effective rights of a principal, or its resolved right on one datum.
    Rights { principal: String, datum: Option<String> },
    Rank {
        /// Datum pattern restricting the ranking, e.g. `lab.*`.
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        min_sample: Option<u64>,
    },
    /// Feed newline-delimited JSON records (`-` for stdin) from a source.
    Ingest { source: String, file: PathBuf },
    Sync {
        #[arg(long)]
        contract: String,
        #[arg(long, conflicts_with = "r#loop")]
        once: bool,
        #[arg(long = "loop")]
        r#loop: bool,
        /// Seconds between exchanges with --loop.
        #[arg(long, default_value_t = 5)]
        interval: u64,
    },
    Digest {
        #[arg(long)]
        contract: Option<String>,
    },
    Serve {
        #[arg(long, default_value = "hub.toml")]
        config: PathBuf,
        /// Cut a torn final log record instead of refusing to start.
        #[arg(long)]
        recover: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn datum(s: &str) -> Result<DatumRef, Failure> {
    s.parse().map_err(|e: refhub_core::Error| Failure::Usage(e.to_string()))
}

/// Numbers go over the wire as numbers, everything else as text; the
/// server parses both against the datum's type.
fn literal(s: &str) -> Json {
    match s.parse::<i64>() {
        Ok(n) => Json::from(n),
        Err(_) => Json::from(s),
    }
}

fn show(json: bool, data: &Json, text: impl FnOnce(&Json) -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(data).expect("json prints"));
    } else {
        println!("{}", text(data));
    }
}

fn field(v: &Json, k: &str) -> String {
    match v.get(k) {
        None | Some(Json::Null) => "-".into(),
        Some(Json::String(s)) => s.clone(),
        Some(Json::Object(o)) if o.len() == 1 => o.values().next().map(field_str).unwrap_or_default(),
        Some(other) => other.to_string(),
    }
}

fn field_str(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn trail_line(e: &Json) -> String {
    let version = e.get("version").and_then(Json::as_u64).map(|v| format!("v{v}")).unwrap_or_else(|| "-".into());
    format!(
        "{:>5}  {:<11} {:<12} {:<8} {:<10} {:<4} {}",
        field(e, "seq"),
        field(e, "kind"),
        field(e, "author"),
        field(e, "channel"),
        field(e, "value"),
        version,
        field(e, "rationale"),
    )
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let mut client = HubClient::new(&cli.server);
    if let Some(p) = &cli.principal {
        client = client.acting_as(p.clone());
    }
    let need_principal = || {
        cli.principal.clone().ok_or_else(|| Failure::Usage("this command needs --as <principal>".into()))
    };
    let json = cli.json;
    let seq_line = |what: &str, seq: u64| println!("{what} {seq}");
    match &cli.cmd {
        Cmd::Init { dir, instance, listen } => {
            let instance = InstanceId::new(instance.as_str()).map_err(|e| Failure::Usage(e.to_string()))?;
            std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
            let path = dir.join("hub.toml");
            if path.exists() {
                return Err(Failure::Runtime(format!("{} already exists", path.display())));
            }
            let mut cfg = InstanceConfig::new(instance, PathBuf::from("events.log"));
            cfg.listen = listen.clone();
            std::fs::write(&path, cfg.to_toml()).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("wrote {}", path.display());
        }
        Cmd::LoadFixture { name } => {
            let r = client.load_fixture(name).await?;
            show(json, &r, |r| format!("loaded {name}: {} events", field(r, "events")));
        }
        Cmd::Propose { datum: d, value, rationale } => {
            need_principal()?;
            let id = client.propose(&datum(d)?, literal(value), rationale).await?;
            if json { show(true, &Json::from(id), |_| String::new()) } else { seq_line("proposal", id) }
        }
        Cmd::Opine { proposal, verdict, rationale } => {
            need_principal()?;
            let id = client.opine(*proposal, verdict, rationale).await?;
            if json { show(true, &Json::from(id), |_| String::new()) } else { seq_line("opinion", id) }
        }
        Cmd::Arbitrate { proposal, decision, rationale } => {
            need_principal()?;
            let id = client.arbitrate(*proposal, decision, rationale).await?;
            if json { show(true, &Json::from(id), |_| String::new()) } else { seq_line("arbitration", id) }
        }
        Cmd::Warn { datum: d, note } => {
            need_principal()?;
            let id = client.warn(&datum(d)?, note).await?;
            if json { show(true, &Json::from(id), |_| String::new()) } else { seq_line("warning", id) }
        }
        Cmd::Trail { datum: d } => {
            let page = client.trail(&datum(d)?).await?;
            let items = Json::from(page.items);
            show(json, &items, |v| {
                v.as_array().into_iter().flatten().map(trail_line).collect::<Vec<_>>().join("\n")
            });
        }
        Cmd::Rights { principal, datum: Some(d) } => {
            let r = client.rights(principal, Some(&datum(d)?)).await?;
            show(json, &r, |r| format!("{} on {}: {}", principal, d, field(r, "right")));
        }
        Cmd::Rights { principal, datum: None } => {
            let page: refhub_client::Page<Json> =
                serde_json::from_value(client.rights(principal, None).await?).map_err(|e| Failure::Runtime(e.to_string()))?;
            let items = Json::from(page.items);
            show(json, &items, |v| {
                v.as_array()
                    .into_iter()
                    .flatten()
                    .map(|r| {
                        format!(
                            "{:<24} {:<10} {:<11} {}",
                            field(r, "datum"),
                            field(r, "right"),
                            field(r, "reliability"),
                            field(r, "value")
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Cmd::Rank { scope, min_sample } => {
            let page = client.rank(scope.as_deref(), *min_sample).await?;
            let items = Json::from(page.items);
            show(json, &items, |v| {
                v.as_array()
                    .into_iter()
                    .flatten()
                    .map(|r| {
                        let score = r.get("score").and_then(Json::as_f64).map_or("unranked".into(), |s| format!("{s:.3}"));
                        format!("{:<20} {:>9} {}/{}", field(r, "subject"), score, field(r, "accepted"), field(r, "arbitrated"))
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Cmd::Ingest { source, file } => {
            let text = if file.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin()).map_err(|e| Failure::Runtime(e.to_string()))?
            } else {
                std::fs::read_to_string(file).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?
            };
            let r = client.ingest(source, text).await?;
            show(json, &r, |r| {
                let n = |k: &str| r.get(k).and_then(Json::as_array).map_or(0, Vec::len);
                let mut out = format!(
                    "processed {}, proposals {}, elevated {}, unchanged {}, errors {}",
                    field(r, "processed"),
                    n("proposals"),
                    n("elevated"),
                    n("unchanged"),
                    n("errors")
                );
                for e in r.get("errors").and_then(Json::as_array).into_iter().flatten() {
                    out.push_str(&format!("\n  record {}: {}", field(e, "record"), field(e, "reason")));
                }
                out
            });
        }
        Cmd::Sync { contract, r#loop, interval, .. } => loop {
            let r = client.sync(contract).await;
            match r {
                Ok(r) => {
                    let v = serde_json::to_value(&r).expect("report serializes");
                    show(json, &v, |_| {
                        format!(
                            "forwarded {}, parked {}, applied {}, skipped {}, superseded {}",
                            r.forwarded.len(),
                            r.parked.len(),
                            r.apply.applied,
                            r.apply.skipped,
                            r.apply.superseded
                        )
                    });
                }
                Err(e) if *r#loop => eprintln!("sync failed: {e}"),
                Err(e) => return Err(e.into()),
            }
            if !*r#loop {
                break;
            }
            tokio::time::sleep(Duration::from_secs(*interval)).await;
        },
        Cmd::Digest { contract } => {
            let r = client.digest(contract.as_deref()).await?;
            show(json, &r, |r| field(r, "digest"));
        }
        Cmd::Serve { config, recover } => {
            let cfg = InstanceConfig::load(config).map_err(|e| Failure::Runtime(e.to_string()))?;
            let instance = cfg.instance.clone();
            refhub_server::serve(cfg, *recover, |addr| println!("{instance} listening on http://{addr}"))
                .await
                .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
