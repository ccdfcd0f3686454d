//! Long-running hub instance: bootstraps from the log, applies the
//! configured rules, dictionaries and contracts, and serves the HTTP API.

pub mod api;
pub mod config;
pub mod limiter;

use std::net::SocketAddr;
use std::sync::Arc;

use refhub_core::exosource::Dictionary;
use refhub_core::federation::ContractSpec;
use refhub_core::log::OpenReport;
use refhub_core::propagation::parse_rules;
use refhub_core::{EntityId, Error as CoreError, Hub, OpenOptions};

pub use api::{router, AppState};
pub use config::InstanceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Hub(#[from] CoreError),
    #[error("cannot listen on {addr}: {reason}")]
    PortUnavailable { addr: String, reason: String },
    #[error("server stopped: {0}")]
    Io(std::io::Error),
}

fn read(path: &std::path::Path) -> Result<String, ServeError> {
    std::fs::read_to_string(path).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))
}

/// Opens the log and brings the configured rules, dictionaries and
/// contracts into the hub. Items already recorded identically are left
/// alone, so restarting with the same configuration writes nothing.
pub fn bootstrap(cfg: &InstanceConfig, recover: bool) -> Result<(Hub, OpenReport), ServeError> {
    cfg.check_readable()?;
    if let Some(dir) = cfg.log.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ServeError::Config(format!("{}: {e}", dir.display())))?;
    }
    let opts = OpenOptions { recover, snapshot: cfg.snapshot.clone() };
    let (mut hub, report) = Hub::open(cfg.instance.clone(), &cfg.log, &opts)?;
    if let Some(path) = &cfg.rules {
        for rule in parse_rules(&read(path)?)? {
            match hub.state().rules.get(&rule.id) {
                Some(existing) if *existing == rule => {}
                Some(_) => {
                    return Err(ServeError::Config(format!("rule `{}` differs from the registered rule", rule.id)));
                }
                None => {
                    hub.register_rule(rule)?;
                }
            }
        }
    }
    for entry in &cfg.dictionaries {
        let source = EntityId::new(entry.source.as_str())?;
        let dict = Dictionary::parse_toml(&read(&entry.path)?)?;
        let current = hub.state().sources.get(&source);
        let unchanged = current.is_some_and(|c| c.schema == dict.schema && c.mappings == dict.mappings);
        if !unchanged {
            hub.register_source(&source, dict)?;
        }
    }
    for path in &cfg.contracts {
        let spec = ContractSpec::parse_toml(&read(path)?)?;
        match hub.state().contracts.get(&spec.id) {
            Some(c) if c.peer == spec.peer && c.scope == spec.scope && c.ownership == spec.ownership => {}
            Some(_) => return Err(ServeError::Config(format!("contract `{}` differs from the active one", spec.id))),
            None => {
                hub.establish_contract(spec, None)?;
            }
        }
    }
    Ok((hub, report))
}

pub fn app_state(hub: Hub, cfg: &InstanceConfig) -> Arc<AppState> {
    AppState::new(hub, cfg.min_sample, cfg.warn_per_minute)
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServeError::PortUnavailable { addr: addr.to_string(), reason: e.to_string() })
}

/// Serves until ctrl-c. `on_ready` receives the bound address.
pub async fn serve(cfg: InstanceConfig, recover: bool, on_ready: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let (hub, _) = bootstrap(&cfg, recover)?;
    let listener = bind(&cfg.listen).await?;
    let addr = listener.local_addr().map_err(ServeError::Io)?;
    on_ready(addr);
    axum::serve(listener, router(app_state(hub, &cfg)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}
