//! Typed client for the hub's HTTP API.
//!
//! Every call returns the `data` member of the response envelope; API
//! failures come back as [`ClientError::Api`] with the server's error code.

use std::collections::BTreeSet;

use refhub_core::federation::{ApplyReport, ChangeSet, ForwardRequest, SyncReport};
use refhub_core::{DatumRef, Error as CoreError, Seq};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

pub const SCHEMA_VERSION: u32 = 1;
pub const PRINCIPAL_HEADER: &str = "x-principal";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {0}")]
    Transport(String),
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    /// Core view of the failure, for code that treats peers uniformly.
    pub fn into_core(self) -> CoreError {
        match self {
            ClientError::Transport(m) => CoreError::PeerUnreachable(m),
            other => CoreError::Wire(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    data: Option<T>,
    error: Option<ApiErrorBody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
}

/// One page of a list response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
    pub next: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct HubClient {
    base: String,
    http: reqwest::Client,
    principal: Option<String>,
}

impl HubClient {
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Self { base, http: reqwest::Client::new(), principal: None }
    }

    /// Requests are sent on behalf of `principal`.
    pub fn acting_as(mut self, principal: impl Into<String>) -> Self {
        self.principal = Some(principal.into());
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, segments: &[&str]) -> String {
        let mut u = format!("{}/v1", self.base);
        for s in segments {
            u.push('/');
            u.push_str(&encode_segment(s));
        }
        u
    }

    fn request(&self, method: reqwest::Method, segments: &[&str]) -> reqwest::RequestBuilder {
        let rb = self.http.request(method, self.url(segments));
        match &self.principal {
            Some(p) => rb.header(PRINCIPAL_HEADER, p),
            None => rb,
        }
    }

    async fn send<T: DeserializeOwned>(rb: reqwest::RequestBuilder) -> Result<T> {
        let resp = rb.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let env: Envelope<T> = serde_json::from_slice(&bytes)
            .map_err(|e| ClientError::Decode(format!("status {status}: {e}")))?;
        if env.schema_version != SCHEMA_VERSION {
            return Err(ClientError::Decode(format!("schema version {}", env.schema_version)));
        }
        match (env.data, env.error) {
            (_, Some(e)) => Err(ClientError::Api { status, code: e.code, message: e.message }),
            (Some(d), None) => Ok(d),
            (None, None) => Err(ClientError::Decode("empty envelope".into())),
        }
    }

    async fn get<T: DeserializeOwned>(&self, segments: &[&str], query: &[(&str, String)]) -> Result<T> {
        Self::send(self.request(reqwest::Method::GET, segments).query(query)).await
    }

    async fn post<T: DeserializeOwned>(&self, segments: &[&str], body: &Json) -> Result<T> {
        Self::send(self.request(reqwest::Method::POST, segments).json(body)).await
    }

    async fn post_text<T: DeserializeOwned>(&self, segments: &[&str], body: String) -> Result<T> {
        let rb = self.request(reqwest::Method::POST, segments).header("content-type", "text/plain").body(body);
        Self::send(rb).await
    }

    pub async fn health(&self) -> Result<Json> {
        self.get(&["health"], &[]).await
    }

    /// Digest of the whole state, or of one contract's shared scope.
    pub async fn digest(&self, contract: Option<&str>) -> Result<Json> {
        match contract {
            Some(c) => self.get(&["contracts", c, "digest"], &[]).await,
            None => self.get(&["digest"], &[]).await,
        }
    }

    pub async fn entities(&self, offset: usize, limit: usize) -> Result<Page<Json>> {
        self.get(&["entities"], &page(offset, limit)).await
    }

    pub async fn create_entity(&self, kind: &str, id: &str, attrs: Json) -> Result<Seq> {
        self.post(&["entities"], &json!({"kind": kind, "id": id, "attrs": attrs})).await
    }

    pub async fn connect(&self, parent: &str, child: &str, attrs: Json, relevant: bool) -> Result<Seq> {
        let body = json!({"parent": parent, "child": child, "attrs": attrs, "relevant": relevant});
        self.post(&["connections"], &body).await
    }

    pub async fn connections(&self, offset: usize, limit: usize) -> Result<Page<Json>> {
        self.get(&["connections"], &page(offset, limit)).await
    }

    pub async fn golden(&self, d: &DatumRef) -> Result<Json> {
        self.get(&["golden", &d.to_string()], &[]).await
    }

    pub async fn history(&self, d: &DatumRef) -> Result<Json> {
        self.get(&["history", &d.to_string()], &[]).await
    }

    pub async fn datum_index(&self) -> Result<BTreeSet<DatumRef>> {
        self.get(&["datums"], &[]).await
    }

    pub async fn field_of_action(&self, principal: &str) -> Result<Page<Json>> {
        self.get(&["field-of-action", principal], &page(0, 1000)).await
    }

    pub async fn visibility(&self, intervention: Seq) -> Result<Json> {
        self.get(&["visibility", &intervention.to_string()], &[]).await
    }

    pub async fn rights(&self, principal: &str, datum: Option<&DatumRef>) -> Result<Json> {
        match datum {
            Some(d) => self.get(&["rights", principal, &d.to_string()], &[]).await,
            None => self.get(&["rights", principal], &[]).await,
        }
    }

    pub async fn propose(&self, d: &DatumRef, value: Json, rationale: &str) -> Result<Seq> {
        self.post(&["proposals"], &json!({"datum": d, "value": value, "rationale": rationale})).await
    }

    pub async fn proposal(&self, id: Seq) -> Result<Json> {
        self.get(&["proposals", &id.to_string()], &[]).await
    }

    pub async fn proposals(&self, offset: usize, limit: usize) -> Result<Page<Json>> {
        self.get(&["proposals"], &page(offset, limit)).await
    }

    pub async fn opine(&self, proposal: Seq, verdict: &str, rationale: &str) -> Result<Seq> {
        self.post(&["opinions"], &json!({"proposal": proposal, "verdict": verdict, "rationale": rationale})).await
    }

    pub async fn arbitrate(&self, proposal: Seq, decision: &str, rationale: &str) -> Result<Seq> {
        let body = json!({"proposal": proposal, "decision": decision, "rationale": rationale});
        self.post(&["arbitrations"], &body).await
    }

    /// Only the datum and note are sent; the principal header serves rights
    /// checks and rate limiting and is not retained.
    pub async fn warn(&self, d: &DatumRef, note: &str) -> Result<Seq> {
        self.post(&["warnings"], &json!({"datum": d, "note": note})).await
    }

    pub async fn warnings(&self, offset: usize, limit: usize) -> Result<Page<Json>> {
        self.get(&["warnings"], &page(offset, limit)).await
    }

    pub async fn trail(&self, d: &DatumRef) -> Result<Page<Json>> {
        self.get(&["trail", &d.to_string()], &page(0, 10_000)).await
    }

    pub async fn review_queue(&self, principal: &str) -> Result<Page<Json>> {
        self.get(&["review-queue", principal], &page(0, 1000)).await
    }

    pub async fn rank(&self, scope: Option<&str>, min_sample: Option<u64>) -> Result<Page<Json>> {
        let mut q = page(0, 1000);
        if let Some(s) = scope {
            q.push(("scope", s.to_string()));
        }
        if let Some(m) = min_sample {
            q.push(("min_sample", m.to_string()));
        }
        self.get(&["rank"], &q).await
    }

    /// Feeds newline-delimited JSON records from a source.
    pub async fn ingest(&self, source: &str, lines: String) -> Result<Json> {
        self.post_text(&["ingest", source], lines).await
    }

    pub async fn register_dictionary(&self, source: &str, toml: String) -> Result<Seq> {
        self.post_text(&["sources", source, "dictionary"], toml).await
    }

    pub async fn load_rules(&self, toml: String) -> Result<Vec<Seq>> {
        self.post_text(&["rules"], toml).await
    }

    pub async fn load_fixture(&self, name: &str) -> Result<Json> {
        self.post(&["fixtures", name], &json!({})).await
    }

    pub async fn configure_channel(&self, entity: &str, config: Json) -> Result<Seq> {
        self.post(&["channels", entity, "config"], &config).await
    }

    pub async fn designate_arbiters(&self, designations: Json) -> Result<Seq> {
        self.post(&["arbiters"], &designations).await
    }

    pub async fn adjust(&self, adjustment: Json) -> Result<Seq> {
        self.post(&["adjustments"], &adjustment).await
    }

    pub async fn delegate(&self, delegation: Json) -> Result<Seq> {
        self.post(&["delegations"], &delegation).await
    }

    pub async fn establish_contract(&self, toml: String) -> Result<Seq> {
        self.post_text(&["contracts"], toml).await
    }

    pub async fn events(&self, offset: usize, limit: usize) -> Result<Page<Json>> {
        self.get(&["events"], &page(offset, limit)).await
    }

    pub async fn snapshot(&self, path: &str) -> Result<Json> {
        self.post(&["snapshot"], &json!({"path": path})).await
    }

    /// Peer side of an exchange: the owner's changes since `since`.
    pub async fn changeset(&self, contract: &str, since: Seq) -> Result<ChangeSet> {
        let rb = self
            .request(reqwest::Method::GET, &["sync", contract, "changeset"])
            .query(&[("since", since.to_string())]);
        let resp = rb.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        if status != 200 {
            let env: Envelope<Json> =
                serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("status {status}: {e}")))?;
            let e = env.error.unwrap_or(ApiErrorBody { code: "Unknown".into(), message: text });
            return Err(ClientError::Api { status, code: e.code, message: e.message });
        }
        ChangeSet::decode(&text).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn forward(&self, req: &ForwardRequest) -> Result<Seq> {
        let body = serde_json::to_value(req).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.post(&["sync", &req.contract, "forward"], &body).await
    }

    /// Pushes a changeset for the receiver to apply.
    pub async fn apply(&self, cs: &ChangeSet) -> Result<ApplyReport> {
        self.post_text(&["sync", &cs.contract, "apply"], cs.encode()).await
    }

    /// Asks the instance to run one exchange with its contracted peer.
    pub async fn sync(&self, contract: &str) -> Result<SyncReport> {
        self.post(&["sync", contract], &json!({})).await
    }
}

fn page(offset: usize, limit: usize) -> Vec<(&'static str, String)> {
    vec![("offset", offset.to_string()), ("limit", limit.to_string())]
}

/// Percent-encodes a path segment (unreserved characters pass through).
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
