//! HTTP routes. Every JSON response is wrapped as
//! `{"schema_version": 1, "data": ...}` or `{"schema_version": 1, "error": {code, message}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use refhub_client::{HubClient, Page, PRINCIPAL_HEADER, SCHEMA_VERSION};
use refhub_core::exosource::Dictionary;
use refhub_core::federation::{ChangeSet, ContractSpec, ForwardRequest, SyncReport};
use refhub_core::rights::{ChannelConfig, Delegation, RightAdjustment};
use refhub_core::{
    fixtures, DatumPattern, DatumRef, Decision, EntityId, EntityKind, Error as CoreError, Hub, Right, Seq, Value,
    ValueType, Verdict,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use tokio::sync::RwLock;

use crate::limiter::WarnLimiter;

pub const DEFAULT_LIMIT: usize = 100;
pub const MAX_LIMIT: usize = 10_000;

pub struct AppState {
    pub hub: RwLock<Hub>,
    pub min_sample: u64,
    limiter: Mutex<WarnLimiter>,
}

impl AppState {
    pub fn new(hub: Hub, min_sample: u64, warn_per_minute: u32) -> Arc<Self> {
        Arc::new(Self { hub: RwLock::new(hub), min_sample, limiter: Mutex::new(WarnLimiter::new(warn_per_minute)) })
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into() }
    }
}

fn status_of(e: &CoreError) -> StatusCode {
    use CoreError::*;
    match e {
        UnknownEntity(_) | UnknownDatum(_) | UnknownAuthor(_) | UnknownPrincipal(_) | UnknownIntervention(_)
        | UnknownProposal(_) | UnknownSource(_) | UnknownContract(_) => StatusCode::NOT_FOUND,
        InsufficientRights(_) | InsufficientAuthority(_) | NotArbiter(_) | SelfReview | RemoteControlled(_) => {
            StatusCode::FORBIDDEN
        }
        DuplicateId(_) | DuplicateEdge(_) | ProposalInFlight(_) | NotUnderReview(_) | DuplicateOpinion(_)
        | MultipleArbiters(_) | DuplicatePriority(_) | OwnershipViolation(_) | AmbiguousOwnership(_) => {
            StatusCode::CONFLICT
        }
        PeerUnreachable(_) => StatusCode::BAD_GATEWAY,
        e if !e.is_client_error() => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        Self { status: status_of(&e), code: e.code().into(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"schema_version": SCHEMA_VERSION, "error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(data: impl Serialize) -> ApiResult {
    Ok(Json(json!({"schema_version": SCHEMA_VERSION, "data": data})).into_response())
}

fn parse<T: FromStr<Err = CoreError>>(s: &str) -> Result<T, ApiError> {
    s.parse().map_err(ApiError::from)
}

/// Caller identity from the principal header.
pub struct Principal(pub EntityId);

impl<S: Send + Sync> FromRequestParts<S> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let raw = parts
            .headers
            .get(PRINCIPAL_HEADER)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "MissingPrincipal", "principal header required"))?;
        Ok(Principal(EntityId::new(raw)?))
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

fn paginate<T>(items: Vec<T>, q: &PageQuery) -> Page<T> {
    let total = items.len();
    let offset = q.offset.unwrap_or(0).min(total);
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).clamp(1, MAX_LIMIT);
    let items: Vec<T> = items.into_iter().skip(offset).take(limit).collect();
    let end = offset + items.len();
    Page { items, offset, limit, total, next: (end < total).then_some(end) }
}

/// Untyped JSON to a value: integers, decimals and text. Tagged objects
/// (`{"date": "2024-01-01"}`) pass through.
fn loose_value(raw: &JsonValue) -> Result<Value, ApiError> {
    match raw {
        JsonValue::String(s) => Ok(Value::text(s)),
        JsonValue::Number(n) if n.is_i64() => Ok(Value::Integer(n.as_i64().unwrap_or_default())),
        JsonValue::Number(n) => Ok(Value::parse_as(ValueType::Decimal, &n.to_string())?),
        JsonValue::Object(_) => Ok(serde_json::from_value(raw.clone()).map_err(CoreError::from)?),
        other => Err(ApiError::new(StatusCode::BAD_REQUEST, "Parse", format!("unsupported value {other}"))),
    }
}

/// JSON to a value of the datum's type; strings and numbers are parsed as
/// literals of that type.
fn typed_value(raw: &JsonValue, ty: ValueType) -> Result<Value, ApiError> {
    match raw {
        JsonValue::String(s) => Ok(Value::parse_as(ty, s)?),
        JsonValue::Number(n) => Ok(Value::parse_as(ty, &n.to_string())?),
        other => Ok(loose_value(other)?.conform(ty)?),
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/digest", get(digest))
        .route("/v1/events", get(events))
        .route("/v1/snapshot", post(snapshot))
        .route("/v1/fixtures/{name}", post(load_fixture))
        .route("/v1/entities", get(list_entities).post(create_entity))
        .route("/v1/entities/{id}", get(entity))
        .route("/v1/connections", get(list_connections).post(connect))
        .route("/v1/datums", get(datums))
        .route("/v1/golden", get(list_golden))
        .route("/v1/golden/{datum}", get(golden))
        .route("/v1/history/{datum}", get(history))
        .route("/v1/communities/{entity}", get(community))
        .route("/v1/collections/{entity}", get(collection))
        .route("/v1/field-of-action/{principal}", get(field_of_action))
        .route("/v1/visibility/{intervention}", get(visibility))
        .route("/v1/rights/{principal}", get(rights))
        .route("/v1/rights/{principal}/{datum}", get(resolve))
        .route("/v1/channels/{entity}/config", post(configure_channel))
        .route("/v1/arbiters", post(designate_arbiters))
        .route("/v1/adjustments", post(adjust))
        .route("/v1/delegations", post(delegate))
        .route("/v1/proposals", get(list_proposals).post(propose))
        .route("/v1/proposals/{id}", get(proposal))
        .route("/v1/opinions", post(opine))
        .route("/v1/arbitrations", post(arbitrate))
        .route("/v1/warnings", get(list_warnings).post(warn))
        .route("/v1/trail/{datum}", get(trail))
        .route("/v1/review-queue/{principal}", get(review_queue))
        .route("/v1/rank", get(rank))
        .route("/v1/rules", get(list_rules).post(load_rules))
        .route("/v1/sources/{id}/dictionary", post(register_dictionary))
        .route("/v1/ingest/{source}", post(ingest))
        .route("/v1/contracts", get(list_contracts).post(establish_contract))
        .route("/v1/contracts/{id}/digest", get(scope_digest))
        .route("/v1/sync/{contract}", post(sync))
        .route("/v1/sync/{contract}/changeset", get(changeset))
        .route("/v1/sync/{contract}/forward", post(forward))
        .route("/v1/sync/{contract}/apply", post(apply))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NoRoute", "no such endpoint") })
        .with_state(state)
}

async fn health(State(app): State<Shared>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(json!({"status": "ok", "instance": hub.instance(), "seq": hub.seq()}))
}

async fn digest(State(app): State<Shared>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(json!({"seq": hub.seq(), "digest": hub.state().digest()}))
}

async fn events(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(paginate(hub.events().to_vec(), &q))
}

#[derive(Deserialize)]
struct SnapshotBody {
    path: String,
}

async fn snapshot(State(app): State<Shared>, Json(b): Json<SnapshotBody>) -> ApiResult {
    let hub = app.hub.read().await;
    let seq = hub.snapshot(&b.path)?;
    ok(json!({"seq": seq, "path": b.path}))
}

async fn load_fixture(State(app): State<Shared>, Path(name): Path<String>) -> ApiResult {
    let mut hub = app.hub.write().await;
    let before = hub.seq();
    fixtures::load_into(&mut hub, &name)?;
    ok(json!({"fixture": name, "events": hub.seq() - before, "seq": hub.seq()}))
}

async fn list_entities(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(paginate(hub.state().graph.entities().cloned().collect(), &q))
}

async fn entity(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let hub = app.hub.read().await;
    let g = &hub.state().graph;
    let e = g.require_entity(&parse(&id)?)?;
    let values: BTreeMap<String, Value> =
        g.entity_datums(&e.id).filter_map(|d| Some((d.attr_name().to_string(), g.value(&d)?.clone()))).collect();
    ok(json!({"id": e.id, "kind": e.kind, "attrs": values}))
}

#[derive(Deserialize)]
struct NewEntity {
    kind: String,
    id: String,
    #[serde(default)]
    attrs: BTreeMap<String, JsonValue>,
}

async fn create_entity(State(app): State<Shared>, Json(b): Json<NewEntity>) -> ApiResult {
    let kind: EntityKind = parse(&b.kind)?;
    let attrs = b.attrs.iter().map(|(k, v)| Ok((k.clone(), loose_value(v)?))).collect::<Result<_, ApiError>>()?;
    ok(app.hub.write().await.create_entity(kind, &b.id, attrs)?)
}

async fn list_connections(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(paginate(hub.state().graph.connections().cloned().collect(), &q))
}

#[derive(Deserialize)]
struct NewConnection {
    parent: String,
    child: String,
    #[serde(default)]
    attrs: BTreeMap<String, JsonValue>,
    #[serde(default)]
    relevant: bool,
}

async fn connect(State(app): State<Shared>, Json(b): Json<NewConnection>) -> ApiResult {
    let attrs = b.attrs.iter().map(|(k, v)| Ok((k.clone(), loose_value(v)?))).collect::<Result<_, ApiError>>()?;
    let (p, c) = (parse(&b.parent)?, parse(&b.child)?);
    ok(app.hub.write().await.connect(&p, &c, attrs, b.relevant)?)
}

async fn datums(State(app): State<Shared>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(hub.state().graph.datums().map(|(d, _)| d.clone()).collect::<BTreeSet<_>>())
}

async fn list_golden(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    let st = hub.state();
    let rows = st.graph.datums().map(|(d, _)| st.read_golden(d)).collect::<Result<Vec<_>, _>>()?;
    ok(paginate(rows, &q))
}

async fn golden(State(app): State<Shared>, Path(d): Path<String>) -> ApiResult {
    let d: DatumRef = parse(&d)?;
    ok(app.hub.read().await.read_golden(&d)?)
}

async fn history(State(app): State<Shared>, Path(d): Path<String>) -> ApiResult {
    let d: DatumRef = parse(&d)?;
    ok(app.hub.read().await.datum_history(&d)?)
}

async fn community(State(app): State<Shared>, Path(e): Path<String>) -> ApiResult {
    let e: EntityId = parse(&e)?;
    ok(app.hub.read().await.state().graph.community_of(&e)?)
}

async fn collection(State(app): State<Shared>, Path(e): Path<String>) -> ApiResult {
    let e: EntityId = parse(&e)?;
    ok(app.hub.read().await.state().graph.collection_of(&e)?)
}

/// One row of the monitoring view: the datum, its state and the actions
/// the resolved right allows.
#[derive(Serialize)]
struct FieldRow {
    #[serde(flatten)]
    row: refhub_core::rights::EffectiveRight,
    actions: Vec<&'static str>,
}

async fn field_of_action(State(app): State<Shared>, Path(p): Path<String>, Query(q): Query<PageQuery>) -> ApiResult {
    let p: EntityId = parse(&p)?;
    let hub = app.hub.read().await;
    let st = hub.state();
    let rows = st
        .effective_rights(&p)?
        .into_iter()
        .map(|row| {
            let r = row.right;
            let mut actions = Vec::new();
            for (need, name) in [(Right::Warn, "warn"), (Right::Propose, "propose"), (Right::Evaluate, "opine")] {
                if r >= Some(need) {
                    actions.push(name);
                }
            }
            if st.can_arbitrate(&p, &row.datum) {
                actions.push("arbitrate");
            }
            FieldRow { row, actions }
        })
        .collect();
    ok(paginate(rows, &q))
}

async fn visibility(State(app): State<Shared>, Path(id): Path<Seq>) -> ApiResult {
    let hub = app.hub.read().await;
    let members = hub.state().area_of_visibility(id)?;
    ok(json!({"intervention": id, "members": members}))
}

async fn rights(State(app): State<Shared>, Path(p): Path<String>, Query(q): Query<PageQuery>) -> ApiResult {
    let p: EntityId = parse(&p)?;
    ok(paginate(app.hub.read().await.state().effective_rights(&p)?, &q))
}

async fn resolve(State(app): State<Shared>, Path((p, d)): Path<(String, String)>) -> ApiResult {
    let (p, d): (EntityId, DatumRef) = (parse(&p)?, parse(&d)?);
    let hub = app.hub.read().await;
    let st = hub.state();
    let right = st.resolve_rights(&p, &d)?;
    ok(json!({"principal": p, "datum": d, "right": right, "can_arbitrate": st.can_arbitrate(&p, &d)}))
}

async fn configure_channel(
    State(app): State<Shared>,
    Path(e): Path<String>,
    Json(cfg): Json<ChannelConfig>,
) -> ApiResult {
    let e: EntityId = parse(&e)?;
    ok(app.hub.write().await.configure_channel(&e, cfg)?)
}

#[derive(Deserialize)]
struct Designation {
    channel: EntityId,
    datum: DatumRef,
}

async fn designate_arbiters(State(app): State<Shared>, Json(b): Json<Vec<Designation>>) -> ApiResult {
    let pairs: Vec<_> = b.into_iter().map(|d| (d.channel, d.datum)).collect();
    ok(app.hub.write().await.designate_arbiters(&pairs)?)
}

async fn adjust(State(app): State<Shared>, Json(a): Json<RightAdjustment>) -> ApiResult {
    ok(app.hub.write().await.apply_adjustment(a)?)
}

async fn delegate(State(app): State<Shared>, Json(d): Json<Delegation>) -> ApiResult {
    ok(app.hub.write().await.delegate(d)?)
}

async fn list_proposals(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(paginate(hub.state().proposals.values().cloned().collect(), &q))
}

async fn proposal(State(app): State<Shared>, Path(id): Path<Seq>) -> ApiResult {
    ok(app.hub.read().await.state().proposal(id)?.clone())
}

#[derive(Deserialize)]
struct NewProposal {
    datum: DatumRef,
    value: JsonValue,
    #[serde(default)]
    rationale: String,
}

async fn propose(State(app): State<Shared>, Principal(p): Principal, Json(b): Json<NewProposal>) -> ApiResult {
    let mut hub = app.hub.write().await;
    let ty = hub.state().graph.require_datum(&b.datum)?.ty;
    let value = typed_value(&b.value, ty)?;
    ok(hub.propose(&p, &b.datum, value, &b.rationale)?)
}

#[derive(Deserialize)]
struct NewOpinion {
    proposal: Seq,
    verdict: String,
    #[serde(default)]
    rationale: String,
}

async fn opine(State(app): State<Shared>, Principal(p): Principal, Json(b): Json<NewOpinion>) -> ApiResult {
    let verdict: Verdict = parse(&b.verdict)?;
    ok(app.hub.write().await.opine(&p, b.proposal, verdict, &b.rationale)?)
}

#[derive(Deserialize)]
struct NewArbitration {
    proposal: Seq,
    decision: String,
    #[serde(default)]
    rationale: String,
}

async fn arbitrate(State(app): State<Shared>, Principal(p): Principal, Json(b): Json<NewArbitration>) -> ApiResult {
    let decision: Decision = parse(&b.decision)?;
    ok(app.hub.write().await.arbitrate(&p, b.proposal, decision, &b.rationale)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewWarning {
    datum: DatumRef,
    #[serde(default)]
    note: String,
}

/// The principal header feeds the rights check and the in-memory rate
/// limiter, then goes out of scope. Neither the response nor the log sees it.
async fn warn(State(app): State<Shared>, Principal(p): Principal, Json(b): Json<NewWarning>) -> ApiResult {
    let allowed = app.limiter.lock().expect("limiter lock").allow(p.as_str(), Instant::now());
    if !allowed {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "RateLimited", "too many warnings, retry later"));
    }
    ok(app.hub.write().await.warn(&p, &b.datum, &b.note)?)
}

async fn list_warnings(State(app): State<Shared>, Query(q): Query<PageQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(paginate(hub.state().warnings.values().cloned().collect(), &q))
}

async fn trail(State(app): State<Shared>, Path(d): Path<String>, Query(q): Query<PageQuery>) -> ApiResult {
    let d: DatumRef = parse(&d)?;
    ok(paginate(app.hub.read().await.audit_trail(&d)?, &q))
}

async fn review_queue(State(app): State<Shared>, Path(p): Path<String>, Query(q): Query<PageQuery>) -> ApiResult {
    let p: EntityId = parse(&p)?;
    ok(paginate(app.hub.read().await.state().review_queue(&p)?, &q))
}

#[derive(Deserialize)]
struct RankQuery {
    scope: Option<String>,
    min_sample: Option<u64>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn rank(State(app): State<Shared>, Query(q): Query<RankQuery>) -> ApiResult {
    let hub = app.hub.read().await;
    let st = hub.state();
    let scope = match &q.scope {
        Some(s) => {
            let pat: DatumPattern = parse(s)?;
            Some(st.graph.datums().map(|(d, _)| d).filter(|d| pat.matches(d)).cloned().collect::<BTreeSet<_>>())
        }
        None => None,
    };
    let rows = st.rank(scope.as_ref(), q.min_sample.unwrap_or(app.min_sample));
    ok(paginate(rows, &PageQuery { offset: q.offset, limit: q.limit }))
}

async fn list_rules(State(app): State<Shared>) -> ApiResult {
    ok(app.hub.read().await.state().rules.values().cloned().collect::<Vec<_>>())
}

async fn load_rules(State(app): State<Shared>, body: String) -> ApiResult {
    ok(app.hub.write().await.load_rules(&body)?)
}

async fn register_dictionary(State(app): State<Shared>, Path(id): Path<String>, body: String) -> ApiResult {
    let id: EntityId = parse(&id)?;
    let dict = Dictionary::parse_toml(&body)?;
    ok(app.hub.write().await.register_source(&id, dict)?)
}

async fn ingest(State(app): State<Shared>, Path(source): Path<String>, body: String) -> ApiResult {
    let source: EntityId = parse(&source)?;
    ok(app.hub.write().await.ingest_lines(&source, &body)?)
}

async fn list_contracts(State(app): State<Shared>) -> ApiResult {
    ok(app.hub.read().await.state().contracts.values().cloned().collect::<Vec<_>>())
}

/// When the contract names a reachable peer, its datum index is fetched so
/// scope patterns are checked on both sides.
async fn establish_contract(State(app): State<Shared>, body: String) -> ApiResult {
    let spec = ContractSpec::parse_toml(&body)?;
    let peer_index = match &spec.peer_address {
        Some(addr) => HubClient::new(addr.clone()).datum_index().await.ok(),
        None => None,
    };
    ok(app.hub.write().await.establish_contract(spec, peer_index.as_ref())?)
}

async fn scope_digest(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let hub = app.hub.read().await;
    ok(json!({"contract": id, "seq": hub.seq(), "digest": hub.scope_digest(&id)?}))
}

#[derive(Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: Seq,
}

/// Plain-text wire form, not the JSON envelope.
async fn changeset(State(app): State<Shared>, Path(c): Path<String>, Query(q): Query<SinceQuery>) -> ApiResult {
    let cs = app.hub.read().await.emit_changeset(&c, q.since)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], cs.encode()).into_response())
}

async fn forward(State(app): State<Shared>, Path(c): Path<String>, Json(req): Json<ForwardRequest>) -> ApiResult {
    if req.contract != c {
        return Err(CoreError::UnknownContract(req.contract).into());
    }
    ok(app.hub.write().await.accept_forwarded(&req)?)
}

async fn apply(State(app): State<Shared>, Path(c): Path<String>, body: String) -> ApiResult {
    let cs = ChangeSet::decode(&body)?;
    if cs.contract != c {
        return Err(CoreError::UnknownContract(cs.contract).into());
    }
    ok(app.hub.write().await.apply_changeset(&cs)?)
}

/// One exchange with the contract's peer: forward parked proposals, then
/// pull and apply what the peer committed since our watermark. The hub is
/// not locked while waiting on the network.
async fn sync(State(app): State<Shared>, Path(c): Path<String>) -> ApiResult {
    let (parked, addr) = {
        let hub = app.hub.read().await;
        let st = hub.state();
        (st.parked_forwards(&c)?, st.contract(&c)?.peer_address.clone())
    };
    let addr =
        addr.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "NoPeerAddress", "contract has no peer address"))?;
    let peer = HubClient::new(addr);
    let mut report = SyncReport::default();
    for req in parked {
        match peer.forward(&req).await {
            Ok(remote) => {
                // a concurrent exchange may have recorded it already
                if app.hub.write().await.mark_forwarded(req.origin_proposal, remote).is_ok() {
                    report.forwarded.push((req.origin_proposal, remote));
                }
            }
            Err(e @ refhub_client::ClientError::Transport(_)) => return Err(e.into_core().into()),
            Err(e) => report.parked.push((req.origin_proposal, e.to_string())),
        }
    }
    let since = app.hub.read().await.state().contract(&c)?.inbound_through;
    let cs = peer.changeset(&c, since).await.map_err(|e| ApiError::from(e.into_core()))?;
    report.apply = app.hub.write().await.apply_changeset(&cs)?;
    ok(report)
}
