use thiserror::Error;

use crate::datum::DatumRef;
use crate::ids::{EntityId, Seq};
use crate::value::ValueType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // reference graph
    #[error("identifier `{0}` is not valid")]
    InvalidIdentifier(String),
    #[error("id `{0}` is already in use")]
    DuplicateId(String),
    #[error("unknown entity kind `{0}`")]
    UnknownKind(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("edge {0} already exists")]
    DuplicateEdge(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(EntityId),
    #[error("unknown datum `{0}`")]
    UnknownDatum(DatumRef),
    #[error("unknown author `{0}`")]
    UnknownAuthor(String),
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("unknown intervention {0}")]
    UnknownIntervention(Seq),
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: ValueType, found: ValueType },

    // visibility
    #[error("`{0}` is not an individual")]
    NotAnIndividual(EntityId),

    // rights
    #[error("no arbiter channel for `{0}`")]
    NoArbiter(DatumRef),
    #[error("more than one arbiter channel for `{0}`")]
    MultipleArbiters(DatumRef),
    #[error("channel `{channel}` is not concerned by `{datum}`")]
    NotConcerned { channel: EntityId, datum: DatumRef },
    #[error("insufficient authority: {0}")]
    InsufficientAuthority(String),
    #[error("expired on arrival: expiry {expiry} <= current seq {current}")]
    ExpiredOnArrival { expiry: Seq, current: Seq },
    #[error("delegation exceeds delegator's rights on `{0}`")]
    ExceedsDelegator(DatumRef),
    #[error("arbitration cannot be delegated to an external source")]
    ArbitrateToSource,

    // channels
    #[error("insufficient rights: {0}")]
    InsufficientRights(String),
    #[error("proposal {0} is already in flight for this datum")]
    ProposalInFlight(Seq),
    #[error("unknown proposal {0}")]
    UnknownProposal(Seq),
    #[error("proposal {0} is not under review")]
    NotUnderReview(Seq),
    #[error("`{0}` already gave an opinion on this proposal")]
    DuplicateOpinion(String),
    #[error("authors may not review their own proposal")]
    SelfReview,
    #[error("a reasoned opinion needs a rationale")]
    EmptyRationale,
    #[error("`{0}` cannot arbitrate this datum")]
    NotArbiter(String),
    #[error("proposal {0} is controlled by the owning peer instance")]
    RemoteControlled(Seq),

    // propagation
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("priority {0} is already used by another rule")]
    DuplicatePriority(i64),
    #[error("propagation did not reach a fixpoint within {0} rounds")]
    NonTerminating(usize),
    #[error("derivation error: {0}")]
    DerivationTypeError(String),

    // exosource
    #[error("`{0}` is not an external source")]
    NotASource(EntityId),
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("unknown source `{0}`")]
    UnknownSource(EntityId),

    // federation
    #[error("ambiguous ownership: {0}")]
    AmbiguousOwnership(String),
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("changeset from wrong peer `{0}`")]
    WrongPeer(String),
    #[error("ownership violation on `{0}`")]
    OwnershipViolation(DatumRef),
    #[error("`{0}` is not in the contract scope")]
    NotInScope(DatumRef),
    #[error("peer unreachable: {0}")]
    PeerUnreachable(String),

    // persistence
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: Seq, reason: String },
    #[error("snapshot at seq {snapshot} predates log start at seq {log_start}")]
    SnapshotStale { snapshot: Seq, log_start: Seq },
    #[error("log starts at seq {0}; a snapshot is required to restore")]
    SnapshotRequired(Seq),
    #[error("wire format: {0}")]
    Wire(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used as the API error code.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidIdentifier(_) => "InvalidIdentifier",
            DuplicateId(_) => "DuplicateId",
            UnknownKind(_) => "UnknownKind",
            UnknownEntity(_) => "UnknownEntity",
            DuplicateEdge(_) => "DuplicateEdge",
            SelfLoop(_) => "SelfLoop",
            UnknownDatum(_) => "UnknownDatum",
            UnknownAuthor(_) => "UnknownAuthor",
            UnknownPrincipal(_) => "UnknownPrincipal",
            UnknownIntervention(_) => "UnknownIntervention",
            TypeMismatch { .. } => "TypeMismatch",
            NotAnIndividual(_) => "NotAnIndividual",
            NoArbiter(_) => "NoArbiter",
            MultipleArbiters(_) => "MultipleArbiters",
            NotConcerned { .. } => "NotConcerned",
            InsufficientAuthority(_) => "InsufficientAuthority",
            ExpiredOnArrival { .. } => "ExpiredOnArrival",
            ExceedsDelegator(_) => "ExceedsDelegator",
            ArbitrateToSource => "ArbitrateToSource",
            InsufficientRights(_) => "InsufficientRights",
            ProposalInFlight(_) => "ProposalInFlight",
            UnknownProposal(_) => "UnknownProposal",
            NotUnderReview(_) => "NotUnderReview",
            DuplicateOpinion(_) => "DuplicateOpinion",
            SelfReview => "SelfReview",
            EmptyRationale => "EmptyRationale",
            NotArbiter(_) => "NotArbiter",
            RemoteControlled(_) => "RemoteControlled",
            UnknownAttribute(_) => "UnknownAttribute",
            DuplicatePriority(_) => "DuplicatePriority",
            NonTerminating(_) => "NonTerminating",
            DerivationTypeError(_) => "DerivationTypeError",
            NotASource(_) => "NotASource",
            InvalidDictionary(_) => "InvalidDictionary",
            UnknownSource(_) => "UnknownSource",
            AmbiguousOwnership(_) => "AmbiguousOwnership",
            ScopeMismatch(_) => "ScopeMismatch",
            UnknownContract(_) => "UnknownContract",
            WrongPeer(_) => "WrongPeer",
            OwnershipViolation(_) => "OwnershipViolation",
            NotInScope(_) => "NotInScope",
            PeerUnreachable(_) => "PeerUnreachable",
            CorruptLog { .. } => "CorruptLog",
            SnapshotStale { .. } => "SnapshotStale",
            SnapshotRequired(_) => "SnapshotRequired",
            Wire(_) => "WireFormat",
            Parse(_) => "Parse",
            Io(_) => "Io",
            Json(_) => "Json",
        }
    }

    /// Whether the failure is in the caller's request rather than the hub.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::CorruptLog { .. })
    }
}
