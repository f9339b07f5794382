//! HTTP bridge between a running preference-based learner and a human
//! labeler. Each session runs one algorithm on its own thread; every
//! comparison becomes a pending query that blocks until answered.

pub mod http;
pub mod replay;
pub mod service;
pub mod session;
pub mod view;

pub use replay::{read_label_log, LogReplay};
pub use service::{PreferenceService, SessionSpec};
pub use session::{LabelRecord, PendingQuery, QueryState, RunState, Session, SessionOracle, SessionStatus, Side};
pub use view::TrajectoryView;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown query {0}")]
    UnknownQuery(String),
    #[error("query {0} is already answered")]
    AlreadyAnswered(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("bad session spec: {0}")]
    BadSpec(String),
    #[error("bad label log: {0}")]
    BadLog(String),
    #[error("io: {0}")]
    Io(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "unknown_session",
            Self::UnknownQuery(_) => "unknown_query",
            Self::AlreadyAnswered(_) => "already_answered",
            Self::BadRequest(_) => "bad_request",
            Self::BadSpec(_) => "bad_spec",
            Self::BadLog(_) => "bad_log",
            Self::Io(_) => "io",
        }
    }
}
