//! Module errors mapped onto `(HTTP status, error_code)` pairs.
//!
//! Unknown resources are 404, gating and precondition failures 409, bad input
//! 400. Codes are stable identifiers clients may match on.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use t2i_audit_core::arena::ArenaError;
use t2i_audit_core::orchestrator::OrchestratorError;
use t2i_audit_core::report::ReportError;
use t2i_audit_core::session::SessionError;
use t2i_audit_core::store::StoreError;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = ErrorEnvelope {
            error_code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

fn map<E: std::fmt::Display>(e: &E, status: StatusCode, code: &'static str) -> ApiError {
    ApiError::new(status, code, e.to_string())
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError::*;
        use StatusCode as S;
        match &e {
            UnknownModel(_) => map(&e, S::BAD_REQUEST, "UNKNOWN_MODEL"),
            QueueFull => map(&e, S::SERVICE_UNAVAILABLE, "QUEUE_FULL"),
            SessionNotFound(_) => map(&e, S::NOT_FOUND, "SESSION_NOT_FOUND"),
            JobNotFound(_) => map(&e, S::NOT_FOUND, "JOB_NOT_FOUND"),
            JobTerminal(_) | Leased(_) => map(&e, S::CONFLICT, "JOB_BUSY"),
            DuplicateSession(_) => map(&e, S::CONFLICT, "DUPLICATE_SESSION"),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StatusCode as S;
        use StoreError::*;
        match &e {
            NotFound(_) => map(&e, S::NOT_FOUND, "IMAGE_NOT_FOUND"),
            UndecodableImage => map(&e, S::BAD_REQUEST, "UNDECODABLE_IMAGE"),
            CorruptBlob(_) => map(&e, S::INTERNAL_SERVER_ERROR, "CORRUPT_BLOB"),
            StorageFull => map(&e, S::INSUFFICIENT_STORAGE, "STORAGE_FULL"),
            _ => map(&e, S::INTERNAL_SERVER_ERROR, "STORAGE_ERROR"),
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        use ReportError::*;
        use StatusCode as S;
        match &e {
            SessionNotFound(_) => map(&e, S::NOT_FOUND, "SESSION_NOT_FOUND"),
            ReportNotFound(_) => map(&e, S::NOT_FOUND, "REPORT_NOT_FOUND"),
            SessionNotCompleted(_) => map(&e, S::CONFLICT, "SESSION_NOT_COMPLETED"),
            UnsupportedFormat(_) => map(&e, S::BAD_REQUEST, "UNSUPPORTED_FORMAT"),
            NotConfigured => map(&e, S::CONFLICT, "FORUM_NOT_CONFIGURED"),
            ForumUnreachable(_) => map(&e, S::BAD_GATEWAY, "FORUM_UNREACHABLE"),
            ForumRejected(_) => map(&e, S::BAD_GATEWAY, "FORUM_REJECTED"),
            Persist(_) => map(&e, S::INTERNAL_SERVER_ERROR, "PERSIST_FAILED"),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        use StatusCode as S;
        match e {
            Orchestrator(inner) => inner.into(),
            Report(inner) => inner.into(),
            ref other => {
                let (status, code) = match other {
                    EmptyPrompt => (S::BAD_REQUEST, "EMPTY_PROMPT"),
                    PromptTooLong(_) => (S::BAD_REQUEST, "PROMPT_TOO_LONG"),
                    UnknownModel(_) => (S::BAD_REQUEST, "UNKNOWN_MODEL"),
                    NoModels => (S::BAD_REQUEST, "NO_MODELS"),
                    DuplicateModel(_) => (S::BAD_REQUEST, "DUPLICATE_MODEL"),
                    UnknownQuestion(_) => (S::BAD_REQUEST, "UNKNOWN_QUESTION"),
                    EmptyAnswer => (S::BAD_REQUEST, "EMPTY_ANSWER"),
                    SessionNotFound(_) => (S::NOT_FOUND, "SESSION_NOT_FOUND"),
                    WrongStage { .. } => (S::CONFLICT, "WRONG_STAGE"),
                    UnansweredQuestions(_) => (S::CONFLICT, "UNANSWERED_QUESTIONS"),
                    PrimaryGenerationFailed => (S::CONFLICT, "PRIMARY_GENERATION_FAILED"),
                    PrimaryGenerationPending => (S::CONFLICT, "PRIMARY_GENERATION_PENDING"),
                    AlreadyCompleted => (S::CONFLICT, "ALREADY_COMPLETED"),
                    Persist(_) => (S::INTERNAL_SERVER_ERROR, "PERSIST_FAILED"),
                    Orchestrator(_) | Report(_) => unreachable!(),
                };
                map(other, status, code)
            }
        }
    }
}

impl From<ArenaError> for ApiError {
    fn from(e: ArenaError) -> Self {
        use ArenaError::*;
        use StatusCode as S;
        match e {
            Generation(inner) => inner.into(),
            ref other => {
                let (status, code) = match other {
                    PoolTooSmall(_) => (S::BAD_REQUEST, "POOL_TOO_SMALL"),
                    EmptyPrompt => (S::BAD_REQUEST, "EMPTY_PROMPT"),
                    UnknownLabel(_) => (S::BAD_REQUEST, "UNKNOWN_LABEL"),
                    SameModel(_) => (S::BAD_REQUEST, "SAME_MODEL"),
                    UnknownBattle(_) => (S::NOT_FOUND, "BATTLE_NOT_FOUND"),
                    AlreadyVoted(_) => (S::CONFLICT, "ALREADY_VOTED"),
                    BattleExpired(_) => (S::CONFLICT, "BATTLE_EXPIRED"),
                    Persist(_) => (S::INTERNAL_SERVER_ERROR, "PERSIST_FAILED"),
                    Generation(_) => unreachable!(),
                };
                map(other, status, code)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use t2i_audit_core::session::WorkflowStage;

    #[test]
    fn families_map_to_documented_statuses() {
        let cases: Vec<(ApiError, u16, &str)> = vec![
            (
                SessionError::SessionNotFound("s".into()).into(),
                404,
                "SESSION_NOT_FOUND",
            ),
            (
                ReportError::ReportNotFound("r".into()).into(),
                404,
                "REPORT_NOT_FOUND",
            ),
            (
                ArenaError::UnknownBattle("b".into()).into(),
                404,
                "BATTLE_NOT_FOUND",
            ),
            (
                StoreError::NotFound("i".into()).into(),
                404,
                "IMAGE_NOT_FOUND",
            ),
            (
                SessionError::WrongStage {
                    question_id: "q".into(),
                    question_stage: Some(WorkflowStage::ExpectationQuestions),
                    current: WorkflowStage::SingleModelReview,
                }
                .into(),
                409,
                "WRONG_STAGE",
            ),
            (
                SessionError::UnansweredQuestions(vec!["q".into()]).into(),
                409,
                "UNANSWERED_QUESTIONS",
            ),
            (
                SessionError::PrimaryGenerationPending.into(),
                409,
                "PRIMARY_GENERATION_PENDING",
            ),
            (
                ArenaError::AlreadyVoted("b".into()).into(),
                409,
                "ALREADY_VOTED",
            ),
            (
                ReportError::SessionNotCompleted("s".into()).into(),
                409,
                "SESSION_NOT_COMPLETED",
            ),
            (SessionError::EmptyPrompt.into(), 400, "EMPTY_PROMPT"),
            (
                SessionError::PromptTooLong(1001).into(),
                400,
                "PROMPT_TOO_LONG",
            ),
            (
                ArenaError::UnknownLabel("Model C".into()).into(),
                400,
                "UNKNOWN_LABEL",
            ),
            (
                ReportError::UnsupportedFormat("xml".into()).into(),
                400,
                "UNSUPPORTED_FORMAT",
            ),
        ];
        for (err, status, code) in cases {
            assert_eq!(
                (err.status.as_u16(), err.code),
                (status, code),
                "{}",
                err.message
            );
        }
    }

    #[test]
    fn wrapped_errors_use_the_inner_mapping() {
        let e: ApiError = SessionError::Orchestrator(OrchestratorError::QueueFull).into();
        assert_eq!((e.status.as_u16(), e.code), (503, "QUEUE_FULL"));
        let e: ApiError =
            ArenaError::Generation(OrchestratorError::UnknownModel("m".into())).into();
        assert_eq!((e.status.as_u16(), e.code), (400, "UNKNOWN_MODEL"));
        let e: ApiError = SessionError::Report(ReportError::ReportNotFound("r".into())).into();
        assert_eq!(e.status.as_u16(), 404);
    }
}
