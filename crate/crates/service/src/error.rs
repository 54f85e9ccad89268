use axum::http::StatusCode;
use serde::{Deserialize, Serialize};

use brachynav_core::Error as CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    NotFound,
    Precondition,
    Conflict,
    Contract,
    Configuration,
    Parse,
    Io,
}

/// Structured error returned by the API and reported by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ServiceError {
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError {
            code: ErrorCode::Validation,
            message: message.into(),
            field: Some(field.into()),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::Validation | ErrorCode::Contract | ErrorCode::Parse => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Precondition => StatusCode::PRECONDITION_FAILED,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Configuration => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Io => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Validation-type errors map to exit code 2 on the command line.
    pub fn is_validation(&self) -> bool {
        matches!(self.code, ErrorCode::Validation | ErrorCode::Parse | ErrorCode::Contract)
    }
}

impl From<CoreError> for ServiceError {
    fn from(err: CoreError) -> Self {
        let message = err.to_string();
        match err {
            CoreError::Validation { field, message } => ServiceError::validation(field, message),
            CoreError::Contract(_) => ServiceError::new(ErrorCode::Contract, message),
            CoreError::Config(_) => ServiceError::new(ErrorCode::Configuration, message),
            CoreError::Parse(_) => ServiceError::new(ErrorCode::Parse, message),
            CoreError::Io(_) => ServiceError::new(ErrorCode::Io, message),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(err: std::io::Error) -> Self {
        ServiceError::new(ErrorCode::Io, err.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(err: serde_json::Error) -> Self {
        CoreError::from(err).into()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
