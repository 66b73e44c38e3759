use std::fmt;

use serde_json::json;

/// Bad user input that the library never saw.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A self-check of the binary failed.
#[derive(Debug)]
pub struct InternalError(pub String);

impl fmt::Display for InternalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InternalError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Internal => 3,
        }
    }
}

pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return Kind::Config;
        }
        if cause.is::<InternalError>() {
            return Kind::Internal;
        }
        if let Some(e) = cause.downcast_ref::<emo_core::Error>() {
            return match e {
                emo_core::Error::NonFinite { .. } => Kind::Internal,
                _ => Kind::Config,
            };
        }
    }
    Kind::Internal
}

pub fn error_document(kind: Kind, message: &str) -> serde_json::Value {
    let kind = match kind {
        Kind::Config => "config",
        Kind::Internal => "internal",
    };
    json!({ "schema_version": crate::output::SCHEMA_VERSION, "error": { "kind": kind, "message": message } })
}
