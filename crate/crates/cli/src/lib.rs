//! Pipeline commands behind the `simplexae` binary.
//!
//! Each command reads a [`RunConfig`], validates it completely, and only then
//! touches the filesystem. Outputs go through temp-file-and-rename writes.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{
    cmd_deconv, cmd_eval, cmd_gen_data, cmd_latent_export, cmd_sample, cmd_train, Layout, FEATURES_FILE,
    GMM_MANIFEST_FILE, GMM_TENSOR_FILE, LABELS_FILE, LATENTS_FILE, METRICS_FILE, MODEL_FILE, SAMPLES_FILE,
    SPLITS_FILE, TRACE_FILE,
};
pub use config::{DatasetSource, PsfKind, RunConfig, SamplerKind};

/// An error as shown to the user: a stable kind plus a human message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    /// Process exit status: 2 for bad invocations, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind.as_str() {
            "config" | "usage" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    /// `<kind>: <message>` on one line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: String = self.message.chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
        write!(f, "{}: {}", self.kind, flat)
    }
}

impl std::error::Error for CliError {}

impl From<simplexae_core::Error> for CliError {
    fn from(e: simplexae_core::Error) -> Self {
        let message = match &e {
            simplexae_core::Error::InvalidInput(m) => m.clone(),
            other => other.to_string(),
        };
        CliError::new(e.kind(), message)
    }
}

pub type CliResult<T> = Result<T, CliError>;
