//! Manifest-driven runs, analyses and estimate verification for `satflow`.

pub mod commands;
pub mod manifest;

pub use commands::{
    cmd_analyze, cmd_pair, cmd_run, cmd_sweep, cmd_verify, AnalysisSummary, ContractionReport,
    RunSummary, VerifySummary,
};
pub use manifest::{LoadedManifest, Manifest};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ABORT: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid manifest, missing input or unusable output location.
    #[error("{0}")]
    Config(String),
    /// A check ran and failed.
    #[error("{0}")]
    Verification(String),
    /// The solver gave up.
    #[error("{0}")]
    Abort(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Abort(_) => EXIT_ABORT,
        }
    }
}

impl From<satflow_core::Error> for CliError {
    fn from(e: satflow_core::Error) -> Self {
        match e {
            satflow_core::Error::Abort { .. } => CliError::Abort(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
