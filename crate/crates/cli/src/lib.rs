//! Experiment commands behind the `simwise` binary.
//!
//! Every command takes a fully resolved [`config::RunConfig`], writes CSV
//! (and sometimes SVG) files under its output directory and returns the
//! numbers it wrote.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod report;
pub mod svg;

use simwise_core::cascade::CascadeError;
use simwise_core::csi::CsiError;
use simwise_core::frel::FrelError;
use simwise_core::nn::NnError;
use simwise_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("gate failed: {0}")]
    Gate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 config, 3 data or I/O, 4 failed gate.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Gate(_) => 4,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) | SynthError::InvalidScene(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FrelError> for CliError {
    fn from(e: FrelError) -> Self {
        match e {
            FrelError::InvalidHyper(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CsiError> for CliError {
    fn from(e: CsiError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        CliError::Data(e.to_string())
    }
}
