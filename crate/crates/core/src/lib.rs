//! Encrypted networked control.
//!
//! A plant node quantizes its state with a zooming quantizer, encrypts it
//! under Paillier, and a controller node evaluates the feedback law over
//! ciphertexts against a blinded integer gain.

pub mod cli;
pub mod config;
pub mod encoding;
pub mod lindesign;
pub mod paillier;
pub mod polyapprox;
pub mod protocol;
pub mod simloop;
pub mod zoom;

use thiserror::Error;

/// Any failure surfaced by the command layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Sim(#[from] simloop::SimError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Crypto(#[from] paillier::PaillierError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Usage: {0}")]
    Usage(String),
}

impl Error {
    /// Leading error name, e.g. `KeyTooSmall`.
    pub fn name(&self) -> String {
        let text = self.to_string();
        text.split(':').next().unwrap_or("Error").trim().to_string()
    }
}
