use thiserror::Error;

use crate::walker::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The walker made more jumps than the safety cap allows. The partial
    /// trajectory up to the breach is kept for diagnostics.
    #[error("jump cap of {cap} exceeded at t = {time}")]
    JumpCap {
        cap: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
