//! Achievable-rate regions and capacity bounds for quantum broadcast
//! channels whose receivers cooperate over a conferencing link.

pub mod broadcast;
pub mod codesim;
pub mod channel;
pub mod eof;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod optimize;
pub mod quantum;
pub mod regions;
pub mod relay;
pub mod state;

pub use error::{Error, Result};
