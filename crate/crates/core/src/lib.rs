//! Dynamic split learning at desk scale: a dual-mode LSTM encoder/decoder
//! trained in two cascaded phases, mutual-information estimators, an
//! information-plane analyzer and a split-inference simulator.

pub mod cascade;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod infoplane;
pub mod nn;
pub mod splitsim;

pub use error::{Error, Result};
