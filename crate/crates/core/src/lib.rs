//! Signature-gated recurrent networks.
//!
//! LSTM and GRU cells whose forget (resp. reset) gate is driven by the
//! time-normalized truncated signature of a learned projection of the input
//! path, trained end to end with hand-written reverse-mode gradients.

pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod numerics;
pub mod signature;
pub mod training;

pub use error::{Error, Result};
