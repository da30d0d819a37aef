//! Deterministic desk-scale simulator of multi-modal federated training.
//!
//! Clients holding different sensing modalities of one scene train a
//! dual-branch classifier on multi-scale diffusion inputs, exchanging
//! low-rank compressed feature maps and averaged gradients over a metered
//! in-process transport.

pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod fedsim;
pub mod fusion;
pub mod metrics;
pub mod net;
pub mod numkit;

pub use error::{Error, Result};
