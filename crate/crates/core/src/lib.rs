//! Training-free trojan attacks on neural classifiers, end to end:
//! a 4x4 binary trigger codec, a tiny trigger-recognizer network, merge-layer
//! injection into host models, a data-poisoning baseline, attack metrics and
//! two gradient-based trojan detectors — all on a scratch-built f64 numeric
//! core with reverse-mode differentiation.
//!
//! The `trojanforge` binary exposes each pipeline stage as a subcommand; see
//! the crate README for end-to-end runs.

pub mod badnet;
pub mod codec;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod host;
pub mod inject;
pub mod manifest;
pub mod num;
pub mod persist;
pub mod trojannet;

pub use error::{Error, Result};
pub use num::{seeded_rng, SeededRng, Tensor};
